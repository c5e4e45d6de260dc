"""Graph aggregation: two graph-convolution iterations with self-loops,
capsule readout of each iteration's node set, and the final prediction head.

All aggregation weights are shared across the three modalities: there is
exactly one (W^k, W^k_o, per-node capsule weights) set per convolution
iteration k in the parameter registry.
"""

from __future__ import annotations

import numpy as np

from .construction import RoutingTrace
from .tensor import (Tensor, ParameterRegistry, add, concat, einsum, glorot,
                     mul, narrow, relu, reshape, softmax, tanh)

NEG_INF = -1e30


class GraphAggregator:
    def __init__(self, registry: ParameterRegistry, d_c: int, n_caps: int,
                 routing_iters: int, rng: np.random.Generator,
                 strategy: str = "capsule", iterations: int = 2):
        if routing_iters < 1:
            raise ValueError(f"routing_iters must be >= 1, got {routing_iters}")
        self.d_c = d_c
        self.n_caps = n_caps
        self.routing_iters = routing_iters
        self.strategy = strategy
        self.iterations = iterations
        reg = registry.register
        self.w = {}
        self.w_o = {}
        self.caps_w = {}
        for k in range(1, iterations + 1):
            self.w[k] = reg(f"agg.k{k}.w", glorot(rng, (d_c, d_c)))
            self.w_o[k] = reg(f"agg.k{k}.w_o", glorot(rng, (d_c, d_c)))
            if strategy == "capsule":
                self.caps_w[k] = reg(f"agg.k{k}.caps_w",
                                     glorot(rng, (n_caps, d_c, d_c)))
        if strategy == "attention":
            self.attn_u = {k: reg(f"agg.k{k}.attn_u", glorot(rng, (d_c,),
                                                             fan_in=d_c,
                                                             fan_out=1))
                           for k in range(1, iterations + 1)}
        elif strategy == "recurrent":
            self.rnn_wh = {k: reg(f"agg.k{k}.rnn_wh", glorot(rng, (d_c, d_c)))
                           for k in range(1, iterations + 1)}
            self.rnn_wx = {k: reg(f"agg.k{k}.rnn_wx", glorot(rng, (d_c, d_c)))
                           for k in range(1, iterations + 1)}
            self.rnn_b = {k: reg(f"agg.k{k}.rnn_b", np.zeros(d_c))
                          for k in range(1, iterations + 1)}

    def gcn_step(self, nodes: Tensor, adjacency: Tensor, k: int) -> Tensor:
        """tanh(W_o (W N (A + I))): raw adjacency plus self-loops, no degree
        normalization. ``nodes`` is (B, n, d_c), ``adjacency`` (B, n, n)."""
        if not 1 <= k <= self.iterations:
            raise ValueError(f"gcn iteration k={k} out of range "
                             f"[1, {self.iterations}]")
        n = nodes.shape[1]
        h = einsum("bnc,dc->bnd", nodes, self.w[k])
        mixed = einsum("bnd,bnj->bjd", h, add(adjacency, Tensor(np.eye(n))))
        return tanh(einsum("bnd,ed->bne", mixed, self.w_o[k]))

    def capsnet_aggregate(self, nodes: Tensor, k: int,
                          p: int | None = None,
                          node_mask: np.ndarray | None = None
                          ) -> tuple[Tensor, RoutingTrace]:
        """One capsule per node, routed into a single representation.

        Same loop shape as node construction but the softmax runs over all
        nodes jointly, so the representation is a convex combination of the
        node capsules.
        """
        p = self.routing_iters if p is None else p
        if p < 1:
            raise ValueError(f"routing iterations must be >= 1, got {p}")
        B, n, _ = nodes.shape
        if n > self.n_caps:
            raise ValueError(f"{n} nodes exceed configured capsule count "
                             f"{self.n_caps}")
        caps = einsum("ncd,bnd->bnc", narrow(self.caps_w[k], 0, 0, n), nodes)
        logits_bias = None
        if node_mask is not None:
            logits_bias = Tensor(np.where(node_mask > 0, 0.0, NEG_INF))
        b = Tensor(np.zeros((B, n)))
        trace = RoutingTrace(stage="aggregation", modality="", p=p, k=k)
        rep = None
        for _ in range(p):
            logits = add(b, logits_bias) if logits_bias is not None else b
            r = softmax(logits, axis=-1)
            trace.record(r.data)
            rep = einsum("bn,bnc->bc", r, caps)
            b = add(b, einsum("bc,bnc->bn", rep, caps))
        return rep, trace

    # ablation aggregators ------------------------------------------------

    def mean_aggregate(self, nodes: Tensor,
                       node_mask: np.ndarray | None = None) -> Tensor:
        if node_mask is None:
            return nodes.mean(axis=1)
        m = Tensor(node_mask[..., None])
        total = mul(nodes, m).sum(axis=1)
        counts = node_mask.sum(axis=-1, keepdims=True)
        return mul(total, Tensor(1.0 / counts))

    def attention_aggregate(self, nodes: Tensor, k: int,
                            node_mask: np.ndarray | None = None) -> Tensor:
        scores = einsum("bnc,c->bn", nodes, self.attn_u[k])
        if node_mask is not None:
            scores = add(scores, Tensor(np.where(node_mask > 0, 0.0, NEG_INF)))
        weights = softmax(scores, axis=-1)
        return einsum("bn,bnc->bc", weights, nodes)

    def recurrent_aggregate(self, nodes: Tensor, k: int,
                            node_mask: np.ndarray | None = None) -> Tensor:
        """Simple tanh recurrence over nodes in index order; last state is
        the representation (padded nodes leave the state unchanged)."""
        B, n, c = nodes.shape
        h = Tensor(np.zeros((B, c)))
        for j in range(n):
            x_j = reshape(narrow(nodes, 1, j, 1), (B, c))
            nxt = tanh(add(add(einsum("bc,cd->bd", h, self.rnn_wh[k]),
                               einsum("bc,cd->bd", x_j, self.rnn_wx[k])),
                           self.rnn_b[k]))
            if node_mask is not None:
                m = Tensor(node_mask[:, j:j + 1])
                h = add(mul(nxt, m), mul(h, Tensor(1.0 - node_mask[:, j:j + 1])))
            else:
                h = nxt
        return h

    def aggregate(self, nodes: Tensor, k: int,
                  node_mask: np.ndarray | None = None
                  ) -> tuple[Tensor, RoutingTrace | None]:
        if self.strategy == "capsule":
            return self.capsnet_aggregate(nodes, k, node_mask=node_mask)
        if self.strategy == "mean":
            return self.mean_aggregate(nodes, node_mask), None
        if self.strategy == "attention":
            return self.attention_aggregate(nodes, k, node_mask), None
        if self.strategy == "recurrent":
            return self.recurrent_aggregate(nodes, k, node_mask), None
        raise ValueError(f"unknown aggregation strategy {self.strategy!r}")

    def run(self, nodes: Tensor, adjacency: Tensor, modality: str,
            node_mask: np.ndarray | None = None
            ) -> tuple[list[Tensor], list[RoutingTrace]]:
        """Run all convolution iterations; returns one representation per
        iteration plus any routing traces."""
        reps, traces = [], []
        current = nodes
        for k in range(1, self.iterations + 1):
            current = self.gcn_step(current, adjacency, k)
            rep, trace = self.aggregate(current, k, node_mask=node_mask)
            reps.append(rep)
            if trace is not None:
                trace.modality = modality
                traces.append(trace)
        return reps, traces


class ReadoutHead:
    """Concatenated graph representations -> scalar sentiment score via two
    affine layers with a ReLU between."""

    def __init__(self, registry: ParameterRegistry, d_c: int, n_reps: int,
                 rng: np.random.Generator):
        d_in = n_reps * d_c
        d_hidden = 3 * d_c
        reg = registry.register
        self.n_reps = n_reps
        self.w1 = reg("readout.w1", glorot(rng, (d_in, d_hidden)))
        self.b1 = reg("readout.b1", np.zeros(d_hidden))
        self.w2 = reg("readout.w2", glorot(rng, (d_hidden, 1)))
        self.b2 = reg("readout.b2", np.zeros(1))

    def __call__(self, reps: list[Tensor]) -> Tensor:
        if len(reps) != self.n_reps:
            raise ValueError(f"expected {self.n_reps} graph representations, "
                             f"got {len(reps)}")
        x = concat(reps, axis=-1)
        h = relu(add(einsum("bi,io->bo", x, self.w1), self.b1))
        y = add(einsum("bi,io->bo", h, self.w2), self.b2)
        return reshape(y, (y.shape[0],))
