"""Graph construction: capsule nodes via dynamic routing, edges via
self-attention, and the L2 penalty on the capsule weights.

Every (time step, node) pair owns its own projection matrix, so weights are
positional and a maximum sequence length is fixed at parameter-creation time.
Shorter sequences are zero-padded; padded steps have their routing
coefficients forced to zero so they contribute to no node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (Tensor, ParameterRegistry, add, einsum, glorot, mul,
                     narrow, relu, scale, softmax)


@dataclass
class RoutingTrace:
    """Per-iteration routing coefficients, the interpretability artifact.

    Construction traces hold (T, n) coefficient matrices (rows sum to 1 over
    nodes for real steps); aggregation traces hold length-n vectors summing
    to 1. ``k`` is the graph-convolution iteration for aggregation traces.
    """

    stage: str                      # "construction" | "aggregation"
    modality: str
    p: int
    iterations: list[np.ndarray] = field(default_factory=list)
    k: int | None = None
    mask: np.ndarray | None = None  # validity of time steps (construction)

    def record(self, coefficients: np.ndarray) -> None:
        self.iterations.append(np.array(coefficients, copy=True))

    def to_json_dict(self) -> dict:
        out = {
            "stage": self.stage,
            "modality": self.modality,
            "p": self.p,
            "shape": list(self.iterations[0].shape),
            "iterations": [it.tolist() for it in self.iterations],
        }
        if self.k is not None:
            out["k"] = self.k
        if self.mask is not None:
            out["mask"] = self.mask.tolist()
        return out


class CapsuleGraphBuilder:
    """Turns one modality's fused sequence into nodes and adjacency."""

    def __init__(self, registry: ParameterRegistry, modality: str,
                 fused_dim: int, d_c: int, n_nodes: int, max_len: int,
                 routing_iters: int, rng: np.random.Generator):
        if routing_iters < 1:
            raise ValueError(f"routing_iters must be >= 1, got {routing_iters}")
        self.modality = modality
        self.d_c = d_c
        self.n_nodes = n_nodes
        self.max_len = max_len
        self.routing_iters = routing_iters
        reg = registry.register
        # one d_c x d matrix per (time step, node) pair, stored stacked.
        # Nodes are unsquashed sums over time, so the init is shrunk by
        # sqrt(max_len) to keep initial node magnitudes length-independent.
        self.caps_w = reg(f"construct.{modality}.caps_w",
                          glorot(rng, (max_len, n_nodes, d_c, fused_dim),
                                 fan_in=fused_dim, fan_out=d_c)
                          / np.sqrt(max_len))
        self.wq = reg(f"construct.{modality}.edge_wq", glorot(rng, (d_c, d_c)))
        self.wk = reg(f"construct.{modality}.edge_wk", glorot(rng, (d_c, d_c)))

    def make_capsules(self, z: Tensor) -> Tensor:
        """caps[b, i, j] = W_{i,j} @ z[b, i]; shape (B, T, n, d_c)."""
        T = z.shape[1]
        if T > self.max_len:
            raise ValueError(
                f"sequence length {T} exceeds configured maximum "
                f"{self.max_len} for modality {self.modality!r}")
        w = narrow(self.caps_w, 0, 0, T)
        return einsum("tncd,btd->btnc", w, z)

    def route_nodes(self, caps: Tensor, p: int | None = None,
                    mask: np.ndarray | None = None
                    ) -> tuple[Tensor, RoutingTrace]:
        """Dynamic routing over the node axis.

        Coefficients start uniform (zero logits), each iteration normalizes
        over nodes per time step, forms nodes as coefficient-weighted capsule
        sums, then updates logits by capsule/node agreement. The final
        logit update is computed after the last node formation and discarded,
        matching the loop order of the routing procedure.
        """
        p = self.routing_iters if p is None else p
        if p < 1:
            raise ValueError(f"routing iterations must be >= 1, got {p}")
        B, T, n, _ = caps.shape
        b = Tensor(np.zeros((B, T, n)))
        mask_t = Tensor(mask[..., None]) if mask is not None else None
        trace = RoutingTrace(stage="construction", modality=self.modality,
                             p=p, mask=None if mask is None else mask.copy())
        nodes = None
        for _ in range(p):
            r = softmax(b, axis=-1)
            if mask_t is not None:
                r = mul(r, mask_t)
            trace.record(r.data)
            nodes = einsum("btn,btnc->bnc", r, caps)
            b = add(b, einsum("bnc,btnc->btn", nodes, caps))
        return nodes, trace

    def build_edges(self, nodes: Tensor) -> Tensor:
        """A = relu((Wq N)^T (Wk N) / d_c); note the divisor is d_c itself."""
        q = einsum("bnc,dc->bnd", nodes, self.wq)
        k = einsum("bnc,dc->bnd", nodes, self.wk)
        return relu(scale(einsum("bid,bjd->bij", q, k), 1.0 / self.d_c))

    def __call__(self, z: Tensor, mask: np.ndarray | None = None
                 ) -> tuple[Tensor, Tensor, RoutingTrace]:
        caps = self.make_capsules(z)
        nodes, trace = self.route_nodes(caps, mask=mask)
        return nodes, self.build_edges(nodes), trace


class DirectGraphBuilder:
    """Ablation: every time step becomes a node directly (no capsules).

    A single learned projection maps fused features to the node width; edges
    are built by the same self-attention rule.
    """

    def __init__(self, registry: ParameterRegistry, modality: str,
                 fused_dim: int, d_c: int, rng: np.random.Generator):
        self.modality = modality
        self.d_c = d_c
        reg = registry.register
        self.proj = reg(f"construct.{modality}.direct_proj",
                        glorot(rng, (fused_dim, d_c)))
        self.wq = reg(f"construct.{modality}.edge_wq", glorot(rng, (d_c, d_c)))
        self.wk = reg(f"construct.{modality}.edge_wk", glorot(rng, (d_c, d_c)))

    def build_edges(self, nodes: Tensor) -> Tensor:
        q = einsum("bnc,dc->bnd", nodes, self.wq)
        k = einsum("bnc,dc->bnd", nodes, self.wk)
        return relu(scale(einsum("bid,bjd->bij", q, k), 1.0 / self.d_c))

    def __call__(self, z: Tensor, mask: np.ndarray | None = None
                 ) -> tuple[Tensor, Tensor, None]:
        nodes = einsum("btd,dc->btc", z, self.proj)
        if mask is not None:
            nodes = mul(nodes, Tensor(mask[..., None]))
        return nodes, self.build_edges(nodes), None


def capsule_l2_penalty(builders: dict, lam: float) -> Tensor:
    """lam * sum of squared Frobenius norms of all construction capsule
    weights across modalities; no other parameters participate."""
    if lam < 0:
        raise ValueError(f"l2 weight must be >= 0, got {lam}")
    total = Tensor(0.0)
    for builder in builders.values():
        w = getattr(builder, "caps_w", None)
        if w is not None:
            total = add(total, mul(w, w).sum())
    return scale(total, lam)
