"""The full model: fusion -> per-modality graph construction -> shared graph
aggregation -> readout, plus loss assembly and checkpoint round-tripping."""

from __future__ import annotations

import numpy as np

from .aggregation import GraphAggregator, ReadoutHead
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig
from .construction import (CapsuleGraphBuilder, DirectGraphBuilder,
                           RoutingTrace, capsule_l2_penalty)
from .fusion import MODALITIES, ModalityFusion
from .tensor import Tensor, ParameterRegistry, add, tabs


class Batch:
    """Fixed-shape mini-batch: per-modality (B, T, d) arrays, (B, T) masks,
    and labels (B,)."""

    def __init__(self, sequences: dict[str, np.ndarray],
                 masks: dict[str, np.ndarray], labels: np.ndarray):
        self.sequences = sequences
        self.masks = masks
        self.labels = np.asarray(labels, dtype=np.float64)

    @property
    def size(self) -> int:
        return len(self.labels)


class GraphCage:
    def __init__(self, cfg: ModelConfig, seed: int = 0,
                 source_positional: bool = True):
        self.cfg = cfg
        self.registry = ParameterRegistry()
        rng = np.random.default_rng(seed)
        dims = {"t": cfg.d_t, "a": cfg.d_a, "v": cfg.d_v}
        self.fusion = ModalityFusion(self.registry, dims, cfg.d_h, cfg.heads,
                                     cfg.depth, rng,
                                     source_positional=source_positional)
        self.builders: dict[str, object] = {}
        for m in MODALITIES:
            if cfg.construction == "capsule":
                self.builders[m] = CapsuleGraphBuilder(
                    self.registry, m, cfg.fused_dim, cfg.d_c, cfg.n_nodes,
                    cfg.max_len(m), cfg.routing_iters, rng)
            else:
                self.builders[m] = DirectGraphBuilder(
                    self.registry, m, cfg.fused_dim, cfg.d_c, rng)
        # direct construction keeps one node per time step, so the shared
        # per-node capsule weights must cover the longest modality
        n_caps = cfg.n_nodes if cfg.construction == "capsule" else max(
            cfg.max_len_t, cfg.max_len_a, cfg.max_len_v)
        self.aggregator = GraphAggregator(self.registry, cfg.d_c, n_caps,
                                          cfg.routing_iters, rng,
                                          strategy=cfg.aggregation)
        self.readout = ReadoutHead(self.registry, cfg.d_c,
                                   n_reps=3 * self.aggregator.iterations,
                                   rng=rng)

    # forward -------------------------------------------------------------

    def forward(self, batch: Batch) -> tuple[Tensor, list[RoutingTrace]]:
        seqs = {m: Tensor(batch.sequences[m]) for m in MODALITIES}
        fused = self.fusion(seqs, batch.masks)
        traces: list[RoutingTrace] = []
        reps: list[Tensor] = []
        for m in MODALITIES:
            nodes, adjacency, trace = self.builders[m](fused[m],
                                                       batch.masks.get(m))
            if trace is not None:
                traces.append(trace)
            node_mask = None
            if self.cfg.construction == "direct":
                node_mask = batch.masks.get(m)
            m_reps, m_traces = self.aggregator.run(nodes, adjacency, m,
                                                   node_mask=node_mask)
            reps.extend(m_reps)
            traces.extend(m_traces)
        # readout order: (t, k=1), (t, k=2), (a, k=1), ...
        return self.readout(reps), traces

    def predict(self, batch: Batch) -> np.ndarray:
        pred, _ = self.forward(batch)
        return pred.data

    def loss(self, batch: Batch, lam: float
             ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Returns (total, mae, penalty, prediction); total = mae + penalty."""
        pred, _ = self.forward(batch)
        err = add(pred, Tensor(-batch.labels))
        mae = tabs(err).mean()
        penalty = capsule_l2_penalty(self.builders, lam)
        return add(mae, penalty), mae, penalty, pred

    # parameters ----------------------------------------------------------

    def parameters(self) -> ParameterRegistry:
        return self.registry

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.tensor.data.copy() for name, p in
                self.registry.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.registry.items():
            if name not in state:
                raise KeyError(f"checkpoint missing parameter {name}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.tensor.data.shape:
                raise ValueError(f"parameter {name}: checkpoint shape "
                                 f"{arr.shape} vs model {p.tensor.data.shape}")
            p.tensor.data = arr.copy()

    def save(self, path: str, meta: dict | None = None) -> None:
        save_checkpoint(path, self.state_dict(), meta=meta)

    @staticmethod
    def load(path: str) -> "GraphCage":
        state, meta = load_checkpoint(path)
        cfg = ModelConfig(**meta["model_config"])
        model = GraphCage(cfg, seed=int(meta.get("seed", 0)))
        model.load_state_dict(state)
        return model

    def checkpoint_meta(self, seed: int) -> dict:
        from dataclasses import asdict
        return {"model_config": asdict(self.cfg), "seed": seed}
