"""Routing-trace export and cue-attention statistics.

A construction trace is column-stochastic over nodes: every real time step's
coefficients sum to 1. "How much attention a step receives" is therefore
measured as the peak coefficient max_j r[i, j] of the final routing
iteration: informative steps concentrate their mass on few nodes while
uninformative steps stay near the uniform 1/n.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .construction import RoutingTrace
from .data import Example, make_batch
from .model import GraphCage

_HEAT = " .:-=+*#%@"


def export_traces(traces: list[RoutingTrace], out_dir: str) -> list[str]:
    """Write one JSON file per trace; batch dimension must be 1."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for trace in traces:
        squeezed = RoutingTrace(stage=trace.stage, modality=trace.modality,
                                p=trace.p, k=trace.k, mask=trace.mask)
        for it in trace.iterations:
            if it.shape[0] != 1:
                raise ValueError("trace export expects a single example")
            squeezed.record(it[0])
        if squeezed.mask is not None:
            squeezed.mask = squeezed.mask[0]
        suffix = f"_k{trace.k}" if trace.k is not None else ""
        name = f"{trace.stage}_{trace.modality}{suffix}.json"
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(squeezed.to_json_dict(), fh, sort_keys=True)
            fh.write("\n")
        paths.append(path)
    return paths


def ascii_heatmap(coefficients: np.ndarray) -> str:
    """Rows are nodes, columns time steps, mirroring the usual routing
    coefficient layout."""
    grid = np.asarray(coefficients).T  # (n, T)
    lo, hi = grid.min(), grid.max()
    span = hi - lo if hi > lo else 1.0
    lines = []
    for row in grid:
        idx = ((row - lo) / span * (len(_HEAT) - 1)).astype(int)
        lines.append("".join(_HEAT[i] for i in idx))
    return "\n".join(lines)


def inspect_example(model: GraphCage, example: Example, out_dir: str,
                    ascii_out: bool = False) -> dict:
    """Single-example forward pass plus trace export."""
    batch = make_batch([example])
    pred, traces = model.forward(batch)
    paths = export_traces(traces, out_dir)
    result = {"prediction": float(pred.data[0]),
              "label": example.label,
              "trace_files": paths}
    if ascii_out:
        heat_paths = []
        for trace in traces:
            if trace.stage != "construction":
                continue
            path = os.path.join(out_dir,
                                f"heatmap_{trace.modality}.txt")
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(ascii_heatmap(trace.iterations[-1][0]))
                fh.write("\n")
            heat_paths.append(path)
        result["heatmap_files"] = heat_paths
    return result


def step_attention(trace: RoutingTrace) -> np.ndarray:
    """Peak routing coefficient per time step in the final iteration."""
    final = trace.iterations[-1]
    r = final[0] if final.ndim == 3 else final
    return r.max(axis=-1)


def cue_mass_statistic(model: GraphCage, examples: list[Example]) -> dict:
    """Fraction of examples whose planted-cue time steps receive strictly
    greater mean peak routing mass than non-cue steps."""
    wins = 0
    used = 0
    for example in examples:
        cue_by_modality: dict[str, list[int]] = {}
        for cue in example.cues:
            cue_by_modality.setdefault(cue["modality"], []).append(
                cue["position"])
        if not cue_by_modality:
            continue
        _, traces = model.forward(make_batch([example]))
        cue_scores, rest_scores = [], []
        for trace in traces:
            if trace.stage != "construction":
                continue
            if trace.modality not in cue_by_modality:
                continue
            attention = step_attention(trace)
            positions = cue_by_modality[trace.modality]
            flags = np.zeros(len(attention), dtype=bool)
            flags[positions] = True
            cue_scores.extend(attention[flags])
            rest_scores.extend(attention[~flags])
        if not cue_scores or not rest_scores:
            continue
        used += 1
        if np.mean(cue_scores) > np.mean(rest_scores):
            wins += 1
    return {"examples": used, "wins": wins,
            "fraction": wins / used if used else 0.0}
