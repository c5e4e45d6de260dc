"""Synthetic dataset generation, JSON-lines loading, and batching.

Dataset format: one example per line,
{"text": [[...] x T_t], "audio": [[...] x T_a], "vision": [[...] x T_v],
 "label": y, "cues": [{"modality": m, "position": i, "sign": s}, ...]}
The "cues" entry records where the generator planted its signal and is only
used for interpretability statistics.

The synthetic task plants two signed cue vectors at random positions in two
different modalities; the label is the product of the cue signs times
1.5 + uniform(-0.3, 0.3) noise, so a correct prediction requires combining
information across modalities and across distant time steps.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .fusion import MODALITIES
from .model import Batch

_KEYS = {"t": "text", "a": "audio", "v": "vision"}


@dataclass
class SyntheticSpec:
    d_t: int = 8
    d_a: int = 6
    d_v: int = 6
    len_t: tuple[int, int] = (20, 20)     # inclusive [min, max] ranges
    len_a: tuple[int, int] = (120, 120)
    len_v: tuple[int, int] = (150, 150)
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 200
    noise_std: float = 0.1
    cue_magnitude: float = 3.0
    n_distractors: int = 0   # per modality; cue-sized but label-irrelevant

    @staticmethod
    def from_json(path: str) -> "SyntheticSpec":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        spec = SyntheticSpec()
        for key, value in raw.items():
            if not hasattr(spec, key):
                raise ValueError(f"unknown synthetic spec key: {key}")
            if key.startswith("len_"):
                value = tuple(value)
            setattr(spec, key, value)
        return spec

    def dim(self, m: str) -> int:
        return {"t": self.d_t, "a": self.d_a, "v": self.d_v}[m]

    def length_range(self, m: str) -> tuple[int, int]:
        return {"t": self.len_t, "a": self.len_a, "v": self.len_v}[m]


@dataclass
class Example:
    sequences: dict[str, np.ndarray]   # modality -> (T, d)
    label: float
    cues: list[dict] = field(default_factory=list)


def _generate_example(spec: SyntheticSpec, rng: np.random.Generator) -> dict:
    seqs = {}
    lengths = {}
    for m in MODALITIES:
        lo, hi = spec.length_range(m)
        T = int(rng.integers(lo, hi + 1))
        lengths[m] = T
        seqs[m] = rng.normal(0.0, spec.noise_std, size=(T, spec.dim(m)))
    cue_modalities = rng.choice(len(MODALITIES), size=2, replace=False)
    cues = []
    signs = []
    taken = {m: set() for m in MODALITIES}
    for idx in cue_modalities:
        m = MODALITIES[idx]
        pos = int(rng.integers(0, lengths[m]))
        sign = 1 if rng.random() < 0.5 else -1
        seqs[m][pos, :] += sign * spec.cue_magnitude
        cues.append({"modality": m, "position": pos, "sign": sign})
        signs.append(sign)
        taken[m].add(pos)
    # optional distractors: cue-magnitude bursts in random directions,
    # irrelevant to the label; they make "sum every step" an unreliable
    # strategy but also slow learning, so the default task stays clean.
    if spec.n_distractors:
        for m in MODALITIES:
            free = [i for i in range(lengths[m]) if i not in taken[m]]
            count = min(int(rng.integers(0, spec.n_distractors + 1)),
                        len(free))
            for pos in rng.choice(len(free), size=count, replace=False):
                direction = rng.normal(size=spec.dim(m))
                direction /= np.linalg.norm(direction)
                seqs[m][free[pos], :] += spec.cue_magnitude * direction
    label = signs[0] * signs[1] * (1.5 + rng.uniform(-0.3, 0.3))
    record = {_KEYS[m]: seqs[m].tolist() for m in MODALITIES}
    record["label"] = label
    record["cues"] = cues
    return record


def generate_dataset(spec: SyntheticSpec, seed: int, out_dir: str
                     ) -> dict[str, str]:
    """Write train/val/test JSON-lines files; deterministic in (spec, seed)."""
    total = spec.n_train + spec.n_val + spec.n_test
    if total < 10:
        raise ValueError(f"need at least 10 examples, got {total}")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = {}
    for split, count in (("train", spec.n_train), ("val", spec.n_val),
                         ("test", spec.n_test)):
        path = os.path.join(out_dir, f"{split}.jsonl")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for _ in range(count):
                fh.write(json.dumps(_generate_example(spec, rng)))
                fh.write("\n")
        paths[split] = path
    return paths


def load_dataset(path: str) -> list[Example]:
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            seqs = {m: np.asarray(raw[_KEYS[m]], dtype=np.float64)
                    for m in MODALITIES}
            label = float(raw["label"])
            if not -3.0 <= label <= 3.0:
                raise ValueError(f"label {label} outside [-3, 3]")
            examples.append(Example(seqs, label, raw.get("cues", [])))
    return examples


def make_batch(examples: list[Example]) -> Batch:
    """Pad each modality to the batch maximum length and build masks."""
    sequences, masks = {}, {}
    for m in MODALITIES:
        lengths = [ex.sequences[m].shape[0] for ex in examples]
        T = max(lengths)
        d = examples[0].sequences[m].shape[1]
        arr = np.zeros((len(examples), T, d))
        mask = np.zeros((len(examples), T))
        for i, ex in enumerate(examples):
            t = lengths[i]
            arr[i, :t] = ex.sequences[m]
            mask[i, :t] = 1.0
        sequences[m] = arr
        masks[m] = mask
    labels = np.array([ex.label for ex in examples])
    return Batch(sequences, masks, labels)


def iter_batches(examples: list[Example], batch_size: int,
                 shuffle_rng: np.random.Generator | None = None):
    order = np.arange(len(examples))
    if shuffle_rng is not None:
        shuffle_rng.shuffle(order)
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[start:start + batch_size]]
        yield make_batch(chunk)
