"""Sample-quality distance and the training metrics CSV."""
from __future__ import annotations

import csv
import dataclasses
from pathlib import Path

import numpy as np

CSV_HEADER = ("step", "loss", "weighted_loss", "grad_norm", "lr", "wall_ms")


def eval_moments(generated, reference) -> float:
    """2-Wasserstein distance between diagonal Gaussian fits of two sample sets.

    ``sqrt(|mu_g - mu_r|^2 + |sigma_g - sigma_r|^2)`` with per-dimension
    population standard deviations.
    """
    g = np.asarray(getattr(generated, "data", generated), dtype=np.float64)
    r = np.asarray(getattr(reference, "data", reference), dtype=np.float64)
    if g.shape[0] < 2 or r.shape[0] < 2:
        raise ValueError(f"eval_moments needs at least 2 samples per set, got {g.shape[0]} and {r.shape[0]}")
    g, r = g.reshape(g.shape[0], -1), r.reshape(r.shape[0], -1)
    if g.shape[1] != r.shape[1]:
        raise ValueError(f"eval_moments: sample sizes differ ({g.shape[1]} vs {r.shape[1]})")
    dm = g.mean(axis=0) - r.mean(axis=0)
    ds = g.std(axis=0) - r.std(axis=0)
    return float(np.sqrt(np.sum(dm * dm) + np.sum(ds * ds)))


class MetricsWriter:
    """Appends one row per training step; ``repr`` keeps floats round-trippable."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._f, lineterminator="\n")
        self._w.writerow(CSV_HEADER)

    def write(self, stats) -> None:
        row = dataclasses.asdict(stats) if dataclasses.is_dataclass(stats) else dict(stats)
        self._w.writerow([row["step"]] + [repr(float(row[k])) for k in CSV_HEADER[1:]])

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in reader]
