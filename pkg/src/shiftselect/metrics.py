"""Recall@K, median and mean rank for retrieval similarity matrices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_KS = (1, 5, 10)


@dataclass
class RetrievalReport:
    direction: str
    r_at: dict[int, float]
    mdr: float
    mnr: float
    n_queries: int
    ranks: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def rsum(self) -> float:
        return float(sum(self.r_at.values()))

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "r_at": {str(k): v for k, v in self.r_at.items()},
            "mdr": self.mdr,
            "mnr": self.mnr,
            "rsum": self.rsum,
            "n_queries": self.n_queries,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalReport":
        return cls(d["direction"], {int(k): float(v) for k, v in d["r_at"].items()}, d["mdr"], d["mnr"], d["n_queries"])

    def summary(self) -> str:
        rs = " ".join(f"R@{k}={v:.2f}" for k, v in self.r_at.items())
        return f"{self.direction}: {rs} MdR={self.mdr:g} MnR={self.mnr:.3f} rsum={self.rsum:.2f}"


def rank_of_truth(scores, truth_index: int) -> int:
    """1-based rank; equal scores at a lower candidate index rank ahead of the truth."""
    s = np.asarray(scores, dtype=np.float64)
    if not 0 <= truth_index < s.shape[0]:
        raise IndexError(f"truth index {truth_index} outside [0, {s.shape[0]})")
    target = s[truth_index]
    return int(1 + np.sum(s > target) + np.sum(s[:truth_index] == target))


def truth_ranks(sim, pairing) -> np.ndarray:
    """Vectorised rank_of_truth over every row of ``sim``."""
    s = np.asarray(sim, dtype=np.float64)
    pairing = np.asarray(pairing, dtype=np.int64)
    if pairing.shape != (s.shape[0],):
        raise ValueError("pairing must name one candidate per query")
    if np.any(pairing < 0) or np.any(pairing >= s.shape[1]):
        raise IndexError("pairing refers to a candidate outside the matrix")
    target = s[np.arange(s.shape[0]), pairing][:, None]
    lower = np.arange(s.shape[1])[None, :] < pairing[:, None]
    return 1 + (s > target).sum(axis=1) + ((s == target) & lower).sum(axis=1)


def lower_median(values) -> float:
    v = np.sort(np.asarray(values))
    return float(v[(len(v) - 1) // 2])


def compute_metrics(sim, pairing=None, ks=DEFAULT_KS, direction: str = "t2v") -> RetrievalReport:
    """Aggregate truth ranks; ``pairing`` defaults to the diagonal."""
    s = np.asarray(sim, dtype=np.float64)
    if pairing is None:
        pairing = np.arange(s.shape[0])
    ranks = truth_ranks(s, pairing)
    r_at = {int(k): 100.0 * float(np.mean(ranks <= k)) for k in ks}
    return RetrievalReport(
        direction=direction,
        r_at=r_at,
        mdr=lower_median(ranks),
        mnr=float(np.mean(ranks)),
        n_queries=int(len(ranks)),
        ranks=ranks,
    )


def both_directions(sim, ks=DEFAULT_KS, t2v_sim=None) -> tuple[RetrievalReport, RetrievalReport]:
    """t2v on rows (optionally of a renormalised matrix) and v2t on columns, diagonal pairing."""
    s = np.asarray(sim, dtype=np.float64)
    t2v = compute_metrics(s if t2v_sim is None else t2v_sim, ks=ks, direction="t2v")
    v2t = compute_metrics(s.T, ks=ks, direction="v2t")
    return t2v, v2t
