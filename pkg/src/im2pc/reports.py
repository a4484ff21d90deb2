"""Evaluation aggregation and CSV reports (metrics, recall curves, histograms).

All CSVs use '.' decimals, LF line endings, and a header row, so goldens can
be compared bytewise.
"""

from __future__ import annotations

import numpy as np

from .geometry import (PoseQT, msee_mrr, pose_to_matrix,
                       rre_rte, se3_distance)

RRE_GATE_DEG = 10.0
RTE_GATE = 5.0
RRE_BIN = 0.5
RTE_BIN = 0.1


def pair_errors(preds: list[PoseQT], gts: list[PoseQT]) -> np.ndarray:
    """(n, 2) array of (rre_deg, rte) rows."""
    out = np.empty((len(preds), 2))
    for i, (p, g) in enumerate(zip(preds, gts)):
        out[i] = rre_rte(p, g)
    return out


def gated_stats(errors: np.ndarray):
    """Mean/std of RRE and RTE over samples inside the 10 deg / 5 unit gate."""
    rre, rte = errors[:, 0], errors[:, 1]
    keep = (rre < RRE_GATE_DEG) & (rte < RTE_GATE)
    n = int(keep.sum())
    if n == 0:
        return {"n_total": len(errors), "n_gated": 0, "rre_mean": float("nan"),
                "rre_std": float("nan"), "rte_mean": float("nan"),
                "rte_std": float("nan")}
    return {
        "n_total": len(errors),
        "n_gated": n,
        "rre_mean": float(rre[keep].mean()),
        "rre_std": float(rre[keep].std()),
        "rte_mean": float(rte[keep].mean()),
        "rte_std": float(rte[keep].std()),
    }


def recall_rows(errors: np.ndarray):
    """(metric, threshold, recall) rows; denominators count every sample."""
    rows = []
    n = len(errors)
    for thr in np.arange(RRE_BIN, RRE_GATE_DEG + RRE_BIN / 2, RRE_BIN):
        rows.append(("rre", float(thr), float((errors[:, 0] <= thr).sum() / n)))
    for thr in np.arange(RTE_BIN, RTE_GATE + RTE_BIN / 2, RTE_BIN):
        rows.append(("rte", float(thr), float((errors[:, 1] <= thr).sum() / n)))
    return rows


def hist_rows(errors: np.ndarray):
    """(metric, bin_lo, bin_hi, fraction) rows with the fixed bin widths."""
    rows = []
    n = len(errors)
    for name, col, width, top in (("rre", 0, RRE_BIN, RRE_GATE_DEG),
                                  ("rte", 1, RTE_BIN, RTE_GATE)):
        edges = np.arange(0.0, top + width / 2, width)
        counts, _ = np.histogram(errors[:, col], bins=np.append(edges, np.inf))
        for lo, c in zip(edges, counts):
            rows.append((name, float(lo), float(lo + width), float(c / n)))
    return rows


def decalib_errors(preds: list[PoseQT], gts: list[PoseQT], noises) -> tuple:
    es = np.array([se3_distance(pose_to_matrix(p), pose_to_matrix(g))
                   for p, g in zip(preds, gts)])
    return msee_mrr(es, np.asarray(noises, dtype=np.float64))


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.9f}"
    return str(x)


def write_metrics_csv(path, stats: dict, extra: dict | None = None):
    keys = list(stats.keys()) + list((extra or {}).keys())
    vals = list(stats.values()) + list((extra or {}).values())
    with open(path, "w", newline="") as f:
        f.write(",".join(keys) + "\n")
        f.write(",".join(_fmt(v) for v in vals) + "\n")


def write_recall_csv(path, rows):
    with open(path, "w", newline="") as f:
        f.write("metric,threshold,recall\n")
        for m, t, r in rows:
            f.write(f"{m},{_fmt(t)},{_fmt(r)}\n")


def write_hist_csv(path, rows):
    with open(path, "w", newline="") as f:
        f.write("metric,bin_lo,bin_hi,fraction\n")
        for m, lo, hi, fr in rows:
            f.write(f"{m},{_fmt(lo)},{_fmt(hi)},{_fmt(fr)}\n")
