"""Clustering evaluation: matched accuracy, NMI, occluder classification error."""

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = ["accuracy", "nmi", "occluder_error"]


def _contingency(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(
            f"label vectors must match, got {pred.shape} and {truth.shape}"
        )
    if pred.size == 0:
        raise ValueError("empty label vectors")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1))
    np.add.at(table, (pi, ti), 1.0)
    return table


def accuracy(pred, truth) -> float:
    """Fraction correct under the best one-to-one cluster-to-class matching.

    The matching maximizes total overlap over the (possibly rectangular)
    contingency table, solved exactly by the Hungarian method; label ids on
    either side are irrelevant.
    """
    table = _contingency(pred, truth)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / np.asarray(pred).size)


def _entropy(counts):
    p = counts / counts.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth, norm: str = "sqrt") -> float:
    """Normalized mutual information between two labelings.

    Natural logs over the empirical contingency table; ``norm`` divides the
    mutual information by sqrt(Hp*Ht), max(Hp,Ht), or their average. When
    either marginal entropy is 0 the value is 1 if the labelings are the
    same partition and 0 otherwise.
    """
    if norm not in ("sqrt", "max", "avg"):
        raise ValueError(f"unknown norm {norm!r}")
    table = _contingency(pred, truth)
    n = table.sum()
    hp = _entropy(table.sum(axis=1))
    ht = _entropy(table.sum(axis=0))
    if hp == 0.0 or ht == 0.0:
        # identical as partitions iff the table is a permutation-like matrix
        same = (np.count_nonzero(table.sum(axis=1)) == np.count_nonzero(table)) and (
            np.count_nonzero(table.sum(axis=0)) == np.count_nonzero(table)
        )
        return 1.0 if same else 0.0
    pij = table / n
    pi = pij.sum(axis=1, keepdims=True)
    pj = pij.sum(axis=0, keepdims=True)
    mask = pij > 0
    mi = float((pij[mask] * np.log(pij[mask] / (pi @ pj)[mask])).sum())
    denom = {"sqrt": np.sqrt(hp * ht), "max": max(hp, ht), "avg": (hp + ht) / 2.0}[norm]
    return float(mi / denom)


def occluder_error(labels, mask) -> float:
    """Classification error of figure-ground separation.

    The cluster overlapping the positive mask most becomes the positive
    prediction; the error is (false positives + false negatives) / N.
    """
    labels = np.asarray(labels)
    mask = np.asarray(mask).astype(bool)
    if labels.shape != mask.shape or labels.ndim != 1:
        raise ValueError(f"shape mismatch: {labels.shape} vs {mask.shape}")
    if not mask.any():
        raise ValueError("mask has no positive pixels")
    ids, inv = np.unique(labels, return_inverse=True)
    overlap = np.bincount(inv[mask], minlength=ids.size)
    positive = inv == np.argmax(overlap)
    return float(np.mean(positive != mask))
