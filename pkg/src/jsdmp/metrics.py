"""Classification accuracy and normalized mutual information."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def predict(logits: np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    return np.argmax(np.asarray(logits), axis=1)


def _masked(pred, true, mask):
    pred = np.asarray(pred)
    if pred.ndim == 2:
        pred = predict(pred)
    true = np.asarray(true)
    mask = np.ones(true.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ConfigError("metric mask selects no nodes")
    return pred[mask], true[mask]


def accuracy(pred_labels, true_labels, mask=None) -> float:
    """Fraction of masked nodes predicted correctly; ``pred_labels`` may be logits."""
    p, t = _masked(pred_labels, true_labels, mask)
    return float(np.mean(p == t))


def contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    return table


def nmi_from_contingency(table: np.ndarray) -> float:
    """``2 I(Y; Z) / (H(Y) + H(Z))`` with natural logs."""
    table = np.asarray(table, dtype=np.float64)
    total = table.sum()
    pxy = table / total
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    hx = -np.sum(px[px > 0] * np.log(px[px > 0]))
    hy = -np.sum(py[py > 0] * np.log(py[py > 0]))
    if hx == 0.0 and hy == 0.0:
        return 1.0
    if hx == 0.0 or hy == 0.0:
        return 0.0
    nz = pxy > 0
    outer = np.outer(px, py)
    mi = np.sum(pxy[nz] * np.log(pxy[nz] / outer[nz]))
    return float(min(max(2.0 * mi / (hx + hy), 0.0), 1.0))


def nmi(pred_labels, true_labels, mask=None) -> float:
    p, t = _masked(pred_labels, true_labels, mask)
    return nmi_from_contingency(contingency(t, p))
