"""Training objectives and evaluation metrics for trajectory and sequence-design tasks."""

from __future__ import annotations

import math

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .geomgraph import N_CATEGORIES, ResidueStructure
from .numerics import Tensor, as_tensor
from .numerics import tensor as tn


@dataclass
class LossReport:
    total: Tensor
    components: dict[str, float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return float(self.total.data)


@dataclass
class DesignPrediction:
    logits: Tensor  # (N, 20)
    backbone_pred: Tensor  # (N, 4, 3)

    @property
    def probabilities(self) -> np.ndarray:
        z = self.logits.data - self.logits.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    @property
    def categories(self) -> np.ndarray:
        return argmax_categories(self.probabilities)


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: prediction shape {a.shape} vs target shape {b.shape}")


def mse_loss(pred, target) -> Tensor:
    """Mean over frames of per-frame MSE, i.e. the mean of all squared entries."""
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target, "mse_loss")
    r = pred - target
    return tn.mean(r * r)


def huber(pred, target, delta: float = 1.0) -> Tensor:
    """Elementwise Huber penalty, averaged over elements."""
    if not delta > 0:
        raise ConfigError(f"Huber delta must be positive, got {delta}")
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target, "huber")
    r = pred - target
    inside = (np.abs(r.data) <= delta).astype(np.float64)
    quad = 0.5 * r * r
    lin = delta * (tn.absolute(r) - 0.5 * delta)
    return tn.mean(quad * inside + lin * (1.0 - inside))


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise DimensionError(f"logits {logits.shape} vs {targets.shape[0]} targets")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ContractError(f"target categories must lie in [0, {logits.shape[1]})")
    logp = tn.log_softmax(logits, axis=-1)
    picked = logp[np.arange(targets.size), targets]
    return -tn.mean(picked)


def design_loss(pred: DesignPrediction, gt: ResidueStructure | tuple, lam: float = 1.0, delta: float = 1.0) -> LossReport:
    """``CE + lam * Huber(backbone)``; ``gt`` may also be a ``(categories, backbone)`` pair."""
    cats, backbone = (gt.categories, gt.backbone) if isinstance(gt, ResidueStructure) else gt
    if pred.logits.shape[0] != len(cats):
        raise DimensionError(f"{pred.logits.shape[0]} predicted residues vs {len(cats)} targets")
    ce = cross_entropy(pred.logits, cats)
    hb = huber(pred.backbone_pred, backbone, delta)
    total = ce + lam * hb
    return LossReport(total, {"ce": float(ce.data), "huber": float(hb.data)})


def argmax_categories(probabilities: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest index."""
    return np.argmax(np.asarray(probabilities), axis=-1)


def compute_aar(pred_categories, gt_categories) -> float:
    """Fraction of positions whose predicted category matches."""
    p = np.asarray(pred_categories).reshape(-1)
    g = np.asarray(gt_categories).reshape(-1)
    if p.shape != g.shape:
        raise ContractError(f"sequence lengths differ: {p.size} vs {g.size}")
    if p.size == 0:
        raise ContractError("AAR of an empty sequence is undefined")
    return float(np.mean(p == g))


def compute_rmsd(pred, gt) -> float:
    """Root-mean-square atom deviation in the shared frame (no superposition).

    The squared deviations are summed with ``math.fsum`` (rounded once), so the
    value does not depend on summation order or array layout.
    """
    p, g = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.shape[-1] != 3:
        raise DimensionError(f"rmsd: shapes {p.shape} and {g.shape}")
    n_atoms = p.size // 3
    if n_atoms == 0:
        raise ContractError("rmsd of an empty structure")
    total = math.fsum(((p - g) ** 2).ravel().tolist())
    return math.sqrt(total / n_atoms)


