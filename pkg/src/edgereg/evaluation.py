"""
Registration accuracy and regularity metrics with JSON reporting.
"""

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Optional

import numpy as np

from edgereg.errors import DataError
from edgereg.grid import LabelMap2D, VectorField2D, check_same_shape
from edgereg.register import RegistrationResult
from edgereg.synth import PhantomPair
from edgereg.transform import jacobian_determinant, warp_labels


@dataclass
class EvalReport:
    dice_per_label: dict[int, float]
    dice_mean: float
    fold_ratio: float
    grad_jac_mean: float
    runtime_ms: float = 0.0
    config: dict[str, Any] = field(default_factory=dict)
    loss_history: list[dict[str, float]] = field(default_factory=list)

    def __post_init__(self):
        scores = list(self.dice_per_label.values()) + [self.dice_mean, self.fold_ratio]
        if not all(0.0 <= s <= 1.0 for s in scores):
            raise DataError(f"dice and fold ratio must lie in [0, 1]: {scores}")
        if not np.isfinite(self.grad_jac_mean) or not np.isfinite(self.runtime_ms):
            raise DataError("report contains non-finite values")

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["dice_per_label"] = {str(k): v for k, v in sorted(self.dice_per_label.items())}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EvalReport":
        try:
            return cls(
                dice_per_label={int(k): float(v) for k, v in data["dice_per_label"].items()},
                dice_mean=float(data["dice_mean"]),
                fold_ratio=float(data["fold_ratio"]),
                grad_jac_mean=float(data["grad_jac_mean"]),
                runtime_ms=float(data.get("runtime_ms", 0.0)),
                config=dict(data.get("config", {})),
                loss_history=list(data.get("loss_history", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed report: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed report JSON: {exc}") from exc


def dice(a: LabelMap2D, b: LabelMap2D, labels: Optional[Iterable[int]] = None) -> dict[int, float]:
    """
    Per-label Dice overlap 2|A & B| / (|A| + |B|).

    Labels absent from both maps are left out of the result. Defaults to every
    non-background label present in either map.
    """
    check_same_shape(a, b)
    if labels is None:
        labels = a.label_set() | b.label_set()
    scores = {}
    for label in sorted(labels):
        in_a = a.labels == label
        in_b = b.labels == label
        total = int(in_a.sum()) + int(in_b.sum())
        if total == 0:
            continue
        scores[int(label)] = 2.0 * int(np.logical_and(in_a, in_b).sum()) / total
    return scores


def jacobian_stats(u: VectorField2D) -> tuple[float, float]:
    """(fraction of pixels with J < 0, mean |grad J|) with central differences."""
    jac = jacobian_determinant(u).data
    fold_ratio = float(np.count_nonzero(jac < 0)) / jac.size
    d_dy, d_dx = np.gradient(jac)
    return fold_ratio, float(np.mean(np.hypot(d_dx, d_dy)))


def evaluate_displacement(
    fixed_seg: LabelMap2D,
    moving_seg: LabelMap2D,
    u: VectorField2D,
    runtime_ms: float = 0.0,
    config: Optional[dict[str, Any]] = None,
    loss_history: Iterable[dict[str, float]] = (),
) -> EvalReport:
    """Score a displacement by warping moving_seg (nearest neighbour) onto fixed_seg."""
    check_same_shape(fixed_seg, moving_seg, u)
    scores = dice(fixed_seg, warp_labels(moving_seg, u))
    if not scores:
        raise DataError("no foreground labels to score")
    fold_ratio, grad_jac_mean = jacobian_stats(u)
    return EvalReport(
        dice_per_label=scores,
        dice_mean=float(np.mean(list(scores.values()))),
        fold_ratio=fold_ratio,
        grad_jac_mean=grad_jac_mean,
        runtime_ms=runtime_ms,
        config=dict(config or {}),
        loss_history=list(loss_history),
    )


def evaluate_registration(pair: PhantomPair, result: RegistrationResult) -> EvalReport:
    return evaluate_displacement(
        pair.fixed_seg,
        pair.moving_seg,
        result.displacement,
        runtime_ms=result.runtime_ms,
        config=result.config.to_dict(),
        loss_history=[terms.to_dict() for terms in result.loss_history],
    )
