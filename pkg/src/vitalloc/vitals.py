"""Vital-sign semantics: normal ranges, penalties, normalization, and the
clinical-intervention effect model.

A vital vector is a plain 1-D ``np.ndarray`` of raw-unit readings, one per
configured :class:`VitalSignSpec`, in spec order. Rewards are computed on
raw units; the simulator dynamics run on min-max normalized values, so the
typical call pattern is ``reward(denormalize(state, specs), specs)``.

Threshold boundary: a reading exactly at the threshold counts as normal
(penalty 0). The abnormal region is strictly one-sided, so the penalty
jumps from 0 to -1 (= -exp(0)) immediately past the threshold; that
discontinuity is inherent to the exponential penalty form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateRangeError, InvalidInputError, SchemaError

ABOVE = "above"
BELOW = "below"

#: names accepted for the ``direction`` field
_DIRECTIONS = (ABOVE, BELOW)


@dataclass(frozen=True)
class VitalSignSpec:
    """Per-sign abnormality threshold, penalty scale, intervention effect,
    and the min/max used for normalization. All fields are in raw units.

    ``direction`` is ``"above"`` when readings above the threshold are
    abnormal, ``"below"`` when readings below it are.
    """

    name: str
    threshold: float
    direction: str
    penalty_scale: float
    intervention_mean: float
    intervention_sd: float
    data_min: float
    data_max: float

    def __post_init__(self):
        if self.direction not in _DIRECTIONS:
            raise InvalidInputError(
                f"{self.name}: direction must be one of {_DIRECTIONS}, got {self.direction!r}"
            )
        if not self.penalty_scale > 0:
            raise InvalidInputError(f"{self.name}: penalty_scale must be > 0")
        if not self.intervention_sd > 0:
            raise InvalidInputError(f"{self.name}: intervention_sd must be > 0")
        if not self.data_min < self.data_max:
            raise DegenerateRangeError(
                f"{self.name}: data_min ({self.data_min}) must be < data_max ({self.data_max})"
            )

    def deviation(self, reading: float) -> float:
        """Abnormal-side deviation from the threshold; 0 on the normal side
        and exactly at the threshold."""
        if self.direction == ABOVE:
            return max(0.0, reading - self.threshold)
        return max(0.0, self.threshold - reading)

    def is_abnormal(self, reading: float) -> bool:
        return self.deviation(reading) > 0.0


def penalty(sign: VitalSignSpec, reading: float) -> float:
    """Penalty (<= 0) for a single raw reading.

    0 on the normal side of the threshold (threshold itself included),
    otherwise ``-exp(deviation / penalty_scale)``.
    """
    if not math.isfinite(reading):
        raise InvalidInputError(f"{sign.name}: reading must be finite, got {reading!r}")
    dev = sign.deviation(reading)
    if dev == 0.0:
        return 0.0
    return -math.exp(dev / sign.penalty_scale)


def reward(vitals: np.ndarray, specs: Sequence[VitalSignSpec]) -> float:
    """Sum of per-sign penalties for a raw vital vector; 0 iff all signs
    are within their normal range."""
    vitals = np.asarray(vitals, dtype=float)
    _check_dims(vitals, specs)
    return sum(penalty(spec, float(v)) for spec, v in zip(specs, vitals))


def apply_intervention(
    vitals: np.ndarray,
    specs: Sequence[VitalSignSpec],
    rng: np.random.Generator,
    truncate_negative: bool = False,
) -> np.ndarray:
    """Shift each abnormal sign toward its normal side by a
    Normal(intervention_mean, intervention_sd) draw; normal signs are
    untouched.

    Draws are applied as sampled: a large draw may overshoot deep into the
    normal range and a negative draw (Gaussian tail) may slightly worsen
    the sign, unless ``truncate_negative`` clamps draws at 0.
    """
    vitals = np.asarray(vitals, dtype=float)
    _check_dims(vitals, specs)
    out = vitals.copy()
    for i, spec in enumerate(specs):
        if not spec.is_abnormal(float(vitals[i])):
            continue
        shift = float(rng.normal(spec.intervention_mean, spec.intervention_sd))
        if truncate_negative:
            shift = max(0.0, shift)
        out[i] += -shift if spec.direction == ABOVE else shift
    return out


def normalize(vitals: np.ndarray, specs: Sequence[VitalSignSpec]) -> np.ndarray:
    """Min-max normalize raw readings: (v - data_min) / (data_max - data_min).

    Readings outside [data_min, data_max] map outside [0, 1]; no clamping.
    """
    vitals = np.asarray(vitals, dtype=float)
    _check_dims(vitals, specs, allow_rows=True)
    lo, span = _range_arrays(specs)
    return (vitals - lo) / span


def denormalize(vitals: np.ndarray, specs: Sequence[VitalSignSpec]) -> np.ndarray:
    """Exact inverse of :func:`normalize`."""
    vitals = np.asarray(vitals, dtype=float)
    _check_dims(vitals, specs, allow_rows=True)
    lo, span = _range_arrays(specs)
    return vitals * span + lo


def _range_arrays(specs: Sequence[VitalSignSpec]):
    lo = np.array([s.data_min for s in specs])
    hi = np.array([s.data_max for s in specs])
    span = hi - lo
    if np.any(span == 0):
        raise DegenerateRangeError("data_max equals data_min for some sign")
    return lo, span


def _check_dims(vitals: np.ndarray, specs: Sequence[VitalSignSpec], allow_rows: bool = False):
    if allow_rows and vitals.ndim == 2:
        width = vitals.shape[1]
    elif vitals.ndim == 1:
        width = vitals.shape[0]
    else:
        raise InvalidInputError(f"expected a vital vector, got shape {vitals.shape}")
    if width != len(specs):
        raise InvalidInputError(f"vital vector has {width} entries for {len(specs)} specs")


def with_range(spec: VitalSignSpec, data_min: float, data_max: float) -> VitalSignSpec:
    """Copy of ``spec`` with normalization bounds replaced."""
    return replace(spec, data_min=data_min, data_max=data_max)


# ---------------------------------------------------------------------------
# Presets and the key-value spec file format
# ---------------------------------------------------------------------------

# Default normalization bounds are generous physiological ranges; pipelines
# that fit a simulator replace them with corpus min/max.
_HEART_RATE = VitalSignSpec(
    name="heart_rate", threshold=120.0, direction=ABOVE, penalty_scale=17.0,
    intervention_mean=15.0, intervention_sd=5.0, data_min=30.0, data_max=220.0,
)
_RESPIRATORY_RATE = VitalSignSpec(
    name="respiratory_rate", threshold=30.0, direction=ABOVE, penalty_scale=5.0,
    intervention_mean=10.0, intervention_sd=3.33, data_min=4.0, data_max=60.0,
)
_SKIN_TEMPERATURE = VitalSignSpec(
    name="skin_temperature", threshold=38.0, direction=ABOVE, penalty_scale=2.0,
    intervention_mean=1.5, intervention_sd=0.5, data_min=32.0, data_max=42.0,
)
_SPO2 = VitalSignSpec(
    name="spo2", threshold=90.0, direction=BELOW, penalty_scale=4.0,
    intervention_mean=3.0, intervention_sd=1.0, data_min=50.0, data_max=100.0,
)

PRESETS: dict[str, tuple[VitalSignSpec, ...]] = {
    "mimic4": (_HEART_RATE, _RESPIRATORY_RATE, _SKIN_TEMPERATURE),
    "mimic3": (_HEART_RATE, _RESPIRATORY_RATE, _SPO2),
    "mbarara": (_HEART_RATE, _RESPIRATORY_RATE, _SPO2),
}


def preset_specs(name: str) -> list[VitalSignSpec]:
    try:
        return list(PRESETS[name])
    except KeyError:
        raise SchemaError(f"unknown vital preset {name!r}; choose from {sorted(PRESETS)}") from None


_FIELD_PARSERS = {
    "threshold": float,
    "direction": str,
    "penalty_scale": float,
    "intervention_mean": float,
    "intervention_sd": float,
    "data_min": float,
    "data_max": float,
}


def save_specs(specs: Iterable[VitalSignSpec], path) -> None:
    """Write specs as ``<sign>.<field> = <value>`` lines."""
    lines = []
    for spec in specs:
        for field in _FIELD_PARSERS:
            lines.append(f"{spec.name}.{field} = {getattr(spec, field)!r}".replace("'", ""))
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def load_specs(path) -> list[VitalSignSpec]:
    """Load specs from the key-value format written by :func:`save_specs`.

    Sign order follows first appearance in the file.
    """
    fields: dict[str, dict[str, float | str]] = {}
    order: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchemaError(f"{path}: line {lineno}: expected 'sign.field = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if "." not in key:
                raise SchemaError(f"{path}: line {lineno}: key {key!r} lacks a sign prefix")
            sign, field = key.split(".", 1)
            if field not in _FIELD_PARSERS:
                raise SchemaError(f"{path}: line {lineno}: unknown field {field!r}")
            if sign not in fields:
                fields[sign] = {}
                order.append(sign)
            fields[sign][field] = _FIELD_PARSERS[field](value)
    specs = []
    for sign in order:
        missing = set(_FIELD_PARSERS) - set(fields[sign])
        if missing:
            raise SchemaError(f"{path}: sign {sign!r} is missing fields {sorted(missing)}")
        specs.append(VitalSignSpec(name=sign, **fields[sign]))  # type: ignore[arg-type]
    return specs
