"""Seeded Monte-Carlo forecast fans for renewable availability and load.

Forecasts are produced by a small parametric family of autoregressive
processes around a (possibly periodic) mean profile.  Each sampled
trajectory follows

    w(t) = clamp( mu(t) + d(t) ),    d(t) = sum_l a_l * d(t - l) + e(t),

where ``mu`` is the mean profile (cycled over its length), ``a`` are the
AR coefficients and ``e`` are independent normal residuals.  Residuals come
from a counter-based stream (Philox) keyed by (seed, scenario index), so a
fan is bit-reproducible regardless of evaluation order or thread count.

All signals are in per-unit.  Sign conventions are enforced through the
clamp range: renewable availability uses a nonnegative range, loads use a
nonpositive one (active sign convention).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

AUTOREGRESSIVE = "autoregressive"
SEASONAL_AUTOREGRESSIVE = "seasonal-autoregressive"

_KINDS = (AUTOREGRESSIVE, SEASONAL_AUTOREGRESSIVE)

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ProcessSpec:
    """Parametric stochastic process for one forecast signal.

    Parameters
    ----------
    kind:
        ``"autoregressive"`` or ``"seasonal-autoregressive"``.
    mean_profile:
        Per-step nominal values in pu.  Indexed cyclically; for seasonal
        processes its length must equal ``season_length``.
    ar_coefficients:
        Coefficients of the AR recursion on deviations from the profile.
    residual_stddev:
        Standard deviation of the normal residuals, in pu.
    season_length:
        Period of the seasonal profile in steps, 0 for non-seasonal.
    clamp_range:
        Physical range ``[lo, hi]`` applied to emitted values (truncation).
    """

    kind: str
    mean_profile: tuple[float, ...]
    ar_coefficients: tuple[float, ...] = ()
    residual_stddev: float = 0.0
    season_length: int = 0
    clamp_range: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown process kind {self.kind!r}")
        object.__setattr__(self, "mean_profile", tuple(float(v) for v in self.mean_profile))
        object.__setattr__(self, "ar_coefficients", tuple(float(v) for v in self.ar_coefficients))
        object.__setattr__(self, "clamp_range", (float(self.clamp_range[0]), float(self.clamp_range[1])))
        if len(self.mean_profile) == 0:
            raise ConfigurationError("mean_profile must contain at least one value")
        if self.residual_stddev < 0:
            raise ConfigurationError("residual_stddev must be >= 0")
        lo, hi = self.clamp_range
        if lo > hi:
            raise ConfigurationError("clamp_range lower bound exceeds upper bound")
        if self.kind == SEASONAL_AUTOREGRESSIVE:
            if self.season_length < 1:
                raise ConfigurationError("seasonal process needs season_length >= 1")
            if len(self.mean_profile) != self.season_length:
                raise ConfigurationError(
                    "seasonal mean_profile length must equal season_length"
                )
        elif self.season_length != 0:
            raise ConfigurationError("non-seasonal process must have season_length == 0")

    def mean_at(self, step: int) -> float:
        """Profile value at an absolute step index (cyclic)."""
        return self.mean_profile[step % len(self.mean_profile)]


@dataclass(frozen=True)
class ScenarioFan:
    """A set of equiprobable forecast trajectories.

    ``values`` has shape (n_scenarios, horizon, n_signals); every scenario
    carries probability ``1 / n_scenarios``.
    """

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 3:
            raise ConfigurationError("fan values must have shape (n, J, signals)")
        if vals.shape[0] < 1 or vals.shape[1] < 1 or vals.shape[2] < 1:
            raise ConfigurationError("fan must contain at least one scenario and step")
        object.__setattr__(self, "values", vals)

    @property
    def n_scenarios(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    @property
    def n_signals(self) -> int:
        return self.values.shape[2]

    @property
    def probabilities(self) -> np.ndarray:
        n = self.n_scenarios
        return np.full(n, 1.0 / n)


def _residual_rows(seed: int, n: int, horizon: int) -> np.ndarray:
    """Standard-normal residuals, one Philox stream per scenario."""
    out = np.empty((n, horizon))
    base = int(seed) & _MASK64
    for s in range(n):
        key = np.array([base, s], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        out[s] = gen.standard_normal(horizon)
    return out


def generate_fan(
    spec: ProcessSpec,
    nominal_start: float,
    n: int,
    horizon: int,
    seed: int,
    start_step: int = 0,
) -> ScenarioFan:
    """Sample ``n`` equiprobable trajectories of ``horizon`` steps.

    ``nominal_start`` is the observed value at ``start_step``; emitted step
    ``j`` corresponds to absolute step ``start_step + 1 + j``, which fixes
    the phase of seasonal profiles.  Identical arguments reproduce
    bit-identical output.
    """
    if n < 1:
        raise ConfigurationError("need at least one scenario")
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    coeffs = np.asarray(spec.ar_coefficients, dtype=float)
    order = len(coeffs)
    lo, hi = spec.clamp_range

    if spec.residual_stddev == 0.0:
        resid = np.zeros((1, horizon))
        n_paths = 1
    else:
        resid = spec.residual_stddev * _residual_rows(seed, n, horizon)
        n_paths = n

    # Deviation history is flat at the last observed deviation.
    d0 = float(nominal_start) - spec.mean_at(start_step)
    hist = np.full((n_paths, max(order, 1)), d0)
    deviations = np.empty((n_paths, horizon))
    for j in range(horizon):
        if order:
            d = hist @ coeffs[::-1] + resid[:, j]
        else:
            d = resid[:, j].copy()
        deviations[:, j] = d
        if order:
            hist = np.column_stack([hist[:, 1:], d]) if order > 1 else d[:, None]

    means = np.array([spec.mean_at(start_step + 1 + j) for j in range(horizon)])
    values = np.clip(means[None, :] + deviations, lo, hi)
    if n_paths == 1 and n > 1:
        values = np.repeat(values, n, axis=0)
    return ScenarioFan(values[:, :, None])


def nominal_forecast(fan: ScenarioFan) -> np.ndarray:
    """Per-step mean across scenarios (the certainty-equivalence input)."""
    if fan.n_scenarios < 1:
        raise ConfigurationError("empty fan")
    return fan.values.mean(axis=0)


def combine_fans(fans: list[ScenarioFan]) -> ScenarioFan:
    """Stack single-signal fans into one multi-signal fan.

    Scenario ``s`` of the result pairs scenario ``s`` of every input; the
    inputs must agree on scenario count and horizon.
    """
    if not fans:
        raise ConfigurationError("no fans to combine")
    n = fans[0].n_scenarios
    horizon = fans[0].horizon
    for f in fans[1:]:
        if f.n_scenarios != n or f.horizon != horizon:
            raise ConfigurationError("fans disagree on scenario count or horizon")
    return ScenarioFan(np.concatenate([f.values for f in fans], axis=2))


@dataclass(frozen=True)
class MgProcesses:
    """Forecast processes of one microgrid: renewables first, then loads."""

    res: tuple[ProcessSpec, ...]
    load: tuple[ProcessSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "res", tuple(self.res))
        object.__setattr__(self, "load", tuple(self.load))
        for spec in self.res:
            if spec.clamp_range[0] < 0:
                raise ConfigurationError("renewable signals must be clamped to >= 0")
        for spec in self.load:
            if spec.clamp_range[1] > 0:
                raise ConfigurationError("load signals must be clamped to <= 0")

    @property
    def specs(self) -> tuple[ProcessSpec, ...]:
        return self.res + self.load

    @property
    def n_signals(self) -> int:
        return len(self.res) + len(self.load)
