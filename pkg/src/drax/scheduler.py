"""Mixing schedules kappa_j(t) and the velocity coefficients derived from them.

Component order is always ``(source, [mid,] target)``.  For the factorized
three-way schedule

    kappa_target = 1 - s(t),  kappa_mid = r(t) s(t),  kappa_source = (1 - r(t)) s(t)

with ``s(t) = 1 - t**p`` and ``r(t) = t**q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError, SingularityError, UnsupportedScheduleError

TWO_WAY = "two_way_linear"
TRI = "tri_factorized"
TABULATED = "custom_tabulated"
KINDS = (TWO_WAY, TRI, TABULATED)

# components whose weight is at or below this are excluded from the argmin
_ZERO_WEIGHT = 1e-15


@dataclass(frozen=True)
class Schedule:
    kind: str = TWO_WAY
    p: float = 2.0
    q: float = 2.0 / 3.0
    table: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedScheduleError(f"unknown schedule kind {self.kind!r}")
        if self.kind == TRI and not (self.p > 0 and self.q > 0):
            raise DomainError("tri_factorized needs p > 0 and q > 0")
        if self.kind == TABULATED:
            _validate_table(self.table)

    @property
    def n_components(self) -> int:
        if self.kind == TWO_WAY:
            return 2
        if self.kind == TRI:
            return 3
        return len(self.table[0]) - 1

    @property
    def has_mid(self) -> bool:
        return self.n_components == 3

    @property
    def target_index(self) -> int:
        return self.n_components - 1

    @classmethod
    def two_way(cls) -> "Schedule":
        return cls(TWO_WAY)

    @classmethod
    def tri(cls, p: float = 2.0, q: float = 2.0 / 3.0) -> "Schedule":
        return cls(TRI, p=p, q=q)

    @classmethod
    def tabulated(cls, rows) -> "Schedule":
        return cls(TABULATED, table=tuple(tuple(float(v) for v in r) for r in rows))

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == TRI:
            out.update(p=self.p, q=self.q)
        if self.kind == TABULATED:
            out["table"] = [list(r) for r in self.table]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Schedule":
        kind = data.get("kind", TWO_WAY)
        if kind == TABULATED:
            return cls.tabulated(data["table"])
        if kind == TRI:
            return cls.tri(float(data.get("p", 2.0)), float(data.get("q", 2.0 / 3.0)))
        return cls(kind)


def _validate_table(table):
    if not table or len(table) < 4:
        raise DomainError("a tabulated schedule needs at least 4 rows")
    arr = np.asarray(table, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] not in (3, 4):
        raise DomainError("table rows must be (t, k0, k1) or (t, k0, kmid, k1)")
    t = arr[:, 0]
    if t[0] != 0.0 or t[-1] != 1.0 or np.any(np.diff(t) <= 0):
        raise DomainError("table times must increase strictly from 0 to 1")
    if np.any(np.abs(arr[:, 1:].sum(axis=1) - 1.0) > 1e-9):
        raise DomainError("table weights must sum to 1 on every row")
    if abs(arr[0, 1] - 1.0) > 1e-12 or abs(arr[-1, -1] - 1.0) > 1e-12:
        raise DomainError("table must satisfy kappa_source(0) = 1 and kappa_target(1) = 1")
    splines = _splines(tuple(map(tuple, arr)))
    grid = np.linspace(0.0, 1.0, 2001)
    if np.any(splines(grid) < -1e-12):
        raise DomainError("interpolated schedule goes negative")


_SPLINE_CACHE: dict = {}


def _splines(table) -> CubicSpline:
    sp = _SPLINE_CACHE.get(table)
    if sp is None:
        arr = np.asarray(table, dtype=np.float64)
        # spline fitting is linear in the data, so interpolated rows still sum to one
        sp = CubicSpline(arr[:, 0], arr[:, 1:], axis=0)
        _SPLINE_CACHE[table] = sp
    return sp


def _check_t(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError("t must lie in [0, 1]")
    return t


def kappa(schedule: Schedule, t) -> np.ndarray:
    """Component weights at ``t``; shape ``t.shape + (n_components,)``."""
    t = _check_t(t)
    if schedule.kind == TWO_WAY:
        return np.stack([1.0 - t, t], axis=-1)
    if schedule.kind == TRI:
        s = 1.0 - t**schedule.p
        r = t**schedule.q
        return np.stack([(1.0 - r) * s, r * s, 1.0 - s], axis=-1)
    return _splines(schedule.table)(t)


def kappa_dot(schedule: Schedule, t) -> np.ndarray:
    """Analytic time derivatives of :func:`kappa`.

    Raises :class:`SingularityError` where a derivative is infinite (the
    factorized schedule at ``t = 0`` when ``q < 1`` or ``p < 1``).
    """
    t = _check_t(t)
    if schedule.kind == TWO_WAY:
        one = np.ones_like(t)
        return np.stack([-one, one], axis=-1)
    if schedule.kind == TRI:
        p, q = schedule.p, schedule.q
        with np.errstate(divide="ignore", invalid="ignore"):
            s = 1.0 - t**p
            r = t**q
            ds = -p * t ** (p - 1.0)
            dr = q * t ** (q - 1.0)
            out = np.stack([-dr * s + (1.0 - r) * ds, dr * s + r * ds, -ds], axis=-1)
        if not np.all(np.isfinite(out)):
            raise SingularityError("schedule derivative is infinite at t=0")
        return out
    return _splines(schedule.table)(t, 1)


@dataclass(frozen=True)
class VelocityCoeffs:
    """``alpha_j``, ``beta`` and the pivot component ``ell`` at time ``t``.

    Arrays broadcast over a leading time shape when ``t`` is an array.
    """

    t: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    ell: np.ndarray

    def component(self, j: int) -> np.ndarray:
        return self.alpha[..., j]


def velocity_coeffs(schedule: Schedule, t) -> VelocityCoeffs:
    """Velocity coefficients with ``ell = argmin_j kdot_j / k_j``.

    Components with zero weight are left out of the argmin and get
    ``alpha_j = kdot_j``.  Ties go to the lowest index.
    """
    t = _check_t(t)
    if np.any(t >= 1.0):
        raise SingularityError("velocity coefficients are singular at t=1; draw from the posterior instead")
    k = kappa(schedule, t)
    kd = kappa_dot(schedule, t)
    live = k > _ZERO_WEIGHT
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(live, kd / np.where(live, k, 1.0), np.inf)
    ell = np.argmin(ratio, axis=-1)
    beta = np.take_along_axis(ratio, ell[..., None], axis=-1)[..., 0]
    alpha = kd - np.where(live, k, 0.0) * beta[..., None]
    np.put_along_axis(alpha, ell[..., None], 0.0, axis=-1)
    return VelocityCoeffs(t=t, alpha=alpha, beta=beta, ell=ell)


def mid_peak(schedule: Schedule, grid_points: int = 10_000) -> float:
    """Time at which ``kappa_mid`` peaks, ``(q / (p + q)) ** (1 / p)``.

    The closed form is cross-checked against the argmax on a uniform grid.
    """
    if schedule.kind != TRI:
        raise UnsupportedScheduleError("mid_peak needs a tri_factorized schedule")
    p, q = schedule.p, schedule.q
    peak = (q / (p + q)) ** (1.0 / p)
    grid = np.linspace(0.0, 1.0, grid_points)
    numeric = grid[np.argmax(kappa(schedule, grid)[:, 1])]
    if abs(numeric - peak) > 1.0 / (grid_points - 1) + 1e-12:
        raise AssertionError(f"closed-form peak {peak} disagrees with grid argmax {numeric}")
    return float(peak)
