"""Probability velocities (per-token CTMC rates) and the Euler jump kernel.

A rate row ``u(., z_i)`` holds the jump rates out of the current token
``z_i`` at one position; off-diagonal entries are non-negative and the
diagonal is minus their sum.  With the pivot component ``ell = 0`` the
marginal velocity is

    u(a, z) = alpha_target p_{1|t}(a | z) + alpha_mid p_mid(a) + beta delta_z(a)
"""

from __future__ import annotations

import numpy as np

from .core import all_states, as_generator
from .errors import InvalidRateError, StepSizeError, UnsupportedScheduleError
from .scheduler import VelocityCoeffs

RATE_TOL = 1e-12


def _onehot(ids, d):
    return np.eye(d)[np.asarray(ids, dtype=np.int64)]


def _close_rows(raw, z, d, check=True):
    """Zero the diagonal, validate off-diagonals, set diagonal to minus their sum."""
    diag = _onehot(z, d).astype(bool)
    off = np.where(diag, 0.0, raw)
    if check and np.any(off < -RATE_TOL):
        worst = float(off.min())
        raise InvalidRateError(f"negative off-diagonal rate {worst:.3e}; the schedule does not give a valid generator here")
    return np.where(diag, -off.sum(axis=-1, keepdims=True), off)


def _coeff_parts(coeffs: VelocityCoeffs, include_mid: bool):
    alpha = np.asarray(coeffs.alpha)
    m = alpha.shape[-1]
    ell = np.asarray(coeffs.ell)
    if np.any((ell != 0) & (np.abs(alpha[..., 0]) > 0)):
        raise UnsupportedScheduleError("pivot component is not the source; the source posterior term is not supported")
    a_target = alpha[..., m - 1]
    a_mid = alpha[..., 1] if (m == 3 and include_mid) else np.zeros_like(a_target)
    return a_target, a_mid


def _expand(a, ndim):
    a = np.asarray(a)
    return a.reshape(a.shape + (1,) * (ndim - a.ndim))


def marginal_velocity(coeffs: VelocityCoeffs, posterior, mid, z, include_mid: bool = False, check: bool = True) -> np.ndarray:
    """Rate rows from the model posterior over clean tokens.

    ``posterior`` and ``mid`` have shape ``(..., d)``; ``z`` has shape
    ``(...)``.  Coefficients are for a single time or carry a leading time
    axis matching the leading axis of ``posterior``.  With ``include_mid``
    off the mid term is dropped and nothing is renormalised.
    """
    post = np.asarray(posterior, dtype=np.float64)
    d = post.shape[-1]
    a_target, a_mid = (_expand(a, post.ndim) for a in _coeff_parts(coeffs, include_mid))
    raw = a_target * post
    if include_mid and mid is not None:
        raw = raw + a_mid * np.asarray(mid, dtype=np.float64)
    return _close_rows(raw, z, d, check)


def conditional_velocity(coeffs: VelocityCoeffs, x0, x1, mid, z, d: int | None = None, check: bool = True) -> np.ndarray:
    """Rate rows of the conditional path given endpoints ``x0``, ``x1``."""
    alpha = np.asarray(coeffs.alpha)
    m = alpha.shape[-1]
    if d is None:
        d = np.asarray(mid).shape[-1]
    raw = alpha[..., m - 1] * _onehot(x1, d)
    if m == 3 and mid is not None:
        raw = raw + alpha[..., 1] * np.asarray(mid, dtype=np.float64)
    if x0 is not None:
        raw = raw + alpha[..., 0] * _onehot(x0, d)
    return _close_rows(raw, z, d, check)


def transition_probs(state, rates, h: float) -> np.ndarray:
    """``delta_z + h u`` per position, validated as a probability vector."""
    d = rates.shape[-1]
    probs = _onehot(state, d) + h * rates
    lo = probs.min()
    sums = probs.sum(axis=-1)
    if lo < -1e-12 or np.any(np.abs(sums - 1.0) > 1e-9):
        total = float(np.max(-np.take_along_axis(rates, np.asarray(state)[..., None], -1)))
        raise StepSizeError(f"h * rate = {h * total:.3f} exceeds 1 (min entry {lo:.3e}); use a smaller step size")
    probs = np.maximum(probs, 0.0)
    return probs / probs.sum(axis=-1, keepdims=True)


def euler_step(state, rates, h: float, rng, return_logp: bool = False):
    """One jump step ``X^i ~ delta_{X^i} + h u^i(., X)`` at every position."""
    if not h > 0:
        raise StepSizeError("step size must be positive")
    state = np.asarray(state, dtype=np.int64)
    probs = transition_probs(state, rates, h)
    gen = as_generator(rng)
    cdf = np.cumsum(probs, axis=-1)
    u = gen.random(size=state.shape + (1,)) * cdf[..., -1:]
    new = np.minimum((cdf <= u).sum(axis=-1), probs.shape[-1] - 1).astype(np.int64)
    if return_logp:
        p = np.take_along_axis(probs, new[..., None], -1)[..., 0]
        return new, np.log(np.maximum(p, 1e-300))
    return new


# --------------------------------------------------------------------------
# whole-sequence generators on enumerable spaces


def neighbor_index(d: int, L: int) -> np.ndarray:
    """``nbr[x, i, a]`` = index of ``x`` with position ``i`` set to ``a``."""
    states = all_states(d, L)
    n = states.shape[0]
    place = d ** np.arange(L - 1, -1, -1, dtype=np.int64)
    a = np.arange(d)
    return np.arange(n)[:, None, None] + (a[None, None, :] - states[:, :, None]) * place[None, :, None]


def sequence_generator(rates, d: int, L: int) -> np.ndarray:
    """Dense generator ``Q[..., x, y]`` from per-position rate rows ``(..., N, L, d)``.

    Only single-token changes have non-zero rates (factorized velocity).
    """
    rates = np.asarray(rates, dtype=np.float64)
    states = all_states(d, L)
    n = states.shape[0]
    nbr = neighbor_index(d, L).reshape(n, L * d)
    self_mask = (nbr == np.arange(n)[:, None])
    off = np.where(self_mask, 0.0, rates.reshape(rates.shape[:-3] + (n, L * d)))
    Q = np.zeros(rates.shape[:-3] + (n, n))
    rows = np.broadcast_to(np.arange(n)[:, None], nbr.shape)
    Q[..., rows, nbr] = off
    idx = np.arange(n)
    Q[..., idx, idx] = 0.0
    Q[..., idx, idx] = -Q.sum(axis=-1)
    return Q


def exact_marginal_rates(oracle, coeffs, ts, include_mid: bool = True) -> np.ndarray:
    """Marginal rate rows for every state from an exact posterior.

    ``ts`` is a scalar (result ``(N, L, d)``) or a 1-d array of times matching
    ``coeffs`` (result ``(T, N, L, d)``).
    """
    states = all_states(oracle.d, oracle.L)
    post = oracle.posterior_tables(ts)
    mid = oracle.mid_component()
    mid = None if mid is None else np.broadcast_to(mid, post.shape)
    return marginal_velocity(coeffs, post, mid, states, include_mid=include_mid)


def exact_generator(spec, oracle):
    """Batched field ``ts -> Q(t)`` of shape ``(T, N, N)`` built from ``oracle``."""
    from .scheduler import velocity_coeffs

    def field(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        rates = exact_marginal_rates(oracle, velocity_coeffs(spec.schedule, ts), ts)
        return sequence_generator(rates, oracle.d, oracle.L)

    return field


def default_grid(schedule, step: float = 1e-3, tail: float = 1e-3) -> np.ndarray:
    """Uniform grid up to 0.9, then geometric in ``1 - t`` down to ``1 - tail``.

    Rates grow like ``1 / (1 - t)``, so the tail keeps ``h * rate`` small.
    The grid starts one step in when the schedule derivative is infinite at 0.
    """
    from .scheduler import SingularityError, kappa_dot

    try:
        kappa_dot(schedule, 0.0)
        t0 = 0.0
    except SingularityError:
        t0 = step
    head = np.arange(t0, 0.9, step)
    n_tail = int(np.ceil(np.log(0.1 / tail) / step / 10)) + 1
    return np.concatenate([head, 1.0 - np.geomspace(0.1, tail, n_tail)])


def kolmogorov_check(spec, oracle, grid=None, step: float = 1e-3) -> float:
    """Max TV between the integrated master equation and the exact path marginal.

    The master equation is driven by the marginal velocity assembled from the
    exact posterior of ``oracle`` (an :class:`~drax.posterior.ExactPosterior`).
    """
    from .path import likelihood_matrix
    from .theory import integrate_master

    grid = default_grid(spec.schedule, step) if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        return 0.0
    worst = 0.0
    p0 = None
    for lo in range(0, grid.size, 256):
        part = grid[max(lo - 1, 0) : lo + 256]
        exact = likelihood_matrix(spec, part, oracle.d, oracle.L, oracle.mid) @ oracle.target.probs
        if p0 is None:
            p0 = exact[0]
        traj = integrate_master(p0, exact_generator(spec, oracle), part).distributions
        p0 = traj[-1]
        worst = max(worst, float(0.5 * np.abs(traj - exact).sum(axis=-1).max()))
    return worst
