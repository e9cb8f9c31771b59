"""Reverse-mode gradients through an unrolled velocity-Verlet rollout.

The forward pass records every integer-step state and every half-step
velocity; Laplacians are recomputed during the backward sweep. Because the
spectral Laplacian is symmetric, its transpose is applied by calling it again.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import (
    Medium,
    RolloutConfig,
    RolloutOverflowError,
    ShapeError,
    WaveState,
    _check_lengths,
    verlet_arrays,
)
from .spectral import spectral_laplacian


@dataclass(frozen=True)
class RolloutTape:
    states: tuple[WaveState, ...]
    half_velocities: tuple[np.ndarray, ...]
    medium: Medium
    cfg: RolloutConfig

    def num_scalars(self) -> int:
        """Stored field values: ``(2(k+1) + k) * n`` per batch element."""
        return sum(s.u.size + s.v.size for s in self.states) + sum(h.size for h in self.half_velocities)


@dataclass(frozen=True)
class RolloutGradients:
    d_u0: np.ndarray
    d_v0: np.ndarray
    d_c: np.ndarray
    d_gamma: np.ndarray
    d_dt: float

    def flat(self) -> np.ndarray:
        return np.concatenate(
            [self.d_u0.ravel(), self.d_v0.ravel(), self.d_c.ravel(), self.d_gamma.ravel(), [self.d_dt]]
        )


def sum_to_shape(x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast result back to ``shape`` by summing the expanded axes."""
    if x.shape == tuple(shape):
        return x
    lead = x.ndim - len(shape)
    x = x.sum(axis=tuple(range(lead))) if lead > 0 else x
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and x.shape[i] != 1)
    if axes:
        x = x.sum(axis=axes, keepdims=True)
    return x


def record_arrays(u0, v0, c, gamma, dt, steps, channel_axis: int | None = None, buf=None):
    """Array-level Verlet rollout that keeps what the backward sweep needs.

    Returns ``(us, vs, v_halves)`` as lists of length ``steps + 1``, ``steps + 1``
    and ``steps``. When ``channel_axis`` is given, an overflow reports the first
    channel along that axis holding a non-finite value. ``buf`` may supply the
    storage for the recorded steps, shaped ``(3, steps) + u0.shape``.
    """
    c2 = c * c
    us, vs, vhs = [u0], [v0], []
    u, v = u0, v0
    lap = spectral_laplacian(u0) if steps else None
    # one buffer for the whole tape: a single large allocation gets huge pages
    # and avoids a page fault per fresh per-step array
    if buf is None:
        buf = np.empty((3, steps) + np.broadcast_shapes(np.shape(u0), np.shape(v0)))
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(steps):
            u, v, vh, lap = verlet_arrays(u, v, c2, gamma, dt, lap, out=buf[:, i])
            us.append(u)
            vs.append(v)
            vhs.append(vh)
    # non-finite values persist through the FFT and the kicks, so checking the
    # final state suffices; the first offending step is located afterwards
    if steps and not (np.isfinite(u).all() and np.isfinite(v).all()):
        i = next(i for i in range(1, steps + 1) if not (np.isfinite(us[i]).all() and np.isfinite(vs[i]).all()))
        raise RolloutOverflowError(i, _bad_channel(us[i], vs[i], channel_axis))
    return us, vs, vhs


def _bad_channel(u, v, axis):
    if axis is None:
        return None
    bad = ~(np.isfinite(u) & np.isfinite(v))
    other = tuple(i for i in range(bad.ndim) if i != axis % bad.ndim)
    return int(np.argmax(bad.any(axis=other)))


def backward_arrays(us, vs, vhs, c, gamma, dt, du, dv):
    """Adjoint sweep over a recorded rollout.

    Returns ``(d_u0, d_v0, d_c, d_gamma, d_dt)`` where ``d_c`` and ``d_gamma``
    have the broadcast shape of ``c`` and ``gamma`` and ``d_dt`` is a float.
    """
    c2 = c * c
    half = 0.5 * dt
    c2h = half * c2
    damp = 1.0 - half * gamma
    shape = np.broadcast_shapes(np.shape(du), np.shape(c2))
    # every kick contributes lap*adjoint to d(c2) and state*adjoint to d(gamma);
    # the matching d(dt) terms are the same fields contracted with c2 and gamma,
    # so both are accumulated once and contracted after the sweep
    acc_c2 = np.zeros(shape)
    acc_g = np.zeros(shape)
    tmp = np.empty(shape)
    d_dt = 0.0
    du = np.array(du, dtype=np.float64, copy=True)
    dv = np.array(dv, dtype=np.float64, copy=True)
    lap_next = spectral_laplacian(us[-1]) if len(vhs) else None
    # Laplacian-transposed terms reaching u_t arrive from the first half-kick of
    # step t and the second half-kick of step t-1; by linearity they share one
    # Laplacian application, held in ``pending`` until both are known.
    pending = None
    for t in range(len(vhs) - 1, -1, -1):
        u, v, vh = us[t], vs[t], vhs[t]
        # second half-kick: v' = vh + half*(c2*lap' - gamma*vh)
        a = c2h * dv
        if pending is not None:
            a += pending
        du += spectral_laplacian(a)
        acc_c2 += np.multiply(lap_next, dv, out=tmp)
        acc_g += np.multiply(vh, dv, out=tmp)
        # drift: u' = u + dt*vh
        d_dt += float(np.vdot(vh, du))
        dvh = dt * du
        dvh += damp * dv
        # first half-kick: vh = v + half*(c2*lap - gamma*v)
        lap = spectral_laplacian(u)
        acc_c2 += np.multiply(lap, dvh, out=tmp)
        acc_g += np.multiply(v, dvh, out=tmp)
        pending = c2h * dvh
        dv = damp * dvh
        lap_next = lap
    if pending is not None:
        du += spectral_laplacian(pending)
    acc_c2 = sum_to_shape(acc_c2, np.shape(c2))
    acc_g = sum_to_shape(acc_g, np.shape(gamma))
    d_dt += 0.5 * float(np.sum(c2 * acc_c2) - np.sum(gamma * acc_g))
    d_c = 2.0 * half * np.asarray(c) * acc_c2
    d_gamma = -half * acc_g
    return du, dv, d_c, d_gamma, float(d_dt)


def record_rollout(s0: WaveState, m: Medium, cfg: RolloutConfig) -> tuple[WaveState, RolloutTape]:
    if cfg.integrator != "verlet":
        raise ValueError("only the verlet integrator is differentiable")
    _check_lengths(s0, m)
    us, vs, vhs = record_arrays(s0.u, s0.v, m.c, m.gamma, cfg.dt, cfg.steps)
    states = (s0,) + tuple(WaveState(u, v) for u, v in zip(us[1:], vs[1:]))
    return states[-1], RolloutTape(states, tuple(vhs), m, cfg)


def backward(tape: RolloutTape, d_u_final, d_v_final) -> RolloutGradients:
    final = tape.states[-1]
    d_u_final = np.asarray(d_u_final, dtype=np.float64)
    d_v_final = np.asarray(d_v_final, dtype=np.float64)
    if d_u_final.shape != final.u.shape or d_v_final.shape != final.v.shape:
        raise ShapeError(
            f"cotangent shapes {d_u_final.shape}, {d_v_final.shape} do not match state {final.u.shape}"
        )
    m = tape.medium
    d_u0, d_v0, d_c, d_gamma, d_dt = backward_arrays(
        [s.u for s in tape.states],
        [s.v for s in tape.states],
        tape.half_velocities,
        m.c,
        m.gamma,
        tape.cfg.dt,
        d_u_final,
        d_v_final,
    )
    return RolloutGradients(d_u0, d_v0, d_c, d_gamma, d_dt)


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


# central stencils: offsets (in units of eps) and weights (divided by eps)
_STENCILS = {
    2: ((1, -1), (0.5, -0.5)),
    4: ((2, 1, -1, -2), (-1 / 12, 8 / 12, -8 / 12, 1 / 12)),
}


def central_differences(
    f: Callable[[np.ndarray], float], x: np.ndarray, eps: float, order: int = 2
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at flat vector ``x``.

    ``order=2`` uses ``f(x +- eps)``; ``order=4`` adds ``f(x +- 2 eps)`` and
    removes the ``eps**2`` truncation term.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if order not in _STENCILS:
        raise ValueError(f"order must be one of {sorted(_STENCILS)}")
    offsets, weights = _STENCILS[order]
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        acc = 0.0
        for o, w in zip(offsets, weights):
            x[i] = orig + o * eps
            acc += w * f(x)
        x[i] = orig
        grad[i] = acc / eps
    return grad


def _pack(s0: WaveState, m: Medium, dt: float) -> np.ndarray:
    return np.concatenate([s0.u.ravel(), s0.v.ravel(), m.c.ravel(), m.gamma.ravel(), [dt]])


def _unpack(x: np.ndarray, s0: WaveState, m: Medium):
    sizes = [s0.u.size, s0.v.size, m.c.size, m.gamma.size]
    parts = np.split(x[:-1], np.cumsum(sizes)[:-1])
    u = parts[0].reshape(s0.u.shape)
    v = parts[1].reshape(s0.v.shape)
    c = parts[2].reshape(m.c.shape)
    g = parts[3].reshape(m.gamma.shape)
    return WaveState(u, v), Medium(c, g), float(x[-1])


def finite_difference_check(
    scalar_loss: Callable[[WaveState, Medium, float], float],
    gradient: Callable[[WaveState, Medium, float], RolloutGradients],
    point: tuple[WaveState, Medium, float],
    eps: float = 1e-5,
    order: int = 2,
) -> float:
    """Max relative error between ``gradient`` and central differences of ``scalar_loss``.

    Every scalar of ``u0``, ``v0``, ``c``, ``gamma`` and ``dt`` is perturbed by
    ``+-eps`` (and ``+-2 eps`` when ``order=4``). Relative error is
    ``|a-b| / max(|a|, |b|, 1e-8)``.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    s0, m, dt = point
    analytic = gradient(s0, m, dt).flat()
    numeric = central_differences(
        lambda x: scalar_loss(*_unpack(x, s0, m)), _pack(s0, m, dt), eps, order
    )
    return float(np.max(relative_error(analytic, numeric)))


def terminal_loss(
    loss: Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray, np.ndarray]], steps: int
):
    """Build ``(scalar_loss, gradient)`` for a loss on the final Verlet state.

    ``loss(u_k, v_k)`` must return ``(value, dL/du_k, dL/dv_k)``.
    """

    def scalar_loss(s0: WaveState, m: Medium, dt: float) -> float:
        us, vs, _ = record_arrays(s0.u, s0.v, m.c, m.gamma, dt, steps)
        return loss(us[-1], vs[-1])[0]

    def gradient(s0: WaveState, m: Medium, dt: float) -> RolloutGradients:
        final, tape = record_rollout(s0, m, RolloutConfig(dt, steps))
        _, du, dv = loss(final.u, final.v)
        return backward(tape, du, dv)

    return scalar_loss, gradient


def _target_loss(target_u: np.ndarray, target_v: np.ndarray):
    def loss(u, v):
        ru, rv = u - target_u, v - target_v
        return 0.5 * float(np.sum(ru * ru) + np.sum(rv * rv)), ru, rv

    return loss


def random_instance(seed, n: int, steps: int, dt_fraction: float = 0.5):
    """Seeded random stable rollout problem for gradient checking.

    Returns ``(point, scalar_loss, gradient)`` with a squared-error loss on the
    final state and ``dt`` at ``dt_fraction`` of the undamped stability bound.
    """
    from .spectral import stability_bound

    rng = np.random.default_rng(seed)
    c = rng.uniform(0.5, 1.5, n)
    gamma = rng.uniform(0.0, 0.5, n)
    s0 = WaveState(rng.normal(size=n), rng.normal(size=n))
    dt = dt_fraction * stability_bound(float(c.max()))
    loss = _target_loss(rng.normal(size=n), rng.normal(size=n))
    scalar_loss, gradient = terminal_loss(loss, steps)
    return (s0, Medium(c, gamma), dt), scalar_loss, gradient


@dataclass(frozen=True)
class GradcheckRow:
    instance: int
    n: int
    steps: int
    dt: float
    max_rel_error: float


def gradcheck_suite(
    instances: int,
    seed: int = 0,
    sizes=(8, 16, 32),
    step_counts=(1, 4, 8),
    eps: float = 1e-4,
    corrupt_d_gamma: bool = False,
    order: int = 4,
) -> list[GradcheckRow]:
    """Run ``instances`` seeded checks cycling through ``sizes`` x ``step_counts``.

    ``corrupt_d_gamma`` flips the sign of the damping gradient; it exists only to
    confirm the harness catches a broken adjoint.
    """
    rows = []
    for i in range(instances):
        n = sizes[i % len(sizes)]
        k = step_counts[(i // len(sizes)) % len(step_counts)]
        point, scalar_loss, gradient = random_instance([seed, i], n, k)
        if corrupt_d_gamma:
            grad_fn = gradient

            def gradient(s0, m, dt, _g=grad_fn):
                g = _g(s0, m, dt)
                return RolloutGradients(g.d_u0, g.d_v0, g.d_c, -g.d_gamma, g.d_dt)

        err = finite_difference_check(scalar_loss, gradient, point, eps, order)
        rows.append(GradcheckRow(i, n, k, point[2], err))
    return rows
