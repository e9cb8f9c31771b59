"""Damped wave propagation: state/medium types, integrators, energy."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .spectral import as_field, spectral_gradient, spectral_laplacian


class ShapeError(ValueError):
    pass


class RolloutOverflowError(FloatingPointError):
    """A rollout produced a non-finite value.

    ``step`` is the 1-based index of the step whose result was non-finite;
    ``channel`` is set by callers that integrate several channels at once.
    """

    def __init__(self, step: int, channel: int | None = None):
        self.step = step
        self.channel = channel
        where = f"step {step}" if channel is None else f"channel {channel}, step {step}"
        super().__init__(f"non-finite wave state at {where}")


class UndefinedWECSError(ValueError):
    pass


@dataclass(frozen=True)
class Medium:
    """Wave speed ``c`` and damping ``gamma`` per grid point.

    Only shape and finiteness are checked here. Positivity is guaranteed by the
    softplus heads that produce media during training; hand-built media (e.g. the
    ``c = 0`` free-drift configuration, or finite-difference perturbations) may
    sit on or just across the boundary.
    """

    c: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        c = as_field(self.c, "c")
        g = as_field(self.gamma, "gamma")
        if c.shape != g.shape:
            raise ShapeError(f"c and gamma shapes differ: {c.shape} vs {g.shape}")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "gamma", g)

    @property
    def n(self) -> int:
        return self.c.shape[-1]

    def is_physical(self) -> bool:
        return bool(np.all(self.c > 0) and np.all(self.gamma >= 0))


@dataclass(frozen=True)
class WaveState:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = as_field(self.u, "u")
        v = as_field(self.v, "v")
        if u.shape != v.shape:
            raise ShapeError(f"u and v shapes differ: {u.shape} vs {v.shape}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.u.shape[-1]

    def reversed(self) -> "WaveState":
        return WaveState(self.u, -self.v)


@dataclass(frozen=True)
class RolloutConfig:
    dt: float
    steps: int
    integrator: Literal["verlet", "euler"] = "verlet"

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ValueError(f"steps must be a non-negative integer, got {self.steps}")
        if self.integrator not in ("verlet", "euler"):
            raise ValueError(f"unknown integrator {self.integrator!r}")

    @property
    def horizon(self) -> float:
        return self.steps * self.dt


def _check_lengths(s: WaveState, m: Medium) -> None:
    if s.n != m.n:
        raise ShapeError(f"state has {s.n} points but medium has {m.n}")


# Array-level kernels. ``c2`` and ``gamma`` broadcast against ``u`` and ``v``.

def verlet_arrays(u, v, c2, gamma, dt, lap=None, out=None):
    """One velocity-Verlet step; returns ``(u_next, v_next, v_half, lap_next)``.

    ``lap`` may carry the Laplacian of ``u`` from the previous step. ``out``
    may supply ``(u_next, v_next, v_half)`` buffers shaped like ``u``.
    """
    u_next, v_next, v_half = (None, None, None) if out is None else out
    if lap is None:
        lap = spectral_laplacian(u)
    v_half = _kick(v, lap, c2, gamma, 0.5 * dt, v_half)
    u_next = np.multiply(dt, v_half, out=u_next)
    u_next += u
    lap_next = spectral_laplacian(u_next)
    v_next = _kick(v_half, lap_next, c2, gamma, 0.5 * dt, v_next)
    return u_next, v_next, v_half, lap_next


def _kick(v, lap, c2, gamma, h, out=None):
    """``v + h (c2 lap - gamma v)`` with at most one temporary."""
    out = np.multiply(c2, lap, out=out)
    out -= gamma * v
    out *= h
    out += v
    return out


def euler_arrays(u, v, c2, gamma, dt):
    u_next = u + dt * v
    v_next = v + dt * (c2 * spectral_laplacian(u) - gamma * v)
    return u_next, v_next


def _finite(*arrays) -> bool:
    return all(np.isfinite(a).all() for a in arrays)


def verlet_step(s: WaveState, m: Medium, dt: float, *, step_index: int = 1) -> WaveState:
    _check_lengths(s, m)
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    with np.errstate(over="ignore", invalid="ignore"):
        u, v, _, _ = verlet_arrays(s.u, s.v, m.c**2, m.gamma, dt)
    if not _finite(u, v):
        raise RolloutOverflowError(step_index)
    return WaveState(u, v)


def euler_step(s: WaveState, m: Medium, dt: float, *, step_index: int = 1) -> WaveState:
    _check_lengths(s, m)
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    with np.errstate(over="ignore", invalid="ignore"):
        u, v = euler_arrays(s.u, s.v, m.c**2, m.gamma, dt)
    if not _finite(u, v):
        raise RolloutOverflowError(step_index)
    return WaveState(u, v)


def rollout(s0: WaveState, m: Medium, cfg: RolloutConfig) -> list[WaveState]:
    """Integrate ``cfg.steps`` steps; returns every integer-step state, ``s0`` first."""
    _check_lengths(s0, m)
    step = verlet_step if cfg.integrator == "verlet" else euler_step
    traj = [s0]
    for i in range(cfg.steps):
        traj.append(step(traj[-1], m, cfg.dt, step_index=i + 1))
    return traj


def final_state(s0: WaveState, m: Medium, cfg: RolloutConfig) -> WaveState:
    """Last state of :func:`rollout` without keeping the trajectory."""
    _check_lengths(s0, m)
    step = verlet_step if cfg.integrator == "verlet" else euler_step
    s = s0
    for i in range(cfg.steps):
        s = step(s, m, cfg.dt, step_index=i + 1)
    return s


def energy_density(u, v, c) -> np.ndarray:
    g = spectral_gradient(u)
    with np.errstate(over="ignore"):  # huge but finite states report inf energy
        return 0.5 * v * v + 0.5 * (c * c) * (g * g)


def discrete_energy(s: WaveState, m: Medium) -> float:
    """``sum_j 0.5 v_j^2 + 0.5 c_j^2 (du/dx)_j^2`` with the spectral first derivative."""
    _check_lengths(s, m)
    with np.errstate(over="ignore"):
        return float(np.sum(energy_density(s.u, s.v, m.c)))


def wecs(trajectory, m: Medium) -> float:
    """Ratio of final to initial discrete energy of a trajectory."""
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    e0 = discrete_energy(trajectory[0], m)
    if e0 == 0:
        raise UndefinedWECSError("initial energy is zero; WECS is undefined")
    return discrete_energy(trajectory[-1], m) / e0
