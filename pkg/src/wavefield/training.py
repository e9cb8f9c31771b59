"""Optimizer, losses, seeded data generators and the desk-scale tasks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .adjoint import backward_arrays, record_arrays, sum_to_shape
from .dynamics import (
    Medium,
    RolloutConfig,
    RolloutOverflowError,
    WaveState,
    discrete_energy,
    energy_density,
    final_state,
    rollout,
    wecs,
)
from .layer import inverse_softplus, sigmoid, softplus
from .model import ModelConfig, init_params, model_backward, model_forward
from .spectral import stability_bound

log = logging.getLogger(__name__)

TaskId = Literal["inverse-medium", "dt-sweep", "wecs-ablation", "pattern-detect", "universality-fit"]


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """Bias-corrected Adam update. Returns new dicts; inputs are not mutated."""
    if params.keys() != grads.keys():
        raise ValueError(f"parameter/gradient keys differ: {set(params) ^ set(grads)}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter has {np.shape(p)}")
        m = b1 * state.m.get(k, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(k, 0.0) + (1.0 - b2) * (g * g)
        new_p[k] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        new_m[k], new_v[k] = m, v
    return new_p, replace(state, t=t, m=new_m, v=new_v)


# ---------------------------------------------------------------- losses

def mse(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    idx = np.arange(len(labels))
    loss = -float(logp[idx, labels].mean())
    grad = np.exp(logp)
    grad[idx, labels] -= 1.0
    return loss, grad / len(labels)


# ---------------------------------------------------------------- task spec

@dataclass(frozen=True)
class TaskSpec:
    task: TaskId
    seed: int = 0
    n: int = 64
    d: int = 16
    steps: int = 8
    num_samples: int = 32
    train_steps: int = 2000
    lr: float = 1e-2
    batch_size: int = 32
    dt: float = 0.25
    dt_grid: tuple[float, ...] = ()
    integrator: Literal["verlet", "euler"] = "verlet"
    log_every: int = 100
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = (self.n, self.d, self.num_samples, self.batch_size, self.log_every)
        if any(s <= 0 for s in sizes) or self.steps < 0 or self.train_steps < 0:
            raise ValueError(f"task sizes must be positive: {self}")
        if self.dt_grid and any(b <= a for a, b in zip(self.dt_grid, self.dt_grid[1:])):
            raise ValueError("dt grid must be strictly increasing")


class GenerationError(ValueError):
    pass


# ---------------------------------------------------------------- data

def band_limited_fields(rng: np.random.Generator, num: int, n: int, max_omega: float = np.pi / 4):
    """Random real fields whose Fourier support is ``|omega| <= max_omega``, unit RMS."""
    m_max = int(np.floor(max_omega * n / (2 * np.pi) + 1e-12))
    coef = np.zeros((num, n // 2 + 1), dtype=complex)
    coef[:, : m_max + 1] = rng.normal(size=(num, m_max + 1)) + 1j * rng.normal(size=(num, m_max + 1))
    coef[:, 0] = coef[:, 0].real
    if n % 2 == 0 and m_max == n // 2:
        coef[:, -1] = coef[:, -1].real
    fields = np.fft.irfft(coef, n=n, axis=-1)
    rms = np.sqrt(np.mean(fields**2, axis=-1, keepdims=True))
    return fields / np.where(rms > 0, rms, 1.0)


def propagate(fields, medium: Medium, dt: float, steps: int) -> np.ndarray:
    """Displacement after ``steps`` Verlet steps from rest."""
    s = final_state(WaveState(fields, np.zeros_like(fields)), medium, RolloutConfig(dt, steps))
    return s.u


def generate_wave_dataset(seed: int, n: int, num_samples: int, medium: Medium, dt: float, steps: int):
    """Pairs ``(initial field, propagated field)`` under a ground-truth medium."""
    if dt >= stability_bound(float(np.max(medium.c))):
        raise GenerationError(
            f"dt={dt} is outside the stability region of the ground-truth medium"
        )
    if medium.n != n:
        raise GenerationError(f"medium has {medium.n} points, expected {n}")
    rng = np.random.default_rng(seed)
    inputs = band_limited_fields(rng, num_samples, n)
    return inputs, propagate(inputs, medium, dt, steps)


def piecewise_medium(n: int, low: float = 0.5, high: float = 1.5) -> Medium:
    c = np.where(np.arange(n) < n // 2, low, high).astype(np.float64)
    return Medium(c, np.zeros(n))


# ---------------------------------------------------------------- inverse medium

C_INIT = 1.0


@dataclass
class InverseMediumReport:
    final_loss: float
    initial_loss: float
    c_rel_error: float
    gamma_weighted_error: float
    diverged: bool
    curve: list  # (step, loss, c_rel_error)
    c: np.ndarray
    gamma: np.ndarray


def run_inverse_medium(spec: TaskSpec, truth: Medium | None = None) -> InverseMediumReport:
    """Recover a per-position medium from propagated band-limited fields."""
    n, k, dt = spec.n, spec.steps, spec.dt
    truth = truth if truth is not None else piecewise_medium(n)
    inputs, targets = generate_wave_dataset(spec.seed, n, spec.num_samples, truth, dt, k)
    params = {
        "c_raw": np.full(n, spec.extra.get("c_raw_init", inverse_softplus(C_INIT))),
        "gamma_raw": np.full(n, float(spec.extra.get("gamma_raw_init", -20.0))),
    }
    state = AdamState(lr=spec.lr)
    zeros = np.zeros_like(inputs)

    def loss_and_grad(p):
        c, g = softplus(p["c_raw"]), softplus(p["gamma_raw"])
        us, vs, vhs = record_arrays(inputs, zeros, c, g, dt, k)
        loss, du = mse(us[-1], targets)
        _, _, dc, dg, _ = backward_arrays(us, vs, vhs, c, g, dt, du, zeros)
        return loss, {"c_raw": dc * sigmoid(p["c_raw"]), "gamma_raw": dg * sigmoid(p["gamma_raw"])}

    def c_error(p):
        return float(np.linalg.norm(softplus(p["c_raw"]) - truth.c) / np.linalg.norm(truth.c))

    curve = []
    diverged = False
    loss = initial = float("nan")
    for step in range(spec.train_steps + 1):
        try:
            loss, grads = loss_and_grad(params)
        except RolloutOverflowError:
            diverged = True
            log.warning("inverse-medium diverged at training step %d", step)
            break
        if step == 0:
            initial = loss
        if step % spec.log_every == 0 or step == spec.train_steps:
            curve.append((step, loss, c_error(params)))
        if step == spec.train_steps:
            break
        params, state = adam_step(params, grads, state)

    c, g = softplus(params["c_raw"]), softplus(params["gamma_raw"])
    # gamma is only identifiable where the waves carry energy; weight by the
    # time-averaged energy density of the ground-truth rollouts
    traj = rollout(WaveState(inputs, zeros), truth, RolloutConfig(dt, k))
    weight = np.mean([energy_density(s.u, s.v, truth.c).mean(axis=0) for s in traj[1:]], axis=0) if k else np.ones(n)
    gamma_err = float(np.sqrt(np.sum(weight * (g - truth.gamma) ** 2) / max(np.sum(weight), 1e-300)))
    return InverseMediumReport(
        final_loss=loss,
        initial_loss=initial,
        c_rel_error=c_error(params),
        gamma_weighted_error=gamma_err,
        diverged=diverged,
        curve=curve,
        c=c,
        gamma=g,
    )


# ---------------------------------------------------------------- dt sweep

@dataclass
class SweepRow:
    dt: float
    steps: int
    mse: float
    wecs_abs_err: float
    diverged: bool


DIVERGENCE_ENERGY_RATIO = 1e4
SWEEP_MODES = (1, 4, 16, 31)


def run_dt_sweep(spec: TaskSpec) -> list[SweepRow]:
    """Verlet accuracy and energy error against exact single-mode solutions.

    Each mode ``m`` starts from ``u = cos(omega_m x)``, ``v = 0`` with ``c = 1``,
    ``gamma = 0``; the exact solution is ``cos(omega_m t) cos(omega_m x)``. The
    horizon ``spec.extra['horizon']`` is shared by every ``dt``. A run is flagged
    diverged when it overflows or its energy grows by more than
    ``DIVERGENCE_ENERGY_RATIO``. Modes at or above ``n / 2`` are skipped: the
    Nyquist mode has no gradient energy, so its WECS is undefined.
    """
    n = spec.n
    horizon = float(spec.extra.get("horizon", 20.0))
    modes = tuple(m for m in spec.extra.get("modes", SWEEP_MODES) if 0 < 2 * m < n)
    if not modes:
        raise ValueError(f"no sweep modes below n/2 = {n / 2}")
    x = np.arange(n)
    omegas = np.array([2 * np.pi * m / n for m in modes])
    u0 = np.cos(omegas[:, None] * x)
    medium = Medium(np.ones(n), np.zeros(n))
    rows = []
    for dt in spec.dt_grid:
        steps = max(1, int(round(horizon / dt)))
        s0 = WaveState(u0, np.zeros_like(u0))
        try:
            s = final_state(s0, medium, RolloutConfig(dt, steps))
        except RolloutOverflowError:
            rows.append(SweepRow(dt, steps, float("nan"), float("inf"), True))
            continue
        ratios = [
            discrete_energy(WaveState(s.u[i], s.v[i]), medium)
            / discrete_energy(WaveState(s0.u[i], s0.v[i]), medium)
            for i in range(len(modes))
        ]
        if max(ratios) > DIVERGENCE_ENERGY_RATIO:
            rows.append(SweepRow(dt, steps, float("nan"), float("inf"), True))
            continue
        exact = np.cos(omegas[:, None] * steps * dt) * u0
        rows.append(SweepRow(dt, steps, float(np.mean((s.u - exact) ** 2)),
                             float(max(abs(r - 1.0) for r in ratios)), False))
    return rows


# ---------------------------------------------------------------- wecs ablation

def ablation_state(n: int, mode: int = 1) -> WaveState:
    x = np.arange(n)
    return WaveState(np.sin(2 * np.pi * mode * x / n), np.zeros(n))


def wecs_pair(n: int, dt: float, steps: int, mode: int = 1) -> tuple[float, float]:
    s0 = ablation_state(n, mode)
    medium = Medium(np.ones(n), np.zeros(n))
    out = []
    for integrator in ("verlet", "euler"):
        try:
            s = final_state(s0, medium, RolloutConfig(dt, steps, integrator))
        except RolloutOverflowError:
            out.append(float("inf"))
            continue
        out.append(wecs([s0, s], medium))
    return out[0], out[1]


def run_wecs_ablation(spec: TaskSpec) -> tuple[float, float]:
    """WECS of Verlet and explicit Euler from one undamped constant-c start.

    ``spec.dt`` defaults to half the stability bound when ``extra['dt_fraction']``
    is set; ``spec.steps`` is the rollout length.
    """
    dt = spec.dt
    if "dt_fraction" in spec.extra:
        dt = spec.extra["dt_fraction"] * stability_bound(1.0)
    return wecs_pair(spec.n, dt, spec.steps, int(spec.extra.get("mode", 1)))


# ---------------------------------------------------------------- pattern detection

MOTIF = (1, 2, 3)


def _occurrences(seq, motif) -> np.ndarray:
    k = len(motif)
    windows = np.lib.stride_tricks.sliding_window_view(seq, k)
    return np.flatnonzero(np.all(windows == np.asarray(motif), axis=1))


def motif_batch(rng: np.random.Generator, num: int, n: int, vocab: int, motif=MOTIF):
    """Token strings with balanced labels: 1 iff ``motif`` occurs contiguously.

    Negatives contain the motif's tokens scattered at non-adjacent positions, so
    token counts alone carry no label information.
    """
    k = len(motif)
    labels = rng.permutation(np.arange(num) % 2)
    seqs = rng.integers(0, vocab, size=(num, n))
    for i in range(num):
        seq = seqs[i]
        for _ in range(1000):
            hits = _occurrences(seq, motif)
            if hits.size == 0:
                break
            seq[hits] = rng.integers(0, vocab, size=hits.size)
        if labels[i]:
            p = rng.integers(0, n - k + 1)
            seq[p:p + k] = motif
        else:
            while True:
                pos = np.sort(rng.choice(n, size=k, replace=False))
                if np.all(np.diff(pos) > 1):
                    break
            seq[pos] = rng.permutation(motif)
            while _occurrences(seq, motif).size:
                # decoys are never adjacent, so every window has a free slot
                hit = _occurrences(seq, motif)[0]
                j = next(i for i in range(hit, hit + k) if i not in pos)
                seq[j] = (seq[j] + 1 + rng.integers(0, vocab - 1)) % vocab
    return seqs, labels


@dataclass
class PatternReport:
    wave_accuracy: float
    control_accuracy: float
    curves: dict  # name -> list of (step, loss, heldout accuracy)
    params: dict  # name -> trained parameter dict
    configs: dict  # name -> ModelConfig


def pattern_model_config(spec: TaskSpec, steps: int) -> ModelConfig:
    e = spec.extra
    return ModelConfig(
        d=spec.d,
        num_blocks=int(e.get("num_blocks", 2)),
        steps=steps,
        input_kind="tokens",
        vocab_size=int(e.get("vocab", 32)),
        readout="pooled",
        out_dim=2,
        c0=float(e.get("c0", 1.0)),
        gamma0=float(e.get("gamma0", 0.01)),
        dt0=float(e.get("dt0", 0.05)),
        weight_scale=float(e.get("weight_scale", 0.1)),
    )


def accuracy(params, cfg: ModelConfig, seqs, labels, chunk: int = 250) -> float:
    hits = 0
    for i in range(0, len(labels), chunk):
        logits = model_forward(seqs[i:i + chunk], params, cfg)
        hits += int(np.sum(np.argmax(logits, axis=-1) == labels[i:i + chunk]))
    return hits / len(labels)


def train_classifier(spec: TaskSpec, cfg: ModelConfig, heldout, name: str = "model"):
    """Adam on fresh seeded batches; returns ``(params, curve, diverged)``."""
    vocab = cfg.vocab_size
    params = init_params(cfg, spec.seed)
    state = AdamState(lr=spec.lr)
    data_rng = np.random.default_rng([spec.seed, 1])
    curve = []
    diverged = False
    for step in range(spec.train_steps + 1):
        seqs, labels = motif_batch(data_rng, spec.batch_size, spec.n, vocab)
        try:
            logits, cache = model_forward(seqs, params, cfg, return_cache=True)
        except RolloutOverflowError as exc:
            log.warning("%s diverged at training step %d (%s)", name, step, exc)
            diverged = True
            break
        loss, dlogits = softmax_cross_entropy(logits, labels)
        if step % spec.log_every == 0 or step == spec.train_steps:
            acc = accuracy(params, cfg, *heldout)
            curve.append((step, loss, acc))
            log.info("%s step %d loss %.4f heldout acc %.4f", name, step, loss, acc)
        if step == spec.train_steps:
            break
        grads = model_backward(dlogits, cache, params, cfg)
        params, state = adam_step(params, grads, state)
    return params, curve, diverged


def run_pattern_detect(spec: TaskSpec) -> PatternReport:
    """Train the wave model and a ``steps = 0`` control on motif detection."""
    heldout = motif_batch(np.random.default_rng([spec.seed, 2]), int(spec.extra.get("heldout", 1000)),
                          spec.n, int(spec.extra.get("vocab", 32)))
    out = {"curves": {}, "params": {}, "configs": {}, "acc": {}}
    for name, steps in (("wave", spec.steps), ("control", 0)):
        cfg = pattern_model_config(spec, steps)
        params, curve, diverged = train_classifier(spec, cfg, heldout, name)
        out["curves"][name] = curve
        out["params"][name] = params
        out["configs"][name] = cfg
        out["acc"][name] = float("nan") if diverged else accuracy(params, cfg, *heldout)
    return PatternReport(out["acc"]["wave"], out["acc"]["control"], out["curves"], out["params"], out["configs"])


# ---------------------------------------------------------------- universality

def trig_target(seed: int, n: int, degree: int = 5) -> np.ndarray:
    """Seeded random trigonometric polynomial on the grid with unit sup-norm."""
    rng = np.random.default_rng([seed, 3])
    x = 2 * np.pi * np.arange(n) / n
    f = np.full(n, rng.normal())
    for m in range(1, degree + 1):
        f += rng.normal() * np.cos(m * x) + rng.normal() * np.sin(m * x)
    return f / np.max(np.abs(f))


@dataclass
class UniversalityReport:
    sup_error: float
    final_loss: float
    diverged: bool
    curve: list  # (step, mse, sup error)
    params: dict
    prediction: np.ndarray


def universality_init(spec: TaskSpec) -> dict:
    """Parameters of lift -> single direct-medium wave layer -> readout."""
    rng = np.random.default_rng([spec.seed, 4])
    n, d = spec.n, spec.d
    e = spec.extra
    return {
        "lift_w": rng.normal(0.0, 1.0, d),
        "lift_b": rng.normal(0.0, 1.0, d),
        "c_raw": np.full(n, inverse_softplus(float(e.get("c0", 1.0)))),
        "gamma_raw": np.full(n, inverse_softplus(float(e.get("gamma0", 0.01)))),
        "dt_raw": np.asarray(inverse_softplus(float(e.get("dt0", 0.25)))),
        "W_v": rng.normal(0.0, 1.0 / np.sqrt(d), (d, d)),
        "readout_w": np.zeros(d),
        "readout_b": np.asarray(0.0),
    }


def universality_input(n: int) -> np.ndarray:
    """Grid coordinates ``x_j = j / n`` on the unit interval."""
    return np.arange(n) / n


def universality_forward(p: dict, x: np.ndarray, steps: int, *, return_cache: bool = False):
    # channels on the leading axis: U0 is (d, n)
    U0 = np.outer(p["lift_w"], x) + p["lift_b"][:, None]
    V0 = p["W_v"].T @ U0
    c, g, dt = softplus(p["c_raw"]), softplus(p["gamma_raw"]), softplus(p["dt_raw"])
    us, vs, vhs = record_arrays(U0, V0, c, g, dt, steps, channel_axis=0)
    y = p["readout_w"] @ us[-1] + p["readout_b"]
    if return_cache:
        return y, (x, U0, us, vs, vhs, c, g, dt)
    return y


def universality_backward(p: dict, dy: np.ndarray, cache) -> dict:
    x, U0, us, vs, vhs, c, g, dt = cache
    dU = np.outer(p["readout_w"], dy)
    du0, dv0, dc, dg, ddt = backward_arrays(us, vs, vhs, c, g, dt, dU, np.zeros_like(dU))
    du0 = du0 + p["W_v"] @ dv0
    return {
        "lift_w": du0 @ x,
        "lift_b": du0.sum(axis=1),
        "c_raw": dc * sigmoid(p["c_raw"]),
        "gamma_raw": dg * sigmoid(p["gamma_raw"]),
        "dt_raw": np.asarray(ddt * sigmoid(p["dt_raw"])),
        "W_v": U0 @ dv0.T,
        "readout_w": us[-1] @ dy,
        "readout_b": np.asarray(dy.sum()),
    }


def fit_readout(p: dict, x: np.ndarray, target: np.ndarray, steps: int) -> dict:
    """Least-squares readout for the current layer output (layer left unchanged)."""
    U = record_arrays(*_universality_state(p, x), steps, channel_axis=0)[0][-1]
    A = np.concatenate([U.T, np.ones((len(x), 1))], axis=1)
    coef, *_ = np.linalg.lstsq(A, target, rcond=None)
    q = dict(p)
    q["readout_w"], q["readout_b"] = coef[:-1], np.asarray(coef[-1])
    return q


def _universality_state(p, x):
    U0 = np.outer(p["lift_w"], x) + p["lift_b"][:, None]
    return (U0, p["W_v"].T @ U0, softplus(p["c_raw"]), softplus(p["gamma_raw"]), softplus(p["dt_raw"]))


def run_universality_fit(spec: TaskSpec, target: np.ndarray | None = None) -> UniversalityReport:
    """Fit a target on the grid with one wave layer and a linear readout."""
    n, k = spec.n, spec.steps
    x = universality_input(n)
    target = trig_target(spec.seed, n) if target is None else np.asarray(target, dtype=np.float64)
    params = universality_init(spec)
    state = AdamState(lr=spec.lr)
    curve = []
    diverged = False
    y = np.zeros(n)
    loss = float("nan")
    for step in range(spec.train_steps + 1):
        try:
            y, cache = universality_forward(params, x, k, return_cache=True)
        except RolloutOverflowError as exc:
            log.warning("universality fit diverged at training step %d (%s)", step, exc)
            diverged = True
            break
        loss, dy = mse(y, target)
        if step % spec.log_every == 0 or step == spec.train_steps:
            curve.append((step, loss, float(np.max(np.abs(y - target)))))
        if step == spec.train_steps:
            break
        params, state = adam_step(params, universality_backward(params, dy, cache), state)
    return UniversalityReport(
        sup_error=float(np.max(np.abs(y - target))) if not diverged else float("inf"),
        final_loss=loss,
        diverged=diverged,
        curve=curve,
        params=params,
        prediction=y,
    )


# ---------------------------------------------------------------- defaults

DEFAULT_TASKS: dict[str, dict] = {
    "inverse-medium": dict(n=64, steps=8, dt=0.25, num_samples=32, train_steps=2000, lr=1e-2, log_every=100),
    "pattern-detect": dict(
        n=128, d=32, steps=4, train_steps=2000, lr=1e-2, batch_size=32, log_every=250,
        extra={"vocab": 32, "dt0": 0.3, "weight_scale": 1.0, "heldout": 1000},
    ),
    "universality-fit": dict(n=64, d=16, steps=8, train_steps=10000, lr=3e-3, log_every=500),
    "dt-sweep": dict(n=64, dt_grid=(0.01, 0.02, 0.1, 0.2, 0.5, 0.6, 0.7, 1.0), extra={"horizon": 20.0}),
    "wecs-ablation": dict(n=64, steps=1000, dt=1.0 / np.pi, extra={"mode": 1}),
}


def default_spec(task: str, seed: int = 0, **overrides) -> TaskSpec:
    """TaskSpec with the task's defaults; ``overrides`` replace fields, ``extra`` merges."""
    if task not in DEFAULT_TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(DEFAULT_TASKS)}")
    base = dict(DEFAULT_TASKS[task])
    extra = dict(base.pop("extra", {}))
    extra.update(overrides.pop("extra", {}) or {})
    base.update(overrides)
    if "dt_grid" in base:
        base["dt_grid"] = tuple(float(x) for x in base["dt_grid"])
    return TaskSpec(task=task, seed=seed, extra=extra, **base)
