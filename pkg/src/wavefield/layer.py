"""The trainable wave layer: input-conditioned medium, multi-channel rollout.

Hidden sequences are arrays of shape ``(n, d)`` or batched ``(B, n, d)``.
Every channel is propagated through the same medium ``(c, gamma)``, which is
produced per position by two 1x1 convolutions followed by softplus.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .adjoint import backward_arrays, record_arrays
from .dynamics import Medium, RolloutOverflowError, ShapeError


class StaleTapeError(RuntimeError):
    pass


_TINY = np.finfo(np.float64).tiny


def softplus(x):
    """``log(1 + exp(x))`` without overflow for large ``x``.

    Results are floored at the smallest normal double so the output stays
    strictly positive where ``exp(x)`` underflows.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))), _TINY)
    return out if out.ndim else float(out)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def inverse_softplus(y: float) -> float:
    if y <= 0:
        raise ValueError("softplus output must be positive")
    return float(y + np.log(-np.expm1(-y)))


@dataclass
class LayerParams:
    w_c: np.ndarray
    b_c: float
    w_g: np.ndarray
    b_g: float
    dt_raw: float
    steps: int
    v0_mode: Literal["zero", "linear"] = "zero"
    W_v: np.ndarray | None = None

    def __post_init__(self):
        self.w_c = np.asarray(self.w_c, dtype=np.float64)
        self.w_g = np.asarray(self.w_g, dtype=np.float64)
        d = self.w_c.shape[0]
        if self.w_c.shape != (d,) or self.w_g.shape != (d,):
            raise ShapeError("w_c and w_g must be vectors of equal length")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ValueError(f"steps must be a non-negative integer, got {self.steps}")
        if self.v0_mode not in ("zero", "linear"):
            raise ValueError(f"unknown v0_mode {self.v0_mode!r}")
        if (self.W_v is not None) != (self.v0_mode == "linear"):
            raise ValueError("W_v must be given exactly when v0_mode == 'linear'")
        if self.W_v is not None:
            self.W_v = np.asarray(self.W_v, dtype=np.float64)
            if self.W_v.shape != (d, d):
                raise ShapeError(f"W_v must be {(d, d)}, got {self.W_v.shape}")

    @property
    def d(self) -> int:
        return self.w_c.shape[0]

    @property
    def dt(self) -> float:
        return softplus(self.dt_raw)

    @classmethod
    def init(
        cls,
        d: int,
        steps: int,
        rng: np.random.Generator | None = None,
        *,
        c0: float = 1.0,
        gamma0: float = 0.01,
        dt0: float = 0.05,
        weight_scale: float = 0.1,
        v0_mode: str = "zero",
    ) -> "LayerParams":
        rng = rng if rng is not None else np.random.default_rng(0)
        scale = weight_scale / np.sqrt(d)
        return cls(
            w_c=rng.normal(0.0, scale, d),
            b_c=inverse_softplus(c0),
            w_g=rng.normal(0.0, scale, d),
            b_g=inverse_softplus(gamma0),
            dt_raw=inverse_softplus(dt0),
            steps=steps,
            v0_mode=v0_mode,
            W_v=rng.normal(0.0, scale, (d, d)) if v0_mode == "linear" else None,
        )

    # flat name -> array views, used by the optimizer and serialization
    def arrays(self) -> dict[str, np.ndarray]:
        out = {
            "w_c": self.w_c,
            "b_c": np.asarray(self.b_c, dtype=np.float64),
            "w_g": self.w_g,
            "b_g": np.asarray(self.b_g, dtype=np.float64),
            "dt_raw": np.asarray(self.dt_raw, dtype=np.float64),
        }
        if self.W_v is not None:
            out["W_v"] = self.W_v
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, steps: int, v0_mode: str = "zero") -> "LayerParams":
        return cls(
            w_c=arrays["w_c"],
            b_c=float(arrays["b_c"]),
            w_g=arrays["w_g"],
            b_g=float(arrays["b_g"]),
            dt_raw=float(arrays["dt_raw"]),
            steps=steps,
            v0_mode=v0_mode,
            W_v=arrays.get("W_v"),
        )


@dataclass
class LayerGradients:
    w_c: np.ndarray
    b_c: float
    w_g: np.ndarray
    b_g: float
    dt_raw: float
    W_v: np.ndarray | None
    d_input: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        out = {
            "w_c": self.w_c,
            "b_c": np.asarray(self.b_c),
            "w_g": self.w_g,
            "b_g": np.asarray(self.b_g),
            "dt_raw": np.asarray(self.dt_raw),
        }
        if self.W_v is not None:
            out["W_v"] = self.W_v
        return out


def _check_hidden(H: np.ndarray, p: LayerParams) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim < 2 or H.shape[-1] != p.d:
        raise ShapeError(f"hidden sequence must be (..., n, {p.d}), got {H.shape}")
    if H.shape[-2] < 2:
        raise ShapeError("hidden sequence needs at least 2 positions")
    return H


def _medium_logits(H, p: LayerParams):
    return H @ p.w_c + p.b_c, H @ p.w_g + p.b_g


def medium_from_hidden(H, p: LayerParams) -> Medium:
    """Per-position speed and damping shared across channels."""
    H = _check_hidden(H, p)
    z_c, z_g = _medium_logits(H, p)
    return Medium(softplus(z_c), softplus(z_g))


# channels are integrated in blocks of about this many field values so the
# rollout's working set stays cache-resident
BLOCK_ELEMENTS = 1 << 15
# batched FFTs vectorize across rows; fewer rows than this per call is slower
MIN_BLOCK_CHANNELS = 4


def _channel_blocks(shape) -> list[tuple[int, int]]:
    d, per_channel = shape[-2], int(np.prod(shape)) // shape[-2]
    width = max(MIN_BLOCK_CHANNELS, BLOCK_ELEMENTS // max(per_channel, 1))
    return [(lo, min(lo + width, d)) for lo in range(0, d, width)]


@dataclass
class LayerTape:
    H: np.ndarray
    params: LayerParams
    snapshot: dict
    z_c: np.ndarray
    z_g: np.ndarray
    medium: Medium
    chunks: list  # (us, vs, v_halves) per channel block


def wave_layer_forward(H, p: LayerParams) -> tuple[np.ndarray, LayerTape]:
    H = _check_hidden(H, p)
    z_c, z_g = _medium_logits(H, p)
    c, gamma = softplus(z_c), softplus(z_g)
    medium = Medium(c, gamma)
    u0 = np.ascontiguousarray(np.swapaxes(H, -1, -2))  # (..., d, n)
    v0 = np.ascontiguousarray(np.swapaxes(H @ p.W_v, -1, -2)) if p.v0_mode == "linear" else np.zeros_like(u0)
    chunks = []
    buf = np.empty((3, p.steps) + u0.shape)  # tape storage shared by all blocks
    for lo, hi in _channel_blocks(u0.shape):
        try:
            chunks.append(record_arrays(
                u0[..., lo:hi, :], v0[..., lo:hi, :], c[..., None, :], gamma[..., None, :],
                p.dt, p.steps, channel_axis=-2, buf=buf[..., lo:hi, :],
            ))
        except RolloutOverflowError as exc:
            raise RolloutOverflowError(exc.step, lo + (exc.channel or 0)) from None
    snapshot = {k: np.array(v, copy=True) for k, v in p.arrays().items()}
    tape = LayerTape(H, p, snapshot, z_c, z_g, medium, chunks)
    u_final = np.concatenate([ch[0][-1] for ch in chunks], axis=-2) if len(chunks) > 1 else chunks[0][0][-1]
    return np.swapaxes(u_final, -1, -2), tape


def wave_layer_backward(tape: LayerTape, d_H_out, *, params: LayerParams | None = None) -> LayerGradients:
    """Gradients of a scalar loss w.r.t. the layer's parameters and input.

    ``params`` (optional) is checked against the values the tape was recorded
    with, so a tape left over from an earlier parameter state is rejected.
    """
    p = tape.params
    if params is not None:
        if params is not p and any(
            not np.array_equal(v, tape.snapshot.get(k)) for k, v in params.arrays().items()
        ):
            raise StaleTapeError("tape was recorded with different parameter values")
    elif any(not np.array_equal(v, tape.snapshot[k]) for k, v in p.arrays().items()):
        raise StaleTapeError("parameters were modified after the forward pass")
    H = tape.H
    d_H_out = np.asarray(d_H_out, dtype=np.float64)
    if d_H_out.shape != H.shape:
        raise ShapeError(f"cotangent shape {d_H_out.shape} does not match output {H.shape}")

    c = tape.medium.c[..., None, :]
    gamma = tape.medium.gamma[..., None, :]
    du = np.ascontiguousarray(np.swapaxes(d_H_out, -1, -2))
    du0 = np.empty_like(du)
    dv0 = np.empty_like(du)
    dc = dgamma = 0.0
    ddt = 0.0
    # newest blocks first: their tape is the most likely to still be in cache
    for (lo, hi), (us, vs, vhs) in reversed(list(zip(_channel_blocks(du.shape), tape.chunks))):
        g = du[..., lo:hi, :]
        du0[..., lo:hi, :], dv0[..., lo:hi, :], dc_b, dg_b, ddt_b = backward_arrays(
            us, vs, vhs, c, gamma, p.dt, g, np.zeros_like(g)
        )
        dc = dc + dc_b
        dgamma = dgamma + dg_b
        ddt += ddt_b
    dc = dc[..., 0, :]
    dgamma = dgamma[..., 0, :]
    if dc.shape != tape.z_c.shape:  # medium broadcast over a batch that c lacks
        dc = np.broadcast_to(dc, tape.z_c.shape)
        dgamma = np.broadcast_to(dgamma, tape.z_g.shape)

    d_input = np.swapaxes(du0, -1, -2).copy()
    dW_v = None
    if p.v0_mode == "linear":
        dV0 = np.swapaxes(dv0, -1, -2)
        dW_v = H.reshape(-1, p.d).T @ dV0.reshape(-1, p.d)
        d_input += dV0 @ p.W_v.T

    dz_c = dc * sigmoid(tape.z_c)
    dz_g = dgamma * sigmoid(tape.z_g)
    d_input += dz_c[..., None] * p.w_c + dz_g[..., None] * p.w_g
    return LayerGradients(
        w_c=H.reshape(-1, p.d).T @ dz_c.ravel(),
        b_c=float(dz_c.sum()),
        w_g=H.reshape(-1, p.d).T @ dz_g.ravel(),
        b_g=float(dz_g.sum()),
        dt_raw=ddt * sigmoid(p.dt_raw),
        W_v=dW_v,
        d_input=d_input,
    )
