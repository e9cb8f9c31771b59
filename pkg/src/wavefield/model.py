"""Stacked pre-norm residual wave blocks with embedding and readout heads.

Model parameters live in a flat ``dict[str, np.ndarray]`` so the optimizer and
the parameter file format can treat every model the same way. Block ``i``
owns the keys ``block{i}.ln_scale``, ``block{i}.ln_shift`` and
``block{i}.<layer field>``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from .dynamics import ShapeError
from .layer import LayerParams, LayerTape, wave_layer_backward, wave_layer_forward

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    d: int
    num_blocks: int
    steps: int
    input_kind: Literal["tokens", "field"] = "field"
    vocab_size: int = 0
    d_in: int = 1
    readout: Literal["position", "pooled"] = "position"
    out_dim: int = 1
    v0_mode: Literal["zero", "linear"] = "zero"
    c0: float = 1.0
    gamma0: float = 0.01
    dt0: float = 0.05
    weight_scale: float = 0.1

    def __post_init__(self):
        if self.d < 1 or self.num_blocks < 0 or self.steps < 0 or self.out_dim < 1:
            raise ValueError(f"invalid model sizes in {self}")
        if self.input_kind == "tokens" and self.vocab_size < 1:
            raise ValueError("token models need vocab_size >= 1")
        if self.input_kind not in ("tokens", "field"):
            raise ValueError(f"unknown input_kind {self.input_kind!r}")
        if self.readout not in ("position", "pooled"):
            raise ValueError(f"unknown readout {self.readout!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def layer_norm(x, scale, shift):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * scale + shift, (xhat, inv)


def layer_norm_backward(dy, cache, scale):
    xhat, inv = cache
    lead = tuple(range(dy.ndim - 1))
    d_scale = (dy * xhat).sum(axis=lead)
    d_shift = dy.sum(axis=lead)
    dxhat = dy * scale
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, d_scale, d_shift


def block_layer(params: dict, cfg: ModelConfig, i: int) -> LayerParams:
    pre = f"block{i}."
    arrays = {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}
    return LayerParams.from_arrays(arrays, cfg.steps, cfg.v0_mode)


def block_forward(H, params: dict, cfg: ModelConfig, i: int):
    """``H + wave_layer(layer_norm(H))``; returns the output and a backward cache."""
    pre = f"block{i}."
    normed, ln_cache = layer_norm(H, params[pre + "ln_scale"], params[pre + "ln_shift"])
    layer = block_layer(params, cfg, i)
    out, tape = wave_layer_forward(normed, layer)
    return H + out, (ln_cache, tape)


def block_backward(dH_out, cache, params: dict, i: int):
    pre = f"block{i}."
    ln_cache, tape = cache
    g = wave_layer_backward(tape, dH_out)
    dx, d_scale, d_shift = layer_norm_backward(g.d_input, ln_cache, params[pre + "ln_scale"])
    grads = {pre + k: v for k, v in g.arrays().items()}
    grads[pre + "ln_scale"] = d_scale
    grads[pre + "ln_shift"] = d_shift
    return dH_out + dx, grads


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    d = cfg.d
    params: dict[str, np.ndarray] = {}
    if cfg.input_kind == "tokens":
        params["embed"] = rng.normal(0.0, 1.0, (cfg.vocab_size, d))
    else:
        params["lift_w"] = rng.normal(0.0, 1.0 / np.sqrt(cfg.d_in), (cfg.d_in, d))
        params["lift_b"] = np.zeros(d)
    for i in range(cfg.num_blocks):
        layer = LayerParams.init(
            d, cfg.steps, rng, c0=cfg.c0, gamma0=cfg.gamma0, dt0=cfg.dt0,
            weight_scale=cfg.weight_scale, v0_mode=cfg.v0_mode,
        )
        params[f"block{i}.ln_scale"] = np.ones(d)
        params[f"block{i}.ln_shift"] = np.zeros(d)
        for k, v in layer.arrays().items():
            params[f"block{i}.{k}"] = np.array(v, dtype=np.float64)
    params["readout_w"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, cfg.out_dim))
    params["readout_b"] = np.zeros(cfg.out_dim)
    return params


def identity_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Field model with identity lift and readout (requires ``d_in == d == out_dim``)."""
    if cfg.input_kind != "field" or not (cfg.d_in == cfg.d == cfg.out_dim):
        raise ValueError("identity model needs a field model with d_in == d == out_dim")
    params = init_params(cfg)
    params["lift_w"] = np.eye(cfg.d)
    params["readout_w"] = np.eye(cfg.d)
    return params


def embed(x, params: dict, cfg: ModelConfig):
    if cfg.input_kind == "tokens":
        x = np.asarray(x)
        if not np.issubdtype(x.dtype, np.integer):
            raise TypeError("token input must be integers")
        if x.size and (x.min() < 0 or x.max() >= cfg.vocab_size):
            raise IndexError(f"token ids must lie in [0, {cfg.vocab_size})")
        return params["embed"][x]
    x = np.asarray(x, dtype=np.float64)
    if x.ndim >= 1 and cfg.d_in == 1 and x.shape[-1] != 1:
        x = x[..., None]
    if x.shape[-1] != cfg.d_in:
        raise ShapeError(f"field input must end in {cfg.d_in} channels, got {x.shape}")
    return x @ params["lift_w"] + params["lift_b"]


def model_forward(x, params: dict, cfg: ModelConfig, *, return_cache: bool = False):
    """Embed, run ``cfg.num_blocks`` blocks, then read out.

    Token input: integer array ``(..., n)``. Field input: ``(..., n, d_in)`` (or
    ``(..., n)`` when ``d_in == 1``). Per-position readout returns
    ``(..., n, out_dim)``; pooled readout returns ``(..., out_dim)``.
    """
    H0 = embed(x, params, cfg)
    H = H0
    caches = []
    for i in range(cfg.num_blocks):
        H, cache = block_forward(H, params, cfg, i)
        caches.append(cache)
    feats = H.mean(axis=-2) if cfg.readout == "pooled" else H
    out = feats @ params["readout_w"] + params["readout_b"]
    if return_cache:
        return out, (x, H, caches)
    return out


def model_backward(d_out, cache, params: dict, cfg: ModelConfig) -> dict[str, np.ndarray]:
    x, H, caches = cache
    d_out = np.asarray(d_out, dtype=np.float64)
    grads: dict[str, np.ndarray] = {}
    lead = tuple(range(d_out.ndim - 1))
    if cfg.readout == "pooled":
        feats = H.mean(axis=-2)
        dH = np.broadcast_to((d_out @ params["readout_w"].T)[..., None, :], H.shape) / H.shape[-2]
    else:
        feats = H
        dH = d_out @ params["readout_w"].T
    grads["readout_w"] = feats.reshape(-1, cfg.d).T @ d_out.reshape(-1, cfg.out_dim)
    grads["readout_b"] = d_out.sum(axis=lead) if lead else d_out.copy()
    for i in range(cfg.num_blocks - 1, -1, -1):
        dH, g = block_backward(dH, caches[i], params, i)
        grads.update(g)
    if cfg.input_kind == "tokens":
        g = np.zeros_like(params["embed"])
        np.add.at(g, np.asarray(x).ravel(), dH.reshape(-1, cfg.d))
        grads["embed"] = g
    else:
        xin = np.asarray(x, dtype=np.float64)
        if cfg.d_in == 1 and xin.shape[-1] != 1:
            xin = xin[..., None]
        grads["lift_w"] = xin.reshape(-1, cfg.d_in).T @ dH.reshape(-1, cfg.d)
        grads["lift_b"] = dH.reshape(-1, cfg.d).sum(axis=0)
    return {k: np.asarray(grads[k], dtype=np.float64).reshape(np.shape(params[k])) for k in params}
