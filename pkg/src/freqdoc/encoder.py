"""Hierarchical windowed-attention encoder over frequency feature maps.

Four stages of pre-norm window attention blocks (alternating unshifted and
cyclically shifted windows, relative position bias, GELU MLP) with 2x2
patch merging between stages. Spatial extent drops by 8 across the stages
while channel width grows by 8, so one output token covers a 64x64 region
of the source canvas.

Everything is plain numpy with a hand-written backward pass. That keeps
the forward path byte-deterministic for a given seed and lets the analytic
gradients be audited against central finite differences.
"""

from __future__ import annotations

from collections import OrderedDict
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import erf, ndtr, ndtri

from .errors import FormatError, ValidationError
from .frequency import read_tensor, write_tensor

_NUM_STAGES = 4
_LN_EPS = 1e-5
_MASK_FILL = -1e9
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

PARAM_INDEX_NAME = "params.index"


def truncated_normal(
    rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02
) -> np.ndarray:
    """Normal draw truncated to two standard deviations, via inverse CDF."""
    lo = ndtr(-2.0)
    u = lo + rng.random(shape) * (1.0 - 2.0 * lo)
    return ndtri(u) * std


@dataclass(frozen=True)
class EncoderConfig:
    """Backbone hyperparameters plus the input grid geometry.

    The grid side is part of the configuration because window clamping and
    the relative-bias table shapes depend on it.
    """

    embed_dim: int = 128
    depths: tuple[int, ...] = (2, 2, 2, 2)
    heads: tuple[int, ...] = (4, 8, 16, 32)
    window: int = 8
    mlp_ratio: float = 4.0
    llm_dim: int = 4096
    grid_side: int = 320
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        self.validate()

    def validate(self) -> None:
        if self.embed_dim < 1:
            raise ValidationError("embed_dim must be positive")
        if len(self.depths) != _NUM_STAGES or len(self.heads) != _NUM_STAGES:
            raise ValidationError("depths and heads must list all four stages")
        if any(d < 1 for d in self.depths):
            raise ValidationError("every stage needs at least one block")
        if any(h < 1 for h in self.heads):
            raise ValidationError("head counts must be positive")
        if self.window < 1:
            raise ValidationError("window must be positive")
        if self.mlp_ratio <= 0:
            raise ValidationError("mlp_ratio must be positive")
        if self.llm_dim < 1:
            raise ValidationError("llm_dim must be positive")
        if self.grid_side < 8 or self.grid_side % 8:
            raise ValidationError(
                f"grid_side {self.grid_side} must be a positive multiple of 8"
            )
        for s in range(_NUM_STAGES):
            if self.stage_dim(s) % self.heads[s]:
                raise ValidationError(
                    f"stage {s} width {self.stage_dim(s)} is not divisible by "
                    f"{self.heads[s]} heads"
                )
            if int(self.stage_dim(s) * self.mlp_ratio) < 1:
                raise ValidationError(f"stage {s} MLP hidden width collapses to zero")
            grid = self.stage_grid(s)
            if grid % self.stage_window(s):
                raise ValidationError(
                    f"stage {s} grid {grid} is not divisible by window "
                    f"{self.stage_window(s)}"
                )

    def stage_dim(self, stage: int) -> int:
        return self.embed_dim << stage

    def stage_grid(self, stage: int) -> int:
        return self.grid_side >> stage

    def stage_window(self, stage: int) -> int:
        # Windows never exceed the grid they tile.
        return min(self.window, self.stage_grid(stage))

    @property
    def token_dim(self) -> int:
        return self.stage_dim(_NUM_STAGES - 1)

    @property
    def token_count(self) -> int:
        side = self.stage_grid(_NUM_STAGES - 1)
        return side * side

    @classmethod
    def toy(
        cls,
        grid_side: int = 32,
        embed_dim: int = 8,
        window: int = 4,
        llm_dim: int = 32,
        seed: int = 0,
    ) -> "EncoderConfig":
        """Small configuration for gradient checks and fast tests."""
        return cls(
            embed_dim=embed_dim,
            depths=(2, 2, 2, 2),
            heads=(2, 2, 2, 2),
            window=window,
            llm_dim=llm_dim,
            grid_side=grid_side,
            seed=seed,
        )


@dataclass
class VisualTokens:
    """Encoder output sequence, optionally projected to the language width."""

    count: int
    dim: int
    data: np.ndarray
    projected: np.ndarray | None = None


class ParamSet(Mapping):
    """Named parameter tensors in a stable creation order."""

    def __init__(self, tensors: "OrderedDict[str, np.ndarray]") -> None:
        self._tensors = OrderedDict(tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._tensors)

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self._tensors.values())).dtype

    def total_parameters(self) -> int:
        return sum(t.size for t in self._tensors.values())


def _param_specs(cfg: EncoderConfig):
    """Yield (name, shape, init kind) in the canonical creation order."""
    for s in range(_NUM_STAGES):
        dim = cfg.stage_dim(s)
        m = cfg.stage_window(s)
        hidden = int(dim * cfg.mlp_ratio)
        for b in range(cfg.depths[s]):
            p = f"stages.{s}.blocks.{b}"
            yield f"{p}.norm1.gain", (dim,), "one"
            yield f"{p}.norm1.bias", (dim,), "zero"
            yield f"{p}.attn.qkv.weight", (dim, 3 * dim), "normal"
            yield f"{p}.attn.qkv.bias", (3 * dim,), "zero"
            yield f"{p}.attn.bias_table", ((2 * m - 1) ** 2, cfg.heads[s]), "normal"
            yield f"{p}.attn.proj.weight", (dim, dim), "normal"
            yield f"{p}.attn.proj.bias", (dim,), "zero"
            yield f"{p}.norm2.gain", (dim,), "one"
            yield f"{p}.norm2.bias", (dim,), "zero"
            yield f"{p}.mlp.fc1.weight", (dim, hidden), "normal"
            yield f"{p}.mlp.fc1.bias", (hidden,), "zero"
            yield f"{p}.mlp.fc2.weight", (hidden, dim), "normal"
            yield f"{p}.mlp.fc2.bias", (dim,), "zero"
        if s < _NUM_STAGES - 1:
            yield f"stages.{s}.merge.norm.gain", (4 * dim,), "one"
            yield f"stages.{s}.merge.norm.bias", (4 * dim,), "zero"
            yield f"stages.{s}.merge.reduce.weight", (4 * dim, 2 * dim), "normal"
    top = cfg.token_dim
    yield "final_norm.gain", (top,), "one"
    yield "final_norm.bias", (top,), "zero"
    yield "projector.weight", (top, cfg.llm_dim), "normal"
    yield "projector.bias", (cfg.llm_dim,), "zero"


def init_params(cfg: EncoderConfig, dtype=np.float32) -> ParamSet:
    """Seeded initialization: truncated normal weights, zero biases, unit gains."""
    rng = np.random.default_rng(cfg.seed)
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, shape, kind in _param_specs(cfg):
        if kind == "normal":
            t = truncated_normal(rng, shape)
        elif kind == "one":
            t = np.ones(shape)
        else:
            t = np.zeros(shape)
        tensors[name] = t.astype(dtype)
    return ParamSet(tensors)


def save_params(params: ParamSet, directory: str | Path) -> None:
    """Write one tensor container per parameter plus a name index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, tensor in params.items():
        filename = f"{name}.fqc1"
        write_tensor(directory / filename, tensor)
        lines.append(f"{name}\t{filename}")
    (directory / PARAM_INDEX_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_params(directory: str | Path) -> ParamSet:
    """Read a checkpoint written by save_params, preserving tensor order."""
    directory = Path(directory)
    index = (directory / PARAM_INDEX_NAME).read_text(encoding="utf-8")
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for line in index.splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"malformed index line {line!r}")
        name, filename = parts
        tensors[name] = read_tensor(directory / filename)
    if not tensors:
        raise FormatError(f"{directory}: empty parameter index")
    return ParamSet(tensors)


# Layer primitives. Forward functions return (output, cache); backward
# functions consume the cache and the upstream gradient.


def _layer_norm_fwd(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv, gain)


def _layer_norm_bwd(dy, cache):
    xhat, inv, gain = cache
    width = xhat.shape[-1]
    dgain = (dy * xhat).reshape(-1, width).sum(axis=0)
    dbias = dy.reshape(-1, width).sum(axis=0)
    dxhat = dy * gain
    mean_d = dxhat.mean(axis=-1, keepdims=True)
    mean_dx = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_d - xhat * mean_dx)
    return dx, dgain, dbias


def _linear_fwd(x, w, b=None):
    y = x @ w
    if b is not None:
        y = y + b
    return y, (x, w, b is not None)


def _linear_bwd(dy, cache):
    x, w, has_bias = cache
    n_in, n_out = w.shape
    dx = dy @ w.T
    dw = x.reshape(-1, n_in).T @ dy.reshape(-1, n_out)
    db = dy.reshape(-1, n_out).sum(axis=0) if has_bias else None
    return dx, dw, db


def _gelu_fwd(x):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * cdf, (x, cdf)


def _gelu_bwd(dy, cache):
    x, cdf = cache
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (cdf + x * pdf)


def _softmax_fwd(scores):
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_bwd(dy, p):
    return p * (dy - (dy * p).sum(axis=-1, keepdims=True))


def _window_partition(x, m):
    h, w, c = x.shape
    return (
        x.reshape(h // m, m, w // m, m, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(-1, m * m, c)
    )


def _window_reverse(wins, m, h, w):
    c = wins.shape[-1]
    return (
        wins.reshape(h // m, w // m, m, m, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(h, w, c)
    )


@lru_cache(maxsize=None)
def _relative_index(m: int) -> np.ndarray:
    """(m^2, m^2) lookup of pairwise offsets into a (2m-1)^2 bias table."""
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"))
    coords = coords.reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (m - 1)
    return (rel[0] * (2 * m - 1) + rel[1]).astype(np.intp)


@lru_cache(maxsize=None)
def _shift_mask(grid: int, m: int, shift: int) -> np.ndarray:
    """Additive mask hiding cross-region pairs inside shifted windows."""
    ids = np.zeros((grid, grid, 1))
    spans = (slice(0, grid - m), slice(grid - m, grid - shift), slice(grid - shift, grid))
    region = 0
    for hs in spans:
        for ws in spans:
            ids[hs, ws, 0] = region
            region += 1
    wins = _window_partition(ids, m)[..., 0]
    same = wins[:, :, None] == wins[:, None, :]
    return np.where(same, 0.0, _MASK_FILL)


def _attention_fwd(wins, wq, bq, wp, bp, table, rel_index, heads, mask):
    n_win, n_tok, width = wins.shape
    head_dim = width // heads
    scale = float(head_dim) ** -0.5
    qkv_flat, c_qkv = _linear_fwd(wins, wq, bq)
    qkv = qkv_flat.reshape(n_win, n_tok, 3, heads, head_dim).transpose(2, 0, 3, 1, 4)
    q = qkv[0] * scale
    k = qkv[1]
    v = qkv[2]
    scores = q @ k.swapaxes(-1, -2)
    scores = scores + table[rel_index].transpose(2, 0, 1)[None]
    if mask is not None:
        scores = scores + mask.astype(scores.dtype)[:, None]
    p = _softmax_fwd(scores)
    ctx = p @ v
    merged = ctx.transpose(0, 2, 1, 3).reshape(n_win, n_tok, width)
    y, c_proj = _linear_fwd(merged, wp, bp)
    cache = (c_qkv, q, k, v, p, rel_index, c_proj, heads, scale, table.shape)
    return y, cache


def _attention_bwd(dy, cache):
    c_qkv, q, k, v, p, rel_index, c_proj, heads, scale, table_shape = cache
    n_win, n_heads, n_tok, head_dim = q.shape
    width = n_heads * head_dim

    dmerged, dwp, dbp = _linear_bwd(dy, c_proj)
    dctx = dmerged.reshape(n_win, n_tok, heads, head_dim).transpose(0, 2, 1, 3)
    dp = dctx @ v.swapaxes(-1, -2)
    dv = p.swapaxes(-1, -2) @ dctx
    dscores = _softmax_bwd(dp, p)

    dtable = np.zeros(table_shape, dtype=dscores.dtype)
    rel_grad = dscores.sum(axis=0).transpose(1, 2, 0).reshape(-1, n_heads)
    np.add.at(dtable, rel_index.ravel(), rel_grad)

    dq = (dscores @ k) * scale
    dk = dscores.swapaxes(-1, -2) @ q
    dqkv = np.stack([dq, dk, dv])
    dqkv_flat = dqkv.transpose(1, 3, 0, 2, 4).reshape(n_win, n_tok, 3 * width)
    dwins, dwq, dbq = _linear_bwd(dqkv_flat, c_qkv)
    return dwins, {"qkv.weight": dwq, "qkv.bias": dbq, "bias_table": dtable,
                   "proj.weight": dwp, "proj.bias": dbp}


def _block_fwd(x, params, prefix, heads, m, shift, keep):
    grid_h, grid_w, _ = x.shape
    rel_index = _relative_index(m)
    mask = _shift_mask(grid_h, m, shift) if shift else None

    h, c_ln1 = _layer_norm_fwd(x, params[f"{prefix}.norm1.gain"],
                               params[f"{prefix}.norm1.bias"])
    if shift:
        h = np.roll(h, (-shift, -shift), axis=(0, 1))
    wins = _window_partition(h, m)
    att, c_attn = _attention_fwd(
        wins,
        params[f"{prefix}.attn.qkv.weight"], params[f"{prefix}.attn.qkv.bias"],
        params[f"{prefix}.attn.proj.weight"], params[f"{prefix}.attn.proj.bias"],
        params[f"{prefix}.attn.bias_table"], rel_index, heads, mask,
    )
    h = _window_reverse(att, m, grid_h, grid_w)
    if shift:
        h = np.roll(h, (shift, shift), axis=(0, 1))
    x1 = x + h

    h2, c_ln2 = _layer_norm_fwd(x1, params[f"{prefix}.norm2.gain"],
                                params[f"{prefix}.norm2.bias"])
    f1, c_fc1 = _linear_fwd(h2, params[f"{prefix}.mlp.fc1.weight"],
                            params[f"{prefix}.mlp.fc1.bias"])
    g, c_gelu = _gelu_fwd(f1)
    f2, c_fc2 = _linear_fwd(g, params[f"{prefix}.mlp.fc2.weight"],
                            params[f"{prefix}.mlp.fc2.bias"])
    out = x1 + f2
    cache = None
    if keep:
        cache = {
            "ln1": c_ln1, "attn": c_attn, "ln2": c_ln2,
            "fc1": c_fc1, "gelu": c_gelu, "fc2": c_fc2,
            "m": m, "shift": shift, "hw": (grid_h, grid_w),
        }
    return out, cache


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


def _block_bwd(dout, cache, prefix, grads):
    m = cache["m"]
    shift = cache["shift"]
    grid_h, grid_w = cache["hw"]

    dg, dwfc2, dbfc2 = _linear_bwd(dout, cache["fc2"])
    _acc(grads, f"{prefix}.mlp.fc2.weight", dwfc2)
    _acc(grads, f"{prefix}.mlp.fc2.bias", dbfc2)
    df1 = _gelu_bwd(dg, cache["gelu"])
    dh2, dwfc1, dbfc1 = _linear_bwd(df1, cache["fc1"])
    _acc(grads, f"{prefix}.mlp.fc1.weight", dwfc1)
    _acc(grads, f"{prefix}.mlp.fc1.bias", dbfc1)
    dx1_ln, dg2, db2 = _layer_norm_bwd(dh2, cache["ln2"])
    _acc(grads, f"{prefix}.norm2.gain", dg2)
    _acc(grads, f"{prefix}.norm2.bias", db2)
    dx1 = dout + dx1_ln

    dh = dx1
    if shift:
        dh = np.roll(dh, (-shift, -shift), axis=(0, 1))
    datt = _window_partition(dh, m)
    dwins, attn_grads = _attention_bwd(datt, cache["attn"])
    for short, grad in attn_grads.items():
        _acc(grads, f"{prefix}.attn.{short}", grad)
    dh = _window_reverse(dwins, m, grid_h, grid_w)
    if shift:
        dh = np.roll(dh, (shift, shift), axis=(0, 1))
    dx_ln, dg1, db1 = _layer_norm_bwd(dh, cache["ln1"])
    _acc(grads, f"{prefix}.norm1.gain", dg1)
    _acc(grads, f"{prefix}.norm1.bias", db1)
    return dx1 + dx_ln


def _merge_fwd(x, params, prefix, keep):
    width = x.shape[-1]
    quads = np.concatenate(
        [x[0::2, 0::2], x[1::2, 0::2], x[0::2, 1::2], x[1::2, 1::2]], axis=-1
    )
    h, c_ln = _layer_norm_fwd(quads, params[f"{prefix}.norm.gain"],
                              params[f"{prefix}.norm.bias"])
    y, c_red = _linear_fwd(h, params[f"{prefix}.reduce.weight"])
    cache = {"ln": c_ln, "reduce": c_red, "in_shape": x.shape, "width": width} if keep else None
    return y, cache


def _merge_bwd(dy, cache, prefix, grads):
    width = cache["width"]
    dh, dw, _ = _linear_bwd(dy, cache["reduce"])
    _acc(grads, f"{prefix}.reduce.weight", dw)
    dquads, dg, db = _layer_norm_bwd(dh, cache["ln"])
    _acc(grads, f"{prefix}.norm.gain", dg)
    _acc(grads, f"{prefix}.norm.bias", db)
    dx = np.zeros(cache["in_shape"], dtype=dy.dtype)
    dx[0::2, 0::2] = dquads[..., 0 * width:1 * width]
    dx[1::2, 0::2] = dquads[..., 1 * width:2 * width]
    dx[0::2, 1::2] = dquads[..., 2 * width:3 * width]
    dx[1::2, 1::2] = dquads[..., 3 * width:4 * width]
    return dx


def _forward(feature_map, params, cfg, keep):
    x_in = np.asarray(feature_map)
    expected = (cfg.embed_dim, cfg.grid_side, cfg.grid_side)
    if x_in.shape != expected:
        raise ValidationError(f"input shape {x_in.shape} does not match {expected}")
    if not np.all(np.isfinite(x_in)):
        raise ValidationError("input contains non-finite values")

    x = x_in.transpose(1, 2, 0).astype(params.dtype, copy=True)
    stage_caches = []
    for s in range(_NUM_STAGES):
        m = cfg.stage_window(s)
        grid = cfg.stage_grid(s)
        block_caches = []
        for b in range(cfg.depths[s]):
            # Odd blocks shift by half a window unless one window spans the grid.
            shift = m // 2 if (b % 2 == 1 and m < grid) else 0
            x, c = _block_fwd(x, params, f"stages.{s}.blocks.{b}",
                              cfg.heads[s], m, shift, keep)
            block_caches.append(c)
        merge_cache = None
        if s < _NUM_STAGES - 1:
            x, merge_cache = _merge_fwd(x, params, f"stages.{s}.merge", keep)
        stage_caches.append({"blocks": block_caches, "merge": merge_cache})

    normed, c_final = _layer_norm_fwd(x, params["final_norm.gain"],
                                      params["final_norm.bias"])
    side = cfg.stage_grid(_NUM_STAGES - 1)
    data = normed.reshape(side * side, cfg.token_dim)
    tokens = VisualTokens(count=data.shape[0], dim=data.shape[1], data=data)
    cache = None
    if keep:
        cache = {"stages": stage_caches, "final": c_final, "side": side}
    return tokens, cache


def _backward(upstream, cache, cfg, grads):
    side = cache["side"]
    dnormed = upstream.reshape(side, side, cfg.token_dim)
    dx, dgain, dbias = _layer_norm_bwd(dnormed, cache["final"])
    _acc(grads, "final_norm.gain", dgain)
    _acc(grads, "final_norm.bias", dbias)
    for s in reversed(range(_NUM_STAGES)):
        if s < _NUM_STAGES - 1:
            dx = _merge_bwd(dx, cache["stages"][s]["merge"], f"stages.{s}.merge", grads)
        for b in reversed(range(cfg.depths[s])):
            dx = _block_bwd(dx, cache["stages"][s]["blocks"][b],
                            f"stages.{s}.blocks.{b}", grads)
    return dx.transpose(2, 0, 1)


def encoder_forward(feature_map: np.ndarray, params: ParamSet, cfg: EncoderConfig) -> VisualTokens:
    """Encode a (embed_dim, S, S) feature map into (S/8)^2 tokens of width 8E."""
    tokens, _ = _forward(feature_map, params, cfg, keep=False)
    return tokens


def encoder_backward(
    feature_map: np.ndarray,
    params: ParamSet,
    cfg: EncoderConfig,
    upstream: np.ndarray,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Reverse-mode gradients of the token outputs for the input and parameters.

    The projector sits downstream of the token outputs, so its entries come
    back as zeros here; the composed check in grad_check exercises it.
    """
    tokens, cache = _forward(feature_map, params, cfg, keep=True)
    upstream = np.asarray(upstream)
    if upstream.shape != tokens.data.shape:
        raise ValidationError(
            f"upstream shape {upstream.shape} does not match tokens {tokens.data.shape}"
        )
    grads: dict[str, np.ndarray] = {}
    dinput = _backward(upstream.astype(params.dtype), cache, cfg, grads)
    for name, tensor in params.items():
        if name not in grads:
            grads[name] = np.zeros_like(tensor)
    return dinput, grads


def project_tokens(tokens: VisualTokens | np.ndarray, params: Mapping) -> np.ndarray:
    """Affine map from token width to the language embedding width."""
    data = tokens.data if isinstance(tokens, VisualTokens) else np.asarray(tokens)
    w = params["projector.weight"]
    b = params["projector.bias"]
    if data.ndim != 2 or data.shape[1] != w.shape[0]:
        raise ValidationError(
            f"token matrix {data.shape} does not match projector input {w.shape[0]}"
        )
    out = data @ w + b
    if isinstance(tokens, VisualTokens):
        tokens.projected = out
    return out


def concat_with_instruction(visual: np.ndarray, instruction: np.ndarray | None) -> np.ndarray:
    """Prepend visual tokens to instruction embeddings along the sequence axis."""
    visual = np.asarray(visual)
    if visual.ndim != 2:
        raise ValidationError(f"visual tokens must be 2-D, got shape {visual.shape}")
    if instruction is None:
        return visual.copy()
    instruction = np.asarray(instruction)
    if instruction.size == 0:
        return visual.copy()
    if instruction.ndim != 2 or instruction.shape[1] != visual.shape[1]:
        raise ValidationError(
            f"embedding widths differ: visual {visual.shape} vs "
            f"instruction {instruction.shape}"
        )
    return np.concatenate([visual, instruction], axis=0)


def token_count(resolution: int, mode: str) -> int:
    """Token budget for a square input: stride 64 for dct, 32 for rgb."""
    strides = {"dct": 64, "rgb": 32}
    if mode not in strides:
        raise ValidationError(f"unknown mode {mode!r}")
    stride = strides[mode]
    if resolution < stride or resolution % stride:
        raise ValidationError(f"resolution {resolution} is not a multiple of {stride}")
    return (resolution // stride) ** 2


def _pipeline_loss(x, params, cfg) -> float:
    tokens = encoder_forward(x, params, cfg)
    return float((tokens.data @ params["projector.weight"] + params["projector.bias"]).sum())


def _pipeline_grads(x, params, cfg):
    tokens, cache = _forward(x, params, cfg, keep=True)
    proj, c_proj = _linear_fwd(tokens.data, params["projector.weight"],
                               params["projector.bias"])
    loss = float(proj.sum())
    dtokens, dw, db = _linear_bwd(np.ones_like(proj), c_proj)
    grads: dict[str, np.ndarray] = {"projector.weight": dw, "projector.bias": db}
    dinput = _backward(dtokens, cache, cfg, grads)
    return loss, dinput, grads


@dataclass
class GradCheckReport:
    """Worst relative error per parameter group from finite differencing."""

    per_group: dict[str, float] = field(default_factory=dict)
    trials: int = 0
    eps: float = 0.0

    @property
    def max_rel_error(self) -> float:
        return max(self.per_group.values()) if self.per_group else 0.0


def grad_check(
    cfg: EncoderConfig,
    trials: int = 1,
    coords_per_tensor: int = 20,
    eps: float = 1e-3,
    seed: int = 2024,
    grad_fn=None,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    The loss is the sum of projected tokens so every parameter tensor,
    projector included, participates. Runs in double precision on toy
    configurations; a random subset of coordinates per tensor is perturbed
    by +/-eps.
    """
    if cfg.grid_side > 32 or cfg.embed_dim > 8:
        raise ValidationError("gradient checking is limited to toy configurations")
    params = init_params(cfg, dtype=np.float64)
    analytic = grad_fn or _pipeline_grads
    rng = np.random.default_rng(seed)
    report = GradCheckReport(per_group={}, trials=trials, eps=eps)

    for _ in range(trials):
        x = rng.standard_normal((cfg.embed_dim, cfg.grid_side, cfg.grid_side))
        _, dinput, grads = analytic(x, params, cfg)
        groups = [("input", x, dinput)]
        groups += [(name, params[name], grads[name]) for name in params.names]
        for name, tensor, grad in groups:
            if grad is None or grad.shape != tensor.shape:
                raise ValidationError(f"missing or misshapen gradient for {name}")
            n_probe = min(coords_per_tensor, tensor.size)
            picks = rng.choice(tensor.size, size=n_probe, replace=False)
            worst = report.per_group.get(name, 0.0)
            flat = tensor.reshape(-1)
            for idx in picks:
                original = flat[idx]
                flat[idx] = original + eps
                plus = _pipeline_loss(x, params, cfg)
                flat[idx] = original - eps
                minus = _pipeline_loss(x, params, cfg)
                flat[idx] = original
                numeric = (plus - minus) / (2.0 * eps)
                a = float(grad.reshape(-1)[idx])
                if max(abs(a), abs(numeric)) < 1e-8:
                    continue
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
                worst = max(worst, rel)
            report.per_group[name] = worst
    return report
