"""The three-stage backbone: patch embedding, mixing blocks, merging,
combining, and the linear classifier head.

The parameter set is fully determined by the config: ``parameter_spec``
enumerates every learnable tensor (name, shape, init rule) in construction
order, and both the model constructor and the parameter audit walk the same
list.  Names use dotted paths (``stage2.block0.attn.qkv.weight``); the
classifier lives under ``head.`` so audits can exclude it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import SvtrConfig, LOCAL
from .exceptions import ContractError, GeometryError, ShapeError
from .tensor import BatchNormState, Tensor


def local_attention_mask(h: int, w: int, wh: int, ww: int) -> np.ndarray:
    """Boolean [h*w, h*w] mask for window-limited attention on an h x w grid.

    Query q may attend key k iff their grid positions differ by at most
    (wh-1)/2 rows and (ww-1)/2 cols; windows are clipped at the boundary,
    never padded or wrapped.
    """
    if wh % 2 == 0 or ww % 2 == 0:
        raise ContractError(f"window {wh}x{ww} must have odd sides")
    if h < 1 or w < 1 or wh < 1 or ww < 1:
        raise ContractError(f"grid {h}x{w} and window {wh}x{ww} must be positive")
    idx = np.arange(h * w)
    rows = idx // w
    cols = idx % w
    dr = np.abs(rows[:, None] - rows[None, :])
    dc = np.abs(cols[:, None] - cols[None, :])
    return (dr <= (wh - 1) // 2) & (dc <= (ww - 1) // 2)


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    init: str  # trunc_normal | zeros | ones


def _affine(prefix: str, dim: int) -> list:
    return [ParamSpec(prefix + ".gamma", (dim,), "ones"),
            ParamSpec(prefix + ".beta", (dim,), "zeros")]


def parameter_spec(config: SvtrConfig) -> list[ParamSpec]:
    """Every learnable tensor of the model, in construction order."""
    d0, d1, d2 = config.embed_dims
    specs: list[ParamSpec] = [
        ParamSpec("embed.conv1.weight", (d0 // 2, 3, 3, 3), "trunc_normal"),
        ParamSpec("embed.conv1.bias", (d0 // 2,), "zeros"),
        *_affine("embed.bn1", d0 // 2),
        ParamSpec("embed.conv2.weight", (d0, d0 // 2, 3, 3), "trunc_normal"),
        ParamSpec("embed.conv2.bias", (d0,), "zeros"),
        *_affine("embed.bn2", d0),
        ParamSpec("embed.pos", ((config.input_h // 4) * (config.input_w // 4), d0),
                  "trunc_normal"),
    ]
    for stage, dim in enumerate(config.embed_dims):
        hidden = int(round(config.mlp_ratio * dim))
        for block in range(config.depths[stage]):
            p = f"stage{stage + 1}.block{block}."
            specs += _affine(p + "norm1", dim)
            specs += [
                ParamSpec(p + "attn.qkv.weight", (dim, 3 * dim), "trunc_normal"),
                ParamSpec(p + "attn.qkv.bias", (3 * dim,), "zeros"),
                ParamSpec(p + "attn.proj.weight", (dim, dim), "trunc_normal"),
                ParamSpec(p + "attn.proj.bias", (dim,), "zeros"),
            ]
            specs += _affine(p + "norm2", dim)
            specs += [
                ParamSpec(p + "mlp.fc1.weight", (dim, hidden), "trunc_normal"),
                ParamSpec(p + "mlp.fc1.bias", (hidden,), "zeros"),
                ParamSpec(p + "mlp.fc2.weight", (hidden, dim), "trunc_normal"),
                ParamSpec(p + "mlp.fc2.bias", (dim,), "zeros"),
            ]
        if stage < 2:
            nxt = config.embed_dims[stage + 1]
            p = f"merge{stage + 1}."
            specs += [
                ParamSpec(p + "conv.weight", (nxt, dim, 3, 3), "trunc_normal"),
                ParamSpec(p + "conv.bias", (nxt,), "zeros"),
                *_affine(p + "norm", nxt),
            ]
    specs += [
        ParamSpec("combine.fc.weight", (d2, config.combined_dim), "trunc_normal"),
        ParamSpec("combine.fc.bias", (config.combined_dim,), "zeros"),
        ParamSpec("head.weight", (config.combined_dim, config.charset_size), "trunc_normal"),
        ParamSpec("head.bias", (config.charset_size,), "zeros"),
    ]
    return specs


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with redraws outside +-2 std."""
    x = rng.standard_normal(shape) * std
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(x) > 2 * std
    return x.astype(np.float32)


_INITS = {
    "trunc_normal": _trunc_normal,
    "zeros": lambda rng, shape: np.zeros(shape, dtype=np.float32),
    "ones": lambda rng, shape: np.ones(shape, dtype=np.float32),
}


class SvtrModel:
    """Parameterized backbone plus classifier; owns all learnable tensors."""

    def __init__(self, config: SvtrConfig, seed: int = 42, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        for spec in parameter_spec(config):
            data = _INITS[spec.init](rng, spec.shape).astype(dtype)
            self.params[spec.name] = Tensor(data, requires_grad=True)
        d0 = config.embed_dims[0]
        self.bn_states = {
            "embed.bn1": BatchNormState.create(d0 // 2),
            "embed.bn2": BatchNormState.create(d0),
        }
        self.training = True
        self._mask_cache: dict[tuple, np.ndarray] = {}
        self._dropout_seed = seed
        self._dropout_calls = 0
        self.attention_maps: dict[tuple, np.ndarray] = {}

    # -- mode and rng -------------------------------------------------------

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def seed_dropout(self, seed: int):
        """Pin the dropout stream; each dropout site then draws from a
        counter-derived generator so replays are bit-identical."""
        self._dropout_seed = seed
        self._dropout_calls = 0

    def _dropout_rng(self) -> np.random.Generator:
        rng = np.random.default_rng((self._dropout_seed, self._dropout_calls))
        self._dropout_calls += 1
        return rng

    def _drop(self, x: Tensor, rate: float) -> Tensor:
        if rate == 0.0 or not self.training:
            return x
        return T.dropout(x, rate, self.training, self._dropout_rng())

    # -- state access -------------------------------------------------------

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, st in self.bn_states.items():
            out[name + ".running_mean"] = st.running_mean
            out[name + ".running_var"] = st.running_var
        return out

    def load_state(self, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray]):
        for name, tens in self.params.items():
            if name not in params:
                raise ContractError(f"missing parameter in state: {name}")
            if tuple(params[name].shape) != tens.shape:
                raise ShapeError(f"parameter {name}: state shape {params[name].shape} "
                                 f"!= model shape {tens.shape}")
            tens.data = params[name].astype(tens.dtype)
            tens.grad = None
        for name, st in self.bn_states.items():
            st.running_mean = buffers[name + ".running_mean"].astype(np.float32)
            st.running_var = buffers[name + ".running_var"].astype(np.float32)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def mask_for(self, h: int, w: int) -> np.ndarray:
        key = (h, w, *self.config.window)
        if key not in self._mask_cache:
            self._mask_cache[key] = local_attention_mask(h, w, *self.config.window)
        return self._mask_cache[key]

    # -- forward pieces -----------------------------------------------------

    def patch_embed(self, images: Tensor) -> Tensor:
        p = self.params
        x = T.conv2d(images, p["embed.conv1.weight"], p["embed.conv1.bias"],
                     stride=(2, 2), padding=(1, 1))
        x = T.batchnorm2d(x, p["embed.bn1.gamma"], p["embed.bn1.beta"],
                          self.bn_states["embed.bn1"], self.training)
        x = T.gelu(x)
        x = T.conv2d(x, p["embed.conv2.weight"], p["embed.conv2.bias"],
                     stride=(2, 2), padding=(1, 1))
        x = T.batchnorm2d(x, p["embed.bn2.gamma"], p["embed.bn2.beta"],
                          self.bn_states["embed.bn2"], self.training)
        x = T.gelu(x)
        b, d0, h, w = x.shape
        x = T.transpose(T.reshape(x, (b, d0, h * w)), (0, 2, 1))
        x = x + p["embed.pos"]
        return self._drop(x, self.config.dropout_rate)

    def mixing_block(self, x: Tensor, prefix: str, heads: int,
                     mask: np.ndarray | None, capture_key: tuple | None = None) -> Tensor:
        p = self.params
        cfg = self.config
        b, n, d = x.shape
        dh = d // heads
        if mask is not None and mask.shape != (n, n):
            raise ShapeError(f"mask shape {mask.shape} does not match sequence length {n}")

        h = T.layernorm(x, p[prefix + "norm1.gamma"], p[prefix + "norm1.beta"])
        qkv = T.linear(h, p[prefix + "attn.qkv.weight"], p[prefix + "attn.qkv.bias"])
        q, k, v = T.split(qkv, 3, axis=-1)
        q = T.transpose(T.reshape(q, (b, n, heads, dh)), (0, 2, 1, 3))
        k = T.transpose(T.reshape(k, (b, n, heads, dh)), (0, 2, 1, 3))
        v = T.transpose(T.reshape(v, (b, n, heads, dh)), (0, 2, 1, 3))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
        if mask is not None:
            scores = T.apply_attention_mask(scores, mask)
        attn = T.softmax(scores, axis=-1)
        if capture_key is not None:
            self.attention_maps[capture_key] = attn.data.copy()
        attn = self._drop(attn, cfg.attn_dropout_rate)
        out = T.matmul(attn, v)                                   # [b, heads, n, dh]
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, n, d))
        out = T.linear(out, p[prefix + "attn.proj.weight"], p[prefix + "attn.proj.bias"])
        x = x + out

        h = T.layernorm(x, p[prefix + "norm2.gamma"], p[prefix + "norm2.beta"])
        m = T.linear(h, p[prefix + "mlp.fc1.weight"], p[prefix + "mlp.fc1.bias"])
        m = self._drop(T.gelu(m), cfg.dropout_rate)
        m = T.linear(m, p[prefix + "mlp.fc2.weight"], p[prefix + "mlp.fc2.bias"])
        m = self._drop(m, cfg.dropout_rate)
        return x + m

    def merging(self, x: Tensor, index: int, h: int, w: int) -> Tensor:
        if h % 2 != 0:
            raise GeometryError(f"merging requires even height, got {h}")
        p = self.params
        b = x.shape[0]
        d_in = x.shape[-1]
        prefix = f"merge{index}."
        d_out = p[prefix + "conv.weight"].shape[0]
        x = T.transpose(T.reshape(x, (b, h, w, d_in)), (0, 3, 1, 2))
        x = T.conv2d(x, p[prefix + "conv.weight"], p[prefix + "conv.bias"],
                     stride=(2, 1), padding=(1, 1))
        x = T.reshape(T.transpose(x, (0, 2, 3, 1)), (b, (h // 2) * w, d_out))
        return T.layernorm(x, p[prefix + "norm.gamma"], p[prefix + "norm.beta"])

    def combining(self, x: Tensor, h: int, w: int) -> Tensor:
        p = self.params
        b = x.shape[0]
        d = x.shape[-1]
        if x.shape[1] != h * w:
            raise ShapeError(f"combining sequence length {x.shape[1]} != {h}x{w}")
        x = T.transpose(T.reshape(x, (b, h, w, d)), (0, 3, 1, 2))
        x = T.mean_pool_height(x)                                 # [b, d, 1, w]
        x = T.transpose(T.reshape(x, (b, d, w)), (0, 2, 1))
        x = T.linear(x, p["combine.fc.weight"], p["combine.fc.bias"])
        x = T.gelu(x)
        return self._drop(x, self.config.dropout_rate)

    # -- full forward -------------------------------------------------------

    def forward(self, images, capture_attention: bool = False) -> Tensor:
        """images [b, 3, H, W] -> logits [b, W/4, charset_size]."""
        cfg = self.config
        if not isinstance(images, Tensor):
            images = Tensor(np.asarray(images, dtype=self.dtype))
        elif images.dtype != self.dtype:
            images = Tensor(images.data.astype(self.dtype))
        if images.data.ndim != 4 or images.shape[1] != 3 or \
                images.shape[2] != cfg.input_h or images.shape[3] != cfg.input_w:
            raise GeometryError(
                f"expected input [b, 3, {cfg.input_h}, {cfg.input_w}], got {images.shape}")
        if capture_attention:
            self.attention_maps = {}

        x = self.patch_embed(images)
        geometry = cfg.stage_geometry()
        for stage in range(3):
            h, w, _ = geometry[stage]
            kinds = cfg.stage_permutation(stage)
            for block, kind in enumerate(kinds):
                mask = self.mask_for(h, w) if kind == LOCAL else None
                key = (stage + 1, block) if capture_attention else None
                x = self.mixing_block(x, f"stage{stage + 1}.block{block}.",
                                      cfg.heads[stage], mask, capture_key=key)
            if stage < 2:
                x = self.merging(x, stage + 1, h, w)
        h, w, _ = geometry[2]
        x = self.combining(x, h, w)
        return T.linear(x, self.params["head.weight"], self.params["head.bias"])

    __call__ = forward


def export_attention(model: SvtrModel, image, stage: int, block: int,
                     head: int, query_index: int) -> np.ndarray:
    """Post-softmax attention row for one query, reshaped to the stage grid."""
    cfg = model.config
    if not 1 <= stage <= 3:
        raise IndexError(f"stage {stage} out of range 1..3")
    if not 0 <= block < cfg.depths[stage - 1]:
        raise IndexError(f"block {block} out of range for stage {stage}")
    if not 0 <= head < cfg.heads[stage - 1]:
        raise IndexError(f"head {head} out of range for stage {stage}")
    h, w, _ = cfg.stage_geometry()[stage - 1]
    if not 0 <= query_index < h * w:
        raise IndexError(f"query {query_index} out of range for {h}x{w} grid")

    was_training = model.training
    model.eval()
    try:
        model.forward(image, capture_attention=True)
    finally:
        model.training = was_training
    maps = model.attention_maps[(stage, block)]
    return maps[0, head, query_index].reshape(h, w)
