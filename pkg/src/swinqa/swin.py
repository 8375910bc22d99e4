"""Hierarchical shifted-window transformer for image classification.

Pixels enter as 4x4 patches (48-dim tokens), pass through four stages of
window-attention blocks with patch merging in between, and leave as
class logits after a final layer norm, mean pool, and linear head.
Window attention alternates between unshifted and cyclically shifted
placements; shifted windows get an additive mask that blocks attention
between tokens wrapped from opposite map edges, plus a learned per-head
relative position bias shared across windows.

The module also carries the two analytic accounting oracles
(`count_params`, `count_flops`) used to pin the architecture against
published totals.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    concat,
    default_dtype,
    gelu,
    layer_norm,
    matmul,
    softmax,
)

NEG = -1e9  # additive mask value; large but finite so softmax gradients stay defined

_PRESETS = {
    # name: (embed_dim, depths, heads, drop_path_max, default img, default window)
    "tiny": (96, (2, 2, 6, 2), (3, 6, 12, 24), 0.2, 224, 7),
    "small": (96, (2, 2, 18, 2), (3, 6, 12, 24), 0.3, 224, 7),
    "base": (128, (2, 2, 18, 2), (4, 8, 16, 32), 0.2, 224, 7),
    "micro": (24, (1, 1, 2, 1), (2, 4, 4, 8), 0.1, 64, 4),
}

BLOCK_KEYS = (
    "norm1.gamma", "norm1.beta",
    "attn.qkv.weight", "attn.qkv.bias",
    "attn.proj.weight", "attn.proj.bias",
    "attn.bias_table",
    "norm2.gamma", "norm2.beta",
    "mlp.fc1.weight", "mlp.fc1.bias",
    "mlp.fc2.weight", "mlp.fc2.bias",
)


@dataclass(frozen=True)
class SwinConfig:
    """Architecture hyperparameters. Stage s runs at dim embed_dim*2^s on a
    token grid of extent img_size/patch_size/2^s."""

    img_size: int
    embed_dim: int
    depths: tuple
    heads: tuple
    window: int
    drop_path_max: float = 0.0
    mlp_ratio: float = 4.0
    num_classes: int = 2
    patch_size: int = 4
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(self.depths))
        object.__setattr__(self, "heads", tuple(self.heads))
        if self.img_size <= 0 or self.img_size % self.patch_size:
            raise ValueError(f"img_size {self.img_size} not divisible by patch {self.patch_size}")
        if not 1 <= len(self.depths) <= 4 or len(self.depths) != len(self.heads):
            raise ValueError(f"depths {self.depths} / heads {self.heads} must match, 1..4 stages")
        if any(d < 1 for d in self.depths) or any(h < 1 for h in self.heads):
            raise ValueError("depths and heads must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0.0 <= self.drop_path_max < 1.0:
            raise ValueError("drop_path_max must be in [0, 1)")
        if self.mlp_ratio <= 0 or self.num_classes < 2:
            raise ValueError("mlp_ratio must be positive and num_classes >= 2")
        for s in range(self.num_stages):
            if self.stage_dim(s) % self.heads[s]:
                raise ValueError(
                    f"stage {s} dim {self.stage_dim(s)} not divisible by {self.heads[s]} heads")
            g, m = self.grid(s), self.eff_window(s)
            if g < 1 or g % m:
                raise ValueError(f"stage {s} token grid {g} not divisible by window {m}")

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    @property
    def total_blocks(self) -> int:
        return sum(self.depths)

    def stage_dim(self, s: int) -> int:
        return self.embed_dim * (2 ** s)

    @property
    def final_dim(self) -> int:
        return self.stage_dim(self.num_stages - 1)

    def grid(self, s: int) -> int:
        return self.img_size // self.patch_size // (2 ** s)

    def eff_window(self, s: int) -> int:
        """Window actually used at stage s: clamped to the grid when the grid
        is smaller than the nominal window (then the stage is one window)."""
        return min(self.window, self.grid(s))

    def shift(self, s: int) -> int:
        """Cyclic shift for the shifted blocks of stage s; 0 when a single
        window already covers the grid (nothing to connect across windows)."""
        m = self.eff_window(s)
        return m // 2 if self.grid(s) > m else 0

    def mlp_hidden(self, s: int) -> int:
        return int(self.stage_dim(s) * self.mlp_ratio)


def preset(name: str, img_size: int | None = None, window: int | None = None,
           num_classes: int = 2) -> SwinConfig:
    """Named configurations; tiny/small/base follow the published table."""
    if name not in _PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    dim, depths, heads, dp, d_img, d_win = _PRESETS[name]
    return SwinConfig(
        img_size=d_img if img_size is None else img_size,
        embed_dim=dim, depths=depths, heads=heads,
        window=d_win if window is None else window,
        drop_path_max=dp, num_classes=num_classes)


@dataclass
class FeatureMap:
    """Token grid of extent height x width with dim channels.

    `values` is [batch, height*width, dim], tokens in row-major grid order.
    """

    height: int
    width: int
    dim: int
    values: Tensor

    def __post_init__(self):
        want = (self.height * self.width, self.dim)
        if self.values.ndim != 3 or self.values.shape[1:] != want:
            raise ShapeError(f"values {self.values.shape} do not match grid [B, {want[0]}, {want[1]}]")

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    def grid_values(self) -> Tensor:
        return self.values.reshape(self.batch, self.height, self.width, self.dim)


@dataclass
class WindowSet:
    """Feature map cut into non-overlapping window x window tiles.

    `values` is [batch, n_windows, window^2, dim]; windows in row-major tile
    order, tokens within a window in row-major order.
    """

    window: int
    dim: int
    grid: tuple
    values: Tensor

    def __post_init__(self):
        h, w = self.grid
        if h % self.window or w % self.window:
            raise ShapeError(f"grid {self.grid} not divisible by window {self.window}")
        want = (self.n_windows, self.window * self.window, self.dim)
        if self.values.ndim != 4 or self.values.shape[1:] != want:
            raise ShapeError(f"values {self.values.shape} do not match [B, {want}]")

    @property
    def n_windows(self) -> int:
        h, w = self.grid
        return (h // self.window) * (w // self.window)


@dataclass(frozen=True)
class AttentionMask:
    """Additive per-window matrices with entries in {0, NEG}."""

    window: int
    n_windows: int
    values: np.ndarray  # [n_windows, window^2, window^2], constant (no grad)


@dataclass
class RelPosBias:
    """Learned per-head bias over relative in-window offsets.

    `table` is [(2M-1)^2, heads]; `index` maps token pairs to table rows and
    depends only on the window size.
    """

    table: Tensor
    index: np.ndarray  # [M^2, M^2] of int rows


@functools.lru_cache(maxsize=None)
def relative_position_index(window: int) -> np.ndarray:
    """Table-row index per (query, key) token pair inside one window."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]  # [2, M^2, M^2], entries in (-M, M)
    idx = (rel[0] + window - 1) * (2 * window - 1) + (rel[1] + window - 1)
    idx.flags.writeable = False
    return idx


def rel_pos_bias(table: Tensor, window: int) -> RelPosBias:
    rows = (2 * window - 1) ** 2
    if table.shape[0] != rows:
        raise ShapeError(f"bias table {table.shape} does not match window {window} ({rows} rows)")
    return RelPosBias(table, relative_position_index(window))


# ------------------------------------------------------------------ ops


def patch_partition(image) -> FeatureMap:
    """Rearrange [H, W, 3] (or batched) pixels into flattened 4x4x3 tokens."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.ndim == 3:
        x = x.reshape(1, *x.shape)
    if x.ndim != 4 or x.shape[-1] != 3:
        raise ShapeError(f"expected [B, H, W, 3] pixels, got {x.shape}")
    b, h, w, c = x.shape
    if h % 4 or w % 4:
        raise ShapeError(f"image extents {h}x{w} not divisible by 4")
    hp, wp = h // 4, w // 4
    t = x.reshape(b, hp, 4, wp, 4, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, hp * wp, 48)
    return FeatureMap(hp, wp, 48, t)


def linear_embed(fm: FeatureMap, weight: Tensor, bias: Tensor) -> FeatureMap:
    """Shared affine map of every token to the embedding dim."""
    if fm.dim != weight.shape[0]:
        raise ShapeError(f"token dim {fm.dim} does not match weight {weight.shape}")
    return FeatureMap(fm.height, fm.width, weight.shape[1], matmul(fm.values, weight) + bias)


def window_partition(fm: FeatureMap, window: int) -> WindowSet:
    if fm.height % window or fm.width % window:
        raise ShapeError(f"grid {fm.height}x{fm.width} not divisible by window {window}")
    b, m = fm.batch, window
    nh, nw = fm.height // m, fm.width // m
    t = (fm.values.reshape(b, nh, m, nw, m, fm.dim)
         .transpose(0, 1, 3, 2, 4, 5)
         .reshape(b, nh * nw, m * m, fm.dim))
    return WindowSet(m, fm.dim, (fm.height, fm.width), t)


def window_reverse(ws: WindowSet) -> FeatureMap:
    h, w = ws.grid
    b, m = ws.values.shape[0], ws.window
    nh, nw = h // m, w // m
    t = (ws.values.reshape(b, nh, nw, m, m, ws.dim)
         .transpose(0, 1, 3, 2, 4, 5)
         .reshape(b, h * w, ws.dim))
    return FeatureMap(h, w, ws.dim, t)


def cyclic_shift(fm: FeatureMap, d: int) -> FeatureMap:
    """Torus roll by d tokens on both grid axes (negative rolls up/left)."""
    t = fm.grid_values().roll((d, d), (1, 2)).reshape(fm.batch, fm.height * fm.width, fm.dim)
    return FeatureMap(fm.height, fm.width, fm.dim, t)


@functools.lru_cache(maxsize=None)
def _mask_cached(h: int, w: int, window: int, shift: int, dtype_name: str) -> AttentionMask:
    m = window
    n_windows = (h // m) * (w // m)
    dtype = np.dtype(dtype_name)
    if shift == 0:
        vals = np.zeros((n_windows, m * m, m * m), dtype=dtype)
        vals.flags.writeable = False
        return AttentionMask(m, n_windows, vals)
    # Region ids on the rolled canvas: the last `shift` rows/cols hold tokens
    # wrapped from the opposite edge; the M-band above them shares windows
    # with the wrapped tokens and must be kept separate.
    ids = np.zeros((h, w), dtype=np.int64)
    bands = (slice(0, -m), slice(-m, -shift), slice(-shift, None))
    c = 0
    for hs in bands:
        for ws_ in bands:
            ids[hs, ws_] = c
            c += 1
    tiles = (ids.reshape(h // m, m, w // m, m)
             .transpose(0, 2, 1, 3)
             .reshape(n_windows, m * m))
    vals = np.where(tiles[:, :, None] != tiles[:, None, :], NEG, 0.0).astype(dtype)
    vals.flags.writeable = False
    return AttentionMask(m, n_windows, vals)


def build_sw_attention_mask(h: int, w: int, window: int, shift: int | None = None) -> AttentionMask:
    """Mask for shifted-window attention on an h x w grid; zero iff both
    tokens of a pair come from the same contiguous pre-shift region."""
    if h % window or w % window:
        raise ShapeError(f"grid {h}x{w} not divisible by window {window}")
    if shift is None:
        shift = window // 2
    if not 0 <= shift < window:
        raise ValueError(f"shift {shift} must be in [0, window)")
    return _mask_cached(h, w, window, shift, np.dtype(default_dtype()).name)


def window_attention(ws: WindowSet, qkv_weight: Tensor, qkv_bias: Tensor,
                     proj_weight: Tensor, proj_bias: Tensor,
                     bias: RelPosBias | None, mask: AttentionMask | None,
                     heads: int) -> WindowSet:
    """Multi-head self-attention inside each window, shared weights across
    windows: softmax(QK^T/sqrt(d) + B + mask) V, then output projection."""
    b, n_windows, n, d_model = ws.values.shape
    if d_model % heads:
        raise ShapeError(f"dim {d_model} not divisible by {heads} heads")
    if mask is not None and (mask.n_windows != n_windows or mask.window != ws.window):
        raise ShapeError(f"mask for {mask.n_windows} windows of {mask.window} "
                         f"does not match window set ({n_windows}, {ws.window})")
    d_head = d_model // heads
    qkv = matmul(ws.values, qkv_weight) + qkv_bias
    qkv = qkv.reshape(b, n_windows, n, 3, heads, d_head).transpose(3, 0, 1, 4, 2, 5)
    q, k, v = qkv[0], qkv[1], qkv[2]  # each [B, nW, heads, n, d_head]
    attn = matmul(q * (d_head ** -0.5), k.transpose(0, 1, 2, 4, 3))
    if bias is not None:
        bmat = (bias.table.take_rows(bias.index.reshape(-1))
                .reshape(n, n, heads).transpose(2, 0, 1))
        attn = attn + bmat
    if mask is not None:
        attn = attn + Tensor(mask.values[None, :, None, :, :])
    attn = softmax(attn, axis=-1)
    out = matmul(attn, v).transpose(0, 1, 3, 2, 4).reshape(b, n_windows, n, d_model)
    out = matmul(out, proj_weight) + proj_bias
    return WindowSet(ws.window, d_model, ws.grid, out)


def _drop_path(v: Tensor, drop_prob: float, rng) -> Tensor:
    """Zero the residual branch per sample with probability drop_prob,
    scaling survivors by 1/keep so the expectation is unchanged."""
    keep = 1.0 - drop_prob
    gate = (rng.random(v.shape[0]) < keep).astype(v.data.dtype) / keep
    return v * Tensor(gate.reshape(-1, 1, 1))


def swin_block(x: FeatureMap, bp: dict, heads: int, shifted: bool,
               drop_prob: float = 0.0, training: bool = False, rng=None) -> FeatureMap:
    """One transformer block: windowed attention then MLP, both as
    pre-norm residual branches under stochastic depth.

    `bp` maps the names in BLOCK_KEYS to parameter tensors. The window size
    comes from the bias table extent. When `shifted`, the map is rolled by
    -window//2 before partitioning, attention is masked, and the roll is
    undone afterwards.
    """
    if training and drop_prob >= 1.0:
        return x  # both branches dropped with certainty
    window = (int(round(bp["attn.bias_table"].shape[0] ** 0.5)) + 1) // 2
    shift = window // 2 if shifted else 0

    h = layer_norm(x.values, bp["norm1.gamma"], bp["norm1.beta"])
    hm = FeatureMap(x.height, x.width, x.dim, h)
    mask = None
    if shift:
        hm = cyclic_shift(hm, -shift)
        mask = build_sw_attention_mask(x.height, x.width, window, shift)
    ws = window_partition(hm, window)
    ws = window_attention(ws, bp["attn.qkv.weight"], bp["attn.qkv.bias"],
                          bp["attn.proj.weight"], bp["attn.proj.bias"],
                          rel_pos_bias(bp["attn.bias_table"], window), mask, heads)
    hm = window_reverse(ws)
    if shift:
        hm = cyclic_shift(hm, shift)
    branch = hm.values
    if training and drop_prob > 0.0:
        branch = _drop_path(branch, drop_prob, rng)
    x1 = x.values + branch

    h2 = layer_norm(x1, bp["norm2.gamma"], bp["norm2.beta"])
    h2 = matmul(gelu(matmul(h2, bp["mlp.fc1.weight"]) + bp["mlp.fc1.bias"]),
                bp["mlp.fc2.weight"]) + bp["mlp.fc2.bias"]
    if training and drop_prob > 0.0:
        h2 = _drop_path(h2, drop_prob, rng)
    return FeatureMap(x.height, x.width, x.dim, x1 + h2)


def merge_2x2_concat(fm: FeatureMap) -> FeatureMap:
    """Concatenate each 2x2 token neighborhood along channels in fixed
    (top-left, bottom-left, top-right, bottom-right) order."""
    if fm.height % 2 or fm.width % 2:
        raise ShapeError(f"grid {fm.height}x{fm.width} must be even to merge")
    g = fm.grid_values()
    parts = [g[:, 0::2, 0::2], g[:, 1::2, 0::2], g[:, 0::2, 1::2], g[:, 1::2, 1::2]]
    cat = concat(parts, axis=-1)
    h2, w2 = fm.height // 2, fm.width // 2
    return FeatureMap(h2, w2, 4 * fm.dim, cat.reshape(fm.batch, h2 * w2, 4 * fm.dim))


def patch_merging(fm: FeatureMap, norm_gamma: Tensor, norm_beta: Tensor,
                  reduction_weight: Tensor) -> FeatureMap:
    """Downsample 2x: concat 2x2 neighborhoods (4D), layer norm, biasless
    linear 4D -> 2D."""
    cat = merge_2x2_concat(fm)
    h = layer_norm(cat.values, norm_gamma, norm_beta)
    out = matmul(h, reduction_weight)
    return FeatureMap(cat.height, cat.width, reduction_weight.shape[1], out)


# ------------------------------------------------------- parameters


def param_layout(cfg: SwinConfig) -> list:
    """Canonical (name, shape) list; checkpoint directory order."""
    c = cfg.embed_dim
    patch_dim = cfg.patch_size * cfg.patch_size * cfg.in_channels
    out = [
        ("patch_embed.weight", (patch_dim, c)),
        ("patch_embed.bias", (c,)),
        ("patch_embed.norm.gamma", (c,)),
        ("patch_embed.norm.beta", (c,)),
    ]
    for s in range(cfg.num_stages):
        d = cfg.stage_dim(s)
        if s > 0:
            prev = cfg.stage_dim(s - 1)
            out += [
                (f"stages.{s}.merge.norm.gamma", (4 * prev,)),
                (f"stages.{s}.merge.norm.beta", (4 * prev,)),
                (f"stages.{s}.merge.reduction.weight", (4 * prev, 2 * prev)),
            ]
        m, h, hid = cfg.eff_window(s), cfg.heads[s], cfg.mlp_hidden(s)
        for b in range(cfg.depths[s]):
            p = f"stages.{s}.blocks.{b}."
            out += [
                (p + "norm1.gamma", (d,)), (p + "norm1.beta", (d,)),
                (p + "attn.qkv.weight", (d, 3 * d)), (p + "attn.qkv.bias", (3 * d,)),
                (p + "attn.proj.weight", (d, d)), (p + "attn.proj.bias", (d,)),
                (p + "attn.bias_table", ((2 * m - 1) ** 2, h)),
                (p + "norm2.gamma", (d,)), (p + "norm2.beta", (d,)),
                (p + "mlp.fc1.weight", (d, hid)), (p + "mlp.fc1.bias", (hid,)),
                (p + "mlp.fc2.weight", (hid, d)), (p + "mlp.fc2.bias", (d,)),
            ]
    dl = cfg.final_dim
    out += [
        ("norm.gamma", (dl,)), ("norm.beta", (dl,)),
        ("head.weight", (dl, cfg.num_classes)), ("head.bias", (cfg.num_classes,)),
    ]
    return out


def init_params(cfg: SwinConfig, rng) -> dict:
    """Fresh parameters: N(0, 0.02) weights and bias tables, zero biases,
    unit norm scales. Insertion order is the canonical layout order."""
    params = {}
    for name, shape in param_layout(cfg):
        if name.endswith(".gamma"):
            arr = np.ones(shape)
        elif name.endswith((".bias", ".beta")):
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, 0.02, size=shape)
        params[name] = Tensor(arr, requires_grad=True)
    return params


def count_params(cfg: SwinConfig) -> int:
    """Closed-form learnable-scalar count (independent of allocation)."""
    c = cfg.embed_dim
    patch_dim = cfg.patch_size * cfg.patch_size * cfg.in_channels
    total = patch_dim * c + c + 2 * c  # embed affine + patch norm
    for s in range(cfg.num_stages):
        d = cfg.stage_dim(s)
        if s > 0:
            prev = cfg.stage_dim(s - 1)
            total += 8 * prev + 8 * prev * prev  # merge LN(4d) + 4d->2d reduction
        m, h, hid = cfg.eff_window(s), cfg.heads[s], cfg.mlp_hidden(s)
        per_block = (4 * d                      # two layer norms
                     + 3 * d * d + 3 * d        # qkv
                     + d * d + d                # output projection
                     + (2 * m - 1) ** 2 * h     # relative position bias
                     + 2 * d * hid + hid + d)   # MLP
        total += cfg.depths[s] * per_block
    dl = cfg.final_dim
    total += 2 * dl + dl * cfg.num_classes + cfg.num_classes
    return total


def count_flops(cfg: SwinConfig, h: int | None = None, w: int | None = None) -> float:
    """Multiply-accumulates for one forward pass at h x w input
    (one MAC counted as one FLOP). Covers linear layers, QK^T and AV
    products, layer norms, and the patch/pool arithmetic."""
    h = cfg.img_size if h is None else h
    w = cfg.img_size if w is None else w
    if h % cfg.patch_size or w % cfg.patch_size:
        raise ShapeError(f"input {h}x{w} not divisible by patch {cfg.patch_size}")
    c = cfg.embed_dim
    patch_dim = cfg.patch_size * cfg.patch_size * cfg.in_channels
    gh, gw = h // cfg.patch_size, w // cfg.patch_size
    total = float(gh * gw * (patch_dim * c + c))
    for s in range(cfg.num_stages):
        d = cfg.stage_dim(s)
        if s > 0:
            prev = cfg.stage_dim(s - 1)
            if gh % 2 or gw % 2:
                raise ShapeError(f"stage {s} grid {gh}x{gw} not even")
            # LN over T/4 tokens of 4*prev dims, then (4*prev -> 2*prev) linear
            total += gh * gw * prev + (gh // 2) * (gw // 2) * 8 * prev * prev
            gh, gw = gh // 2, gw // 2
        m = min(cfg.window, gh, gw)
        if gh % m or gw % m:
            raise ShapeError(f"stage {s} grid {gh}x{gw} not divisible by window {m}")
        t, hid = gh * gw, cfg.mlp_hidden(s)
        per_block = (2 * t * d                 # two layer norms
                     + 4 * t * d * d           # qkv + projection
                     + 2 * t * m * m * d       # QK^T and AV over all heads
                     + 2 * t * d * hid)        # MLP
        total += cfg.depths[s] * per_block
    dl = cfg.final_dim
    total += 2 * gh * gw * dl + dl * cfg.num_classes
    return total


def stochastic_depth_rates(p_max: float, total_blocks: int) -> list:
    """Linear ramp of per-block drop probabilities, 0 at the first block up
    to p_max at the last."""
    if total_blocks < 1:
        raise ValueError("total_blocks must be >= 1")
    if total_blocks == 1:
        return [0.0]
    return [p_max * i / (total_blocks - 1) for i in range(total_blocks)]


def forward(image, cfg: SwinConfig, params: dict, training: bool = False, rng=None) -> Tensor:
    """Full model: [H, W, 3] -> [num_classes] logits (leading batch axis
    maps through). Blocks within a stage alternate unshifted/shifted
    starting unshifted; shift is skipped where one window covers the grid."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    single = x.ndim == 3
    if single:
        x = x.reshape(1, *x.shape)
    if x.shape[1] != cfg.img_size or x.shape[2] != cfg.img_size:
        raise ShapeError(f"input {x.shape} does not match img_size {cfg.img_size}")
    if training and cfg.drop_path_max > 0 and rng is None:
        raise ValueError("training forward with stochastic depth needs an rng")

    fm = patch_partition(x)
    fm = linear_embed(fm, params["patch_embed.weight"], params["patch_embed.bias"])
    fm = FeatureMap(fm.height, fm.width, fm.dim,
                    layer_norm(fm.values, params["patch_embed.norm.gamma"],
                               params["patch_embed.norm.beta"]))
    rates = stochastic_depth_rates(cfg.drop_path_max, cfg.total_blocks)
    gi = 0
    for s in range(cfg.num_stages):
        if s > 0:
            fm = patch_merging(fm, params[f"stages.{s}.merge.norm.gamma"],
                               params[f"stages.{s}.merge.norm.beta"],
                               params[f"stages.{s}.merge.reduction.weight"])
        for b in range(cfg.depths[s]):
            bp = {k: params[f"stages.{s}.blocks.{b}.{k}"] for k in BLOCK_KEYS}
            shifted = b % 2 == 1 and cfg.shift(s) > 0
            fm = swin_block(fm, bp, cfg.heads[s], shifted,
                            drop_prob=rates[gi], training=training, rng=rng)
            gi += 1
    hfin = layer_norm(fm.values, params["norm.gamma"], params["norm.beta"])
    logits = matmul(hfin.mean(axis=1), params["head.weight"]) + params["head.bias"]
    return logits[0] if single else logits
