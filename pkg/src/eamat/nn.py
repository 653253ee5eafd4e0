"""Neural building blocks: linear layers, LSTM cells, multi-scale LSTM
projections, temporal-convolution projections and Transformer blocks.

Transformer blocks take their query/key/value projection from a registry
keyed by kind:

* ``linear``          -- three fully connected maps (the standard block)
* ``tconv``           -- parallel 1-D convolutions with kernels 3, 5, 7
* ``lstm``            -- multi-scale LSTM scans

A block built with ``attention=False`` drops self-attention and uses a
single projection of the chosen kind as its token-mixing layer, keeping the
residual, layer-norm and feed-forward wrapper.
"""

from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np

from . import tensor as tn
from .tensor import Tensor

PROJECTION_KINDS = ("linear", "tconv", "lstm")
TCONV_KERNELS = (3, 5, 7)


class ConfigError(ValueError):
    """Raised for structurally invalid model configurations."""


class Module:
    """Parameter container with deterministic, attribute-ordered naming."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = tn.parameter(uniform_init(rng, d_in, (d_in, d_out)))
        self.bias = tn.parameter(np.zeros(d_out))

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = tn.parameter(np.ones(d))
        self.bias = tn.parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return tn.layer_norm(x, self.gain, self.bias, self.eps)


def positional_encoding(length: int, width: int) -> Tensor:
    """Fixed sinusoidal table: sin on even columns, cos on odd columns."""
    if width % 2:
        raise ConfigError(f"positional encoding width must be even, got {width}")
    pos = np.arange(length)[:, None]
    freq = np.power(10000.0, -np.arange(0, width, 2) / width)
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return Tensor(table)


# ---------------------------------------------------------------------------
# LSTM


class LstmCell(Module):
    """Single LSTM cell. Gate columns are ordered input, forget, output, candidate."""

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator, forget_bias: float = 1.0):
        if d_h <= 0:
            raise ConfigError("LSTM hidden size must be positive")
        self.d_in = d_in
        self.d_h = d_h
        self.weight = tn.parameter(uniform_init(rng, d_in + d_h, (d_in + d_h, 4 * d_h)))
        b = np.zeros(4 * d_h)
        b[d_h : 2 * d_h] = forget_bias
        self.bias = tn.parameter(b)

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        """One recurrence step on row vectors ``x`` (1, d_in), ``h`` and ``c`` (1, d_h)."""
        n = self.d_h
        z = tn.concat([x, h], axis=1) @ self.weight + self.bias
        i = tn.sigmoid(tn.slice_axis(z, 1, 0, n))
        f = tn.sigmoid(tn.slice_axis(z, 1, n, 2 * n))
        o = tn.sigmoid(tn.slice_axis(z, 1, 2 * n, 3 * n))
        g = tn.tanh(tn.slice_axis(z, 1, 3 * n, 4 * n))
        c = f * c + i * g
        h = o * tn.tanh(c)
        return h, c


def lstm_scan(cell: LstmCell, seq: Sequence[Tensor]) -> list[Tensor]:
    """Run ``cell`` left to right over ``seq`` from zero state, step by step."""
    if not seq:
        raise ValueError("lstm_scan needs a nonempty sequence")
    h = Tensor(np.zeros((1, cell.d_h)))
    c = Tensor(np.zeros((1, cell.d_h)))
    out = []
    for x in seq:
        h, c = cell.step(x.reshape(1, cell.d_in), h, c)
        out.append(h.reshape(cell.d_h))
    return out


def _sig(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _strided(x: np.ndarray, s: int) -> np.ndarray:
    """Rows of ``x`` laid out as (steps, offsets, features); row t -> [t // s, t % s]."""
    T = x.shape[0]
    L = -(-T // s)
    pad = L * s - T
    if pad:
        x = np.concatenate([x, np.zeros((pad,) + x.shape[1:])], axis=0)
    return x.reshape((L, s) + x.shape[1:])


def _scan_forward(xs: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Batched LSTM over ``xs`` (L, B, d_in) for G weight sets ``w`` (G, d_in+h, 4h)."""
    G = w.shape[0]
    L, B, d_in = xs.shape
    n = w.shape[2] // 4
    wx, wh = w[:, :d_in], w[:, d_in:]
    zx = np.einsum("lbi,gij->glbj", xs, wx) + b[:, None, None, :]
    h = np.zeros((G, B, n))
    c = np.zeros((G, B, n))
    hs = np.empty((G, L, B, n))
    cache = []
    for l in range(L):
        z = zx[:, l] + h @ wh
        i = _sig(z[..., :n])
        f = _sig(z[..., n : 2 * n])
        o = _sig(z[..., 2 * n : 3 * n])
        g = np.tanh(z[..., 3 * n :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, l] = h
        cache.append((i, f, o, g, c_prev, tc, h_prev))
    return hs, cache


def _scan_backward(xs, w, cache, dhs):
    L, B, d_in = xs.shape
    n = w.shape[2] // 4
    wx, wh = w[:, :d_in], w[:, d_in:]
    G = w.shape[0]
    dz_all = np.empty((G, L, B, 4 * n))
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((G, B, n))
    dc_next = np.zeros((G, B, n))
    for l in range(L - 1, -1, -1):
        i, f, o, g, c_prev, tc, h_prev = cache[l]
        dh = dhs[:, l] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dz_all[:, l]
        dz[..., :n] = dc * g * i * (1.0 - i)
        dz[..., n : 2 * n] = dc * c_prev * f * (1.0 - f)
        dz[..., 2 * n : 3 * n] = do * o * (1.0 - o)
        dz[..., 3 * n :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dwh += np.swapaxes(h_prev, 1, 2) @ dz
        dh_next = dz @ np.swapaxes(wh, 1, 2)
    dwx = np.einsum("lbi,glbj->gij", xs, dz_all)
    db = dz_all.sum(axis=(1, 2))
    dxs = np.einsum("glbj,gij->lbi", dz_all, wx)
    return dxs, np.concatenate([dwx, dwh], axis=1), db


def multiscale_lstm_kernel(x: Tensor, groups: Sequence[Sequence[LstmCell]]) -> Tensor:
    """Fused multi-scale LSTM over ``x`` (T, d_in) for several cell groups at once.

    ``groups[g][s-1]`` is the scale-``s`` cell of group ``g``; all groups must
    share scale count and hidden width. For scale ``s`` and offset ``o`` the
    cell scans rows ``o, o+s, o+2s, ...`` and results are scattered back to
    their original rows. Returns a (G, T, S*d_h) tensor whose last axis is the
    scale-1..S outputs concatenated.
    """
    T = x.shape[0]
    S = len(groups[0])
    cells_by_scale = [[grp[s] for grp in groups] for s in range(S)]
    ws = [np.stack([c.weight.data for c in cells]) for cells in cells_by_scale]
    bs = [np.stack([c.bias.data for c in cells]) for cells in cells_by_scale]
    n = groups[0][0].d_h
    G = len(groups)
    out = np.empty((G, T, S * n))
    saved = []
    for s in range(1, S + 1):
        xs = _strided(x.data, s)
        hs, cache = _scan_forward(xs, ws[s - 1], bs[s - 1])
        L = xs.shape[0]
        out[:, :, (s - 1) * n : s * n] = hs.reshape(G, L * s, n)[:, :T]
        saved.append((xs, cache))

    params = []
    for cells in cells_by_scale:
        params.extend(c.weight for c in cells)
        params.extend(c.bias for c in cells)

    def bw(gout):
        dx = np.zeros_like(x.data)
        grads = []
        for s in range(1, S + 1):
            xs, cache = saved[s - 1]
            L = xs.shape[0]
            g = np.zeros((G, L * s, n))
            g[:, :T] = gout[:, :, (s - 1) * n : s * n]
            dxs, dw, db = _scan_backward(xs, ws[s - 1], cache, g.reshape(G, L, s, n))
            dx += dxs.reshape(L * s, -1)[:T]
            grads.extend(dw[k] for k in range(G))
            grads.extend(db[k] for k in range(G))
        return (dx, *grads)

    return Tensor._result(out, (x, *params), bw)


class MultiScaleLstm(Module):
    """S parallel LSTMs; scale s scans every s-th frame, widths d/S each.

    With ``bidirectional`` each scale also runs a right-to-left cell and the
    per-scale width is halved.
    """

    def __init__(self, d_in: int, d: int, scales: int, rng: np.random.Generator, bidirectional: bool = False):
        parts = scales * (2 if bidirectional else 1)
        if scales < 1 or d % parts:
            raise ConfigError(f"scale count {scales} (bidirectional={bidirectional}) must divide width {d}")
        self.scales = scales
        self.d = d
        self.bidirectional = bidirectional
        d_h = d // parts
        self.cells = [LstmCell(d_in, d_h, rng) for _ in range(scales)]
        self.reverse_cells = [LstmCell(d_in, d_h, rng) for _ in range(scales)] if bidirectional else []

    def __call__(self, x: Tensor) -> Tensor:
        return multiscale_lstm_group([self], x)[0]


def _reverse_rows(x: Tensor) -> Tensor:
    return x[np.arange(x.shape[-2] - 1, -1, -1)] if x.ndim == 2 else x[:, ::-1]


def multiscale_lstm_group(msls: Sequence[MultiScaleLstm], x: Tensor) -> list[Tensor]:
    """Apply several same-shaped multi-scale LSTMs to one input with one fused kernel."""
    fwd = multiscale_lstm_kernel(x, [m.cells for m in msls])
    if not msls[0].bidirectional:
        return [fwd[g] for g in range(len(msls))]
    xr = _reverse_rows(x)
    bwd = multiscale_lstm_kernel(xr, [m.reverse_cells for m in msls])
    bwd = bwd[:, ::-1]
    return [tn.concat([fwd[g], bwd[g]], axis=1) for g in range(len(msls))]


def multiscale_lstm(msl: MultiScaleLstm, x: Tensor) -> Tensor:
    return msl(x)


def multiscale_lstm_reference(msl: MultiScaleLstm, x: Tensor) -> Tensor:
    """Unfused multi-scale LSTM built from :func:`lstm_scan` (unidirectional only)."""
    if msl.bidirectional:
        raise NotImplementedError("reference path covers the unidirectional layout")
    T = x.shape[0]
    per_scale = []
    for s, cell in enumerate(msl.cells, start=1):
        rows: dict[int, Tensor] = {}
        for o in range(min(s, T)):
            idx = list(range(o, T, s))
            outs = lstm_scan(cell, [x[t] for t in idx])
            rows.update(zip(idx, outs))
        per_scale.append(tn.concat([rows[t].reshape(1, -1) for t in range(T)], axis=0))
    return tn.concat(per_scale, axis=1)


# ---------------------------------------------------------------------------
# projections


class LinearProjection(Module):
    def __init__(self, d_in: int, d: int, n_out: int, rng: np.random.Generator):
        self.layers = [Linear(d_in, d, rng) for _ in range(n_out)]

    def __call__(self, x: Tensor) -> list[Tensor]:
        return [layer(x) for layer in self.layers]


class TemporalConvProjection(Module):
    """Same-padded 1-D convolutions over time with kernels 3/5/7, d/3 channels each."""

    def __init__(self, d_in: int, d: int, n_out: int, rng: np.random.Generator, kernels=TCONV_KERNELS):
        if d % len(kernels):
            raise ConfigError(f"width {d} is not divisible by {len(kernels)} kernel groups")
        self.kernels = tuple(kernels)
        self.d_in = d_in
        width = d // len(kernels)
        self.weights = []
        self.biases = []
        for _ in range(n_out):
            for k in self.kernels:
                self.weights.append(tn.parameter(uniform_init(rng, k * d_in, (k * d_in, width))))
                self.biases.append(tn.parameter(np.zeros(width)))
        self.n_out = n_out

    def __call__(self, x: Tensor) -> list[Tensor]:
        T = x.shape[0]
        half = max(self.kernels) // 2
        zeros = Tensor(np.zeros((half, self.d_in)))
        xp = tn.concat([zeros, x, zeros], axis=0)
        windows = []
        for k in self.kernels:
            idx = np.arange(T)[:, None] + (half - k // 2) + np.arange(k)[None, :]
            windows.append(xp[idx].reshape(T, k * self.d_in))
        outs = []
        nk = len(self.kernels)
        for j in range(self.n_out):
            parts = [
                windows[i] @ self.weights[j * nk + i] + self.biases[j * nk + i] for i in range(nk)
            ]
            outs.append(tn.concat(parts, axis=1))
        return outs


class LstmProjection(Module):
    def __init__(self, d_in: int, d: int, n_out: int, rng: np.random.Generator, scales: int, bidirectional: bool = False):
        self.lstms = [MultiScaleLstm(d_in, d, scales, rng, bidirectional) for _ in range(n_out)]

    def __call__(self, x: Tensor) -> list[Tensor]:
        return multiscale_lstm_group(self.lstms, x)


def make_projection(kind: str, d: int, n_out: int, rng: np.random.Generator, scales: int = 3, bidirectional: bool = False) -> Module:
    if kind == "linear":
        return LinearProjection(d, d, n_out, rng)
    if kind == "tconv":
        return TemporalConvProjection(d, d, n_out, rng)
    if kind == "lstm":
        return LstmProjection(d, d, n_out, rng, scales, bidirectional)
    raise ConfigError(f"unknown projection kind {kind!r}; expected one of {PROJECTION_KINDS}")


# ---------------------------------------------------------------------------
# Transformer block


class TransformerBlock(Module):
    """Post-norm Transformer block with a pluggable Q/K/V projection.

    ``y1 = LN(x + SA(x))``, ``out = LN(y1 + FFN(y1))``. Attention scores are
    scaled by ``1/sqrt(d)`` unless ``per_head_scaling`` selects ``1/sqrt(d/heads)``.
    """

    def __init__(
        self,
        d: int,
        heads: int,
        rng: np.random.Generator,
        kind: str = "linear",
        *,
        attention: bool = True,
        scales: int = 3,
        per_head_scaling: bool = False,
        bidirectional: bool = False,
        ffn_mult: int = 2,
    ):
        if heads < 1 or d % heads:
            raise ConfigError(f"head count {heads} must divide width {d}")
        self.d = d
        self.heads = heads
        self.kind = kind
        self.attention = attention
        self.per_head_scaling = per_head_scaling
        self.proj = make_projection(kind, d, 3 if attention else 1, rng, scales, bidirectional)
        self.out_proj = Linear(d, d, rng) if attention else None
        self.ffn1 = Linear(d, ffn_mult * d, rng)
        self.ffn2 = Linear(ffn_mult * d, d, rng)
        self.ln1 = LayerNorm(d)
        self.ln2 = LayerNorm(d)
        self.last_attention: np.ndarray | None = None

    def self_attention(self, x: Tensor, row_mask: np.ndarray | None = None) -> Tensor:
        T, d = x.shape
        n = self.heads
        dh = d // n
        q, k, v = self.proj(x)

        def split(t):
            return tn.transpose(t.reshape(T, n, dh), (1, 0, 2))

        scale = 1.0 / math.sqrt(dh if self.per_head_scaling else d)
        scores = split(q) @ tn.transpose(split(k)) * scale
        mask_add = None
        if row_mask is not None:
            mask_add = np.where(np.asarray(row_mask, dtype=bool), 0.0, -np.inf)
        attn = tn.softmax(scores, axis=-1, mask_add=mask_add)
        self.last_attention = attn.data
        heads = tn.transpose(attn @ split(v), (1, 0, 2)).reshape(T, d)
        return self.out_proj(heads)

    def mix(self, x: Tensor, row_mask: np.ndarray | None = None) -> Tensor:
        if self.attention:
            return self.self_attention(x, row_mask)
        return self.proj(x)[0]

    def __call__(self, x: Tensor, row_mask: np.ndarray | None = None) -> Tensor:
        y1 = self.ln1(x + self.mix(x, row_mask))
        return self.ln2(y1 + self.ffn2(tn.relu(self.ffn1(y1))))


def transformer_block(block: TransformerBlock, x: Tensor) -> Tensor:
    return block(x)


def self_attention(block: TransformerBlock, x: Tensor, row_mask=None) -> Tensor:
    return block.self_attention(x, row_mask)


def stack(blocks: Sequence[TransformerBlock], x: Tensor) -> Tensor:
    for b in blocks:
        x = b(x)
    return x
