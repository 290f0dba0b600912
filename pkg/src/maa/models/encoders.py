"""Toy vision-language encoder zoo with intermediate feature taps.

Two image encoders are provided:

* ``PatchTransformerEncoder`` — multi-scale token pyramid (4px patches shared
  across several internal resolutions), 3 pre-LN attention+MLP blocks over the
  concatenated token set, mean-pooled projection head. Taps: output of each
  attention sublayer (post residual) plus the final embedding.
* ``ResidualCnnEncoder`` — 3x3 stem, 3 residual blocks with 2x average pooling
  in between, global-average-pooled projection head. Taps: output of each
  residual block plus the final embedding.

Encoders are functional: parameters live in plain dicts, ``forward`` returns
``(taps, cache)`` and ``backward`` consumes per-tap cotangents, accumulating
them wherever the tapped tensor feeds both the loss and the next layer.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..data import CaptionTokens
from . import layers as L

CHECKPOINT_VERSION = 1


class ModelError(Exception):
    pass


def _init(rng, fan_in, fan_out):
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))


# images arrive in [0, 1] with a bright background; centering keeps the DC
# component from dominating every embedding
_INPUT_SHIFT = 0.5
_INPUT_SCALE = 2.0


def _center(x):
    return _INPUT_SCALE * (x - _INPUT_SHIFT)


def _resize_batch(x, size):
    """(B, C, H, W) -> (B, C, size, size) bilinear resize."""
    b, c, h, w = x.shape
    out = kernels.bilinear_resize(x.reshape(b * c, h, w), size, size)
    return out.reshape(b, c, size, size)


def _resize_batch_vjp(g, size):
    b, c, h, w = g.shape
    out = kernels.bilinear_resize_vjp(g.reshape(b * c, h, w), size, size)
    return out.reshape(b, c, size, size)


class PatchTransformerEncoder:
    arch = "patch_transformer"

    def __init__(self, input_size=32, patch_size=4, width=64, n_blocks=3, n_heads=4,
                 embed_dim=64, mlp_ratio=2, downsample=2,
                 branch_ratios=(1.0, 0.75, 0.5)):
        if downsample < 1 or input_size % downsample != 0:
            raise ModelError(f"input_size {input_size} not divisible by "
                             f"downsample {downsample}")
        core = input_size // downsample
        if not branch_ratios or any(not 0 < r <= 1 for r in branch_ratios):
            raise ModelError(f"branch ratios must lie in (0, 1]: {branch_ratios}")
        sizes = [int(round(core * r)) for r in branch_ratios]
        for bs in sizes:
            if bs < patch_size or bs % patch_size != 0:
                raise ModelError(
                    f"branch size {bs} (core {core}, ratios {branch_ratios}) "
                    f"not divisible by patch {patch_size}")
        self.input_size = input_size
        self.patch_size = patch_size
        self.width = width
        self.n_blocks = n_blocks
        self.n_heads = n_heads
        self.embed_dim = embed_dim
        self.mlp_ratio = mlp_ratio
        self.downsample = downsample
        self.branch_ratios = tuple(branch_ratios)
        self.core_size = core
        self.branch_sizes = sizes
        self.branch_tokens = [(bs // patch_size) ** 2 for bs in sizes]
        self.n_tokens = sum(self.branch_tokens)
        self.tap_count = n_blocks + 1

    @property
    def grid_step(self) -> int:
        # first-layer lattice period in input pixels
        return self.patch_size * self.downsample

    def config(self) -> dict:
        return {k: getattr(self, k) for k in
                ("input_size", "patch_size", "width", "n_blocks", "n_heads",
                 "embed_dim", "mlp_ratio", "downsample", "branch_ratios")}

    def init_params(self, rng) -> dict:
        p, d = self.patch_size, self.width
        params = {
            "patch.w": _init(rng, 3 * p * p, d),
            "patch.b": np.zeros(d),
            "pos": 0.02 * rng.normal(size=(self.n_tokens, d)),
            "lnf.g": np.ones(d),
            "lnf.b": np.zeros(d),
            "head.w": _init(rng, d, self.embed_dim),
            "head.b": np.zeros(self.embed_dim),
        }
        for i in range(self.n_blocks):
            params.update({
                f"blk{i}.ln1.g": np.ones(d), f"blk{i}.ln1.b": np.zeros(d),
                f"blk{i}.attn.wqkv": _init(rng, d, 3 * d), f"blk{i}.attn.bqkv": np.zeros(3 * d),
                f"blk{i}.attn.wo": _init(rng, d, d), f"blk{i}.attn.bo": np.zeros(d),
                f"blk{i}.ln2.g": np.ones(d), f"blk{i}.ln2.b": np.zeros(d),
                f"blk{i}.mlp.w1": _init(rng, d, self.mlp_ratio * d),
                f"blk{i}.mlp.b1": np.zeros(self.mlp_ratio * d),
                f"blk{i}.mlp.w2": _init(rng, self.mlp_ratio * d, d),
                f"blk{i}.mlp.b2": np.zeros(d),
            })
        return params

    def _patchify(self, x, size):
        b = x.shape[0]
        g, p = size // self.patch_size, self.patch_size
        x = x.reshape(b, 3, g, p, g, p).transpose(0, 2, 4, 1, 3, 5)
        return x.reshape(b, g * g, 3 * p * p)

    def _unpatchify_grad(self, dpatches, b, size):
        g, p = size // self.patch_size, self.patch_size
        d = dpatches.reshape(b, g, g, 3, p, p).transpose(0, 3, 1, 4, 2, 5)
        return d.reshape(b, 3, size, size)

    def forward(self, x, params):
        """x: (B, 3, S, S) -> (taps, cache); taps[i]: (B, n, d), taps[-1]: (B, e)."""
        if x.shape[-1] != self.input_size or x.shape[-2] != self.input_size:
            raise ModelError(
                f"expected {self.input_size}x{self.input_size} input, got "
                f"{x.shape[-2]}x{x.shape[-1]}")
        b = x.shape[0]
        # scale pyramid: tokens are extracted at several internal resolutions
        # (shared patch weights) so features respond to content, not to one
        # fixed sampling lattice
        branch_patches = []
        for bs in self.branch_sizes:
            xb = x if bs == self.input_size else _resize_batch(x, bs)
            branch_patches.append(self._patchify(_center(xb), bs))
        patches = np.concatenate(branch_patches, axis=1)
        h, c_emb = L.linear_fwd(patches, params["patch.w"], params["patch.b"])
        h = h + params["pos"]
        taps, caches = [], []
        for i in range(self.n_blocks):
            pre = f"blk{i}"
            n1, c_ln1 = L.layernorm_fwd(h, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
            att, c_att = L.attention_fwd(n1, params[f"{pre}.attn.wqkv"], params[f"{pre}.attn.bqkv"],
                                         params[f"{pre}.attn.wo"], params[f"{pre}.attn.bo"],
                                         self.n_heads)
            h = h + att
            taps.append(h)
            n2, c_ln2 = L.layernorm_fwd(h, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
            m1, c_m1 = L.linear_fwd(n2, params[f"{pre}.mlp.w1"], params[f"{pre}.mlp.b1"])
            a1, c_g = L.gelu_fwd(m1)
            m2, c_m2 = L.linear_fwd(a1, params[f"{pre}.mlp.w2"], params[f"{pre}.mlp.b2"])
            h = h + m2
            caches.append((c_ln1, c_att, c_ln2, c_m1, c_g, c_m2))
        nf, c_lnf = L.layernorm_fwd(h, params["lnf.g"], params["lnf.b"])
        pooled = nf.mean(axis=1)
        emb, c_head = L.linear_fwd(pooled, params["head.w"], params["head.b"])
        taps.append(emb)
        cache = (b, c_emb, caches, c_lnf, c_head)
        return taps, cache

    def backward(self, cache, d_taps, need_input_grad=True, need_param_grads=True):
        b, c_emb, caches, c_lnf, c_head = cache
        grads = {} if need_param_grads else None

        def acc(name, g):
            if need_param_grads and g is not None:
                grads[name] = grads.get(name, 0.0) + g

        d_emb = d_taps[-1]
        dpooled, dw, dbi = L.linear_bwd(c_head, d_emb, need_param_grads)
        acc("head.w", dw); acc("head.b", dbi)
        dnf = np.repeat(dpooled[:, None, :], self.n_tokens, axis=1) / self.n_tokens
        dh, dg, dbb = L.layernorm_bwd(c_lnf, dnf, need_param_grads)
        acc("lnf.g", dg); acc("lnf.b", dbb)
        for i in reversed(range(self.n_blocks)):
            pre = f"blk{i}"
            c_ln1, c_att, c_ln2, c_m1, c_g, c_m2 = caches[i]
            da1, dw2, db2 = L.linear_bwd(c_m2, dh, need_param_grads)
            acc(f"{pre}.mlp.w2", dw2); acc(f"{pre}.mlp.b2", db2)
            dm1 = L.gelu_bwd(c_g, da1)
            dn2, dw1, db1 = L.linear_bwd(c_m1, dm1, need_param_grads)
            acc(f"{pre}.mlp.w1", dw1); acc(f"{pre}.mlp.b1", db1)
            dln2, dg2, db2g = L.layernorm_bwd(c_ln2, dn2, need_param_grads)
            acc(f"{pre}.ln2.g", dg2); acc(f"{pre}.ln2.b", db2g)
            dh = dh + dln2
            if d_taps[i] is not None:
                dh = dh + d_taps[i]
            datt, attg = L.attention_bwd(c_att, dh, need_param_grads)
            if need_param_grads:
                acc(f"{pre}.attn.wqkv", attg["wqkv"]); acc(f"{pre}.attn.bqkv", attg["bqkv"])
                acc(f"{pre}.attn.wo", attg["wo"]); acc(f"{pre}.attn.bo", attg["bo"])
            dn1, dg1, db1g = L.layernorm_bwd(c_ln1, datt, need_param_grads)
            acc(f"{pre}.ln1.g", dg1); acc(f"{pre}.ln1.b", db1g)
            dh = dh + dn1
        if need_param_grads:
            grads["pos"] = dh.sum(axis=0)
        dpatches, dwp, dbp = L.linear_bwd(c_emb, dh, need_param_grads)
        acc("patch.w", dwp); acc("patch.b", dbp)
        dx = None
        if need_input_grad:
            dx = 0.0
            start = 0
            for bs, nt in zip(self.branch_sizes, self.branch_tokens):
                db = _INPUT_SCALE * self._unpatchify_grad(
                    dpatches[:, start : start + nt], b, bs)
                start += nt
                dx = dx + (db if bs == self.input_size
                           else _resize_batch_vjp(db, self.input_size))
        return dx, grads


def _conv3_fwd(x, w, b):
    bsz, c, h, ww = x.shape
    cols = kernels.im2col3(x)
    out = cols @ w + b
    cout = w.shape[1]
    return out.reshape(bsz, h, ww, cout).transpose(0, 3, 1, 2), (cols, w, (c, h, ww))


def _conv3_bwd(cache, dy, need_param_grads=True):
    cols, w, (c, h, ww) = cache
    bsz, cout = dy.shape[0], dy.shape[1]
    dy2 = dy.transpose(0, 2, 3, 1).reshape(bsz, h * ww, cout)
    dcols = dy2 @ w.T
    dx = kernels.col2im3(dcols, c, h, ww)
    if not need_param_grads:
        return dx, None, None
    dw = cols.reshape(-1, cols.shape[-1]).T @ dy2.reshape(-1, cout)
    return dx, dw, dy2.sum(axis=(0, 1))


class ResidualCnnEncoder:
    arch = "residual_cnn"

    def __init__(self, input_size=48, channels=32, n_blocks=3, embed_dim=64,
                 kernel_size=3, downsample=2):
        if kernel_size != 3:
            raise ModelError("only 3x3 kernels are supported")
        if downsample < 1 or input_size % downsample != 0:
            raise ModelError(f"input_size {input_size} not divisible by "
                             f"downsample {downsample}")
        core = input_size // downsample
        if core % (2 ** (n_blocks - 1)) != 0:
            raise ModelError(f"core size {core} incompatible with {n_blocks} blocks")
        self.input_size = input_size
        self.channels = channels
        self.n_blocks = n_blocks
        self.embed_dim = embed_dim
        self.kernel_size = kernel_size
        self.downsample = downsample
        self.core_size = core
        self.tap_count = n_blocks + 1

    @property
    def grid_step(self) -> int:
        # first-layer lattice period in input pixels
        return self.kernel_size * self.downsample

    def config(self) -> dict:
        return {k: getattr(self, k) for k in
                ("input_size", "channels", "n_blocks", "embed_dim", "kernel_size",
                 "downsample")}

    def init_params(self, rng) -> dict:
        c = self.channels
        params = {
            "stem.w": _init(rng, 27, c), "stem.b": np.zeros(c),
            "head.w": _init(rng, c, self.embed_dim), "head.b": np.zeros(self.embed_dim),
        }
        for i in range(self.n_blocks):
            params.update({
                f"blk{i}.w1": _init(rng, 9 * c, c), f"blk{i}.b1": np.zeros(c),
                f"blk{i}.w2": _init(rng, 9 * c, c), f"blk{i}.b2": np.zeros(c),
            })
        return params

    def forward(self, x, params):
        """x: (B, 3, S, S) -> (taps, cache); taps[i]: (B, C, h_i, h_i), taps[-1]: (B, e)."""
        if x.shape[-1] != self.input_size or x.shape[-2] != self.input_size:
            raise ModelError(
                f"expected {self.input_size}x{self.input_size} input, got "
                f"{x.shape[-2]}x{x.shape[-1]}")
        if self.downsample > 1:
            x = _resize_batch(x, self.core_size)
        s, c_stem = _conv3_fwd(_center(x), params["stem.w"], params["stem.b"])
        s, c_sg = L.gelu_fwd(s)
        taps, caches = [], [(c_stem, c_sg)]
        for i in range(self.n_blocks):
            y1, c1 = _conv3_fwd(s, params[f"blk{i}.w1"], params[f"blk{i}.b1"])
            a1, cg1 = L.gelu_fwd(y1)
            y2, c2 = _conv3_fwd(a1, params[f"blk{i}.w2"], params[f"blk{i}.b2"])
            pre = y2 + s
            s, cg2 = L.gelu_fwd(pre)
            taps.append(s)
            pooled = i < self.n_blocks - 1
            if pooled:
                s, cp = L.avgpool2_fwd(s)
            else:
                cp = None
            caches.append((c1, cg1, c2, cg2, cp))
        feat = s.mean(axis=(2, 3))  # global average pool
        emb, c_head = L.linear_fwd(feat, params["head.w"], params["head.b"])
        taps.append(emb)
        return taps, (caches, s.shape, c_head)

    def backward(self, cache, d_taps, need_input_grad=True, need_param_grads=True):
        caches, last_shape, c_head = cache
        grads = {} if need_param_grads else None

        def acc(name, g):
            if need_param_grads and g is not None:
                grads[name] = grads.get(name, 0.0) + g

        dfeat, dw, dbi = L.linear_bwd(c_head, d_taps[-1], need_param_grads)
        acc("head.w", dw); acc("head.b", dbi)
        bsz, c, h, w = last_shape
        ds = np.broadcast_to(dfeat[:, :, None, None] / (h * w), last_shape).copy()
        for i in reversed(range(self.n_blocks)):
            c1, cg1, c2, cg2, cp = caches[i + 1]
            if cp is not None:
                ds = L.avgpool2_bwd(cp, ds)
            if d_taps[i] is not None:
                ds = ds + d_taps[i]
            dpre = L.gelu_bwd(cg2, ds)
            da1, dw2, db2 = _conv3_bwd(c2, dpre, need_param_grads)
            acc(f"blk{i}.w2", dw2); acc(f"blk{i}.b2", db2)
            dy1 = L.gelu_bwd(cg1, da1)
            ds_in, dw1, db1 = _conv3_bwd(c1, dy1, need_param_grads)
            acc(f"blk{i}.w1", dw1); acc(f"blk{i}.b1", db1)
            ds = ds_in + dpre  # residual skip
        c_stem, c_sg = caches[0]
        dstem = L.gelu_bwd(c_sg, ds)
        dx, dws, dbs = _conv3_bwd(c_stem, dstem, need_param_grads)
        acc("stem.w", dws); acc("stem.b", dbs)
        if not need_input_grad:
            return None, grads
        dx = _INPUT_SCALE * dx
        if self.downsample > 1:
            dx = _resize_batch_vjp(dx, self.input_size)
        return dx, grads


class TextTransformerEncoder:
    arch = "text_transformer"

    def __init__(self, vocab_size, max_len=16, width=64, n_heads=4, embed_dim=64, mlp_ratio=2):
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.width = width
        self.n_heads = n_heads
        self.embed_dim = embed_dim
        self.mlp_ratio = mlp_ratio

    def config(self) -> dict:
        return {k: getattr(self, k) for k in
                ("vocab_size", "max_len", "width", "n_heads", "embed_dim", "mlp_ratio")}

    def init_params(self, rng) -> dict:
        d = self.width
        return {
            "tok": 0.02 * rng.normal(size=(self.vocab_size, d)),
            "pos": 0.02 * rng.normal(size=(self.max_len, d)),
            "ln1.g": np.ones(d), "ln1.b": np.zeros(d),
            "attn.wqkv": _init(rng, d, 3 * d), "attn.bqkv": np.zeros(3 * d),
            "attn.wo": _init(rng, d, d), "attn.bo": np.zeros(d),
            "ln2.g": np.ones(d), "ln2.b": np.zeros(d),
            "mlp.w1": _init(rng, d, self.mlp_ratio * d), "mlp.b1": np.zeros(self.mlp_ratio * d),
            "mlp.w2": _init(rng, self.mlp_ratio * d, d), "mlp.b2": np.zeros(d),
            "lnf.g": np.ones(d), "lnf.b": np.zeros(d),
            "head.w": _init(rng, d, self.embed_dim), "head.b": np.zeros(self.embed_dim),
        }

    def forward(self, ids, params, pad_id=0):
        """ids: (B, L) int array padded with pad_id -> ((B, e) embeddings, cache)."""
        ids = np.asarray(ids)
        if ids.max() >= self.vocab_size or ids.min() < 0:
            raise ModelError(f"token id out of vocabulary range [0, {self.vocab_size})")
        bsz, n = ids.shape
        mask = ids != pad_id  # (B, L) True = real token
        h = params["tok"][ids] + params["pos"][:n]
        n1, c_ln1 = L.layernorm_fwd(h, params["ln1.g"], params["ln1.b"])
        att, c_att = L.attention_fwd(n1, params["attn.wqkv"], params["attn.bqkv"],
                                     params["attn.wo"], params["attn.bo"],
                                     self.n_heads, key_mask=mask)
        h = h + att
        n2, c_ln2 = L.layernorm_fwd(h, params["ln2.g"], params["ln2.b"])
        m1, c_m1 = L.linear_fwd(n2, params["mlp.w1"], params["mlp.b1"])
        a1, c_g = L.gelu_fwd(m1)
        m2, c_m2 = L.linear_fwd(a1, params["mlp.w2"], params["mlp.b2"])
        h = h + m2
        nf, c_lnf = L.layernorm_fwd(h, params["lnf.g"], params["lnf.b"])
        counts = mask.sum(axis=1, keepdims=True).astype(np.float64)
        pooled = (nf * mask[:, :, None]).sum(axis=1) / counts
        emb, c_head = L.linear_fwd(pooled, params["head.w"], params["head.b"])
        cache = (ids, mask, counts, c_ln1, c_att, c_ln2, c_m1, c_g, c_m2, c_lnf, c_head)
        return emb, cache

    def backward(self, cache, d_emb):
        """Parameter gradients only (token ids are discrete)."""
        ids, mask, counts, c_ln1, c_att, c_ln2, c_m1, c_g, c_m2, c_lnf, c_head = cache
        grads = {}
        dpooled, grads["head.w"], grads["head.b"] = L.linear_bwd(c_head, d_emb)
        dnf = (dpooled[:, None, :] / counts[:, :, None]) * mask[:, :, None]
        dh, grads["lnf.g"], grads["lnf.b"] = L.layernorm_bwd(c_lnf, dnf)
        da1, grads["mlp.w2"], grads["mlp.b2"] = L.linear_bwd(c_m2, dh)
        dm1 = L.gelu_bwd(c_g, da1)
        dn2, grads["mlp.w1"], grads["mlp.b1"] = L.linear_bwd(c_m1, dm1)
        dln2, grads["ln2.g"], grads["ln2.b"] = L.layernorm_bwd(c_ln2, dn2)
        dh = dh + dln2
        datt, attg = L.attention_bwd(c_att, dh)
        grads["attn.wqkv"] = attg["wqkv"]; grads["attn.bqkv"] = attg["bqkv"]
        grads["attn.wo"] = attg["wo"]; grads["attn.bo"] = attg["bo"]
        dn1, grads["ln1.g"], grads["ln1.b"] = L.layernorm_bwd(c_ln1, datt)
        dh = dh + dn1
        dtok = self._zeros_tok()
        np.add.at(dtok, ids, dh)
        grads["tok"] = dtok
        grads["pos"] = dh.sum(axis=0)
        return grads

    def _zeros_tok(self):
        return np.zeros((self.vocab_size, self.width))


@dataclass
class VlpModel:
    """Paired image/text encoders sharing an embedding space."""

    image_encoder: object
    text_encoder: TextTransformerEncoder
    img_params: dict
    txt_params: dict
    pad_id: int = 0
    name: str = "model"
    seed: int = 0

    @property
    def arch(self) -> str:
        return self.image_encoder.arch

    @property
    def input_size(self) -> int:
        return self.image_encoder.input_size

    @property
    def grid_step(self) -> int:
        return self.image_encoder.grid_step

    @property
    def embed_dim(self) -> int:
        return self.image_encoder.embed_dim

    @property
    def tap_count(self) -> int:
        return self.image_encoder.tap_count

    def encode_image_batch(self, x):
        return self.image_encoder.forward(np.asarray(x, dtype=np.float64), self.img_params)

    def encode_image(self, image):
        """image: (3, S, S) -> list of per-tap feature arrays (batch dim dropped)."""
        taps, _ = self.encode_image_batch(image[None])
        return [t[0] for t in taps]

    def pad_tokens(self, tokens_list: list[CaptionTokens]) -> np.ndarray:
        n = self.text_encoder.max_len
        out = np.full((len(tokens_list), n), self.pad_id, dtype=np.int64)
        for i, t in enumerate(tokens_list):
            ids = t.tokens if isinstance(t, CaptionTokens) else list(t)
            if len(ids) > n:
                raise ModelError(f"caption length {len(ids)} exceeds max_len {n}")
            out[i, : len(ids)] = ids
        return out

    def encode_text_batch(self, tokens_list):
        ids = self.pad_tokens(tokens_list)
        emb, _ = self.text_encoder.forward(ids, self.txt_params, pad_id=self.pad_id)
        return emb

    def encode_text(self, tokens: CaptionTokens):
        return self.encode_text_batch([tokens])[0]


def build_model(arch: str, vocab_size: int, seed: int = 0, name: str = "model",
                **overrides) -> VlpModel:
    if arch == "patch_transformer":
        enc = PatchTransformerEncoder(**overrides)
    elif arch == "residual_cnn":
        enc = ResidualCnnEncoder(**overrides)
    else:
        raise ModelError(f"unknown architecture tag {arch!r}")
    txt = TextTransformerEncoder(vocab_size=vocab_size, embed_dim=enc.embed_dim)
    rng = np.random.default_rng(seed)
    return VlpModel(image_encoder=enc, text_encoder=txt,
                    img_params=enc.init_params(rng), txt_params=txt.init_params(rng),
                    name=name, seed=seed)


def save_model(model: VlpModel, path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "arch": model.arch,
        "name": model.name,
        "seed": model.seed,
        "pad_id": model.pad_id,
        "image_config": model.image_encoder.config(),
        "text_config": model.text_encoder.config(),
        "taps": model.tap_count,
    }
    arrays = {f"img.{k}": v for k, v in model.img_params.items()}
    arrays.update({f"txt.{k}": v for k, v in model.txt_params.items()})
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_model(path, expect_arch: str | None = None) -> VlpModel:
    with np.load(path) as z:
        if "__meta__" not in z:
            raise ModelError(f"corrupt checkpoint (no header): {path}")
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ModelError(
                f"checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}")
        if expect_arch is not None and meta["arch"] != expect_arch:
            raise ModelError(f"architecture mismatch: checkpoint is {meta['arch']!r}, "
                             f"expected {expect_arch!r}")
        if meta["arch"] == "patch_transformer":
            enc = PatchTransformerEncoder(**meta["image_config"])
        elif meta["arch"] == "residual_cnn":
            enc = ResidualCnnEncoder(**meta["image_config"])
        else:
            raise ModelError(f"unknown architecture tag {meta['arch']!r}")
        txt = TextTransformerEncoder(**meta["text_config"])
        img_params = {k[4:]: z[k] for k in z.files if k.startswith("img.")}
        txt_params = {k[4:]: z[k] for k in z.files if k.startswith("txt.")}
    return VlpModel(image_encoder=enc, text_encoder=txt, img_params=img_params,
                    txt_params=txt_params, pad_id=meta["pad_id"], name=meta["name"],
                    seed=meta["seed"])


def input_gradient(model: VlpModel, objective, image: np.ndarray) -> tuple[float, np.ndarray]:
    """Gradient of a scalar objective of the image's feature stack.

    ``objective(taps) -> (value, d_taps)`` where taps are the batched
    (B=1) feature tensors and d_taps their cotangents (None allowed).
    Returns (value, gradient with the image's shape).
    """
    taps, cache = model.encode_image_batch(image[None])
    value, d_taps = objective(taps)
    if np.ndim(value) != 0:
        raise ModelError("objective must be scalar")
    dx, _ = model.image_encoder.backward(cache, d_taps, need_param_grads=False)
    return float(value), dx[0]
