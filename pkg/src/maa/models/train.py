"""From-scratch contrastive trainer aligning the toy image/text encoders.

Symmetric cross-entropy over the temperature-scaled cosine-similarity matrix,
optimized with Adam. Keeps the checkpoint with the best validation R@1
(mean of both retrieval directions).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..data import DatasetHandle, load_pair
from .encoders import VlpModel, build_model


class TrainingDivergedError(Exception):
    pass


@dataclass
class TrainSpec:
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 1e-3
    temperature: float = 0.07
    seed: int = 0
    early_stop_r1: float | None = 1.0  # stop once val R@1 reaches this
    augment_shift: int = 3  # random per-sample translation, pixels (0 = off)
    augment_color: float = 0.1  # brightness/contrast jitter amplitude (0 = off)
    augment_scale: float = 0.15  # random rescale amplitude (0 = off)
    augment_zoom: float = 0.5  # probability of an upscale-and-crop view (0 = off)
    zoom_max: float = 2.0  # largest upscale factor for zoom views
    weight_decay: float = 0.0  # decoupled (AdamW-style)

    def validate(self) -> None:
        if self.augment_shift < 0:
            raise ValueError(f"augment_shift must be >= 0: {self.augment_shift}")
        if min(self.augment_color, self.augment_scale, self.weight_decay) < 0:
            raise ValueError("augmentation and weight_decay fields must be >= 0")
        if not 0.0 <= self.augment_zoom <= 1.0 or self.zoom_max < 1.0:
            raise ValueError("augment_zoom must be in [0, 1] and zoom_max >= 1")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if min(self.epochs, self.batch_size) < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.early_stop_r1 is not None and not 0 < self.early_stop_r1 <= 1:
            raise ValueError(f"early_stop_r1 must be in (0, 1]: {self.early_stop_r1}")


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.wd = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * ((self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
                                    + self.wd * params[k])


def normalize_rows(e: np.ndarray) -> np.ndarray:
    return e / np.linalg.norm(e, axis=1, keepdims=True)


def _normalize_fwd(e):
    norm = np.linalg.norm(e, axis=1, keepdims=True)
    u = e / norm
    return u, (u, norm)


def _normalize_bwd(cache, du):
    u, norm = cache
    return (du - (du * u).sum(axis=1, keepdims=True) * u) / norm


def clip_loss_and_grads(img_emb, txt_emb, temperature):
    """Symmetric InfoNCE. Returns (loss, d_img_emb, d_txt_emb)."""
    n = img_emb.shape[0]
    ui, ci = _normalize_fwd(img_emb)
    ut, ct = _normalize_fwd(txt_emb)
    logits = ui @ ut.T / temperature
    shifted = logits - logits.max(axis=1, keepdims=True)
    p_row = np.exp(shifted)
    p_row /= p_row.sum(axis=1, keepdims=True)
    shifted_c = logits - logits.max(axis=0, keepdims=True)
    p_col = np.exp(shifted_c)
    p_col /= p_col.sum(axis=0, keepdims=True)
    diag = np.arange(n)
    loss = -0.5 * (np.log(p_row[diag, diag] + 1e-300).mean()
                   + np.log(p_col[diag, diag] + 1e-300).mean())
    eye = np.eye(n)
    dlogits = 0.5 * ((p_row - eye) + (p_col - eye)) / n
    dui = dlogits @ ut / temperature
    dut = dlogits.T @ ui / temperature
    return loss, _normalize_bwd(ci, dui), _normalize_bwd(ct, dut)


def _shift_image(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate with corner-value (background) fill."""
    out = np.full_like(img, img[:, 0, 0][:, None, None])
    h, w = img.shape[-2:]
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[:, yd, xd] = img[:, ys, xs]
    return out


def _rescale_image(img: np.ndarray, factor: float) -> np.ndarray:
    """Rescale about the center, padding/cropping back with the corner value."""
    size = img.shape[-1]
    new = max(4, int(round(size * factor)))
    if new == size:
        return img
    scaled = kernels.bilinear_resize(img, new, new)
    out = np.full_like(img, img[:, 0, 0][:, None, None])
    if new < size:
        o = (size - new) // 2
        out[:, o : o + new, o : o + new] = scaled
    else:
        o = (new - size) // 2
        out = scaled[:, o : o + size, o : o + size]
    return out


def _zoom_crop(img: np.ndarray, factor: float, rng) -> np.ndarray:
    """Upscale and take a random window back at the original size (an attack-
    style resized-crop view, so crop features track the plain view)."""
    size = img.shape[-1]
    new = int(size * factor)
    if new <= size:
        return img
    scaled = kernels.bilinear_resize(img, new, new)
    oy, ox = rng.integers(0, new - size + 1, size=2)
    return scaled[:, oy : oy + size, ox : ox + size]


def _augment_batch(images: np.ndarray, spec: "TrainSpec", rng) -> np.ndarray:
    if (spec.augment_shift == 0 and spec.augment_color == 0
            and spec.augment_scale == 0 and spec.augment_zoom == 0):
        return images
    out = np.empty_like(images)
    for i, img in enumerate(images):
        if spec.augment_zoom > 0.0 and rng.random() < spec.augment_zoom:
            img = _zoom_crop(img, rng.uniform(1.0, spec.zoom_max), rng)
        elif spec.augment_scale > 0.0:
            img = _rescale_image(img, 1.0 + rng.uniform(-spec.augment_scale,
                                                        spec.augment_scale))
        if spec.augment_shift > 0:
            dy, dx = rng.integers(-spec.augment_shift, spec.augment_shift + 1, size=2)
            img = _shift_image(img, int(dy), int(dx))
        if spec.augment_color > 0.0:
            gain = 1.0 + rng.uniform(-spec.augment_color, spec.augment_color)
            bias = rng.uniform(-spec.augment_color / 2, spec.augment_color / 2)
            img = np.clip(img * gain + bias, 0.0, 1.0)
        out[i] = img
    return out


def _resize_to(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[-1] == size:
        return img
    return kernels.bilinear_resize(img, size, size)


def load_split_arrays(handle: DatasetHandle, split: str, input_size: int):
    """Images resized to the model input size + padded token ids + caption list."""
    idx = handle.indices(split)
    images, tokens = [], []
    for i in idx:
        img, tok = load_pair(handle, i)
        images.append(_resize_to(img, input_size))
        tokens.append(tok)
    return np.stack(images), tokens, idx


def _retrieval_r1(img_emb, txt_emb) -> float:
    ui = normalize_rows(img_emb)
    ut = normalize_rows(txt_emb)
    sim = ui @ ut.T
    i2t = (sim.argmax(axis=1) == np.arange(len(sim))).mean()
    t2i = (sim.argmax(axis=0) == np.arange(len(sim))).mean()
    return float(0.5 * (i2t + t2i))


def train_contrastive(spec: TrainSpec, handle: DatasetHandle, arch: str,
                      name: str = "model", log=None, **model_overrides) -> VlpModel:
    spec.validate()
    model = build_model(arch, vocab_size=len(handle.vocab), seed=spec.seed,
                        name=name, **model_overrides)
    train_imgs, train_toks, _ = load_split_arrays(handle, "train", model.input_size)
    val_imgs, val_toks, _ = load_split_arrays(handle, "val", model.input_size)
    train_ids = model.pad_tokens(train_toks)
    val_ids = model.pad_tokens(val_toks)

    opt_img = Adam(model.img_params, spec.learning_rate, weight_decay=spec.weight_decay)
    opt_txt = Adam(model.txt_params, spec.learning_rate, weight_decay=spec.weight_decay)
    rng = np.random.default_rng(spec.seed)
    n = len(train_imgs)
    best = {"r1": -1.0, "img": None, "txt": None, "epoch": -1}

    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, spec.batch_size):
            batch = order[start : start + spec.batch_size]
            if len(batch) < 2:
                continue
            batch_imgs = _augment_batch(train_imgs[batch], spec, rng)
            taps, cache_i = model.image_encoder.forward(batch_imgs, model.img_params)
            txt_emb, cache_t = model.text_encoder.forward(train_ids[batch], model.txt_params,
                                                          pad_id=model.pad_id)
            loss, d_img, d_txt = clip_loss_and_grads(taps[-1], txt_emb, spec.temperature)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch} (lr={spec.learning_rate})")
            d_taps = [None] * (model.tap_count - 1) + [d_img]
            _, g_img = model.image_encoder.backward(cache_i, d_taps, need_input_grad=False)
            g_txt = model.text_encoder.backward(cache_t, d_txt)
            opt_img.step(model.img_params, g_img)
            opt_txt.step(model.txt_params, g_txt)
            epoch_loss += loss
            n_batches += 1

        vt, _ = model.image_encoder.forward(val_imgs, model.img_params)
        ve, _ = model.text_encoder.forward(val_ids, model.txt_params, pad_id=model.pad_id)
        r1 = _retrieval_r1(vt[-1], ve)
        if r1 > best["r1"]:
            best.update(r1=r1, epoch=epoch,
                        img=copy.deepcopy(model.img_params),
                        txt=copy.deepcopy(model.txt_params))
        if log is not None:
            log(f"[{name}] epoch {epoch:3d} loss {epoch_loss / max(n_batches, 1):.4f} "
                f"val_r1 {r1:.3f}")
        if spec.early_stop_r1 is not None and best["r1"] >= spec.early_stop_r1:
            break

    model.img_params = best["img"]
    model.txt_params = best["txt"]
    model.best_val_r1 = best["r1"]
    return model
