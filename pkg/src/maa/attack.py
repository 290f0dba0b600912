"""MAA image attack (multi-granularity similarity disruption over RScrop crop
sets, driven by signed-gradient PGD) and the word-substitution text attack.

The attacker always *minimizes* cosine similarity:

    L1    = sum over taps i, crops x' of cos(f_i(x'), f_i(x_clean))
    L2    = sum over crops x' of cos(f_img(x'), f_txt(t_clean))
    L_img = L1 + L2
    L_txt = cos(f_txt(t_adv), f_txt(t)) + cos(f_txt(t_adv), f_img(x))

Ablation flags: ``use_resizing`` pins the scale draw to 1 when off;
``use_sliding`` replaces the sliding schedule with a single top-left window
when off; ``use_mgsd`` restricts L1 to the final tap when off. All three off
is the plain-PGD baseline.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import CaptionTokens, MASK_ID
from .models.encoders import VlpModel
from .rscrop import CropBatch, CropPlan, build_crop_plan

_NORM_FLOOR = 1e-12


class AttackError(Exception):
    pass


@dataclass
class AttackConfig:
    epsilon_img: float = 4.0 / 255.0
    epsilon_txt: int = 1
    iterations: int = 40
    step_size: float | None = None  # None -> epsilon_img / T * 2.25
    scale_set: list[float] = field(default_factory=lambda: [1.25, 1.5, 1.75, 2.0])
    rescale_period: int = 10
    batch_size: int = 4
    k_max: int = 128
    use_resizing: bool = True
    use_sliding: bool = True
    use_mgsd: bool = True
    seed: int = 0
    tap_pooling: str = "flatten"  # flatten | token_mean
    beta: tuple[int, int] | None = None  # None -> (1, grid_step - 1)
    allow_downscale: bool = False  # parameter-study mode (scales < 1)

    @property
    def step(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return self.epsilon_img / self.iterations * 2.25

    def validate(self) -> None:
        if self.epsilon_img < 0:
            raise AttackError(f"epsilon_img must be >= 0, got {self.epsilon_img}")
        if self.iterations < 1:
            raise AttackError(f"iterations must be >= 1, got {self.iterations}")
        if self.step <= 0 and self.epsilon_img > 0:
            raise AttackError(f"step size must be > 0, got {self.step}")
        if not 1 <= self.rescale_period <= self.iterations:
            raise AttackError(
                f"rescale_period must be in [1, T={self.iterations}], got {self.rescale_period}")
        if not self.allow_downscale and any(s < 1.0 for s in self.scale_set):
            raise AttackError(f"scale_set values must be >= 1: {self.scale_set}")
        if self.epsilon_txt < 0:
            raise AttackError(f"epsilon_txt must be >= 0, got {self.epsilon_txt}")
        if self.tap_pooling not in ("flatten", "token_mean"):
            raise AttackError(f"unknown tap_pooling {self.tap_pooling!r}")

    def hash(self) -> str:
        d = asdict(self)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class AdversarialPair:
    adv_image: np.ndarray
    adv_tokens: CaptionTokens | None
    config_hash: str
    model_name: str
    seed: int
    loss_trace: list[tuple[float, float, float]]  # (L1, L2, L_img) per iteration


@dataclass
class CandidateLexicon:
    candidates: dict[str, list[str]]

    def __post_init__(self):
        for word, subs in self.candidates.items():
            if word in subs:
                raise AttackError(f"lexicon maps {word!r} to itself")

    def get(self, word: str) -> list[str]:
        return self.candidates.get(word, [])

    def __len__(self) -> int:
        return len(self.candidates)


def build_lexicon(*word_groups: list[str]) -> CandidateLexicon:
    """Same-category substitution lexicon: each word maps to its group peers."""
    cands = {}
    for group in word_groups:
        for w in group:
            cands[w] = [o for o in group if o != w]
    return CandidateLexicon(cands)


# ---------------------------------------------------------------------------
# cosine machinery

def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise AttackError(f"cosine: length mismatch {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < _NORM_FLOOR or nv < _NORM_FLOOR:
        warnings.warn("cosine of a (near-)zero vector is defined as 0", RuntimeWarning)
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _cosine_rows_grad(u_rows: np.ndarray, v: np.ndarray):
    """cos(u_j, v) and d cos / d u_j for each row. Zero-norm rows give (0, 0)."""
    nu = np.linalg.norm(u_rows, axis=1)
    nv = np.linalg.norm(v)
    ok = (nu >= _NORM_FLOOR) & (nv >= _NORM_FLOOR)
    safe_nu = np.where(ok, nu, 1.0)
    un = u_rows / safe_nu[:, None]
    vn = v / max(nv, _NORM_FLOOR)
    cos = np.where(ok, un @ vn, 0.0)
    grad = (vn[None, :] - cos[:, None] * un) / safe_nu[:, None]
    grad[~ok] = 0.0
    return cos, grad


def _pool(tap: np.ndarray, pooling: str) -> np.ndarray:
    """(k, ...) tap -> (k, m) rows for the per-crop cosine."""
    if tap.ndim == 2:
        return tap
    if pooling == "flatten":
        return tap.reshape(tap.shape[0], -1)
    if tap.ndim == 3:  # (k, tokens, d)
        return tap.mean(axis=1)
    return tap.mean(axis=(2, 3))  # (k, C, H, W)


def _unpool_grad(grad_rows: np.ndarray, tap_shape: tuple, pooling: str) -> np.ndarray:
    if len(tap_shape) == 2:
        return grad_rows
    if pooling == "flatten":
        return grad_rows.reshape(tap_shape)
    if len(tap_shape) == 3:
        k, n, d = tap_shape
        return np.broadcast_to(grad_rows[:, None, :] / n, tap_shape).copy()
    k, c, h, w = tap_shape
    return np.broadcast_to(grad_rows[:, :, None, None] / (h * w), tap_shape).copy()


def pool_clean_stack(clean_stack: list[np.ndarray], pooling: str) -> list[np.ndarray]:
    return [_pool(t[None], pooling)[0] for t in clean_stack]


# ---------------------------------------------------------------------------
# spec-surface loss operations (forward only; used directly by tests/oracles)

def intra_modal_loss(model: VlpModel, crops: CropBatch, clean_stack: list[np.ndarray],
                     use_mgsd: bool = True, tap_pooling: str = "flatten") -> float:
    if len(clean_stack) != model.tap_count:
        raise AttackError(f"clean stack has {len(clean_stack)} taps, "
                          f"model has {model.tap_count}")
    taps, _ = model.encode_image_batch(crops.stacked())
    clean_flat = pool_clean_stack(clean_stack, tap_pooling)
    total = 0.0
    for i, tap in enumerate(taps):
        if not use_mgsd and i != len(taps) - 1:
            continue
        rows = _pool(tap, tap_pooling)
        for row in rows:
            total += cosine(row, clean_flat[i])
    return total


def cross_modal_loss(model: VlpModel, crops: CropBatch, text_embed: np.ndarray) -> float:
    taps, _ = model.encode_image_batch(crops.stacked())
    emb = taps[-1]
    if emb.shape[1] != text_embed.shape[-1]:
        raise AttackError(f"embedding dim mismatch: {emb.shape[1]} vs {text_embed.shape[-1]}")
    return float(sum(cosine(e, text_embed) for e in emb))


def image_objective(model: VlpModel, crops: CropBatch, clean_stack: list[np.ndarray],
                    text_embed: np.ndarray, use_mgsd: bool = True,
                    tap_pooling: str = "flatten") -> float:
    return (intra_modal_loss(model, crops, clean_stack, use_mgsd, tap_pooling)
            + cross_modal_loss(model, crops, text_embed))


def text_objective(model: VlpModel, adv_tokens: CaptionTokens, clean_tokens: CaptionTokens,
                   clean_image_embed: np.ndarray) -> float:
    adv_emb = model.encode_text(adv_tokens)
    clean_emb = model.encode_text(clean_tokens)
    return cosine(adv_emb, clean_emb) + cosine(adv_emb, clean_image_embed)


# ---------------------------------------------------------------------------
# fused objective + input gradient for the PGD driver

def objective_cotangents(taps: list[np.ndarray], clean_flat: list[np.ndarray],
                         text_embed: np.ndarray, use_mgsd: bool, tap_pooling: str):
    """L1/L2 over a crop batch plus per-tap cotangents for the encoder backward."""
    n = len(taps)
    d_taps: list[np.ndarray | None] = [None] * n
    l1 = 0.0
    for i, tap in enumerate(taps):
        if not use_mgsd and i != n - 1:
            continue
        rows = _pool(tap, tap_pooling)
        cos, grad = _cosine_rows_grad(rows, clean_flat[i])
        l1 += float(cos.sum())
        d_taps[i] = _unpool_grad(grad, tap.shape, tap_pooling)
    cos2, grad2 = _cosine_rows_grad(taps[-1], text_embed)
    l2 = float(cos2.sum())
    d_taps[-1] = grad2 if d_taps[-1] is None else d_taps[-1] + grad2
    return l1, l2, d_taps


def image_objective_grad(model: VlpModel, x_adv: np.ndarray, plan: CropPlan,
                         clean_flat: list[np.ndarray], text_embed: np.ndarray,
                         use_mgsd: bool = True, tap_pooling: str = "flatten"):
    """(L1, L2, dL_img/dx_adv) through resize + crops + encoder."""
    crops = plan.apply(x_adv)
    taps, cache = model.encode_image_batch(crops)
    l1, l2, d_taps = objective_cotangents(taps, clean_flat, text_embed,
                                          use_mgsd, tap_pooling)
    d_crops, _ = model.image_encoder.backward(cache, d_taps, need_param_grads=False)
    if not np.all(np.isfinite(d_crops)):
        raise AttackError("non-finite gradient in attack objective")
    grad = plan.vjp(d_crops, x_adv.shape[-2], x_adv.shape[-1])
    return l1, l2, grad


def _window_rng(cfg: AttackConfig, sample_index: int, window: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=(abs(int(cfg.seed)), int(sample_index), int(window))))


def make_crop_plan(model: VlpModel, cfg: AttackConfig, sample_index: int,
                   window: int) -> CropPlan:
    """Draw scales + jitter for one rescale window and freeze the crop geometry."""
    rng = _window_rng(cfg, sample_index, window)
    if cfg.use_resizing:
        s_x = float(cfg.scale_set[rng.integers(len(cfg.scale_set))])
        s_y = float(cfg.scale_set[rng.integers(len(cfg.scale_set))])
    else:
        s_x = s_y = 1.0
    beta = cfg.beta if cfg.beta is not None else (1, model.grid_step - 1)
    return build_crop_plan(model.input_size, s_x, s_y, model.input_size,
                           model.grid_step, beta, cfg.k_max, rng,
                           use_sliding=cfg.use_sliding,
                           allow_downscale=cfg.allow_downscale)


def pgd_attack(model: VlpModel, image: np.ndarray, tokens: CaptionTokens,
               cfg: AttackConfig, sample_index: int = 0) -> AdversarialPair:
    """Signed-gradient PGD on L_img with the RScrop schedule. Image part only."""
    cfg.validate()
    if image.shape[-1] != model.input_size:
        raise AttackError(f"image size {image.shape[-1]} != model input "
                          f"{model.input_size}")
    x = np.asarray(image, dtype=np.float64)
    clean_flat = pool_clean_stack(model.encode_image(x), cfg.tap_pooling)
    text_embed = model.encode_text(tokens)
    lo = np.clip(x - cfg.epsilon_img, 0.0, 1.0)
    hi = np.clip(x + cfg.epsilon_img, 0.0, 1.0)
    x_adv = x.copy()
    trace = []
    plan = None
    for step in range(cfg.iterations):
        if step % cfg.rescale_period == 0:
            plan = make_crop_plan(model, cfg, sample_index, step // cfg.rescale_period)
        l1, l2, grad = image_objective_grad(model, x_adv, plan, clean_flat, text_embed,
                                            cfg.use_mgsd, cfg.tap_pooling)
        x_adv = np.clip(x_adv - cfg.step * np.sign(grad), lo, hi)
        trace.append((l1, l2, l1 + l2))
    return AdversarialPair(adv_image=x_adv, adv_tokens=None, config_hash=cfg.hash(),
                           model_name=model.name, seed=cfg.seed, loss_trace=trace)


# ---------------------------------------------------------------------------
# text attack

def rank_word_importance(model: VlpModel, tokens: CaptionTokens,
                         image: np.ndarray) -> list[int]:
    """Positions sorted by how much masking them moves the caption away from
    the clean caption/image embeddings (largest feature distance first)."""
    if model.text_encoder.vocab_size <= MASK_ID:
        raise AttackError("vocabulary has no reserved MASK token")
    clean_txt = model.encode_text(tokens)
    clean_img = model.encode_image(np.asarray(image, dtype=np.float64))[-1]
    masked = []
    for p in range(tokens.length):
        ids = list(tokens.tokens)
        ids[p] = MASK_ID
        masked.append(CaptionTokens(tokens=ids, words=list(tokens.words)))
    embs = model.encode_text_batch(masked)
    importance = [-(cosine(e, clean_txt) + cosine(e, clean_img)) for e in embs]
    return sorted(range(tokens.length), key=lambda p: (-importance[p], p))


def attack_text(model: VlpModel, tokens: CaptionTokens, image: np.ndarray,
                lexicon: CandidateLexicon, cfg: AttackConfig,
                vocab) -> CaptionTokens:
    """Greedy importance-ranked word substitution minimizing L_txt."""
    cfg.validate()
    if cfg.epsilon_txt == 0:
        return CaptionTokens(tokens=list(tokens.tokens), words=list(tokens.words))
    if len(lexicon) == 0:
        warnings.warn("empty candidate lexicon: returning clean caption", RuntimeWarning)
        return CaptionTokens(tokens=list(tokens.tokens), words=list(tokens.words))
    clean_txt = model.encode_text(tokens)
    clean_img = model.encode_image(np.asarray(image, dtype=np.float64))[-1]
    order = rank_word_importance(model, tokens, image)
    words = list(tokens.words)
    ids = list(tokens.tokens)
    changed = 0
    for pos in order:
        if changed >= cfg.epsilon_txt:
            break
        cands = lexicon.get(tokens.words[pos])
        cands = [c for c in cands if c in vocab.index]
        if not cands:
            continue
        best_word, best_val = None, np.inf
        for cand in cands:
            trial_ids = list(ids)
            trial_ids[pos] = vocab.index[cand]
            emb = model.encode_text_batch(
                [CaptionTokens(tokens=trial_ids, words=words)])[0]
            val = cosine(emb, clean_txt) + cosine(emb, clean_img)
            if val < best_val:
                best_word, best_val = cand, val
        words[pos] = best_word
        ids[pos] = vocab.index[best_word]
        changed += 1
    return CaptionTokens(tokens=ids, words=words)


def word_edit_distance(a: CaptionTokens, b: CaptionTokens) -> int:
    if a.length != b.length:
        raise AttackError("captions of different length")
    return sum(1 for x, y in zip(a.tokens, b.tokens) if x != y)
