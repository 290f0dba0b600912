"""Retrieval metrics, attack success rate, and the cross-model transfer
protocol (adversarial images are bilinearly resized to each target's input
size; captions pass through unchanged)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import kernels
from .data import CaptionTokens, DatasetHandle
from .models.encoders import VlpModel
from .models.train import load_split_arrays, normalize_rows


class EvalError(Exception):
    pass


# attack variant -> ablation flag overrides; "pgd" is the plain-PGD baseline
# (no augmentation, final tap only, cross-modal term retained)
VARIANTS = {
    "maa": dict(use_resizing=True, use_sliding=True, use_mgsd=True),
    "no_resizing": dict(use_resizing=False, use_sliding=True, use_mgsd=True),
    "no_sliding": dict(use_resizing=True, use_sliding=False, use_mgsd=True),
    "no_rscrop": dict(use_resizing=False, use_sliding=False, use_mgsd=True),
    "no_mgsd": dict(use_resizing=True, use_sliding=True, use_mgsd=False),
    "pgd": dict(use_resizing=False, use_sliding=False, use_mgsd=False),
}


@dataclass
class RetrievalReport:
    direction: str  # "i2t" | "t2i"
    gallery_size: int
    source_model: str
    target_model: str
    clean_recall: dict = field(default_factory=dict)  # K -> percentage
    adv_recall: dict = field(default_factory=dict)
    asr: dict = field(default_factory=dict)  # K -> percentage or None (n/a)
    gallery_hash: str = ""

    def validate(self) -> None:
        for table in (self.clean_recall, self.adv_recall):
            ks = sorted(table)
            vals = [table[k] for k in ks]
            if any(not 0.0 <= v <= 100.0 for v in vals):
                raise EvalError(f"recall out of [0, 100]: {table}")
            if any(a > b + 1e-9 for a, b in zip(vals, vals[1:])):
                raise EvalError(f"recall not monotone in K: {table}")

    def to_dict(self) -> dict:
        return asdict(self)


def truth_ranks(query_embeds: np.ndarray, gallery_embeds: np.ndarray,
                ground_truth: np.ndarray) -> np.ndarray:
    """Rank (0-based) of each query's true match under cosine similarity.

    Ties broken toward the lower gallery index.
    """
    ground_truth = np.asarray(ground_truth)
    if len(set(ground_truth.tolist())) != len(ground_truth):
        raise EvalError("ground truth must be bijective")
    q = normalize_rows(np.asarray(query_embeds, dtype=np.float64))
    g = normalize_rows(np.asarray(gallery_embeds, dtype=np.float64))
    sim = q @ g.T
    order = np.argsort(-sim, axis=1, kind="stable")
    ranks = np.empty(len(q), dtype=np.int64)
    for i in range(len(q)):
        ranks[i] = int(np.nonzero(order[i] == ground_truth[i])[0][0])
    return ranks


def recall_at_k(query_embeds, gallery_embeds, ground_truth, k: int) -> float:
    if not 1 <= k <= len(gallery_embeds):
        raise EvalError(f"K={k} out of range for gallery of {len(gallery_embeds)}")
    ranks = truth_ranks(query_embeds, gallery_embeds, ground_truth)
    return float((ranks < k).mean() * 100.0)


def attack_success_rate(clean_ranks: np.ndarray, adv_ranks: np.ndarray,
                        k: int) -> float | None:
    """Among queries correct at rank K cleanly, percentage flipped by the attack.

    Returns None (not-applicable) when no query is cleanly correct.
    """
    clean_ranks = np.asarray(clean_ranks)
    adv_ranks = np.asarray(adv_ranks)
    correct = clean_ranks < k
    if not correct.any():
        return None
    flipped = correct & (adv_ranks >= k)
    return float(flipped.sum() / correct.sum() * 100.0)


def _resize_batch(images: np.ndarray, size: int) -> np.ndarray:
    if images.shape[-1] == size:
        return images
    return np.stack([kernels.bilinear_resize(im, size, size) for im in images])


def gallery_fingerprint(*embeds: np.ndarray) -> str:
    h = hashlib.sha256()
    for e in embeds:
        h.update(np.ascontiguousarray(e, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


def transfer_eval(adv_images: dict[int, np.ndarray],
                  adv_tokens: dict[int, CaptionTokens],
                  source_model: VlpModel, target_model: VlpModel,
                  handle: DatasetHandle, split: str = "test",
                  ks: tuple[int, ...] = (1, 5, 10)) -> dict[str, RetrievalReport]:
    """Evaluate one adversarial set against a target model, both directions."""
    images, tokens, indices = load_split_arrays(handle, split, target_model.input_size)
    if max(ks) > len(indices):
        raise EvalError(f"gallery of {len(indices)} too small for K={max(ks)}")
    pos = {idx: j for j, idx in enumerate(indices)}
    attacked = sorted(adv_images)
    if any(i not in pos for i in attacked):
        raise EvalError("attacked sample outside the evaluation split")

    clean_img_embs = embed_images(target_model, images)
    txt_embs = target_model.encode_text_batch(tokens)

    adv_resized = _resize_batch(
        np.stack([adv_images[i] for i in attacked]), target_model.input_size)
    adv_img_embs = embed_images(target_model, adv_resized)
    if adv_tokens:
        adv_txt_embs = target_model.encode_text_batch(
            [adv_tokens.get(i, tokens[pos[i]]) for i in attacked])
    else:
        adv_txt_embs = np.stack([txt_embs[pos[i]] for i in attacked])

    gt = np.array([pos[i] for i in attacked])
    ghash = gallery_fingerprint(clean_img_embs, txt_embs)

    reports = {}
    # I2T: (adversarial) image queries against the clean caption gallery
    clean_q = np.stack([clean_img_embs[pos[i]] for i in attacked])
    clean_ranks = truth_ranks(clean_q, txt_embs, gt)
    adv_ranks = truth_ranks(adv_img_embs, txt_embs, gt)
    reports["i2t"] = _make_report("i2t", clean_ranks, adv_ranks, len(indices), ks,
                                  source_model.name, target_model.name, ghash)
    # T2I: (adversarial) caption queries against the clean image gallery
    clean_tq = np.stack([txt_embs[pos[i]] for i in attacked])
    clean_ranks_t = truth_ranks(clean_tq, clean_img_embs, gt)
    adv_ranks_t = truth_ranks(adv_txt_embs, clean_img_embs, gt)
    reports["t2i"] = _make_report("t2i", clean_ranks_t, adv_ranks_t, len(indices), ks,
                                  source_model.name, target_model.name, ghash)
    return reports


def embed_images(model: VlpModel, images: np.ndarray) -> np.ndarray:
    embs = []
    for start in range(0, len(images), 64):
        taps, _ = model.encode_image_batch(images[start : start + 64])
        embs.append(taps[-1])
    return np.concatenate(embs)


def _make_report(direction, clean_ranks, adv_ranks, gallery_size, ks,
                 source, target, ghash) -> RetrievalReport:
    rep = RetrievalReport(direction=direction, gallery_size=gallery_size,
                          source_model=source, target_model=target,
                          gallery_hash=ghash)
    for k in ks:
        rep.clean_recall[k] = float((clean_ranks < k).mean() * 100.0)
        rep.adv_recall[k] = float((adv_ranks < k).mean() * 100.0)
        rep.asr[k] = attack_success_rate(clean_ranks, adv_ranks, k)
    rep.validate()
    return rep


def reports_to_csv(rows: list[dict], path) -> None:
    """Flat comparison table: one row per (method, seed, source, target, direction)."""
    ks = sorted({k for r in rows for k in r["report"].clean_recall})
    header = ["method", "seed", "source", "target", "direction", "gallery_hash"]
    header += [f"clean_R@{k}" for k in ks] + [f"adv_R@{k}" for k in ks]
    header += [f"ASR@{k}" for k in ks]
    lines = [",".join(header)]
    for r in rows:
        rep: RetrievalReport = r["report"]
        vals = [r["method"], str(r.get("seed", "")), rep.source_model,
                rep.target_model, rep.direction, rep.gallery_hash]
        vals += [f"{rep.clean_recall[k]:.2f}" for k in ks]
        vals += [f"{rep.adv_recall[k]:.2f}" for k in ks]
        vals += ["n/a" if rep.asr[k] is None else f"{rep.asr[k]:.2f}" for k in ks]
        lines.append(",".join(vals))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def reports_to_json(rows: list[dict], path) -> None:
    payload = [{**{k: v for k, v in r.items() if k != "report"},
                "report": r["report"].to_dict()} for r in rows]
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
