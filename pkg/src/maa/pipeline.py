"""Run orchestration: data -> train -> attack -> eval -> ablate -> report.

Artifact layout under <output_root>:

    dataset/                     images, manifest, vocab
    models/<name>.npz            trained checkpoints (+ training log)
    attacks/<method>_seed<k>/    adv_images.npz, adv_captions.json,
                                 loss_traces.csv, run_meta.json
    reports/                     JSON + CSV retrieval/transfer/ablation tables
"""

from __future__ import annotations

import dataclasses
import json
import subprocess
from pathlib import Path

import numpy as np

from . import attack as atk
from . import data as datamod
from . import evaluation as ev
from .config import RunConfig
from .models import encoders as enc
from .models import train as trainmod

PKG_VERSION = "0.1.0"


class PipelineError(Exception):
    pass


def dataset_dir(cfg: RunConfig) -> Path:
    return cfg.output_root / "dataset"


def model_path(cfg: RunConfig, name: str) -> Path:
    return cfg.output_root / "models" / f"{name}.npz"


def attack_dir(cfg: RunConfig, method: str, seed: int) -> Path:
    return cfg.output_root / "attacks" / f"{method}_seed{seed}"


def reports_dir(cfg: RunConfig) -> Path:
    return cfg.output_root / "reports"


def _code_version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except Exception:
        pass
    return f"maa-{PKG_VERSION}"


def _write_meta(cfg: RunConfig, directory: Path, extra: dict | None = None) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"config": cfg.to_dict(), "code_version": _code_version(),
            "seed": cfg.seed, **(extra or {})}
    (directory / "run_meta.json").write_text(json.dumps(meta, indent=2))


def require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise PipelineError(f"missing prerequisite {path}; run `maa {hint}` first")
    return path


# ---------------------------------------------------------------------------
# verbs

def run_gen_data(cfg: RunConfig, log=print) -> datamod.DatasetHandle:
    root = dataset_dir(cfg)
    handle = datamod.generate_dataset(cfg.dataset, root)
    _write_meta(cfg, root)
    log(f"generated {handle.num_pairs} pairs under {root}")
    return handle


def open_dataset(cfg: RunConfig) -> datamod.DatasetHandle:
    require(dataset_dir(cfg) / "manifest.jsonl", "gen-data")
    return datamod.open_dataset(dataset_dir(cfg))


def run_train(cfg: RunConfig, log=print) -> dict[str, enc.VlpModel]:
    handle = open_dataset(cfg)
    (cfg.output_root / "models").mkdir(parents=True, exist_ok=True)
    models = {}
    for name, spec in cfg.models.items():
        overrides = {k: v for k, v in spec.items() if k not in ("arch", "train")}
        tspec = dataclasses.replace(cfg.train, **spec.get("train", {}))
        model = trainmod.train_contrastive(tspec, handle, spec["arch"], name=name,
                                           log=log, **overrides)
        enc.save_model(model, model_path(cfg, name))
        log(f"[{name}] best val R@1 = {model.best_val_r1:.3f} "
            f"-> {model_path(cfg, name)}")
        models[name] = model
    _write_meta(cfg, cfg.output_root / "models")
    return models


def load_trained(cfg: RunConfig, name: str) -> enc.VlpModel:
    return enc.load_model(require(model_path(cfg, name), "train"))


def attacked_indices(cfg: RunConfig, handle, subset: int | None = None) -> list[int]:
    """Deterministic attacked subset, shared by every method/seed (gallery fixity)."""
    pool = handle.indices(cfg.eval.split)
    n = min(subset or cfg.eval.attack_subset, len(pool))
    rng = np.random.default_rng(cfg.seed)
    picks = rng.choice(len(pool), size=n, replace=False)
    return sorted(np.array(pool)[picks].tolist())


def build_lexicon(handle) -> atk.CandidateLexicon:
    spec = handle.spec
    return atk.build_lexicon(sorted(spec.color_vocab), sorted(spec.shape_vocab),
                             sorted(spec.layout_vocab))


def audit_budget(x_clean: np.ndarray, x_adv: np.ndarray, eps: float) -> None:
    linf = float(np.abs(x_adv - x_clean).max())
    if linf > eps + 1e-6:
        raise PipelineError(f"budget violation: Linf {linf} > eps {eps}")
    if x_adv.min() < -1e-12 or x_adv.max() > 1.0 + 1e-12:
        raise PipelineError(f"pixel range violation: [{x_adv.min()}, {x_adv.max()}]")


def run_attack(cfg: RunConfig, method: str = "maa", seed: int | None = None,
               subset: int | None = None, with_text: bool = True,
               log=print) -> Path:
    if method not in ev.VARIANTS:
        raise PipelineError(f"unknown attack method {method!r}; "
                            f"choose from {sorted(ev.VARIANTS)}")
    handle = open_dataset(cfg)
    source = load_trained(cfg, "source")
    acfg = dataclasses.replace(cfg.attack, **ev.VARIANTS[method])
    if seed is not None:
        acfg = dataclasses.replace(acfg, seed=seed)
    indices = attacked_indices(cfg, handle, subset)
    lexicon = build_lexicon(handle)

    out = attack_dir(cfg, method, acfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    adv_arrays = {}
    adv_caps = {}
    trace_lines = ["sample,iteration,L1,L2,L_img"]
    for idx in indices:
        image, tokens = datamod.load_pair(handle, idx)
        image = atk_input_resize(image, source.input_size)
        pair = atk.pgd_attack(source, image, tokens, acfg, sample_index=idx)
        audit_budget(image, pair.adv_image, acfg.epsilon_img)
        adv_arrays[str(idx)] = pair.adv_image
        if with_text and acfg.epsilon_txt > 0:
            adv_tok = atk.attack_text(source, tokens, image, lexicon, acfg, handle.vocab)
            if atk.word_edit_distance(adv_tok, tokens) > acfg.epsilon_txt:
                raise PipelineError(f"text budget violation on sample {idx}")
            adv_caps[str(idx)] = adv_tok.words
        for it, (l1, l2, li) in enumerate(pair.loss_trace):
            trace_lines.append(f"{idx},{it},{l1:.6f},{l2:.6f},{li:.6f}")
    np.savez(out / "adv_images.npz", **adv_arrays)
    (out / "adv_captions.json").write_text(json.dumps(adv_caps, indent=2))
    (out / "loss_traces.csv").write_text("\n".join(trace_lines) + "\n")
    _write_meta(cfg, out, {"method": method, "attack_seed": acfg.seed,
                           "config_hash": acfg.hash(), "indices": indices})
    log(f"[{method} seed={acfg.seed}] attacked {len(indices)} samples -> {out}")
    return out


def atk_input_resize(image: np.ndarray, size: int) -> np.ndarray:
    from . import kernels
    if image.shape[-1] == size:
        return image
    return kernels.bilinear_resize(image, size, size)


def load_adv_set(cfg: RunConfig, method: str, seed: int):
    out = attack_dir(cfg, method, seed)
    require(out / "adv_images.npz", "attack")
    with np.load(out / "adv_images.npz") as z:
        adv_images = {int(k): z[k] for k in z.files}
    caps = json.loads((out / "adv_captions.json").read_text())
    return adv_images, {int(k): v for k, v in caps.items()}


def evaluate_adv_set(cfg: RunConfig, method: str, seed: int,
                     models: dict | None = None) -> list[dict]:
    handle = open_dataset(cfg)
    if models is None:
        models = {name: load_trained(cfg, name) for name in cfg.models}
    adv_images, adv_caps = load_adv_set(cfg, method, seed)
    adv_tokens = {i: datamod.tokenize(w, handle.vocab) for i, w in adv_caps.items()}
    source = models["source"]
    rows = []
    for tname, target in models.items():
        reports = ev.transfer_eval(adv_images, adv_tokens, source, target, handle,
                                   split=cfg.eval.split, ks=tuple(cfg.eval.recall_ks))
        for direction, rep in reports.items():
            rows.append({"method": method, "seed": seed, "target_role": tname,
                         "direction": direction, "report": rep})
    return rows


def run_eval(cfg: RunConfig, method: str = "maa", seed: int | None = None,
             log=print) -> list[dict]:
    seed = cfg.attack.seed if seed is None else seed
    rows = evaluate_adv_set(cfg, method, seed)
    rdir = reports_dir(cfg)
    rdir.mkdir(parents=True, exist_ok=True)
    ev.reports_to_json(rows, rdir / f"eval_{method}_seed{seed}.json")
    ev.reports_to_csv(rows, rdir / f"eval_{method}_seed{seed}.csv")
    _write_meta(cfg, rdir)
    for r in rows:
        rep = r["report"]
        log(f"[{method}] {rep.source_model}->{rep.target_model} {rep.direction}: "
            f"clean R@1 {rep.clean_recall[1]:.1f} adv R@1 {rep.adv_recall[1]:.1f} "
            f"ASR@1 {fmt_asr(rep.asr[1])}")
    return rows


def fmt_asr(v) -> str:
    return "n/a" if v is None else f"{v:.1f}"


ABLATION_METHODS = ["maa", "no_resizing", "no_sliding", "no_rscrop", "no_mgsd", "pgd"]


def run_ablate(cfg: RunConfig, log=print) -> list[dict]:
    models = {name: load_trained(cfg, name) for name in cfg.models}
    all_rows = []
    hashes: dict[str, set] = {}
    for seed in cfg.eval.seeds:
        for method in ABLATION_METHODS:
            run_attack(cfg, method=method, seed=seed, subset=cfg.eval.trend_subset,
                       log=log)
            rows = evaluate_adv_set(cfg, method, seed, models)
            for r in rows:
                hashes.setdefault(r["target_role"], set()).add(
                    r["report"].gallery_hash)
            all_rows.extend(rows)
    drift = {role: hs for role, hs in hashes.items() if len(hs) != 1}
    if drift:
        raise PipelineError(f"gallery drift across ablation runs: {drift}")
    rdir = reports_dir(cfg)
    rdir.mkdir(parents=True, exist_ok=True)
    ev.reports_to_json(all_rows, rdir / "ablation.json")
    ev.reports_to_csv(all_rows, rdir / "ablation.csv")
    _write_meta(cfg, rdir)
    log("ablation suite: %d report rows, gallery hashes %s" % (
        len(all_rows),
        {role: hs.pop() for role, hs in sorted(hashes.items())}))
    return all_rows


def run_report(cfg: RunConfig, log=print) -> Path:
    """Combine ablation rows into a per-method table averaged over seeds."""
    rdir = reports_dir(cfg)
    src = require(rdir / "ablation.json", "ablate")
    rows = json.loads(src.read_text())
    agg: dict[tuple, list] = {}
    for r in rows:
        key = (r["method"], r["target_role"], r["direction"])
        asr1 = r["report"]["asr"].get("1")
        if asr1 is not None:
            agg.setdefault(key, []).append(asr1)
    lines = ["method,target,direction,mean_ASR@1,n_seeds"]
    for (method, target, direction), vals in sorted(agg.items()):
        lines.append(f"{method},{target},{direction},{np.mean(vals):.2f},{len(vals)}")
    out = rdir / "ablation_summary.csv"
    out.write_text("\n".join(lines) + "\n")
    log(f"wrote {out}")
    return out
