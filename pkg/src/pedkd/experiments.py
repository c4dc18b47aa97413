"""End-to-end experiment drivers. Each returns a flat report dict whose
serialization is byte-stable for a fixed config and seed (no timings)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .config import Config
from .distill import DistillData, TeacherClient, heldout_metrics, prepare_data, train_on_data
from .ensemble import train_ensemble
from .metrics import THRESHOLD_GRID, evaluate, format_kv, mean_decoded_length, tune_threshold
from .scenes import ambiguity_params, detect_attributes, generate_scenes, generate_trajectory
from .student import DEFAULT_SPECIALTIES, StudentEncoder, build_expert_bank, embed_images, predict_probs
from .trajectory import TrajData, behavior_oracle, evaluate_traj, train_traj

LIFT_FACTOR = 3.0
RECALL_FRACTION = 0.8
PARITY_TOL = 0.05
ORDER_TOL = 0.005
FUSION_GAIN = 0.2
LENGTH_TOL = 0.5


def make_teacher(cfg: Config, seed: int) -> TeacherClient:
    t = cfg.teacher
    return TeacherClient(mode=t.mode, prompt=t.prompt, omit_prob=cfg.data.omit_prob, seed=seed,
                         endpoint=t.endpoint or None, cache_path=t.cache_path or None,
                         timeout=t.timeout, max_workers=t.max_workers)


def config_lines(cfg: Config) -> dict[str, object]:
    """Flattened effective config, echoed into every report."""
    out: dict[str, object] = {"config.hash": cfg.hash()}
    for section, values in cfg.to_dict().items():
        if section == "seed":
            continue
        for key, val in values.items():
            if key == "prompt":
                continue
            out[f"config.{section}.{key}"] = ",".join(map(str, val)) if isinstance(val, list) else val
    return out


def write_report(path: str | Path, values: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_kv(values), encoding="utf-8")
    return path


def _prefixed(prefix: str, d: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in d.items()}


def detector_probs(data: DistillData, idx) -> np.ndarray:
    """Pixel-signature detector as a 0/1 scorer over the vocabulary."""
    labels = data.vocab.labels
    out = np.zeros((len(idx), len(labels)))
    for row, i in enumerate(idx):
        words = detect_attributes(data.images[i].astype(np.float64)).words()
        out[row] = [1.0 if all(w in words for w in lab.split(" ")) else 0.0 for lab in labels]
    return out


def threshold_check(probs: np.ndarray, truth: np.ndarray) -> dict[str, object]:
    refs = [np.flatnonzero(row).tolist() for row in truth]
    theta = tune_threshold(probs, refs)
    lengths = [mean_decoded_length(probs, th) for th in THRESHOLD_GRID]
    ref_len = float(np.mean([len(r) for r in refs]))
    dec_len = mean_decoded_length(probs, theta)
    monotone = all(a >= b for a, b in zip(lengths, lengths[1:]))
    return {"theta": theta, "decoded_len": dec_len, "reference_len": ref_len,
            "length_gap": abs(dec_len - ref_len), "monotone": monotone,
            "pass": bool(monotone and abs(dec_len - ref_len) <= LENGTH_TOL)}


@dataclass
class LiftResult:
    report: dict
    encoder: StudentEncoder
    data: DistillData


def distillation_lift(cfg: Config, seed: int) -> LiftResult:
    """Untrained vs distilled conv student on the default scene distribution,
    plus the detector ceiling and threshold tuning on the same held-out split."""
    dcfg = cfg.distill_config(seed)
    data = prepare_data(dcfg, make_teacher(cfg, seed))
    enc = StudentEncoder(data.C, cfg.student_config("conv"), seed=seed)
    thr = cfg.eval.threshold
    before = heldout_metrics(enc, data, thr)
    hist = train_on_data(dcfg, enc, data, seed=seed, eval_each_epoch=False)
    after = heldout_metrics(enc, data, thr)
    test = data.test_idx
    ceiling = evaluate(detector_probs(data, test), data.targets[test], data.vocab.labels, thr).as_dict()
    probs = predict_probs(enc, data.images[test])
    th = threshold_check(probs, data.targets[test])
    ratio = after["top1_f1"] / max(before["top1_f1"], 1e-12)
    recall_frac = after["top5_recall"] / max(ceiling["top5_recall"], 1e-12)
    report = {"experiment": "distillation_lift", "seed": seed, "n_train": len(data.train_idx),
              "n_test": len(test), "vocab_size": data.C, "n_params": enc.num_params(),
              "loss.first": hist.loss[0], "loss.last": hist.loss[-1],
              **_prefixed("untrained", before), **_prefixed("trained", after),
              **_prefixed("ceiling", ceiling),
              "top1_f1_ratio": ratio, "top5_recall_fraction": recall_frac,
              "pass": bool(ratio >= LIFT_FACTOR and recall_frac > RECALL_FRACTION),
              **_prefixed("threshold", th), **config_lines(cfg)}
    return LiftResult(report, enc, data)


def backbone_parity(cfg: Config, seed: int, conv: LiftResult | None = None) -> dict:
    """Attention student on the same data as the conv student of ``distillation_lift``."""
    conv = conv or distillation_lift(cfg, seed)
    data = conv.data
    dcfg = cfg.distill_config(seed)
    att = StudentEncoder(data.C, cfg.student_config("attention"), seed=seed)
    train_on_data(dcfg, att, data, seed=seed, eval_each_epoch=False)
    a = heldout_metrics(att, data, cfg.eval.threshold)
    c_bleu = conv.report["trained.bleu"]
    n_conv, n_att = conv.encoder.num_params(), att.num_params()
    gap = abs(a["bleu"] - c_bleu)
    return {"experiment": "backbone_parity", "seed": seed,
            "conv.n_params": n_conv, "attention.n_params": n_att,
            "param_ratio": max(n_conv, n_att) / min(n_conv, n_att),
            "conv.bleu": c_bleu, "attention.bleu": a["bleu"],
            "attention.top1_f1": a["top1_f1"], "bleu_gap": gap,
            "pass": bool(gap <= PARITY_TOL and max(n_conv, n_att) <= 2 * min(n_conv, n_att)),
            **config_lines(cfg)}


def ensemble_ordering(cfg: Config, seed: int) -> dict:
    """Masked-distilled specialists, then single / MoE / query heads on the frozen bank."""
    dcfg = cfg.distill_config(seed, n_scenes=cfg.data.n_expert_scenes, epochs=cfg.distill.expert_epochs)
    data = prepare_data(dcfg, make_teacher(cfg, seed))
    seeds = [rngmod.derive_seed(seed, "expert", i) for i in range(len(DEFAULT_SPECIALTIES))]
    bank = build_expert_bank(seeds, DEFAULT_SPECIALTIES, data, dcfg, cfg.student_config("conv"))
    E = bank.embed_all(data.images)
    ecfg = cfg.ensemble_config()
    out: dict[str, object] = {"experiment": "ensemble_ordering", "seed": seed, "n_experts": bank.N}
    singles = []
    for i, spec in enumerate(bank.specialties):
        _, h = train_ensemble(ecfg, bank, "single", data, seed=seed, E=E, expert_index=i)
        out[f"single{i}.specialty"] = "+".join(spec)
        out[f"single{i}.bleu"] = h.heldout[-1]["bleu"]
        singles.append(h.heldout[-1]["bleu"])
    for mech in ("moe", "query"):
        _, h = train_ensemble(ecfg, bank, mech, data, seed=seed, E=E)
        out[f"{mech}.bleu"] = h.heldout[-1]["bleu"]
        out[f"{mech}.top1_f1"] = h.heldout[-1]["top1_f1"]
    out["best_single.bleu"] = max(singles)
    out.update(config_lines(cfg))
    return out


def trajectory_fusion(cfg: Config, seed: int) -> dict:
    """Baseline vs embedding-fused RNN on the ambiguity split, with the behavior oracle."""
    params = ambiguity_params()
    scenes = generate_scenes(rngmod.derive_seed(seed, "traj-dataset"), cfg.data.n_traj_scenes, params)
    dcfg = cfg.distill_config(seed, n_scenes=cfg.data.n_traj_scenes, epochs=cfg.distill.traj_epochs)
    data = prepare_data(dcfg, make_teacher(cfg, seed), scenes=scenes)
    enc = StudentEncoder(data.C, cfg.student_config("conv"), seed=seed)
    train_on_data(dcfg, enc, data, seed=seed, eval_each_epoch=False)
    enc.freeze()
    samples = [generate_trajectory(s) for s in data.scenes]
    train = TrajData.from_samples([samples[i] for i in data.train_idx])
    test = TrajData.from_samples([samples[i] for i in data.test_idx])
    E_train = embed_images(enc, data.images[data.train_idx])
    E_test = embed_images(enc, data.images[data.test_idx])
    tcfg = cfg.traj_config()
    base = train_traj(tcfg, train, "baseline", seed=seed)
    fused = train_traj(tcfg, train, "fusion", E=E_train, seed=seed)
    rb = evaluate_traj(base.predict(test), test)
    rf = evaluate_traj(fused.predict(test, E_test), test)
    ro = evaluate_traj(behavior_oracle(test), test)
    ok = (rf["ade"] <= (1 - FUSION_GAIN) * rb["ade"] and rf["fde"] <= (1 - FUSION_GAIN) * rb["fde"]
          and rf["ade"] > ro["ade"] and rf["fde"] > ro["fde"])
    return {"experiment": "trajectory_fusion", "seed": seed, "n_train": len(train), "n_test": len(test),
            "baseline.loss.first": base.loss[0], "baseline.loss.last": base.loss[-1],
            "fusion.loss.first": fused.loss[0], "fusion.loss.last": fused.loss[-1],
            "baseline.ade": rb["ade"], "baseline.fde": rb["fde"],
            "fusion.ade": rf["ade"], "fusion.fde": rf["fde"],
            "oracle.ade": ro["ade"], "oracle.fde": ro["fde"],
            "pass": bool(ok), **config_lines(cfg)}


def ensemble_summary(reports: list[dict]) -> dict:
    """Mean BLEU per mechanism over seeds and the ordering verdict."""
    q = float(np.mean([r["query.bleu"] for r in reports]))
    m = float(np.mean([r["moe.bleu"] for r in reports]))
    s = float(np.mean([r["best_single.bleu"] for r in reports]))
    return {"seeds": ",".join(str(r["seed"]) for r in reports), "query.bleu": q, "moe.bleu": m,
            "best_single.bleu": s, "pass": bool(q >= m - ORDER_TOL and m >= s - ORDER_TOL)}
