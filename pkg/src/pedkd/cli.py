"""``pedkd`` command line: each subcommand reads and writes artifacts inside one
run directory, ``<out>/<config hash>-s<seed>``."""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import rng as rngmod
from .autograd import ContractError
from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, ConfigError, load_config
from .distill import CacheMiss, DistillData, assemble_data, heldout_metrics, precollect, train_on_data
from .ensemble import EnsembleModel, ensemble_heldout, train_ensemble
from .gradsuite import TOLERANCE, run_gradient_suite
from .labels import Vocabulary, build_vocabulary, read_corpus, write_corpus
from .metrics import evaluate, format_kv, parse_kv
from .scenes import (SceneParams, ambiguity_params, export_raw, generate_scene, generate_scenes,
                     generate_trajectory, import_raw, read_trajectories, write_manifest, write_trajectories)
from .student import (DEFAULT_SPECIALTIES, ExpertBank, StudentEncoder, build_expert_bank, embed_images,
                      predict_probs)
from .trajectory import (EmbeddingScaler, RnnPredictor, TrajData, TrajModel, behavior_oracle,
                         evaluate_traj, train_traj)

log = logging.getLogger("pedkd")

COMMANDS = ("gen-data", "mine-labels", "train-distill", "train-experts", "train-ensemble",
            "eval-text", "train-traj", "eval-traj", "gradcheck", "report")
EXPERIMENTS = ("distill-lift", "backbone-parity", "ensemble-order", "trajectory-fusion")


class RunExists(ContractError):
    pass


class RunDir:
    def __init__(self, root: Path, force: bool):
        self.root = root
        self.force = force

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    def claim(self, *parts: str) -> Path:
        """Target for a new artifact; refuses to replace an existing one unless forced."""
        p = self.path(*parts)
        if p.exists():
            if not self.force:
                raise RunExists(f"{p} already exists; rerun with --force to overwrite")
            if p.is_dir():
                shutil.rmtree(p)
            else:
                p.unlink()
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def require(self, step: str, *parts: str) -> Path:
        p = self.path(*parts)
        if not p.exists():
            raise ContractError(f"missing {p}; run `pedkd {step}` first")
        return p


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config (defaults apply to missing keys)")
    common.add_argument("--seed", type=_seed, help="overrides the config's global seed")
    common.add_argument("--out", type=Path, default=Path("runs"), help="parent of run directories")
    common.add_argument("--force", action="store_true", help="overwrite existing artifacts")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pedkd", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("gen-data", parents=[common], help="render scenes, annotate, sample trajectories")
    p = sub.add_parser("mine-labels", parents=[common], help="mine the label vocabulary")
    p.add_argument("--corpus", type=Path, help="annotation corpus (image_id<TAB>text); default: run data")
    p = sub.add_parser("train-distill", parents=[common], help="distil a student encoder")
    p.add_argument("--backbone", choices=("conv", "attention"))
    sub.add_parser("train-experts", parents=[common], help="distil the specialist expert bank")
    p = sub.add_parser("train-ensemble", parents=[common], help="train MoE / query ensembles")
    p.add_argument("--mechanism", choices=("moe", "query", "single", "all"), default="all")
    p = sub.add_parser("eval-text", parents=[common], help="held-out label metrics and BLEU")
    p.add_argument("--backbone", choices=("conv", "attention"))
    sub.add_parser("train-traj", parents=[common], help="train baseline and fusion trajectory models")
    sub.add_parser("eval-traj", parents=[common], help="ADE/FDE of trajectory models")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p = sub.add_parser("report", parents=[common], help="collect reports or run an experiment")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    return parser


# ------------------------------------------------------------------ helpers

def _write_config(cfg: Config, run: RunDir) -> None:
    p = run.path("config.yaml")
    if not p.exists():
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(cfg.to_yaml(), encoding="utf-8")


def _save_report(run: RunDir, name: str, values: dict, cfg: Config) -> Path:
    path = run.claim("reports", f"{name}.txt")
    ex.write_report(path, {"seed": cfg.seed, **values, **ex.config_lines(cfg)})
    print(f"wrote {path}")
    return path


def _write_split(run: RunDir, split: str, scenes, anns, params) -> None:
    write_manifest(run.claim(split, "scenes.tsv"), [s.seed for s in scenes], params)
    export_raw([s.image for s in scenes], run.claim(split, "images.f32"), run.claim(split, "images.idx"))
    write_corpus(anns, run.claim(split, "annotations.tsv"))


def _load_split(run: RunDir, cfg: Config, split: str, vocab: Vocabulary | None) -> DistillData:
    images = np.stack(import_raw(run.require("gen-data", split, "images.f32"),
                                 run.require("gen-data", split, "images.idx")))
    anns = read_corpus(run.require("gen-data", split, "annotations.tsv"))
    return assemble_data(images, anns, cfg.data.holdout_frac, cfg.vocab.max_size, vocab=vocab)


def _main_data(run: RunDir, cfg: Config) -> DistillData:
    vocab = Vocabulary.load(run.require("mine-labels", "vocab.tsv"))
    return _load_split(run, cfg, "data", vocab)


def _load_student(run: RunDir, cfg: Config, name: str, n_classes: int, backbone: str) -> StudentEncoder:
    enc = StudentEncoder(n_classes, cfg.student_config(backbone), seed=cfg.seed)
    step = "train-traj" if name.startswith("traj") else "train-distill"
    return load_checkpoint(run.require(step, name), enc, config_hash=cfg.hash())


def _load_bank(run: RunDir, cfg: Config, data: DistillData) -> ExpertBank:
    experts = []
    for i in range(len(DEFAULT_SPECIALTIES)):
        enc = StudentEncoder(data.C, cfg.student_config("conv"), seed=cfg.seed)
        experts.append(load_checkpoint(run.require("train-experts", "experts", f"expert{i}"), enc,
                                       config_hash=cfg.hash()))
    return ExpertBank(experts, [tuple(s) for s in DEFAULT_SPECIALTIES])


# ----------------------------------------------------------------- commands

def cmd_gen_data(cfg: Config, run: RunDir, args) -> int:
    teacher = ex.make_teacher(cfg, cfg.seed)
    scenes = generate_scenes(rngmod.derive_seed(cfg.seed, "dataset"), cfg.data.n_scenes)
    anns = precollect(teacher, [(s.image_id, s) for s in scenes])
    traj_params = ambiguity_params()
    tscenes = generate_scenes(rngmod.derive_seed(cfg.seed, "traj-dataset"), cfg.data.n_traj_scenes, traj_params)
    tanns = precollect(teacher, [(s.image_id, s) for s in tscenes])
    _write_split(run, "data", scenes, anns, SceneParams())
    _write_split(run, "traj", tscenes, tanns, traj_params)
    write_trajectories(run.claim("traj", "trajectories.csv"), [generate_trajectory(s) for s in tscenes])
    print(f"wrote {len(scenes)} scenes and {len(tscenes)} trajectory scenes under {run.root}")
    return 0


def cmd_mine_labels(cfg: Config, run: RunDir, args) -> int:
    if args.corpus is not None:
        corpus = read_corpus(args.corpus)
    else:
        anns = [a for a in read_corpus(run.require("gen-data", "data", "annotations.tsv")) if a.text.strip()]
        n_train = len(anns) - int(round(len(anns) * cfg.data.holdout_frac))
        corpus = anns[:n_train]
    vocab = build_vocabulary(corpus, cfg.vocab.max_size)
    path = run.claim("vocab.tsv")
    vocab.save(path)
    print(f"wrote {vocab.C} labels to {path}")
    return 0


def cmd_train_distill(cfg: Config, run: RunDir, args) -> int:
    backbone = args.backbone or cfg.student.backbone
    data = _main_data(run, cfg)
    ckpt = run.claim(f"student-{backbone}")
    enc = StudentEncoder(data.C, cfg.student_config(backbone), seed=cfg.seed)
    hist = train_on_data(cfg.distill_config(), enc, data, eval_each_epoch=True)
    save_checkpoint(enc, ckpt, cfg.hash())
    values = {"backbone": backbone, "n_params": enc.num_params(), "vocab_size": data.C}
    for i, (loss, held) in enumerate(zip(hist.loss, hist.heldout), 1):
        values[f"epoch{i}.loss"] = loss
        values[f"epoch{i}.bleu"] = held["bleu"]
    _save_report(run, f"train-distill-{backbone}", values, cfg)
    return 0


def cmd_train_experts(cfg: Config, run: RunDir, args) -> int:
    data = _main_data(run, cfg)
    targets = [run.claim("experts", f"expert{i}") for i in range(len(DEFAULT_SPECIALTIES))]
    seeds = [rngmod.derive_seed(cfg.seed, "expert", i) for i in range(len(DEFAULT_SPECIALTIES))]
    dcfg = cfg.distill_config(epochs=cfg.distill.expert_epochs)
    bank = build_expert_bank(seeds, DEFAULT_SPECIALTIES, data, dcfg, cfg.student_config("conv"))
    values = {}
    for i, (enc, spec, mask, target) in enumerate(zip(bank.experts, bank.specialties, bank.label_masks, targets)):
        save_checkpoint(enc, target, cfg.hash())
        values[f"expert{i}.specialty"] = "+".join(spec)
        values[f"expert{i}.bleu"] = heldout_metrics(enc, data, cfg.eval.threshold, mask)["bleu"]
    _save_report(run, "train-experts", values, cfg)
    return 0


def _ensemble_runs(mechanism: str, n: int) -> list[tuple[str, str, int]]:
    runs = []
    if mechanism in ("single", "all"):
        runs += [(f"single{i}", "single", i) for i in range(n)]
    runs += [(m, m, 0) for m in ("moe", "query") if mechanism in (m, "all")]
    return runs


def cmd_train_ensemble(cfg: Config, run: RunDir, args) -> int:
    data = _main_data(run, cfg)
    bank = _load_bank(run, cfg, data)
    E = bank.embed_all(data.images)
    runs = _ensemble_runs(args.mechanism, bank.N)
    targets = [run.claim("ensemble", name) for name, _, _ in runs]
    values = {}
    for (name, mech, idx), target in zip(runs, targets):
        model, hist = train_ensemble(cfg.ensemble_config(), bank, mech, data, seed=cfg.seed, E=E,
                                     expert_index=idx)
        save_checkpoint(model, target, cfg.hash())
        values[f"{name}.loss.last"] = hist.loss[-1]
        values[f"{name}.bleu"] = hist.heldout[-1]["bleu"]
    _save_report(run, f"train-ensemble-{args.mechanism}", values, cfg)
    return 0


def cmd_eval_text(cfg: Config, run: RunDir, args) -> int:
    backbone = args.backbone or cfg.student.backbone
    data = _main_data(run, cfg)
    enc = _load_student(run, cfg, f"student-{backbone}", data.C, backbone)
    test = data.test_idx
    probs = predict_probs(enc, data.images[test])
    rep = evaluate(probs, data.targets[test], data.vocab.labels, cfg.eval.threshold, tuple(cfg.eval.ks))
    values = {f"student.{k}": v for k, v in rep.as_dict().items()}
    values.update({f"threshold.{k}": v for k, v in ex.threshold_check(probs, data.targets[test]).items()})
    ens_dir = run.path("ensemble")
    if ens_dir.is_dir():
        bank = _load_bank(run, cfg, data)
        E = bank.embed_all(data.images)
        for d in sorted(p for p in ens_dir.iterdir() if p.is_dir()):
            mech = "single" if d.name.startswith("single") else d.name
            idx = int(d.name[6:]) if mech == "single" else 0
            model = EnsembleModel(mech, bank.N, bank.embed_dim, data.C, cfg.ensemble_config(), cfg.seed, idx)
            load_checkpoint(d, model, config_hash=cfg.hash())
            held = ensemble_heldout(model, data, E, cfg.eval.threshold)
            values[f"{d.name}.bleu"] = held["bleu"]
            values[f"{d.name}.top1_f1"] = held["top1_f1"]
    _save_report(run, f"eval-text-{backbone}", values, cfg)
    print(rep.to_table())
    return 0


def _traj_data(run: RunDir, cfg: Config):
    data = _load_split(run, cfg, "traj", None)
    samples = read_trajectories(run.require("gen-data", "traj", "trajectories.csv"))
    anns = read_corpus(run.require("gen-data", "traj", "annotations.tsv"))
    by_id = {f"{s.scene_seed:016x}": s for s in samples}
    params = ambiguity_params()
    # the CSV format carries no behavior column; the scene seed recovers it
    kept = [by_id[a.image_id] for a in anns if a.text.strip()]
    kept = [replace(s, behavior=generate_scene(s.scene_seed, params).truth.behavior) for s in kept]
    train = TrajData.from_samples([kept[i] for i in data.train_idx])
    test = TrajData.from_samples([kept[i] for i in data.test_idx])
    return data, train, test


def cmd_train_traj(cfg: Config, run: RunDir, args) -> int:
    data, train, _ = _traj_data(run, cfg)
    targets = {k: run.claim("traj-models", k) for k in ("encoder", "baseline", "fusion", "scaler")}
    data.vocab.save(run.claim("traj-models", "vocab.tsv"))
    enc = StudentEncoder(data.C, cfg.student_config("conv"), seed=cfg.seed)
    train_on_data(cfg.distill_config(epochs=cfg.distill.traj_epochs), enc, data, eval_each_epoch=False)
    enc.freeze()
    E = embed_images(enc, data.images[data.train_idx])
    base = train_traj(cfg.traj_config(), train, "baseline", seed=cfg.seed)
    fused = train_traj(cfg.traj_config(), train, "fusion", E=E, seed=cfg.seed)
    save_checkpoint(enc, targets["encoder"], cfg.hash())
    save_checkpoint(base.net, targets["baseline"], cfg.hash())
    save_checkpoint(fused.net, targets["fusion"], cfg.hash())
    save_checkpoint({"mean": fused.scaler.mean, "std": fused.scaler.std}, targets["scaler"], cfg.hash())
    _save_report(run, "train-traj", {"baseline.loss.first": base.loss[0], "baseline.loss.last": base.loss[-1],
                                     "fusion.loss.first": fused.loss[0], "fusion.loss.last": fused.loss[-1]}, cfg)
    return 0


def cmd_eval_traj(cfg: Config, run: RunDir, args) -> int:
    data, _, test = _traj_data(run, cfg)
    vocab = Vocabulary.load(run.require("train-traj", "traj-models", "vocab.tsv"))
    enc = StudentEncoder(vocab.C, cfg.student_config("conv"), seed=cfg.seed)
    load_checkpoint(run.require("train-traj", "traj-models", "encoder"), enc, config_hash=cfg.hash())
    t = cfg.trajectory
    nets = {}
    for mode in ("baseline", "fusion"):
        net = RnnPredictor(mode, enc.embed_dim if mode == "fusion" else 0, t.hidden, t.layers, cfg.seed)
        nets[mode] = load_checkpoint(run.require("train-traj", "traj-models", mode), net, config_hash=cfg.hash())
    sc = load_checkpoint(run.require("train-traj", "traj-models", "scaler"), config_hash=cfg.hash())
    E = embed_images(enc, data.images[data.test_idx])
    values = {}
    for name, model, e in (("baseline", TrajModel(nets["baseline"]), None),
                           ("fusion", TrajModel(nets["fusion"], EmbeddingScaler(sc["mean"], sc["std"])), E)):
        values.update({f"{name}.{k}": v for k, v in evaluate_traj(model.predict(test, e), test).items()})
    values.update({f"oracle.{k}": v for k, v in evaluate_traj(behavior_oracle(test), test).items()})
    _save_report(run, "eval-traj", values, cfg)
    print(format_kv(values), end="")
    return 0


def cmd_gradcheck(cfg: Config, run: RunDir, args) -> int:
    results = run_gradient_suite(seed=cfg.seed)
    values = {}
    ok = True
    for name, (rep, _) in results.items():
        passed = rep.passed(TOLERANCE)
        ok &= passed
        values[f"{name}.max_rel_error"] = rep.max_rel_error
        values[f"{name}.n_checked"] = rep.n_checked
        values[f"{name}.pass"] = passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:24s} max rel err {rep.max_rel_error:.3e}")
    values["pass"] = ok
    _save_report(run, "gradcheck", values, cfg)
    return 0 if ok else 1


def cmd_report(cfg: Config, run: RunDir, args) -> int:
    if args.experiment:
        fn = {"distill-lift": lambda: ex.distillation_lift(cfg, cfg.seed).report,
              "backbone-parity": lambda: ex.backbone_parity(cfg, cfg.seed),
              "ensemble-order": lambda: ex.ensemble_ordering(cfg, cfg.seed),
              "trajectory-fusion": lambda: ex.trajectory_fusion(cfg, cfg.seed)}[args.experiment]
        path = run.claim("experiments", f"{args.experiment}.txt")
        report = fn()
        ex.write_report(path, report)
        print(f"{'PASS' if report['pass'] else 'FAIL'}  {args.experiment}  ({path})")
        return 0
    reports = sorted(run.require("any training command", "reports").glob("*.txt"))
    reports += sorted(run.path("experiments").glob("*.txt"))
    lines = []
    for p in reports:
        kv = parse_kv(p.read_text(encoding="utf-8"))
        lines.append(f"[{p.stem}]")
        lines += [f"{k}={v}" for k, v in kv.items() if not k.startswith("config.")]
        lines.append("")
    out = run.claim("report.txt")
    out.write_text("\n".join(lines), encoding="utf-8")
    print("\n".join(lines))
    return 0


HANDLERS = {
    "gen-data": cmd_gen_data, "mine-labels": cmd_mine_labels, "train-distill": cmd_train_distill,
    "train-experts": cmd_train_experts, "train-ensemble": cmd_train_ensemble, "eval-text": cmd_eval_text,
    "train-traj": cmd_train_traj, "eval-traj": cmd_eval_traj, "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        run = RunDir(args.out / f"{cfg.hash()}-s{cfg.seed}", args.force)
        _write_config(cfg, run)
        return HANDLERS[args.command](cfg, run, args)
    except (ContractError, ConfigError, CacheMiss, OSError, ValueError) as exc:
        print(f"pedkd {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
