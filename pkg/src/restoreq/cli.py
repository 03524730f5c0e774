"""Command-line entry point: ``restoreq {synth,train,score,erc,det}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import evaluation as ev
from .checkpoint import save_checkpoint
from .config import MEASURES, RunConfig, load_config
from .errors import ConfigError, DivergenceError, EvaluationError, RestoreQError
from .imaging import load_face, load_manifest
from .model import build_discriminator, build_generator
from .plotting import plot_det, plot_erc
from .scoring import load_models, read_scores_csv, score_corpus, write_scores_csv
from .synth import write_synthetic_corpus
from .training import make_training_pairs, train_stage1, train_stage2

log = logging.getLogger("restoreq")

EXIT_ERROR = 1
EXIT_DIVERGED = 3
TERTILES = ("low", "medium", "high")


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    text = cfg.source_text or yaml.safe_dump({"seed": cfg.seed}, sort_keys=True)
    (out / "config.yaml").write_text(text)
    return out


def _manifest(cfg: RunConfig, override=None):
    path = Path(override) if override else cfg.manifest
    if path is None:
        raise ConfigError("no manifest given (config key 'manifest' or --manifest)")
    if not Path(path).is_file():
        raise ConfigError(f"manifest not found: {path}")
    return load_manifest(path)


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(cfg: RunConfig, args) -> int:
    out = _prepare_out(cfg)
    manifest = write_synthetic_corpus(out, cfg.synth.n_subjects, cfg.synth.n_variants, cfg.seed)
    n_var = sum(len(s.variants) for s in manifest.subjects)
    print(f"wrote {len(manifest.subjects)} anchors and {n_var} variants to {out}")
    if len(manifest.subjects) < 2:
        print("note: single-subject corpus cannot provide non-mated pairs", file=sys.stderr)
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    manifest = _manifest(cfg, args.manifest)
    out = _prepare_out(cfg)
    tcfg = cfg.training
    pairs = make_training_pairs(manifest)
    anchors = np.stack([load_face(manifest.resolve(s.anchor)) for s in manifest.subjects])
    log.info("stage 1: %d pairs, %d iterations", len(pairs), tcfg.stage1_iterations)
    g, log1 = train_stage1(build_generator(seed=tcfg.seed), pairs, tcfg)
    log.info("stage 2: %d iterations", tcfg.stage2_iterations)
    g, d, log2 = train_stage2(g, build_discriminator(seed=tcfg.seed + 1), pairs, anchors, tcfg)
    meta = {"trained_stages": [1, 2], "training": tcfg.to_dict()}
    g_path = cfg.generator or out / "generator.ckpt"
    d_path = cfg.discriminator or out / "discriminator.ckpt"
    save_checkpoint(g, g_path, meta)
    save_checkpoint(d, d_path, meta)
    log1.merged(log2).write_csv(out / "training_log.csv")
    (out / "training_config.json").write_text(json.dumps(tcfg.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"stage-1 loss {log1.stage1_loss[0]:.4f} -> {log1.stage1_loss[-1]:.4f}; checkpoints in {Path(g_path).parent}")
    return 0


def _checkpoint_paths(cfg, args):
    g = Path(args.generator) if args.generator else cfg.generator or cfg.output_dir / "generator.ckpt"
    d = Path(args.discriminator) if args.discriminator else cfg.discriminator or cfg.output_dir / "discriminator.ckpt"
    for p in (g, d):
        if not Path(p).is_file():
            raise ConfigError(f"checkpoint not found: {p}")
    return g, d


def cmd_score(cfg: RunConfig, args) -> int:
    g_path, d_path = _checkpoint_paths(cfg, args)
    g, d = load_models(g_path, d_path)
    source = args.images if args.images else _manifest(cfg, args.manifest)
    out = _prepare_out(cfg)
    rows = score_corpus(g, d, source, cfg.ssim, dump_dir=out / "restored" if args.dump_restored else None)
    write_scores_csv(rows, out / "scores.csv")
    errors = sum(1 for r in rows if r.report is None)
    print(f"scored {len(rows) - errors} images ({errors} errors) -> {out / 'scores.csv'}")
    return 0


def _similarities(cfg: RunConfig, args, out: Path) -> list[ev.VerificationPair]:
    if args.similarities:
        return ev.read_similarities_csv(args.similarities)
    manifest = _manifest(cfg, args.manifest)
    pairs = ev.build_pairs(manifest, cfg.evaluation.n_nonmated_per_image, cfg.evaluation.pair_seed)
    faces = {i: load_face(manifest.resolve(i)) for i in manifest.image_ids()}
    pairs = ev.default_comparator().score_pairs(pairs, faces)
    ev.write_similarities_csv(pairs, out / "similarities.csv")
    return pairs


def _scores_path(cfg, args) -> Path:
    path = Path(args.scores) if args.scores else cfg.output_dir / "scores.csv"
    if not path.is_file():
        raise ConfigError(f"score file not found: {path}")
    return path


def _check_ids(pairs, scores: dict) -> dict:
    """Restrict ``scores`` to the images referenced by ``pairs``."""
    ids = {i for p in pairs for i in (p.id_a, p.id_b)}
    missing = sorted(ids - set(scores))
    if missing:
        raise EvaluationError(f"{len(missing)} image id(s) have no score: {', '.join(missing[:20])}")
    return {i: scores[i] for i in sorted(ids)}


def cmd_erc(cfg: RunConfig, args) -> int:
    scores_path = _scores_path(cfg, args)
    out = _prepare_out(cfg)
    pairs = _similarities(cfg, args, out)
    scores = _check_ids(pairs, read_scores_csv(scores_path))
    ecfg = cfg.evaluation
    threshold, achieved = ev.calibrate_threshold([p.similarity for p in pairs if p.mated], ecfg.target_fnmr)
    curves = {}
    for m in MEASURES:
        curves[m] = ev.compute_erc(pairs, {i: s[m] for i, s in scores.items()}, threshold, ecfg.fractions)
    for spec in args.extra or []:
        name, _, rest = spec.partition("=")
        path, _, column = rest.partition(":")
        extra = _check_ids(pairs, ev.read_quality_csv(path, column or "score"))
        curves[name] = ev.compute_erc(pairs, extra, threshold, ecfg.fractions)
    curves["PERFECT"] = ev.perfect_curve(achieved, ecfg.fractions)
    ev.write_erc_csv(curves, out / "erc.csv")
    plot_erc(curves, out / "erc.png", title=f"ERC (initial FNMR {achieved:.3f})")
    print(f"threshold {threshold:.6f} (FNMR {achieved:.4f}); {len(curves)} curves -> {out / 'erc.csv'}")
    return 0


def cmd_det(cfg: RunConfig, args) -> int:
    scores_path = _scores_path(cfg, args)
    out = _prepare_out(cfg)
    pairs = _similarities(cfg, args, out)
    measure = cfg.evaluation.quality_measure
    scores = _check_ids(pairs, read_scores_csv(scores_path))
    bins = ev.bin_by_quality({i: s[measure] for i, s in scores.items()}, 3)
    curves = {"all": ev.compute_det(pairs)}
    for name, group in zip(TERTILES, ev.pairs_by_bin(pairs, bins)):
        curves[name] = ev.compute_det(group)
    ev.write_det_csv(curves, out / "det.csv")
    with open(out / "tertiles.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "tertile", measure])
        for name, group in zip(TERTILES, bins):
            for i in group:
                w.writerow([i, name, repr(scores[i][measure])])
    with open(out / "eer.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "eer"])
        for name, c in curves.items():
            w.writerow([name, repr(ev.compute_eer(c))])
    plot_det(curves, out / "det.png", title=f"DET by {measure} tertile")
    summary = ", ".join(f"{k} {ev.compute_eer(c):.4f}" for k, c in curves.items())
    print(f"EER: {summary}")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "score": cmd_score, "erc": cmd_erc, "det": cmd_det}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="restoreq", description="Restoration-based face image quality.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="output directory (overrides config and $RESTOREQ_OUT)")
        return p

    common(sub.add_parser("synth", help="render a synthetic anchor/variant corpus"))
    p = common(sub.add_parser("train", help="two-stage training"))
    p.add_argument("--manifest")
    p = common(sub.add_parser("score", help="write q_mse/q_ssim/q_disc per image"))
    p.add_argument("--manifest")
    p.add_argument("--generator")
    p.add_argument("--discriminator")
    p.add_argument("--dump-restored", action="store_true")
    p.add_argument("images", nargs="*", help="image files (default: every manifest image)")
    for name, text in (("erc", "error-versus-reject curves"), ("det", "DET curves per quality tertile")):
        p = common(sub.add_parser(name, help=text))
        p.add_argument("--manifest")
        p.add_argument("--scores", help="score CSV (default: <out>/scores.csv)")
        p.add_argument("--similarities", help="similarity CSV id_a,id_b,mated,similarity")
        if name == "erc":
            p.add_argument("--extra", action="append", metavar="NAME=PATH[:COLUMN]", help="external per-image quality CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, out=args.out, seed=args.seed)
        return COMMANDS[args.command](cfg, args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (RestoreQError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
