"""Command-line entry point: ``usdrl <command> [options] [--section.key value ...]``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointLocked, locked
from .config import PretrainConfig, config_keys
from .downstream import interchange
from .downstream.heads import (OBSERVATION_RATIOS, ensemble_logits, finetune_semi, knn_retrieve,
                               linear_probe, median_smooth, observed_frames,
                               postprocess_segments, predict_early)
from .downstream.metrics import eval_detection_map, eval_segmentation, segments_from_labels
from .skelio import DatasetManifest, load_split, synth_dataset, synth_untrimmed, write_dataset

log = logging.getLogger("usdrl")

IOU_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)
SMOOTHING = 9
EVAL_TASKS = ("probe", "knn", "semi", "detect", "segment", "predict", "transfer", "ensemble")


class CLIError(Exception):
    pass


# -- argument parsing ---------------------------------------------------------

def _epilog() -> str:
    return "config keys (override with --section.key VALUE):\n  " + "\n  ".join(config_keys())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML config with [encoder] [loss] [train] [data] sections")
    common.add_argument("--seed", type=int, help="overrides train.seed")
    common.add_argument("--out-dir", type=Path, default=Path("runs"), help="directory for outputs and the report")
    common.add_argument("--report", type=Path, help="report path (default: <out-dir>/<command>_report.json)")

    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="usdrl", description=__doc__, epilog=_epilog(), formatter_class=fmt,
                                parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], epilog=_epilog(), formatter_class=fmt,
                       help="write a synthetic skeleton dataset")
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, default=50)
    s.add_argument("--frames", type=int, default=64)
    s.add_argument("--joints", type=int, default=25)
    s.add_argument("--persons", type=int, default=1)
    s.add_argument("--videos", type=int, default=8, help="untrimmed videos per split (0 to skip)")

    s = sub.add_parser("pretrain", parents=[common], epilog=_epilog(), formatter_class=fmt,
                       help="self-supervised pretraining")
    s.add_argument("--data", type=Path, help="manifest.json (overrides data.manifest)")
    s.add_argument("--resume", type=Path, help="continue from a checkpoint")
    s.add_argument("--stop-after", type=int, metavar="EPOCHS",
                   help="stop once this many epochs have run; the checkpoint can be resumed later")

    s = sub.add_parser("eval", parents=[common], epilog=_epilog(), formatter_class=fmt,
                       help="downstream evaluation")
    s.add_argument("task", choices=EVAL_TASKS)
    s.add_argument("--checkpoint", type=Path, action="append", default=[],
                   help="pretrained checkpoint (repeat for ensemble)")
    s.add_argument("--data", type=Path, help="manifest.json (overrides data.manifest)")
    s.add_argument("--fraction", type=float, default=0.1, help="labeled fraction for semi")
    s.add_argument("--epochs", type=int, default=20, help="fine-tuning epochs for semi")
    s.add_argument("--iou", type=float, default=0.5, help="IoU threshold reported as the headline mAP")
    s.add_argument("--predictions", type=Path, help="detect: predicted segments JSONL")
    s.add_argument("--gt", type=Path, help="detect: ground-truth segments JSONL")
    s.add_argument("--stride", type=int, help="sliding-window stride for dense tasks")

    s = sub.add_parser("export-embeddings", parents=[common], epilog=_epilog(), formatter_class=fmt,
                       help="write instance embeddings as CSV")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--data", type=Path)
    s.add_argument("--split", default=None, help="split name (default data.test_split)")
    s.add_argument("--output", type=Path, help="CSV path (default <out-dir>/embeddings.csv)")

    s = sub.add_parser("gradcheck", parents=[common], epilog=_epilog(), formatter_class=fmt,
                       help="finite-difference gradient check on the tiny profile")
    s.add_argument("--tolerance", type=float, default=2e-3)
    return p


def split_overrides(argv: list[str]) -> tuple[list[str], dict[str, str]]:
    """Pull ``--section.key value`` / ``--section.key=value`` tokens out of ``argv``."""
    rest, overrides = [], {}
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "." in tok.split("=", 1)[0]:
            key = tok[2:]
            if "=" in key:
                key, value = key.split("=", 1)
            else:
                if i + 1 >= len(argv):
                    raise CLIError(f"override --{key} needs a value")
                i += 1
                value = argv[i]
            overrides[key] = value
        else:
            rest.append(tok)
        i += 1
    return rest, overrides


def resolve_config(args, overrides: dict[str, str]) -> PretrainConfig:
    cfg = PretrainConfig.load(args.config) if args.config else PretrainConfig()
    if args.seed is not None:
        overrides = {**overrides, "train.seed": args.seed}
    try:
        return cfg.updated(overrides)
    except KeyError as exc:
        raise CLIError(exc.args[0]) from exc


# -- helpers ------------------------------------------------------------------

def _manifest(args, cfg: PretrainConfig) -> DatasetManifest:
    path = getattr(args, "data", None) or (Path(cfg.data.manifest) if cfg.data.manifest else None)
    if path is None:
        raise CLIError("no dataset given; pass --data or set data.manifest")
    if not Path(path).is_file():
        raise CLIError(f"dataset manifest not found: {path}")
    return DatasetManifest.load(path)


def _split(manifest: DatasetManifest, name: str):
    path = manifest.split_path(name)
    if not path.is_file():
        raise CLIError(f"split {name!r} file not found: {path}")
    return load_split(manifest, name)


def _encoder(path: Path, manifest: DatasetManifest | None = None):
    from .estimators import USDRL

    if not Path(path).is_file():
        raise CLIError(f"checkpoint not found: {path}")
    est = USDRL.from_checkpoint(path)
    if manifest is not None:
        enc = est.trainer_.cfg.encoder
        want = (enc.num_joints, enc.num_persons, enc.in_channels)
        have = (manifest.joint_count, manifest.person_slots, manifest.coord_dims)
        if want != have:
            raise CLIError(f"checkpoint expects (joints, persons, coords) = {want}, dataset has {have}")
    return est


def _one_checkpoint(args) -> Path:
    if len(args.checkpoint) != 1:
        raise CLIError(f"eval {args.task} needs exactly one --checkpoint")
    return args.checkpoint[0]


def _record_key(seq) -> str:
    return seq.id if seq.view is None else f"{seq.id}/view{seq.view}"


def _labels(seqs) -> np.ndarray:
    return np.array([s.label for s in seqs])


# -- commands -----------------------------------------------------------------

def cmd_synth(args, cfg: PretrainConfig) -> tuple[dict, dict]:
    manifest, train, test = synth_dataset(args.classes, args.per_class, args.frames, args.joints, args.persons,
                                          seed=cfg.train.seed)
    splits = {"train": train, "test": test}
    if args.videos:
        n_train = len({s.subject for s in train})
        splits["untrimmed_train"] = synth_untrimmed(args.classes, args.videos, V=args.joints, M=args.persons,
                                                    seed=cfg.train.seed, split_seed=0)
        splits["untrimmed_test"] = synth_untrimmed(args.classes, args.videos, V=args.joints, M=args.persons,
                                                   seed=cfg.train.seed, split_seed=1,
                                                   subject_offset=n_train + args.videos)
    path = write_dataset(args.out_dir / "data", manifest, splits)
    metrics = {f"{k}_records": len(v) for k, v in splits.items()}
    metrics.update({f"{k}_samples": len({s.id for s in v}) for k, v in splits.items()})
    return metrics, {"manifest": str(path)}


def _run_pretrain(args, cfg: PretrainConfig, manifest, train, ckpt: Path, log_path: Path):
    from .pretrain import Pretrainer

    stop = cfg.train.epochs if args.stop_after is None else min(args.stop_after, cfg.train.epochs)
    if args.resume:
        trainer = Pretrainer.load(args.resume)
        if trainer.cfg.digest() != cfg.updated({"train.epochs": trainer.cfg.train.epochs,
                                                "train.decay_epoch": trainer.cfg.train.decay_epoch}).digest():
            log.warning("resuming with the checkpoint's config; command-line config differs")
        return trainer.fit(train, epochs=stop, log_path=log_path, checkpoint_path=ckpt)
    if log_path.exists():
        log_path.unlink()
    return Pretrainer(cfg, manifest).fit(train, epochs=stop, log_path=log_path, checkpoint_path=ckpt)


def cmd_pretrain(args, cfg: PretrainConfig) -> tuple[dict, dict]:
    manifest = _manifest(args, cfg)
    train = _split(manifest, cfg.data.train_split)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = args.out_dir / cfg.train.checkpoint
    log_path = args.out_dir / cfg.train.log
    try:
        with locked(ckpt):
            trainer = _run_pretrain(args, cfg, manifest, train, ckpt, log_path)
    except CheckpointLocked as exc:
        raise CLIError(str(exc)) from exc
    last = trainer.history[-1] if trainer.history else {}
    metrics = {"steps": trainer.step, "epochs": trainer.epoch}
    if last:
        metrics["final_loss"] = last["total"]
    return metrics, {"checkpoint": str(ckpt), "log": str(log_path)}


def _frame_head(enc, train, num_classes: int, background: bool, stride):
    from .estimators import FrameClassifier

    return FrameClassifier(enc, num_classes, background=background, stride=stride).fit(train)


def cmd_eval(args, cfg: PretrainConfig) -> tuple[dict, dict]:
    task = args.task
    args.out_dir.mkdir(parents=True, exist_ok=True)
    if task == "detect" and (args.predictions or args.gt):
        if not (args.predictions and args.gt):
            raise CLIError("--predictions and --gt must be given together")
        for p in (args.predictions, args.gt):
            if not p.is_file():
                raise CLIError(f"segment file not found: {p}")
        return _detect_report(args, interchange.read_segments(args.predictions), interchange.read_segments(args.gt))

    manifest = _manifest(args, cfg)
    tr_name, te_name = cfg.data.train_split, cfg.data.test_split

    if task == "ensemble":
        if len(args.checkpoint) < 2:
            raise CLIError("eval ensemble needs at least two --checkpoint")
        from .estimators import LinearProbe

        train, test = _split(manifest, tr_name), _split(manifest, te_name)
        ytr, yte = _labels(train), _labels(test)
        probs, single = [], {}
        for i, path in enumerate(args.checkpoint):
            enc = _encoder(path, manifest)
            probe = LinearProbe().fit(enc.transform(train), ytr)
            p = probe.predict_proba(enc.transform(test))
            probs.append(p)
            single[f"model{i}_top1"] = float(np.mean(probe.classes_[p.argmax(1)] == yte))
        _, pred = ensemble_logits(probs)
        return {"top1": float(np.mean(pred == yte)), **single}, {}

    enc = _encoder(_one_checkpoint(args), manifest)
    if task in ("probe", "knn", "transfer", "semi"):
        train, test = _split(manifest, tr_name), _split(manifest, te_name)
        ytr, yte = _labels(train), _labels(test)
        if task == "semi":
            tr = enc.trainer_
            res = finetune_semi(tr.model, train, test, args.fraction, tr.inputs, manifest.num_classes,
                                epochs=args.epochs, seed=tr.cfg.train.seed)
            return {"top1": res.accuracy, "labeled": int(res.subset.size), "dropped_classes": len(res.dropped)}, {}
        Xtr, Xte = enc.transform(train), enc.transform(test)
        metrics = {}
        if task in ("probe", "transfer"):
            metrics["probe_top1"] = linear_probe(Xtr, ytr, Xte, yte)
        if task in ("knn", "transfer"):
            metrics["knn_top1"] = knn_retrieve(Xte, Xtr, ytr, yte).top1
        if task != "transfer":
            metrics = {"top1": next(iter(metrics.values()))}
        return metrics, {}

    if task == "predict":
        if not enc.trainer_.cfg.encoder.causal:
            raise CLIError("eval predict needs a causal encoder: pretrain with --encoder.causal true "
                           "so frames never attend to the future")
        if "motion" in enc.trainer_.cfg.train.modalities:
            log.warning("the motion modality differences frame t+1 against frame t, so each frame "
                        "sees one frame ahead; train with joint and bone only for strict causality")
        train, test = _split(manifest, tr_name), _split(manifest, te_name)
        head = _frame_head(enc, train, manifest.num_classes, False, args.stride)
        probs = head.sequence_frame_proba(test)
        curve = predict_early(probs, _labels(test), OBSERVATION_RATIOS)
        path = args.out_dir / "predict_curve.csv"
        interchange.write_curve(path, ("ratio", "accuracy"), curve.rows())
        by_ratio = {r: probs[:, :observed_frames(r, probs.shape[1])].mean(axis=1) for r in OBSERVATION_RATIOS}
        pred_path = args.out_dir / "predictions.jsonl"
        interchange.write_ratio_probs(pred_path, {_record_key(s): {r: p[i] for r, p in by_ratio.items()}
                                                  for i, s in enumerate(test)})
        metrics = {f"acc@{r:.1f}": a for r, a in curve.rows()}
        return metrics, {"curve": str(path), "predictions": str(pred_path)}

    # dense tasks on untrimmed splits
    train = _split(manifest, "untrimmed_train")
    test = _split(manifest, "untrimmed_test")
    head = _frame_head(enc, train, manifest.num_classes, True, args.stride)
    if task == "segment":
        labels = {s.id: median_smooth(head.predict_frames(s), SMOOTHING) for s in test}
        scores = [eval_segmentation(labels[s.id], s.frame_labels) for s in test]
        pred_path = args.out_dir / "frame_labels.jsonl"
        interchange.write_frame_labels(pred_path, labels)
        return {k: float(np.mean([sc[k] for sc in scores])) for k in scores[0]}, {"predictions": str(pred_path)}
    preds, gt = {}, {}
    for s in test:
        preds[s.id] = postprocess_segments(head.predict_frame_proba(s))
        gt[s.id] = segments_from_labels(s.frame_labels)
    seg_path = args.out_dir / "detections.jsonl"
    interchange.write_segments(seg_path, preds)
    metrics, artifacts = _detect_report(args, preds, gt)
    return metrics, {**artifacts, "detections": str(seg_path)}


def _detect_report(args, preds, gt) -> tuple[dict, dict]:
    rows = []
    for th in IOU_THRESHOLDS:
        rows.append((th, *eval_detection_map(preds, gt, th)))
    map_a, map_v = eval_detection_map(preds, gt, args.iou)
    path = args.out_dir / "detect_curve.csv"
    interchange.write_curve(path, ("iou", "mAP_a", "mAP_v"), rows)
    return {"mAP_a": map_a, "mAP_v": map_v, "iou": args.iou}, {"curve": str(path)}


def cmd_export(args, cfg: PretrainConfig) -> tuple[dict, dict]:
    manifest = _manifest(args, cfg)
    enc = _encoder(args.checkpoint, manifest)
    seqs = _split(manifest, args.split or cfg.data.test_split)
    X = enc.transform(seqs)
    out = args.output or args.out_dir / "embeddings.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", *(f"e{j}" for j in range(X.shape[1]))])
        for s, row in zip(seqs, X):
            w.writerow([s.id, "" if s.label is None else s.label, *(repr(float(v)) for v in row)])
    return {"rows": len(seqs), "dim": int(X.shape[1])}, {"embeddings": str(out)}


def cmd_gradcheck(args, cfg: PretrainConfig) -> tuple[dict, dict]:
    import torch

    from .dste import EncoderConfig
    from .pretrain import USDRLNet, finite_diff_check

    tiny = EncoderConfig.tiny()
    mods = cfg.train.modalities
    net = USDRLNet(tiny, mods, seed=cfg.train.seed).double()
    gen = torch.Generator().manual_seed(cfg.train.seed)
    shape = (4, tiny.seq_len, tiny.num_persons, tiny.num_joints, tiny.in_channels)
    copies = [{m: torch.randn(shape, generator=gen, dtype=torch.float64) for m in mods} for _ in range(2)]
    rep = finite_diff_check(net, copies, cfg.loss, seed=cfg.train.seed)
    if not rep.passed(args.tolerance):
        log.error("gradient check failed: max relative error %.3g >= %.3g", rep.max_rel_error, args.tolerance)
    return {"max_rel_error": rep.max_rel_error, "checked": rep.checked, "kinks": rep.kinks,
            "params": len(rep.per_param), "passed": int(rep.passed(args.tolerance))}, {}


COMMANDS = {"synth": cmd_synth, "pretrain": cmd_pretrain, "eval": cmd_eval,
            "export-embeddings": cmd_export, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("USDRL_THREADS")
    if threads:
        import torch

        torch.set_num_threads(max(1, int(threads)))
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        rest, overrides = split_overrides(argv)
        args = parser.parse_args(rest)
        cfg = resolve_config(args, overrides)
        start = time.perf_counter()
        metrics, artifacts = COMMANDS[args.command](args, cfg)
    except (CLIError, FileNotFoundError, PermissionError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"usdrl: error: {msg}", file=sys.stderr)
        return 2
    name = args.command if args.command != "eval" else f"eval_{args.task}"
    report = {
        "command": name,
        **({"task": args.task} if args.command == "eval" else {}),
        "config_digest": cfg.digest(),
        "seed": cfg.train.seed,
        "wall_time": time.perf_counter() - start,
        "metrics": metrics,
        "artifacts": artifacts,
    }
    path = args.report or args.out_dir / f"{name}_report.json"
    try:
        interchange.write_report(path, report)
    except OSError as exc:
        print(f"usdrl: error: cannot write report {path}: {exc}", file=sys.stderr)
        return 1
    if not interchange.finite_metrics(metrics):
        print(f"usdrl: error: non-finite metric in {path}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
