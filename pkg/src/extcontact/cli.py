"""Command-line entry point: ``extcontact <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .binfmt import read_header, read_tensor, write_container
from .dataset import DatasetManifest, read_episode, write_dataset
from .encoders import ModelConfig
from .errors import DataError, NumericalError
from .fusion import ModalityPresence
from .labels import LabelGenParams, generate_affordance
from .metrics import bench_inference, eval_matrix
from .model import load_checkpoint, predict_frame
from .synth import DatasetSpec, generate_dataset
from .training import TrainConfig, gradient_check, print_report, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
LABEL_SUFFIX = ".labels"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def load_config(path) -> dict:
    """YAML (or JSON) mapping; a missing path means an empty config."""
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise DataError(f"config {p} must be a mapping")
    return data


def _presence(drop: str | None) -> ModalityPresence:
    try:
        return ModalityPresence.parse(drop)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _manifest(path) -> DatasetManifest:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.exists():
        raise DataError(f"manifest not found: {p}")
    return DatasetManifest.load(p)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands ---------------------------------------------------------------
def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    ratio = float(cfg.pop("split_ratio", 0.8))
    spec = DatasetSpec.from_dict(cfg)
    if args.episodes is not None:
        spec.episodes = args.episodes
    episodes = generate_dataset(spec, args.seed)
    manifest = write_dataset(episodes, _out_dir(args), ratio=ratio, seed=args.seed)
    counts = manifest.to_dict()["counts"]
    print(json.dumps({"episodes": len(episodes), "counts": counts}))
    return EXIT_OK


def label_file_for(episode_path) -> Path:
    p = Path(episode_path)
    return p.with_name(p.stem + LABEL_SUFFIX)


def write_labels(path, episode_id: str, labels: np.ndarray, params: LabelGenParams) -> None:
    header = {"kind": "labels", "id": episode_id, "frame_count": int(labels.shape[0]),
              "M": int(labels.shape[1]), "sigma": params.sigma, "scale": params.scale}
    with open(path, "wb") as fh:
        write_container(fh, header, [row for row in labels])


def read_labels(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        header = read_header(fh, "labels")
        rows = [read_tensor(fh, (header["M"],)) for _ in range(header["frame_count"])]
    return header, np.stack(rows)


def cmd_label(args) -> int:
    cfg = load_config(args.config)
    params = LabelGenParams(**cfg.get("labels", cfg))
    manifest = _manifest(args.data)
    out = Path(args.out) if args.out else None
    for entry in manifest.episodes:
        src = manifest.path_of(entry)
        ep = read_episode(src)
        labels = np.stack([generate_affordance(f.cloud, f.annotation, params) for f in ep.frames])
        dst = label_file_for(src) if out is None else out / (Path(entry.file).stem + LABEL_SUFFIX)
        dst.parent.mkdir(parents=True, exist_ok=True)
        write_labels(dst, ep.id, labels, params)
    print(f"labelled {len(manifest.episodes)} episodes (sigma={params.sigma}, scale={params.scale})")
    return EXIT_OK


def train_configs(cfg: dict, seed: int | None) -> tuple[TrainConfig, ModelConfig]:
    tcfg = dict(cfg.get("train", {}))
    if seed is not None:
        tcfg["seed"] = seed
    try:
        return TrainConfig.from_dict(tcfg), ModelConfig.from_dict(dict(cfg.get("model", {})))
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad training config: {exc}") from exc


def cmd_train(args) -> int:
    tcfg, mcfg = train_configs(load_config(args.config), args.seed)
    manifest = _manifest(args.data)
    out = _out_dir(args)
    res = train(None, manifest, tcfg, out_dir=out, model_config=mcfg,
                log=sys.stderr if args.verbose else None)
    print(json.dumps({"checkpoint": str(res.checkpoint), "log": str(res.log_path),
                      "final_loss": res.losses()[-1] if res.losses() else None}))
    return EXIT_OK


def _load_model(path):
    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    model, _ = load_checkpoint(path)
    return model


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    manifest = _manifest(args.data)
    episodes = [read_episode(manifest.path_of(e)) for e in manifest.entries("valid")]
    patterns = None
    if args.drop:
        patterns = {"All": ModalityPresence(), f"drop:{args.drop}": _presence(args.drop)}
    report = eval_matrix(model, episodes, patterns)
    jpath, cpath = report.save(_out_dir(args))
    print(json.dumps({"json": str(jpath), "csv": str(cpath)}))
    return EXIT_OK


def cmd_infer(args) -> int:
    model = _load_model(args.checkpoint)
    ep = read_episode(args.episode)
    presence = _presence(args.drop)
    preds = np.stack([predict_frame(f, presence, model) for f in ep.frames])
    out = _out_dir(args)
    path = out / f"{ep.id}.affordance.npy"
    np.save(path, preds.astype(np.float32))
    print(json.dumps({"output": str(path), "frames": int(preds.shape[0]), "points": int(preds.shape[1])}))
    return EXIT_OK


def cmd_bench(args) -> int:
    model = _load_model(args.checkpoint)
    frame = read_episode(args.episode).frames[0] if args.episode else None
    stats = bench_inference(model, frame, _presence(args.drop), repeats=args.repeats, warmup=args.warmup,
                            seed=args.seed)
    print(json.dumps(stats))
    return EXIT_OK


def write_ply(path, points: np.ndarray, values: np.ndarray) -> None:
    """ASCII PLY with one ``x y z affordance`` line per vertex."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    vals = np.asarray(values, dtype=float).reshape(-1)
    if len(pts) != len(vals):
        raise DataError("point and value counts differ")
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}", "property float x",
             "property float y", "property float z", "property float affordance", "end_header"]
    lines += [f"{p[0]:.6g} {p[1]:.6g} {p[2]:.6g} {v:.6g}" for p, v in zip(pts, vals)]
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_inspect(args) -> int:
    ep = read_episode(args.episode)
    if not 0 <= args.frame < ep.num_frames:
        raise UsageError(f"frame {args.frame} out of range (episode has {ep.num_frames})")
    fr = ep.frames[args.frame]
    if args.checkpoint:
        values = predict_frame(fr, _presence(args.drop), _load_model(args.checkpoint))
        what = "prediction"
    else:
        values = generate_affordance(fr.cloud, fr.annotation)
        what = "label"
    out = _out_dir(args)
    path = out / f"{ep.id}_f{args.frame:03d}_{what}.ply"
    write_ply(path, fr.cloud, values)
    print(json.dumps({"output": str(path), "values": what}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = gradient_check(args.block, args.tolerance)
    print_report(report)
    return EXIT_OK if report.passed else EXIT_NUMERIC


# -- parser --------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="rng seed")
    common.add_argument("--config", help="YAML/JSON config file")
    common.add_argument("--drop", help="comma list of modalities to remove: rotation,tac,ft")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="extcontact", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--episodes", type=int)
    s.set_defaults(func=cmd_synth, default_seed=0)

    s = sub.add_parser("label", parents=[common], help="write affordance label files")
    s.add_argument("--data", required=True, help="dataset directory or manifest.json")
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="modality-removal evaluation")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", parents=[common], help="per-frame affordance maps for an episode")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--episode", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("bench", parents=[common], help="single-frame inference timing")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--episode")
    s.add_argument("--repeats", type=int, default=100)
    s.add_argument("--warmup", type=int, default=5)
    s.set_defaults(func=cmd_bench, default_seed=0)

    s = sub.add_parser("inspect", parents=[common], help="export a frame as ASCII PLY")
    s.add_argument("--episode", required=True)
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--checkpoint")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    s.add_argument("--block", default="all")
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.seed is None and hasattr(args, "default_seed"):
        args.seed = args.default_seed
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, json.JSONDecodeError, yaml.YAMLError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
