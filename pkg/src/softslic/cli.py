"""Command-line surface: segment | train | eval | synth.

Exit codes: 0 success, 2 bad arguments (including model/flag mismatches),
3 I/O failure (unreadable or malformed input files), 4 numeric failure or
corrupt checkpoint. Every command writes a machine-readable copy of its
resolved configuration (run_config.json) into the output directory.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

from .autodiff import CheckpointError, load_model, save_model
from .cluster import LabelMap, NumericError
from .imageio import (
    FileFormatError,
    load_image,
    overlay_boundaries,
    read_flow_csv,
    read_label_csv,
    read_label_pgm,
    save_image_png,
    write_label_csv,
    write_label_pgm,
)
from .metrics import (
    FLOW,
    SEGMENTS,
    GroundTruth,
    PipelineParams,
    segment_image,
    sweep,
    write_report_csv,
)
from .synth import SyntheticSpec, generate_corpus
from .train import train_model


class ConfigError(ValueError):
    """Inconsistent or invalid command configuration (exit code 2)."""


@dataclass
class RunConfig:
    """Resolved settings of one CLI invocation."""

    command: str
    input: str | None = None
    corpus: str | None = None
    output_dir: str = "."
    m_target: int = 100
    m_list: tuple[int, ...] = ()
    v: int = 10
    k: int = 20
    eta: float = 2.5
    gamma_color: float = 0.26
    lam: float = 1e-5
    lr: float = 1e-4
    batch: int = 8
    steps: int = 1000
    patch: int = 201
    seed: int = 0
    connectivity: bool = True
    model: str | None = None
    overlay: bool = False
    gt_kind: str = SEGMENTS
    boundary_tol: int | None = None
    val_fraction: float = 0.2
    val_every: int | None = None
    # synth fields
    count: int = 20
    width: int = 96
    height: int = 96
    regions_min: int = 5
    regions_max: int = 12
    noise: float = 8.0

    def echo(self, out_dir: Path) -> None:
        data = asdict(self)
        data["lambda"] = data.pop("lam")
        with open(out_dir / "run_config.json", "w") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_model(cfg: RunConfig, k_given: bool):
    """Load the checkpoint if configured; reconcile its k with --k."""
    if cfg.model is None:
        return None
    model, _ = load_model(cfg.model)
    if k_given and cfg.k != model.k:
        raise ConfigError(
            f"--k {cfg.k} conflicts with checkpoint k={model.k}"
        )
    cfg.k = model.k
    return model


def _load_gt(stem: Path, kind: str) -> GroundTruth:
    if kind == FLOW:
        path = stem.with_suffix(".flow.csv")
        if not path.exists():
            raise FileFormatError(f"missing flow ground truth {path}")
        return GroundTruth.from_flow(read_flow_csv(path))
    for ext, reader in ((".pgm", read_label_pgm), (".csv", read_label_csv)):
        path = stem.with_suffix(ext)
        if path.exists():
            return GroundTruth.from_segments(reader(path))
    raise FileFormatError(f"missing ground truth for {stem} (.pgm or .csv)")


def load_corpus(corpus_dir: str | Path, kind: str = SEGMENTS):
    """(name, image, ground truth) triples for every PNG/PPM in a directory."""
    root = Path(corpus_dir)
    images = sorted(
        p for p in root.iterdir() if p.suffix.lower() in (".png", ".ppm")
    )
    if not images:
        raise FileFormatError(f"no PNG/PPM images in {root}")
    out = []
    for path in images:
        img = load_image(path)
        gt = _load_gt(path.with_suffix(""), kind)
        out.append((path.stem, img, gt))
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_segment(cfg: RunConfig, k_given: bool = False) -> int:
    if cfg.input is None:
        raise ConfigError("segment needs --input")
    model = _resolve_model(cfg, k_given)
    img = load_image(cfg.input)
    out = _out_dir(cfg)
    params = PipelineParams(v=cfg.v, eta=cfg.eta, gamma_color=cfg.gamma_color,
                            connectivity=cfg.connectivity, model=model)
    labels = segment_image(img, cfg.m_target, params)
    write_label_pgm(out / "labels.pgm", labels)
    write_label_csv(out / "labels.csv", labels)
    if cfg.overlay:
        save_image_png(out / "overlay.png", overlay_boundaries(img, labels))
    cfg.echo(out)
    return 0


def cmd_train(cfg: RunConfig) -> int:
    if cfg.corpus is None:
        raise ConfigError("train needs --corpus")
    items = [(name, img, gt.labels.reshape(img.shape[:2]))
             for name, img, gt in load_corpus(cfg.corpus, SEGMENTS)]
    n_val = max(1, int(round(len(items) * cfg.val_fraction)))
    if n_val >= len(items):
        train_items = val_items = items
    else:
        val_items = items[-n_val:]
        train_items = items[:-n_val]
    result = train_model(
        train_items, val_items, k=cfg.k, steps=cfg.steps, batch=cfg.batch,
        lr=cfg.lr, lam=cfg.lam, v_train=cfg.v, m_target=cfg.m_target,
        patch=cfg.patch, eta=cfg.eta, gamma_color=cfg.gamma_color,
        seed=cfg.seed, val_every=cfg.val_every,
    )
    out = _out_dir(cfg)
    hyper = {
        "eta": cfg.eta, "gamma_color": cfg.gamma_color, "lambda": cfg.lam,
        "lr": cfg.lr, "v_train": cfg.v, "m_target": cfg.m_target,
        "batch": cfg.batch, "steps": cfg.steps, "seed": cfg.seed,
        "best_step": result.best_step, "best_val_asa": result.best_val_asa,
    }
    save_model(out / "model.ssnl", result.best_model, hyper)
    with open(out / "loss_log.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "recon", "compact", "total"])
        for row in result.log:
            writer.writerow([row.step, repr(row.recon), repr(row.compact),
                             repr(row.total)])
    with open(out / "val_history.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "val_asa"])
        for step, score in result.val_history:
            writer.writerow([step, repr(score)])
    cfg.echo(out)
    return 0


def cmd_eval(cfg: RunConfig, k_given: bool = False) -> int:
    if cfg.corpus is None:
        raise ConfigError("eval needs --corpus")
    model = _resolve_model(cfg, k_given)
    items = load_corpus(cfg.corpus, cfg.gt_kind)
    params = PipelineParams(v=cfg.v, eta=cfg.eta, gamma_color=cfg.gamma_color,
                            connectivity=cfg.connectivity,
                            boundary_tol=cfg.boundary_tol, model=model)
    m_list = cfg.m_list or (cfg.m_target,)
    rows = sweep(items, m_list, params)
    out = _out_dir(cfg)
    write_report_csv(rows, out / "report.csv")
    cfg.echo(out)
    return 0


def cmd_synth(cfg: RunConfig) -> int:
    spec = SyntheticSpec(width=cfg.width, height=cfg.height,
                         regions_min=cfg.regions_min,
                         regions_max=cfg.regions_max,
                         noise_sigma=cfg.noise, count=cfg.count,
                         seed=cfg.seed)
    out = _out_dir(cfg)
    for name, img, gt in generate_corpus(spec):
        save_image_png(out / f"{name}.png", img)
        lab = LabelMap(labels=gt.ravel(), n_w=spec.width, n_h=spec.height,
                       connected=True)
        write_label_pgm(out / f"{name}.pgm", lab)
    cfg.echo(out)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softslic",
        description="Differentiable SLIC superpixels: segment, train, "
        "evaluate, and generate synthetic corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, v_default):
        p.add_argument("--output-dir", required=True)
        p.add_argument("--v", type=int, default=v_default,
                       help="clustering iterations")
        p.add_argument("--eta", type=float, default=2.5)
        p.add_argument("--gamma-color", type=float, default=0.26)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("segment", help="segment one image")
    p.add_argument("--input", required=True)
    p.add_argument("--m-target", type=int, default=100)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--no-connectivity", action="store_true")
    p.add_argument("--overlay", action="store_true")
    common(p, v_default=10)

    p = sub.add_parser("train", help="train the linear feature transform")
    p.add_argument("--corpus", required=True)
    p.add_argument("--m-target", type=int, default=100)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-5)
    p.add_argument("--patch", type=int, default=201)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--val-every", type=int, default=None)
    common(p, v_default=5)

    p = sub.add_parser("eval", help="evaluate a corpus over superpixel counts")
    p.add_argument("--corpus", required=True)
    p.add_argument("--m-list", type=_int_list, default=(100,))
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--gt-kind", choices=(SEGMENTS, FLOW), default=SEGMENTS)
    p.add_argument("--boundary-tol", type=int, default=None)
    p.add_argument("--no-connectivity", action="store_true")
    common(p, v_default=10)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--regions", type=_int_list, default=(5, 12),
                   help="min,max region count per image")
    p.add_argument("--noise", type=float, default=8.0)
    common(p, v_default=10)

    return parser


def _config_from(args: argparse.Namespace) -> tuple[RunConfig, bool]:
    cfg = RunConfig(command=args.command, output_dir=args.output_dir,
                    eta=args.eta, gamma_color=args.gamma_color,
                    seed=args.seed, v=args.v)
    k_given = False
    if args.command == "segment":
        cfg.input = args.input
        cfg.m_target = args.m_target
        cfg.model = args.model
        cfg.connectivity = not args.no_connectivity
        cfg.overlay = args.overlay
        k_given = args.k is not None
        cfg.k = args.k if k_given else 20
    elif args.command == "train":
        cfg.corpus = args.corpus
        cfg.m_target = args.m_target
        cfg.k = args.k
        cfg.steps = args.steps
        cfg.batch = args.batch
        cfg.lr = args.lr
        cfg.lam = args.lam
        cfg.patch = args.patch
        cfg.val_fraction = args.val_fraction
        cfg.val_every = args.val_every
    elif args.command == "eval":
        cfg.corpus = args.corpus
        cfg.m_list = tuple(args.m_list)
        cfg.model = args.model
        cfg.gt_kind = args.gt_kind
        cfg.boundary_tol = args.boundary_tol
        cfg.connectivity = not args.no_connectivity
        k_given = args.k is not None
        cfg.k = args.k if k_given else 20
    elif args.command == "synth":
        cfg.count = args.count
        cfg.width = args.width
        cfg.height = args.height
        if len(args.regions) != 2:
            raise ConfigError("--regions needs exactly min,max")
        cfg.regions_min, cfg.regions_max = args.regions
        cfg.noise = args.noise
    return cfg, k_given


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg, k_given = _config_from(args)
        if args.command == "segment":
            return cmd_segment(cfg, k_given)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, k_given)
        return cmd_synth(cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FileFormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (NumericError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
