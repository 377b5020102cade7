"""Command-line entry point: inspect, surgery, pretrain, probe, gen-data, compare.

Data goes to stdout, diagnostics to stderr. Exit codes: 0 success, 1 runtime
failure, 2 input/validation failure. Experiment files are JSON documents with
dataset / pretrain / surgery / probe sections; unknown keys are rejected with
the offending JSON path. Every command that produces outputs also logs its
resolved configuration next to them. REPRIME_SEED provides a global seed
fallback for commands where no seed is given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path


from . import archive, datasets, probe, surgery
from .pretrain import OptimizerConfig, PretrainConfig, SurgeryOptions, run_pretrain

__all__ = ["main", "ValidationError", "parse_experiment", "Experiment"]


class ValidationError(ValueError):
    """Bad user input: malformed experiment file, bad flags, bad paths."""


def _env_seed(default=0):
    raw = os.environ.get("REPRIME_SEED")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"REPRIME_SEED must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------------------
# experiment file parsing


def _check_keys(section: dict, allowed, path):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown key {path}.{unknown[0]!r}")


def _section(doc, name, required=False):
    value = doc.get(name)
    if value is None:
        if required:
            raise ValidationError(f"missing required section {name!r}")
        return None
    if not isinstance(value, dict):
        raise ValidationError(f"section {name!r} must be a JSON object")
    return value


class Experiment:
    def __init__(self, output_dir, dataset_cfg, pretrain_cfg, probe_cfg, raw):
        self.output_dir = output_dir
        self.dataset_cfg = dataset_cfg
        self.pretrain_cfg = pretrain_cfg
        self.probe_cfg = probe_cfg
        self.raw = raw

    def resolve_dataset(self) -> datasets.Dataset:
        cfg = self.dataset_cfg
        if "archive" in cfg:
            return datasets.load_dataset(cfg["archive"])
        if "preset" in cfg:
            seed = cfg.get("seed", _env_seed())
            maker = datasets.source_preset if cfg["preset"] == "source" else datasets.target_preset
            return datasets.generate_synthetic(maker(seed=seed))
        spec = datasets.SyntheticSpec(**cfg["synthetic"])
        return datasets.generate_synthetic(spec)


def parse_experiment(doc: dict, need_pretrain=False, need_probe=False) -> Experiment:
    if not isinstance(doc, dict):
        raise ValidationError("experiment file must be a JSON object")
    _check_keys(doc, ("output_dir", "dataset", "pretrain", "surgery", "probe"), "$")
    output_dir = doc.get("output_dir")
    if not isinstance(output_dir, str) or not output_dir:
        raise ValidationError("missing or invalid 'output_dir'")

    dataset_cfg = _section(doc, "dataset", required=True)
    kinds = [k for k in ("preset", "archive", "synthetic") if k in dataset_cfg]
    if len(kinds) != 1:
        raise ValidationError("dataset must have exactly one of preset/archive/synthetic")
    if kinds[0] == "preset":
        _check_keys(dataset_cfg, ("preset", "seed"), "dataset")
        if dataset_cfg["preset"] not in ("source", "target"):
            raise ValidationError("dataset.preset must be 'source' or 'target'")
    elif kinds[0] == "archive":
        _check_keys(dataset_cfg, ("archive",), "dataset")
        if not Path(dataset_cfg["archive"]).exists():
            raise ValidationError(f"dataset.archive not found: {dataset_cfg['archive']}")
    else:
        _check_keys(dataset_cfg, ("synthetic",), "dataset")
        try:
            datasets.SyntheticSpec(**dataset_cfg["synthetic"])
        except (TypeError, ValueError) as e:
            raise ValidationError(f"dataset.synthetic: {e}") from None

    pretrain_cfg = None
    section = _section(doc, "pretrain", required=need_pretrain)
    if section is not None:
        allowed = (
            "method", "init", "epochs", "iterations", "batch_size", "crop_size",
            "blocks", "temperature", "swav_temperature", "sinkhorn_iters",
            "sinkhorn_sharpen", "n_prototypes", "byol_momentum", "d_proj",
            "n_local_crops", "crop_scale", "seed", "optimizer",
        )
        _check_keys(section, allowed, "pretrain")
        opt_cfg = section.get("optimizer", {})
        if opt_cfg:
            _check_keys(opt_cfg, ("kind", "lr", "weight_decay", "momentum"), "pretrain.optimizer")
        surgery_section = _section(doc, "surgery") or {}
        _check_keys(surgery_section, ("mode", "strategy", "threshold"), "surgery")
        kwargs = {k: v for k, v in section.items() if k != "optimizer"}
        if "blocks" in kwargs:
            kwargs["blocks"] = tuple(kwargs["blocks"])
        if "crop_scale" in kwargs:
            kwargs["crop_scale"] = tuple(kwargs["crop_scale"])
        kwargs.setdefault("seed", _env_seed())
        try:
            pretrain_cfg = PretrainConfig(
                optimizer=OptimizerConfig(**opt_cfg),
                surgery=SurgeryOptions(**surgery_section),
                out_dir=output_dir,
                **kwargs,
            )
        except (TypeError, ValueError, FileNotFoundError) as e:
            raise ValidationError(f"pretrain: {e}") from None

    probe_cfg = None
    section = _section(doc, "probe", required=need_probe)
    if section is not None:
        allowed = (
            "mode", "epochs", "batch_size", "fraction", "n_runs", "seed",
            "split_seed", "test_fraction", "checkpoint", "optimizer", "label",
        )
        _check_keys(section, allowed, "probe")
        opt_cfg = section.get("optimizer", {})
        if opt_cfg:
            _check_keys(opt_cfg, ("kind", "lr", "weight_decay", "momentum"), "probe.optimizer")
        kwargs = {
            k: v for k, v in section.items() if k not in ("optimizer", "checkpoint", "label")
        }
        kwargs.setdefault("seed", _env_seed())
        try:
            probe_cfg = probe.ProbeConfig(optimizer=OptimizerConfig(**opt_cfg), **kwargs)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"probe: {e}") from None
        probe_cfg = (probe_cfg, section.get("checkpoint"), section.get("label", ""))

    return Experiment(output_dir, dataset_cfg, pretrain_cfg, probe_cfg, doc)


def _load_experiment(path, **kw) -> Experiment:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"experiment file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON: {e}") from None
    return parse_experiment(doc, **kw)


def _log_config(out_dir, payload):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(payload, indent=2, default=str))


# ---------------------------------------------------------------------------
# commands


def cmd_inspect(args):
    rows = surgery.weight_distribution_summary(archive.read_archive(args.checkpoint))
    text = surgery.summary_to_csv(rows)
    sys.stdout.write(text)
    if args.csv:
        Path(args.csv).write_text(text)
    return 0


def cmd_surgery(args):
    out = Path(args.output)
    if out.exists() and not args.force:
        raise ValidationError(f"refusing to overwrite {args.output} without --force")
    tensors = archive.read_archive(args.input)
    seed = args.seed if args.seed is not None else _env_seed()
    new_tensors, report = surgery.surgery_pipeline(
        tensors,
        strategy=args.strategy,
        threshold=args.threshold,
        eps_mode=args.eps_mode,
        seed=seed,
    )
    archive.write_archive(new_tensors, out)
    report_path = Path(args.report) if args.report else out.with_suffix(".report.json")
    report_path.write_text(report.to_json())
    _log_config(out.parent, {
        "command": "surgery", "input": str(args.input), "output": str(out),
        "strategy": args.strategy, "threshold": args.threshold,
        "eps_mode": args.eps_mode, "seed": seed,
    })
    print(f"wrote {out} ({report.n_scaled} layers scaled, {report.n_replaced} filters replaced)")
    print(f"report: {report_path}")
    return 0


def cmd_gen_data(args):
    seed = args.seed if args.seed is not None else _env_seed()
    if args.preset:
        maker = datasets.source_preset if args.preset == "source" else datasets.target_preset
        spec = maker(seed=seed)
    else:
        spec = datasets.SyntheticSpec(
            n_classes=args.classes,
            n_images=args.images,
            image_size=args.size,
            freq_band=(args.freq_lo, args.freq_hi),
            noise=args.noise,
            seed=seed,
        )
    ds = datasets.generate_synthetic(spec)
    datasets.save_dataset(ds, args.output)
    _log_config(Path(args.output).parent, {"command": "gen-data", "spec": asdict(spec)})
    print(f"wrote {args.output}: {len(ds)} images, {ds.n_classes} classes")
    return 0


def cmd_pretrain(args):
    exp = _load_experiment(args.experiment, need_pretrain=True)
    ds = exp.resolve_dataset()
    _log_config(exp.output_dir, {"command": "pretrain", "resolved": exp.raw})
    model, metrics = run_pretrain(exp.pretrain_cfg, ds)
    final_loss = metrics.losses[-1] if metrics.losses else float("nan")
    print(f"checkpoint: {metrics.final_checkpoint}")
    print(f"epochs: {len(metrics.epochs)}  final-loss: {final_loss:.4f}")
    return 0


def cmd_probe(args):
    exp = _load_experiment(args.experiment, need_probe=True)
    cfg, checkpoint, label = exp.probe_cfg
    if args.checkpoint:
        checkpoint = args.checkpoint
    if checkpoint is None:
        checkpoint = str(Path(exp.output_dir) / "checkpoint.rpa")
    if not Path(checkpoint).exists():
        raise ValidationError(f"probe checkpoint not found: {checkpoint}")
    ds = exp.resolve_dataset()
    _log_config(exp.output_dir, {"command": "probe", "resolved": exp.raw,
                                 "checkpoint": checkpoint})
    # provenance labels for the report schema, from the pretrain section
    pretrain_section = exp.raw.get("pretrain") or {}
    surgery_section = exp.raw.get("surgery") or {}
    report = probe.evaluate(
        checkpoint, ds, cfg,
        label=label or checkpoint,
        method=pretrain_section.get("method", ""),
        init=pretrain_section.get("init", "random") if pretrain_section else "",
        surgery=surgery_section.get("mode", "off") if pretrain_section else "",
    )
    out = Path(exp.output_dir) / (args.name or "probe_report.json")
    report.write(out)
    runs = ", ".join(f"{a:.4f}" for a in report.runs)
    print(f"accuracy: {report.mean:.4f}  (runs: {runs})")
    print(f"report: {out}")
    return 0


def cmd_compare(args):
    reports = [probe.load_report(p) for p in args.reports]
    try:
        rows = probe.compare_runs(reports, baseline_index=args.baseline)
    except ValueError as e:
        raise ValidationError(str(e)) from None
    text = probe.comparison_to_csv(rows)
    sys.stdout.write(text)
    if args.csv:
        Path(args.csv).write_text(text)
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="reprime",
        description="Two-step self-supervised pretraining with checkpoint weight surgery.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="per-layer weight distribution summary")
    p.add_argument("checkpoint")
    p.add_argument("--csv", help="also write the table to this path")
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("surgery", help="scale layers and repair dead filters")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--strategy", choices=surgery.STRATEGIES, default="copy")
    p.add_argument("--threshold", type=float, default=surgery.DEAD_FILTER_THRESHOLD)
    p.add_argument("--eps-mode", choices=surgery.EPS_MODES, default="paper")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--report", help="where to write the JSON report")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_surgery)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset archive")
    p.add_argument("output")
    p.add_argument("--preset", choices=("source", "target"))
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--images", type=int, default=500)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--freq-lo", type=float, default=2.0)
    p.add_argument("--freq-hi", type=float, default=8.0)
    p.add_argument("--noise", type=float, default=0.08)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain", help="run pretraining from an experiment file")
    p.add_argument("experiment")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("probe", help="evaluate a checkpoint from an experiment file")
    p.add_argument("experiment")
    p.add_argument("--checkpoint", help="override the probe checkpoint")
    p.add_argument("--name", help="report filename inside output_dir")
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("compare", help="accuracy deltas between probe reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--baseline", type=int, default=0)
    p.add_argument("--csv")
    p.add_argument("--json")
    p.set_defaults(fn=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, archive.ArchiveError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failures
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
