"""Command-line entry point: ``cwat {synth,preprocess,train,eval,flops,export-latents}``.

Exit codes: 1 usage/config, 2 data or parse failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

from cwat import config as cfgmod
from cwat.checkpoint import read_checkpoint, write_checkpoint
from cwat.dataset import SegmentSet
from cwat.errors import ConfigError, DataError, NumericError, UsageError
from cwat.evaluation import cost_table, evaluation_report, metrics_table, model_cost, predict, write_report
from cwat.model import PRESETS, CwaT, preset
from cwat.numerics import Tensor, no_grad
from cwat.preprocess import MIN_RECORDING_SECONDS, TARGET_RATE_HZ, preprocess_directory
from cwat.synth import SynthSpec, write_edf_fixtures, write_segment_cache
from cwat.training import PHASE_CHOICES, TrainConfig, split_indices_by_subject, train, write_metrics

log = logging.getLogger("cwat")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
FLAG_KEYS = {
    "seed": "train.seed",
    "phase": "train.phase",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "lr": "train.lr",
    "warmup_steps": "train.warmup_steps",
    "weight_decay": "train.weight_decay",
    "val_fraction": "train.val_fraction",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def _manifest_path(path):
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.csv")
    if not os.path.isfile(path):
        raise DataError(f"no segment manifest at {path}")
    return path


def _run_dir(args, tag):
    if args.out:
        path = args.out
    else:
        root = os.environ.get("CWAT_RUN_DIR", "runs")
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = os.path.join(root, f"{stamp}-{tag}")
        n = 1
        while os.path.exists(path):
            n += 1
            path = os.path.join(root, f"{stamp}-{tag}-{n}")
    os.makedirs(path, exist_ok=True)
    return path


def _load_model(checkpoint):
    """Rebuild model and train config from a checkpoint; returns ``(model, train_config, sections)``."""
    text, sections = read_checkpoint(checkpoint)
    model_config, train_config = cfgmod.from_text(text)
    model = CwaT(model_config)
    _load_params(model, sections)
    return model, train_config, sections


def _load_params(model, sections):
    for section, params in model.sections().items():
        stored = sections.get(section, {})
        for name, p in params.items():
            if name not in stored:
                raise DataError(f"checkpoint section {section!r} lacks tensor {name!r}")
            if stored[name].shape != p.shape:
                raise DataError(f"{section}.{name}: checkpoint shape {stored[name].shape} != model {p.shape}")
            p.data = stored[name].copy()


def _effective_config(args, base=None):
    overrides = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                overrides.update(cfgmod.parse_text(fh.read()))
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc.strerror}") from None
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if base is None:
        base = (preset(getattr(args, "preset", None) or "default"), TrainConfig())
    return cfgmod.build(overrides, base)


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    spec = SynthSpec(n_cases=args.cases, segments_per_case=args.segments, seed=args.seed or 0,
                     rate_hz=args.rate)
    if args.format == "edf":
        paths = write_edf_fixtures(spec, args.out)
        print(f"wrote {len(paths)} EDF files under {args.out}")
    else:
        manifest = write_segment_cache(spec, args.out)
        print(manifest)
    return 0


def cmd_preprocess(args):
    manifest = preprocess_directory(
        args.data, args.out, workers=args.workers,
        target_rate=args.target_rate, min_duration_seconds=args.min_duration or None,
    )
    print(manifest)
    return 0


def cmd_train(args):
    data = SegmentSet.from_manifest(_manifest_path(args.data))
    base = None
    sections = None
    if args.checkpoint:
        text, sections = read_checkpoint(args.checkpoint)
        base = cfgmod.from_text(text)
        if args.preset:
            raise ConfigError("--preset cannot be combined with --checkpoint")
    model_config, train_config = _effective_config(args, base)
    model = CwaT(model_config, seed=train_config.seed)
    if sections is not None:
        _load_params(model, sections)

    run = _run_dir(args, args.tag or train_config.phase)
    snapshot = os.path.join(run, "config.txt")
    text = cfgmod.to_text(model_config, train_config)
    with open(snapshot, "w") as fh:
        fh.write(text)
    os.chmod(snapshot, 0o444)

    def show(row):
        acc = "" if row["accuracy"] is None else f" acc={row['accuracy']:.4f}"
        log.info("%s epoch %d %s loss=%.6f%s", row["phase"], row["epoch"], row["split"], row["loss"], acc)

    result, _, _ = train(model, data, train_config, on_row=show)
    write_metrics(os.path.join(run, "metrics.csv"), result.rows)
    out = dict(model.sections())
    out["adam"] = result.optimizer.state_tensors()
    write_checkpoint(os.path.join(run, "checkpoint.ck"), text, out)
    print(run)
    return 0


def _eval_set(args, train_config, data):
    if args.split == "all":
        return data
    _, val_idx = split_indices_by_subject(data.subject_ids, list(data.labels),
                                          train_config.val_fraction, train_config.seed)
    return data.subset(val_idx)


def cmd_eval(args):
    if not os.path.isfile(args.checkpoint):
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    model, train_config, _ = _load_model(args.checkpoint)
    data = SegmentSet.from_manifest(_manifest_path(args.data))
    subset = _eval_set(args, train_config, data)
    report = evaluation_report(predict(model, subset), model.config)
    path = args.out or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "report.json")
    write_report(path, report)
    print(metrics_table(report))
    print(path)
    return 0


def cmd_flops(args):
    model_config, _ = _effective_config(args)
    report = model_cost(model_config)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(cost_table(report, model_config))
    return 0


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def cmd_export_latents(args):
    if not os.path.isfile(args.checkpoint):
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    model, _, _ = _load_model(args.checkpoint)
    data = SegmentSet.from_manifest(_manifest_path(args.data))
    os.makedirs(args.out, exist_ok=True)
    names = list(_channel_names(model.config.cae.channels))
    count = len(data) if args.limit is None else min(args.limit, len(data))
    for i in range(count):
        x = data.load([i])[0]
        with no_grad():
            z = model.encode(Tensor(x))
            recon = model.cae.decode(z).data
            model.classifier.classify(z)
        stem = f"{data.info[i].case_id}_{i:05d}"
        rows = [["kind", "channel"] + [f"v{j}" for j in range(x.shape[1])]]
        for kind, arr in (("raw", x), ("reconstruction", recon), ("latent", z.data)):
            rows += [[kind, names[c]] + [repr(float(v)) for v in arr[c]] for c in range(arr.shape[0])]
        _write_rows(os.path.join(args.out, f"{stem}_signals.csv"), rows)
        for layer, weights in enumerate(model.classifier.last_attention):
            att = [[""] + names] + [[names[r]] + [repr(float(v)) for v in weights[r]] for r in range(len(names))]
            _write_rows(os.path.join(args.out, f"{stem}_attention{layer}.csv"), att)
    print(args.out)
    return 0


def _channel_names(n):
    from cwat.edfio import MONTAGE_10_20

    return MONTAGE_10_20 if n == len(MONTAGE_10_20) else tuple(f"ch{i}" for i in range(n))


# ---------------------------------------------------------------- parser


def _train_flags(p):
    p.add_argument("--config", help="key=value file merged under the flags")
    p.add_argument("--seed", type=int)
    p.add_argument("--phase", choices=PHASE_CHOICES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--preset", choices=sorted(PRESETS))


def build_parser():
    parser = _Parser(prog="cwat", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a labelled synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--segments", type=int, default=4, help="two-minute segments per case")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=float, default=TARGET_RATE_HZ)
    p.add_argument("--format", choices=("cache", "edf"), default="cache")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="EDF directory -> segment cache")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--target-rate", type=float, default=TARGET_RATE_HZ)
    p.add_argument("--min-duration", type=float, default=MIN_RECORDING_SECONDS,
                   help="skip recordings shorter than this many seconds (0 keeps all)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one or more phases")
    p.add_argument("--data", required=True, help="segment manifest or its directory")
    p.add_argument("--out", help="run directory (default: $CWAT_RUN_DIR or runs/<timestamp>-<tag>)")
    p.add_argument("--tag")
    p.add_argument("--checkpoint", help="initialise from this checkpoint")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-signal and per-case metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("val", "all"), default="val")
    p.add_argument("--out", help="report path (default: report.json beside the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="FLOP and parameter report")
    p.add_argument("--preset", choices=sorted(PRESETS), default="default")
    p.add_argument("--config")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("export-latents", help="CSV of raw, reconstructed and latent rows plus attention")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_export_latents)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"cwat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"cwat: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError) as exc:
        print(f"cwat: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
