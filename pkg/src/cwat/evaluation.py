"""Per-signal and per-case metrics, and the whole-model FLOP/parameter report.

Abnormal (label 1) is the positive class.  A case is positive only when
strictly more than half of its signals are predicted positive.  Rates whose
denominator is zero are reported as ``"n/a"``.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from cwat.cae import cae_cost_rows
from cwat.classifier import classifier_cost_rows, multi_head_reference_params
from cwat.errors import DataError, InputError
from cwat.model import RAW_TRANSFORMER
from cwat.numerics import no_grad

UNDEFINED = "n/a"
COMPONENTS = ("cae_encoder", "cae_decoder", "classifier")

# published figures, reproduced as printed
REFERENCE = {
    "cwat": {"flops": 202.0e6, "params": 2.9e6, "label": "202.0M / 2.9M"},
    "single_head_transformer": {"flops": 11.9e9, "params": 1.3e9, "label": "11.9G / 1.3G"},
    "fusion_cnn_params": {"as_printed": "3.4G", "note": "listed as 3.4G in the table, 3.4M in the text"},
}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise InputError("confusion counts must be >= 0")

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


def _binary(value, what):
    if value not in (0, 1):
        raise InputError(f"{what} must be 0 or 1, got {value!r}")
    return int(value)


def confusion(preds):
    """Count outcomes over records with ``label`` and ``pred`` keys."""
    preds = list(preds)
    if not preds:
        raise InputError("confusion needs at least one prediction")
    tp = tn = fp = fn = 0
    for p in preds:
        y, yhat = _binary(p["label"], "label"), _binary(p["pred"], "pred")
        if y and yhat:
            tp += 1
        elif y:
            fn += 1
        elif yhat:
            fp += 1
        else:
            tn += 1
    return ConfusionCounts(tp, tn, fp, fn)


def _ratio(num, den):
    return num / den if den > 0 else UNDEFINED


def rates(c):
    return {
        "sensitivity": _ratio(c.tp, c.tp + c.fn),
        "specificity": _ratio(c.tn, c.tn + c.fp),
        "accuracy": _ratio(c.tp + c.tn, c.total),
    }


def per_case_vote(signal_preds):
    """Collapse signal-level predictions to one per case (strict majority, ties negative)."""
    cases = OrderedDict()
    for p in signal_preds:
        entry = cases.setdefault(p["case_id"], {"label": p["label"], "votes": 0, "n": 0})
        if p["label"] != entry["label"]:
            raise DataError(f"case {p['case_id']!r} mixes labels {entry['label']} and {p['label']}")
        entry["votes"] += _binary(p["pred"], "pred")
        entry["n"] += 1
    return [
        {"case_id": cid, "label": e["label"], "pred": int(2 * e["votes"] > e["n"]),
         "positive_signals": e["votes"], "signals": e["n"]}
        for cid, e in cases.items()
    ]


def summarize(preds):
    counts = confusion(preds)
    return {**rates(counts), "counts": asdict(counts)}


def predict(model, data, chunk=16):
    """Eval-mode predictions for every segment of ``data``."""
    out = []
    labels = data.labels
    with no_grad():
        for start in range(0, len(data), chunk):
            idx = list(range(start, min(start + chunk, len(data))))
            logits = model.forward(data.load(idx)).data
            for i, row in zip(idx, logits):
                out.append({"case_id": data.info[i].case_id, "label": int(labels[i]),
                            "pred": int(np.argmax(row))})
    return out


# ---------------------------------------------------------------- cost report


@dataclass
class CostReport:
    rows: list
    raw_transformer_rows: list

    def component_totals(self):
        totals = {c: {"flops": 0, "params": 0} for c in COMPONENTS}
        for r in self.rows:
            totals[r.component]["flops"] += r.flops
            totals[r.component]["params"] += r.params
        return totals

    @property
    def inference_flops(self):
        t = self.component_totals()
        return t["cae_encoder"]["flops"] + t["classifier"]["flops"]

    @property
    def inference_params(self):
        t = self.component_totals()
        return t["cae_encoder"]["params"] + t["classifier"]["params"]

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    @property
    def raw_transformer_flops(self):
        return sum(r.flops for r in self.raw_transformer_rows)

    @property
    def raw_transformer_params(self):
        return sum(r.params for r in self.raw_transformer_rows)

    def to_dict(self):
        ref = REFERENCE["cwat"]
        raw_ref = REFERENCE["single_head_transformer"]
        return {
            "rows": [
                {"name": r.name, "component": r.component, "flops": r.flops, "params": r.params,
                 "standard_flops": r.standard_flops,
                 "channelwise_over_standard": (r.flops / r.standard_flops) if r.standard_flops else None}
                for r in self.rows
            ],
            "totals": self.component_totals(),
            "inference_flops": self.inference_flops,
            "inference_params": self.inference_params,
            "params_with_decoder": self.total_params,
            "reference": REFERENCE,
            "gap": {
                "flops_ratio_to_reference": self.inference_flops / ref["flops"],
                "params_ratio_to_reference": self.inference_params / ref["params"],
            },
            "raw_transformer": {
                "flops": self.raw_transformer_flops,
                "params": self.raw_transformer_params,
                "flops_ratio_to_reference": self.raw_transformer_flops / raw_ref["flops"],
                "flops_ratio_to_cwat": self.raw_transformer_flops / self.inference_flops,
            },
        }


def model_cost(model_config, raw_config=RAW_TRANSFORMER):
    """Cost rows of the encoder, decoder and classifier for one forward pass of one segment."""
    rows = cae_cost_rows(model_config.cae) + classifier_cost_rows(
        model_config.transformer, model_config.cae.channels
    )
    raw = classifier_cost_rows(raw_config, model_config.cae.channels)
    return CostReport(rows=rows, raw_transformer_rows=raw)


def _si(value):
    for scale, suffix in ((1e9, "G"), (1e6, "M"), (1e3, "K")):
        if abs(value) >= scale:
            return f"{value / scale:.1f}{suffix}"
    return f"{value:g}"


def cost_table(report, model_config=None):
    lines = [f"{'layer':<22}{'component':<13}{'FLOPs':>14}{'params':>12}{'cw/std':>10}"]
    for r in report.rows:
        ratio = ""
        if r.standard_flops:
            ratio = (f"1/{r.standard_flops // r.flops}" if r.flops and r.standard_flops % r.flops == 0
                     else f"{r.flops}/{r.standard_flops}")
        lines.append(f"{r.name:<22}{r.component:<13}{r.flops:>14,}{r.params:>12,}{ratio:>10}")
    lines.append("")
    for comp, t in report.component_totals().items():
        lines.append(f"total {comp:<16}{'':<13}{t['flops']:>14,}{t['params']:>12,}")
    ref = REFERENCE["cwat"]
    raw_ref = REFERENCE["single_head_transformer"]
    lines += [
        "",
        f"{'model':<28}{'computed':>22}{'reference':>18}",
        f"{'CwA-T (encoder+classifier)':<28}"
        f"{_si(report.inference_flops) + ' / ' + _si(report.inference_params):>22}{ref['label']:>18}",
        f"{'single-head transformer':<28}"
        f"{_si(report.raw_transformer_flops) + ' / ' + _si(report.raw_transformer_params):>22}"
        f"{raw_ref['label']:>18}",
        f"FLOPs gap to reference: x{report.inference_flops / ref['flops']:.2f}; "
        f"raw transformer / CwA-T: x{report.raw_transformer_flops / report.inference_flops:.1f} "
        f"(reference x{raw_ref['flops'] / ref['flops']:.1f})",
        f"decoder (training only): {_si(report.component_totals()['cae_decoder']['flops'])} FLOPs, "
        f"{_si(report.component_totals()['cae_decoder']['params'])} params",
        f"FusionCNN params as printed: {REFERENCE['fusion_cnn_params']['as_printed']} "
        f"({REFERENCE['fusion_cnn_params']['note']})",
    ]
    if model_config is not None:
        t = model_config.transformer
        lines.append(
            "multi-head reference formula 3*d*D_orig*d_k = "
            f"{multi_head_reference_params(t.d_model, model_config.cae.input_length, t.d_k):,} (not used)"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------- report


def _fmt_rate(v):
    return UNDEFINED if v == UNDEFINED else f"{100 * v:.1f}%"


def evaluation_report(signal_preds, model_config=None):
    case_preds = per_case_vote(signal_preds)
    report = {"per_signal": summarize(signal_preds), "per_case": summarize(case_preds)}
    if model_config is not None:
        report["cost"] = model_cost(model_config).to_dict()
    return report


def metrics_table(report):
    lines = [f"{'level':<12}{'sensitivity':>12}{'specificity':>12}{'accuracy':>10}"]
    for level in ("per_signal", "per_case"):
        r = report[level]
        lines.append(f"{level:<12}{_fmt_rate(r['sensitivity']):>12}{_fmt_rate(r['specificity']):>12}"
                     f"{_fmt_rate(r['accuracy']):>10}")
    return "\n".join(lines)


def write_report(path, report):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
