"""Command-line surface: synth, train, detect, predict, eval.

Every command reads one INI config (plus optional --set overrides), writes
its artifacts into the configured output directory, and echoes the fully
resolved configuration next to them. Exit codes: 0 success, 2 config
error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, DataError, NumericError
from .metrics import (EvalReport, affiliation_prf1, classic_prf1,
                      point_adjust_demo, roc_auc)
from .model import MultiScaleModel
from .pipeline import (WindowConfig, load_csv, save_csv, save_precursors,
                       slide_windows, split_train_valid, synth_generate)
from .scoring import ScoreCalibration, Scorer, calibrate_threshold
from .trainer import fit, format_train_log


def _out_path(cfg: RunConfig, name: str) -> str:
    out = cfg["run"]["out_dir"]
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, name)


def _write_scores_csv(path: str, idx_name: str, idx: np.ndarray, score_name: str,
                      scores: np.ndarray, labels_pred: np.ndarray,
                      labels_true: np.ndarray | None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        header = f"{idx_name},{score_name},label_pred"
        if labels_true is not None:
            header += ",label_true"
        fh.write(header + "\n")
        for i in range(len(idx)):
            row = f"{int(idx[i])},{float(scores[i])!r},{int(labels_pred[i])}"
            if labels_true is not None:
                row += f",{int(labels_true[i])}"
            fh.write(row + "\n")


def _read_scores_csv(path: str) -> tuple[str, np.ndarray, np.ndarray, np.ndarray]:
    """Read a score CSV back; returns (kind, index, scores, labels_pred)."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read '{path}': {exc}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if header[:3] == ["index", "point_score", "label_pred"]:
        kind = "point"
    elif header[:3] == ["end_time", "p_hat", "label_pred"]:
        kind = "window"
    else:
        raise DataError(f"{path}: not a score CSV (header {','.join(header)})")
    if len(header) > 4 or (len(header) == 4 and header[3] != "label_true"):
        raise DataError(f"{path}: unexpected columns {','.join(header[3:])}")
    try:
        idx = np.array([int(r[0]) for r in body], dtype=np.int64)
        scores = np.array([float(r[1]) for r in body], dtype=np.float64)
        labels = np.array([int(r[2]) for r in body], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed row ({exc})") from None
    if not body:
        raise DataError(f"{path}: no score rows")
    return kind, idx, scores, labels


def _write_kv(path: str, kv: dict[str, object]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, val in kv.items():
            if isinstance(val, float):
                val = repr(val)
            fh.write(f"{key} = {val}\n")


# -- commands ---------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    scenario = cfg.synth_scenario()
    series, events = synth_generate(scenario, seed=cfg["run"]["seed"])
    series_path = _out_path(cfg, "series.csv")
    save_csv(series, series_path)
    save_precursors(events, _out_path(cfg, "precursors.csv"))
    cfg.save(_out_path(cfg, "effective-synth.ini"))
    n_anom = int(series.labels.sum())
    print(f"wrote {series.length} x {series.channels} series, {len(events)} events, "
          f"{n_anom} anomalous points")
    print(f"series: {series_path}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    series = load_csv(cfg["data"]["path"], has_labels=cfg["data"]["has_labels"])
    train_series, valid_series = split_train_valid(series, cfg["train"]["split_ratio"])
    model, state = fit(train_series, valid_series, cfg.model_config(),
                       cfg.train_config(), cfg.loss_config(), cfg.negatives_config())
    with open(_out_path(cfg, "train_log.tsv"), "w", encoding="utf-8") as fh:
        fh.write(format_train_log(state.history))

    # Calibrate both thresholds on the validation split at stride 1.
    scorer = Scorer(model, use_dist=True)
    w = cfg["window"]
    det = slide_windows(valid_series, WindowConfig(
        lookback=w["lookback"], lookforward=0, stride=1, task="detection"))
    cal = scorer.fit_calibration(det.windows)
    policy = cfg.threshold_policy()
    ratio = cfg["run"]["anomaly_ratio"]
    point_series = scorer.series_scores(det.windows, det.end_times, valid_series.length)
    cal.point_threshold = calibrate_threshold(point_series, policy, ratio)
    try:
        pred = slide_windows(valid_series, WindowConfig(
            lookback=w["lookback"], lookforward=w["lookforward"], stride=1,
            task="prediction"))
        cal.window_threshold = calibrate_threshold(
            scorer.window_probs(pred.windows), policy, ratio)
    except DataError:
        cal.window_threshold = None      # validation split too short for look-forward
    cal.save(_out_path(cfg, "calibration.kv"))

    ckpt = _out_path(cfg, "checkpoint.mrc")
    model.save(ckpt, extra={"task": w["task"], "lookforward": w["lookforward"],
                            "use_dist": scorer.use_dist})
    cfg.save(_out_path(cfg, "effective-train.ini"))
    print(f"trained {len(state.history)} epochs, best epoch {state.best_epoch} "
          f"(valid {state.best_valid:.6f})"
          + (", stopped early" if state.stopped_early else ""))
    print(f"checkpoint: {ckpt}")
    return 0


def _load_model(cfg: RunConfig, checkpoint: str | None,
                calibration: str | None) -> tuple[MultiScaleModel, dict, ScoreCalibration]:
    ckpt = checkpoint or _out_path(cfg, "checkpoint.mrc")
    calp = calibration or _out_path(cfg, "calibration.kv")
    if not os.path.exists(ckpt):
        raise DataError(f"cannot read checkpoint '{ckpt}'")
    if not os.path.exists(calp):
        raise DataError(f"cannot read calibration file '{calp}'")
    model, extra = MultiScaleModel.load(ckpt)
    if cfg["window"]["lookback"] != model.cfg.window:
        raise ConfigError(f"config lookback {cfg['window']['lookback']} does not "
                          f"match checkpoint window {model.cfg.window}")
    return model, extra, ScoreCalibration.load(calp)


def _resolve_threshold(cfg: RunConfig, stored: float | None, which: str) -> float:
    policy = cfg.threshold_policy()
    if policy.kind == "fixed":
        return float(policy.value)
    if stored is None:
        raise ConfigError(f"calibration file has no {which} threshold")
    return stored


def cmd_detect(cfg: RunConfig, checkpoint: str | None, calibration: str | None) -> int:
    model, extra, cal = _load_model(cfg, checkpoint, calibration)
    series = load_csv(cfg["data"]["path"], has_labels=cfg["data"]["has_labels"])
    det = slide_windows(series, WindowConfig(
        lookback=model.cfg.window, lookforward=0, stride=1, task="detection"))
    scorer = Scorer(model, use_dist=bool(extra.get("use_dist", True)), calibration=cal)
    scores = scorer.series_scores(det.windows, det.end_times, series.length)
    thr = _resolve_threshold(cfg, cal.point_threshold, "point")
    labels_pred = (scores >= thr).astype(np.int64)
    path = _out_path(cfg, "point_scores.csv")
    _write_scores_csv(path, "index", np.arange(series.length), "point_score",
                      scores, labels_pred, series.labels)
    cfg.save(_out_path(cfg, "effective-detect.ini"))
    print(f"scored {series.length} points at threshold {thr!r}, "
          f"flagged {int(labels_pred.sum())}")
    print(f"scores: {path}")
    return 0


def cmd_predict(cfg: RunConfig, checkpoint: str | None, calibration: str | None) -> int:
    model, extra, cal = _load_model(cfg, checkpoint, calibration)
    series = load_csv(cfg["data"]["path"], has_labels=cfg["data"]["has_labels"])
    w = cfg["window"]
    if w["lookforward"] < 1:
        raise ConfigError("prediction needs window.lookforward >= 1")
    pred = slide_windows(series, WindowConfig(
        lookback=model.cfg.window, lookforward=w["lookforward"], stride=w["stride"],
        task="prediction"))
    scorer = Scorer(model, use_dist=bool(extra.get("use_dist", True)), calibration=cal)
    probs = scorer.window_probs(pred.windows)
    thr = _resolve_threshold(cfg, cal.window_threshold, "window")
    labels_pred = (probs >= thr).astype(np.int64)
    path = _out_path(cfg, "window_probs.csv")
    _write_scores_csv(path, "end_time", pred.end_times, "p_hat",
                      probs, labels_pred, pred.labels)
    cfg.save(_out_path(cfg, "effective-predict.ini"))
    print(f"scored {len(probs)} windows at threshold {thr!r}, "
          f"flagged {int(labels_pred.sum())}")
    print(f"probabilities: {path}")
    return 0


def _report_lines(kind: str, report: EvalReport) -> list[str]:
    lines = [f"{kind}: precision {report.precision:.4f}  recall {report.recall:.4f}"
             f"  f1 {report.f1:.4f}"]
    if report.kind == "classic":
        lines.append(f"  counts: tp {report.tp}  fp {report.fp}  fn {report.fn}")
    else:
        lines.append(f"  events: {report.n_events}  zones with predictions: "
                     f"{report.n_zones_with_pred}")
    if report.flags:
        lines.append(f"  flags: {','.join(report.flags)}")
    return lines


def cmd_eval(cfg: RunConfig, pred_path: str, truth_path: str, task: str | None,
             show_point_adjust: bool) -> int:
    task = task or cfg["window"]["task"]
    kind, idx, scores, labels_pred = _read_scores_csv(pred_path)
    want = "point" if task == "detection" else "window"
    if kind != want:
        raise DataError(f"task/label mismatch: {task} evaluation needs a "
                        f"{want}-score CSV, '{pred_path}' holds {kind} scores")
    truth = load_csv(truth_path, has_labels=True)
    if task == "detection":
        if len(idx) != truth.length or (idx != np.arange(truth.length)).any():
            raise DataError("prediction rows do not cover the truth series "
                            f"({len(idx)} rows, {truth.length} points)")
        truth_labels = truth.labels
    else:
        f = cfg["window"]["lookforward"]
        if f < 1:
            raise ConfigError("prediction evaluation needs window.lookforward >= 1")
        if len(idx) == 0 or idx.min() < 0 or idx.max() + f >= truth.length:
            raise DataError("window end times fall outside the truth series")
        truth_labels = np.array(
            [truth.labels[e + 1: e + 1 + f].max() for e in idx], dtype=np.int64)

    classic = classic_prf1(labels_pred, truth_labels)
    aff = affiliation_prf1(labels_pred, truth_labels)
    kv: dict[str, object] = {"task": task, "n": len(idx)}
    kv.update(classic.as_kv("classic."))
    kv.update(aff.as_kv("affiliation."))
    lines = [f"task: {task}  rows: {len(idx)}"]
    lines += _report_lines("classic", classic)
    lines += _report_lines("affiliation", aff)
    if truth_labels.min() != truth_labels.max():
        auc = roc_auc(scores, truth_labels)
        kv["roc_auc"] = auc
        lines.append(f"roc_auc: {auc:.4f}")
    else:
        kv["roc_auc_flags"] = "single_class"
        lines.append("roc_auc: undefined (single-class truth)")
    if show_point_adjust:
        adjusted = point_adjust_demo(labels_pred, truth_labels)["adjusted"]
        kv.update(adjusted.as_kv("point_adjust."))
        lines += _report_lines("point-adjusted (demo, inflates scores)", adjusted)

    with open(_out_path(cfg, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_kv(_out_path(cfg, "report.kv"), kv)
    cfg.save(_out_path(cfg, "effective-eval.ini"))
    for line in lines:
        print(line)
    return 0


# -- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsadkit",
        description="Multi-scale anomaly prediction and detection toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name: str, text: str) -> argparse.ArgumentParser:
        cmd = sub.add_parser(name, help=text, description=text)
        cmd.add_argument("--config", default=None, metavar="FILE",
                         help="INI configuration file (defaults apply if omitted)")
        cmd.add_argument("--set", action="append", default=[], dest="overrides",
                         metavar="SECTION.KEY=VALUE", help="override one config entry")
        return cmd

    add("synth", "generate a labeled synthetic series with precursor metadata")
    add("train", "train a model, calibrate thresholds, write a checkpoint")
    for name, text in (("detect", "score every point of a series"),
                       ("predict", "score look-forward windows of a series")):
        cmd = add(name, text)
        cmd.add_argument("--checkpoint", default=None, metavar="FILE")
        cmd.add_argument("--calibration", default=None, metavar="FILE")
    cmd = add("eval", "compare a score CSV against a labeled truth series")
    cmd.add_argument("--pred", required=True, metavar="FILE")
    cmd.add_argument("--truth", required=True, metavar="FILE")
    cmd.add_argument("--task", choices=("detection", "prediction"), default=None,
                     help="defaults to the configured window task")
    cmd.add_argument("--point-adjust", action="store_true",
                     help="also report point-adjusted scores (demo only)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "detect":
            return cmd_detect(cfg, args.checkpoint, args.calibration)
        if args.command == "predict":
            return cmd_predict(cfg, args.checkpoint, args.calibration)
        return cmd_eval(cfg, args.pred, args.truth, args.task, args.point_adjust)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
