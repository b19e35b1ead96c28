"""End-to-end acceptance checks for the shipped package.

Ten checks cover the numeric kernels (gradients, spectra, index math,
loss closed forms, negative-generator statistics, affiliation scoring)
and the full pipeline (reference detection and prediction runs, ablation
direction, byte-level reproducibility). Each test prints one PASS/FAIL
summary line; run with `pytest tests/test_acceptance.py -v -s` to see
them. The reference chains train real models, so the module takes a few
minutes on a laptop CPU.
"""

from __future__ import annotations

import math
import os
import pathlib
import shutil
import time

import numpy as np
import pytest

from tsadkit import cli
from tsadkit import tensor as T
from tsadkit.losses import (floor_index, interval_contrastive, point_contrastive,
                            pool_interval, reconstruction_loss, upsample_reps)
from tsadkit.metrics import affiliation_prf1, point_adjust_demo
from tsadkit.model import ModelConfig, MultiScaleModel
from tsadkit.multiscale import amplitude_spectrum, dominant_periods, multiscale_patch_batch
from tsadkit.negatives import STRATEGIES, NegativeGenConfig, generate_negative
from tsadkit.config import load_config
from tsadkit.pipeline import (WindowConfig, load_csv, load_precursors, slide_windows,
                              split_train_valid, synth_generate)
from tsadkit.rng import make_rng
from tsadkit.scoring import Scorer, ThresholdPolicy, calibrate_threshold
from tsadkit.trainer import Trainer

from helpers import sampled_grad_errors

REPO = pathlib.Path(__file__).resolve().parent.parent
REFERENCE_DETECT = str(REPO / "configs" / "reference.ini")
REFERENCE_PREDICT = str(REPO / "configs" / "reference-predict.ini")

LOOKBACK = 32
LOOKFORWARD = 4
SCENARIO_SEED = 7
MATRIX_SEEDS = (7, 8, 9)


def _line(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"[{num:>2}/10] {name}: {'PASS' if ok else 'FAIL'}  {detail}")


def _read_kv(path: pathlib.Path) -> dict[str, str]:
    out = {}
    for raw in path.read_text(encoding="utf-8").splitlines():
        key, _, val = raw.partition(" = ")
        out[key] = val
    return out


def _run_cli(argv: list[str]) -> None:
    code = cli.main(argv)
    assert code == 0, f"cli {argv[0]} exited {code}"


# -- shared reference chains ---------------------------------------------------------

@pytest.fixture(scope="module")
def detect_chain(tmp_path_factory):
    """synth -> train -> detect -> eval with the reference detection config."""
    out = tmp_path_factory.mktemp("reference-detect")
    over = []
    for pair in (f"run.out_dir={out}", f"data.path={out}/series.csv"):
        over += ["--set", pair]
    t0 = time.perf_counter()
    _run_cli(["synth", "--config", REFERENCE_DETECT] + over)
    _run_cli(["train", "--config", REFERENCE_DETECT] + over)
    _run_cli(["detect", "--config", REFERENCE_DETECT] + over)
    _run_cli(["eval", "--config", REFERENCE_DETECT, "--pred", f"{out}/point_scores.csv",
              "--truth", f"{out}/series.csv"] + over)
    elapsed = time.perf_counter() - t0
    return {"out": out, "kv": _read_kv(out / "report.kv"), "elapsed": elapsed}


@pytest.fixture(scope="module")
def predict_chain(tmp_path_factory):
    """synth -> train -> predict -> eval with the reference prediction config."""
    out = tmp_path_factory.mktemp("reference-predict")
    over = []
    for pair in (f"run.out_dir={out}", f"data.path={out}/series.csv"):
        over += ["--set", pair]
    t0 = time.perf_counter()
    _run_cli(["synth", "--config", REFERENCE_PREDICT] + over)
    _run_cli(["train", "--config", REFERENCE_PREDICT] + over)
    _run_cli(["predict", "--config", REFERENCE_PREDICT] + over)
    _run_cli(["eval", "--config", REFERENCE_PREDICT, "--pred", f"{out}/window_probs.csv",
              "--truth", f"{out}/series.csv"] + over)
    elapsed = time.perf_counter() - t0
    probs = np.loadtxt(out / "window_probs.csv", delimiter=",", skiprows=1)
    return {"out": out, "kv": _read_kv(out / "report.kv"), "elapsed": elapsed,
            "end_times": probs[:, 0].astype(np.int64), "p_hat": probs[:, 1],
            "label_true": probs[:, 3].astype(np.int64)}


# -- 1: gradients of randomly sized models and losses --------------------------------

def _random_model(rng: np.random.Generator) -> tuple[MultiScaleModel, int]:
    while True:
        d = int(rng.choice([4, 8]))
        heads = int(rng.choice([1, 2]))
        scales = int(rng.integers(1, 4))
        window = int(rng.choice([8, 12, 16]))
        if window < 2 << (scales - 1):
            continue
        cfg = ModelConfig(window=window, d_model=d, n_blocks=int(rng.integers(1, 3)),
                          n_heads=heads, patch_size=2, n_scales=scales, dropout=0.0,
                          share_scales=bool(rng.integers(0, 2)), ffn_dim=2 * d)
        model = MultiScaleModel(cfg, make_rng(int(rng.integers(1 << 30))))
        n_params = sum(p.data.size for p in model.parameters())
        if n_params <= 5000:
            return model, n_params


def test_01_gradient_suite():
    rng = make_rng(1001)
    t0 = time.perf_counter()
    worst = 0.0
    n_configs = 20
    for k in range(n_configs):
        model, n_params = _random_model(rng)
        cfg = model.cfg
        s = 2
        x = rng.normal(size=(s, cfg.window))
        patches = multiscale_patch_batch(x, cfg.patch_size, cfg.n_scales)
        target = rng.normal(size=(s, cfg.window))
        weights = 1.0 + rng.random(size=(s, cfg.window))
        variant = k % 3 if cfg.n_scales >= 2 else 0
        t_len = max(cfg.n_patches)
        neg_i = rng.normal(size=(1, cfg.n_scales, s, cfg.d_model))
        neg_p = rng.normal(size=(s, cfg.n_scales, t_len, cfg.d_model))

        def build():
            reps = model.encode_patches(patches)
            loss = reconstruction_loss(target, model.decode(reps), weights)
            if variant == 1:
                pooled = [T.reshape(pool_interval(r), (1, 1, s, cfg.d_model))
                          for r in reps]
                con = interval_contrastive(T.concat(pooled, axis=1),
                                           T.as_tensor(neg_i))
                loss = T.add(loss, con)
            elif variant == 2:
                ups = [T.reshape(upsample_reps(r, t_len), (s, 1, t_len, cfg.d_model))
                       for r in reps]
                con = point_contrastive(T.concat(ups, axis=1), T.as_tensor(neg_p))
                loss = T.add(loss, con)
            return loss

        err = sampled_grad_errors(build, model.parameters(), rng, n_coords=4)
        worst = max(worst, err)
        assert err < 1e-4, f"config {k} ({n_params} params): rel err {err:.2e}"
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 120.0
    _line(1, "gradient suite", ok,
          f"{n_configs} configs, worst rel err {worst:.2e}, {elapsed:.1f}s")
    assert elapsed < 120.0


# -- 2: spectrum against a brute-force transform --------------------------------------

def _brute_amplitudes(x: np.ndarray) -> np.ndarray:
    h = x.size
    out = np.empty(h // 2 + 1)
    for k in range(h // 2 + 1):
        out[k] = abs(np.sum(x * np.exp(-2j * np.pi * k * np.arange(h) / h)))
    return out


def test_02_spectral_oracle():
    rng = make_rng(2002)
    t0 = time.perf_counter()
    worst = 0.0
    for h in (8, 16, 32, 64):
        for _ in range(5):
            x = rng.normal(size=h)
            got = amplitude_spectrum(x).amplitudes
            worst = max(worst, float(np.abs(got - _brute_amplitudes(x)).max()))
    assert worst < 1e-9

    recovered = 0
    checked = 0
    for h in (8, 16, 32, 64):
        for q in range(4, h // 2 + 1):
            if h % q:
                continue
            checked += 1
            hist = np.sin(2 * np.pi * np.arange(4 * h) / q)
            if dominant_periods(hist, h).periods[0] == q:
                recovered += 1
    elapsed = time.perf_counter() - t0
    ok = recovered == checked and elapsed < 30.0
    _line(2, "spectral oracle", ok,
          f"max dft err {worst:.1e}, {recovered}/{checked} periods exact, {elapsed:.1f}s")
    assert recovered == checked
    assert elapsed < 30.0


# -- 3: upsample source index, exhaustively ------------------------------------------

def test_03_upsample_index():
    t0 = time.perf_counter()
    for l_orig in range(1, 33):
        for l_new in range(1, 257):
            got = floor_index(np.arange(l_new), l_orig, l_new)
            want = [(i * l_orig) // l_new for i in range(l_new)]
            assert got.tolist() == want, (l_orig, l_new)
    elapsed = time.perf_counter() - t0
    _line(3, "upsample index", elapsed < 5.0,
          f"32 x 256 sizes exhaustive, {elapsed:.1f}s")
    assert elapsed < 5.0


# -- 4: contrastive losses on hand-solvable inputs ------------------------------------

def test_04_contrastive_closed_forms():
    d = 6
    v = np.zeros(d)
    v[0] = 1.0
    pos_i = np.broadcast_to(v, (1, 3, 2, d)).copy()
    ival = float(interval_contrastive(T.as_tensor(pos_i), T.as_tensor(pos_i.copy())).data)
    err_i = abs(ival - math.log(2.0))

    pos_p = np.broadcast_to(v, (1, 3, 4, d)).copy()
    pval = float(point_contrastive(T.as_tensor(pos_p), T.as_tensor(pos_p.copy())).data)
    err_p = abs(pval - (-math.log(2.0 / 10.0)))
    ok = err_i < 1e-9 and err_p < 1e-9
    _line(4, "contrastive closed forms", ok,
          f"interval err {err_i:.1e}, point err {err_p:.1e}")
    assert err_i < 1e-9
    assert err_p < 1e-9


# -- 5: negative generator statistics --------------------------------------------------

def test_05_negative_statistics():
    rng = make_rng(5005)
    cfg = NegativeGenConfig(strategy="scale", sigma=0.5, noise_ratio=1.0)
    ones = np.ones((1, 1))
    draws = np.array([generate_negative(ones, "scale", cfg, rng, 2)[0, 0]
                      for _ in range(10_000)])
    mean_err = abs(draws.mean() - 1.0)
    std_err = abs(draws.std() - 0.5)
    assert mean_err < 0.02
    assert std_err < 0.02

    flip = NegativeGenConfig(noise_ratio=1.0)
    ints = make_rng(5).integers(-8, 9, size=(4, 8)).astype(np.float64)
    for strat in ("hmirror", "vmirror"):
        once = generate_negative(ints, strat, flip, make_rng(6), 2)
        twice = generate_negative(once, strat, flip, make_rng(7), 2)
        assert np.array_equal(twice, ints), strat

    still = NegativeGenConfig(noise_ratio=0.0)
    x = make_rng(8).normal(size=(4, 8))
    identity = all(np.array_equal(generate_negative(x, s, still, make_rng(9), 2), x)
                   for s in STRATEGIES)
    assert identity
    _line(5, "negative statistics", True,
          f"scale mean off {mean_err:.4f}, std off {std_err:.4f}, "
          f"2 involutions, {len(STRATEGIES)} identities")


# -- 6: affiliation scoring ------------------------------------------------------------

def test_06_affiliation_oracle():
    truth = np.zeros(50, dtype=np.int64)
    truth[7:12] = 1
    truth[30:38] = 1
    perfect = affiliation_prf1(truth, truth)
    assert perfect.precision == 1.0 and perfect.recall == 1.0

    single = np.zeros(30, dtype=np.int64)
    single[10:20] = 1
    rep = affiliation_prf1(np.ones(30, dtype=np.int64), single)
    prec_err = abs(rep.precision - 38.0 / 87.0)
    assert prec_err < 1e-9
    assert rep.recall == 1.0

    truth2 = np.zeros(40, dtype=np.int64)
    truth2[10:30] = 1
    sparse = np.zeros(40, dtype=np.int64)
    sparse[12] = 1
    sparse[2] = 1
    demo = point_adjust_demo(sparse, truth2)
    inflated = demo["adjusted"].f1 > demo["raw"].f1
    assert inflated
    _line(6, "affiliation oracle", True,
          f"single-event precision err {prec_err:.1e}, adjusted f1 "
          f"{demo['adjusted'].f1:.3f} > raw {demo['raw'].f1:.3f}")


# -- 7: reference detection run --------------------------------------------------------

def test_07_end_to_end_detection(detect_chain):
    kv = detect_chain["kv"]
    aff_f1 = float(kv["affiliation.f1"])
    auc = float(kv["roc_auc"])
    elapsed = detect_chain["elapsed"]
    ok = aff_f1 >= 0.70 and auc >= 0.85 and elapsed < 600.0
    _line(7, "end-to-end detection", ok,
          f"aff f1 {aff_f1:.3f} (>= 0.70), auc {auc:.3f} (>= 0.85), {elapsed:.0f}s")
    assert aff_f1 >= 0.70
    assert auc >= 0.85
    assert elapsed < 600.0


# -- 8: reference prediction run -------------------------------------------------------

def test_08_end_to_end_prediction(predict_chain):
    kv = predict_chain["kv"]
    f1 = float(kv["classic.f1"])
    labels = predict_chain["label_true"]
    p = labels.mean()
    baseline = max(2.0 * p / (1.0 + p), 0.0)
    margin = f1 - baseline

    series = load_csv(str(predict_chain["out"] / "series.csv"), has_labels=True)
    meta = load_precursors(str(predict_chain["out"] / "precursors.csv"))
    ends = predict_chain["end_times"]
    starts = ends - LOOKBACK + 1
    cum = np.concatenate([[0], np.cumsum(series.labels)])
    anom_in_lookback = (cum[ends + 1] - cum[starts]) > 0
    covers_precursor = np.zeros(ends.size, dtype=bool)
    for ev in meta:
        covers_precursor |= (starts < ev.event_start) & (ends >= ev.precursor_start)
    group_pre = covers_precursor & ~anom_in_lookback
    group_norm = ~covers_precursor & ~anom_in_lookback & (labels == 0)
    p_hat = predict_chain["p_hat"]
    gap = p_hat[group_pre].mean() - p_hat[group_norm].mean()
    rng = np.random.default_rng(808)
    a, b = p_hat[group_pre], p_hat[group_norm]
    boots = np.array([rng.choice(a, a.size).mean() - rng.choice(b, b.size).mean()
                      for _ in range(2000)])
    lo95 = float(np.percentile(boots, 5.0))

    ok = margin >= 0.15 and lo95 > 0.0
    _line(8, "end-to-end prediction", ok,
          f"window f1 {f1:.3f} vs constant {baseline:.3f} (margin {margin:+.3f}), "
          f"precursor gap {gap:+.4f} (95% lower bound {lo95:+.4f})")
    assert margin >= 0.15
    assert lo95 > 0.0


# -- 9: ablations never beat the full model --------------------------------------------

def _window_f1(seed: int, ablations: list[str]) -> float:
    """Mirror the train/predict commands: calibrate on the validation split,
    then score every look-forward window of the reference series."""
    cfg = load_config(REFERENCE_PREDICT, [f"run.seed={seed}"] + ablations)
    series, _ = synth_generate(cfg.synth_scenario(), seed=SCENARIO_SEED)
    train_part, valid_part = split_train_valid(series, cfg["train"]["split_ratio"])
    trainer = Trainer(train_part, valid_part, cfg.model_config(), cfg.train_config(),
                      cfg.loss_config(), cfg.negatives_config())
    trainer.fit()
    scorer = Scorer(trainer.model)
    det_valid = slide_windows(valid_part, WindowConfig(
        lookback=LOOKBACK, lookforward=0, stride=1, task="detection"))
    scorer.fit_calibration(det_valid.windows)
    pred_valid = slide_windows(valid_part, WindowConfig(
        lookback=LOOKBACK, lookforward=LOOKFORWARD, stride=1, task="prediction"))
    thr = calibrate_threshold(scorer.window_probs(pred_valid.windows),
                              cfg.threshold_policy(), cfg["run"]["anomaly_ratio"])
    pred_all = slide_windows(series, WindowConfig(
        lookback=LOOKBACK, lookforward=LOOKFORWARD, stride=1, task="prediction"))
    probs = scorer.window_probs(pred_all.windows)
    from tsadkit.metrics import classic_prf1
    return classic_prf1((probs >= thr).astype(np.int64), pred_all.labels).f1


def test_09_ablation_direction(predict_chain):
    full = [float(predict_chain["kv"]["classic.f1"])]
    full += [_window_f1(s, []) for s in MATRIX_SEEDS[1:]]
    full_median = float(np.median(full))
    arms = {"w/o generation": ["train.generation=no"],
            "w/o contrastive": ["train.contrastive=no"],
            "w/o adaptive mask": ["train.adaptive_mask=no"]}
    medians = {}
    for name, flags in arms.items():
        medians[name] = float(np.median([_window_f1(s, flags) for s in MATRIX_SEEDS]))
    ok = all(m <= full_median for m in medians.values())
    detail = ", ".join(f"{k} {v:.3f}" for k, v in medians.items())
    _line(9, "ablation direction", ok, f"full {full_median:.3f} vs {detail}")
    for name, med in medians.items():
        assert med <= full_median, f"{name} median {med:.3f} > full {full_median:.3f}"


# -- 10: byte-level reproducibility ----------------------------------------------------

TURBO = ["synth.length=400", "synth.channels=2", "synth.base_periods=8,16",
         "synth.n_events=2", "synth.event_len_min=12", "synth.event_len_max=16",
         "synth.precursor_len=12", "synth.start_margin=80", "synth.min_gap=60",
         "window.lookback=16", "window.lookforward=4", "window.task=prediction",
         "model.d_model=8", "model.n_blocks=1", "model.n_heads=2",
         "model.n_scales=2", "model.dropout=0.0",
         "train.lr=0.001", "train.max_epochs=2", "train.batch_size=16",
         "train.stride=4"]


def _turbo_chain(out: pathlib.Path) -> dict[str, bytes]:
    over = []
    for pair in TURBO + [f"run.out_dir={out}", f"data.path={out}/series.csv"]:
        over += ["--set", pair]
    _run_cli(["synth"] + over)
    _run_cli(["train"] + over)
    _run_cli(["predict"] + over)
    _run_cli(["eval", "--pred", f"{out}/window_probs.csv",
              "--truth", f"{out}/series.csv"] + over)
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_10_reproducibility(tmp_path):
    out = tmp_path / "chain"
    first = _turbo_chain(out)
    shutil.rmtree(out)
    second = _turbo_chain(out)
    assert sorted(first) == sorted(second)
    mismatched = []
    for name in first:
        a, b = first[name], second[name]
        if name == "train_log.tsv":
            # Identical up to the wall-clock column.
            rows_a = [ln.split("\t")[:5] for ln in a.decode().splitlines()]
            rows_b = [ln.split("\t")[:5] for ln in b.decode().splitlines()]
            if rows_a != rows_b:
                mismatched.append(name)
        elif a != b:
            mismatched.append(name)
    ok = not mismatched
    _line(10, "reproducibility", ok,
          f"{len(first)} artifacts byte-identical" if ok else f"differs: {mismatched}")
    assert not mismatched
