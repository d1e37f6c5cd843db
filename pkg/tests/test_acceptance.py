"""Acceptance criteria, one test per criterion, at their stated tolerances.

Each test prints a ``[criterion N] PASS/FAIL`` line (visible with ``-rA`` or
on failure) and asserts the criterion itself.  Training-based criteria pin
their fixtures and seeds, so results are reproducible on any machine.

Criterion 7 is implemented faithfully and is expected to FAIL: with the
pinned loss weights (0.1), dot-product similarity, and unit temperature,
the auxiliary losses dominate the recommendation gradient by more than an
order of magnitude at this scale and training settles in a collapsed
plateau (verified for 300 epochs across several fixture designs; the same
fixtures memorize to HR@1 >= 0.95 with the auxiliary losses off).  The
README's "known-red" note carries the full analysis.
"""

import math
import time

import numpy as np
import torch

from fearec.cli import main as cli_main
from fearec.data import eval_examples, make_batches, synthetic_periodic
from fearec.encoder import FEARec, LAYER_NORM_EPS, ModelConfig
from fearec.evaluation import delay_weight_mass, evaluate, rank_of_target
from fearec.ramp import RampSchedule, bands_for_schedule, round_half_up
from fearec.spectral import brute_cross_correlation, cross_correlation_fft, irfft, rfft
from fearec.training import (
    LossWeights,
    TrainConfig,
    grad_check,
    make_optimizer,
    train_step,
)


def report(criterion: int, passed: bool, detail: str) -> None:
    print(f"[criterion {criterion:02d}] {'PASS' if passed else 'FAIL'} - {detail}")


def test_criterion_01_spectral_oracle_equivalence():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 65))
        q = rng.normal(size=n)
        k = rng.normal(size=n)
        diff = cross_correlation_fft(q, k) - brute_cross_correlation(q, k)
        worst = max(worst, float(np.max(np.abs(diff))))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and elapsed < 5.0
    report(1, ok, f"max abs err {worst:.2e} over 1000 pairs in {elapsed:.2f}s")
    assert worst < 1e-9
    assert elapsed < 5.0


def test_criterion_02_fft_round_trip():
    rng = np.random.default_rng(102)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        x = rng.normal(size=n) * rng.uniform(0.1, 10.0)
        worst = max(worst, float(np.max(np.abs(irfft(rfft(x)) - x))))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and elapsed < 2.0
    report(2, ok, f"max abs err {worst:.2e} over 1000 series in {elapsed:.2f}s")
    assert worst < 1e-9
    assert elapsed < 2.0


def test_criterion_03_ramp_band_properties():
    start = time.perf_counter()
    problems = []
    for big_l in (2, 4):
        for big_m in (13, 26, 64):
            sched = RampSchedule(big_l, big_m, alpha=1.0 / big_l)
            covered = np.zeros(big_m, dtype=int)
            for band in bands_for_schedule(sched):
                covered[band.start : band.end] += 1
            if not (covered >= 1).all():
                problems.append(f"gap L={big_l} M={big_m}")
            if int((covered - 1).clip(min=0).sum()) > big_l - 1:
                problems.append(f"overlap L={big_l} M={big_m}")
            for alpha in (0.6, 0.8):
                bands = bands_for_schedule(RampSchedule(big_l, big_m, alpha))
                want = round_half_up(alpha * big_m)
                if any(b.width != want for b in bands):
                    problems.append(f"width L={big_l} M={big_m} a={alpha}")
                starts = [b.start for b in bands]
                if any(s2 > s1 for s1, s2 in zip(starts, starts[1:])):
                    problems.append(f"starts L={big_l} M={big_m} a={alpha}")
    elapsed = time.perf_counter() - start
    report(3, not problems, f"exhaustive grid in {elapsed:.2f}s {problems or ''}")
    assert not problems
    assert elapsed < 1.0


def _reference_sr_block(layer, cfg, h, valid):
    """Plain transformer SR block written independently of the encoder."""
    n, d = h.shape[-2], h.shape[-1]
    dh = d // cfg.num_heads
    q, k, v = h @ layer.Wq, h @ layer.Wk, h @ layer.Wv
    heads = []
    for head in range(cfg.num_heads):
        cols = slice(head * dh, (head + 1) * dh)
        scores = q[..., cols] @ k[..., cols].transpose(-1, -2) / math.sqrt(dh)
        scores = scores.masked_fill(~valid[:, None, :], -1e9)
        future = torch.triu(torch.ones(n, n, dtype=torch.bool), diagonal=1)
        scores = scores.masked_fill(future, -1e9)
        heads.append(torch.softmax(scores, dim=-1) @ v[..., cols])
    att = torch.cat(heads, dim=-1) @ layer.Wo
    gelu = 0.5 * (att @ layer.ffn_W1 + layer.ffn_b1) * (
        1 + torch.erf((att @ layer.ffn_W1 + layer.ffn_b1) / math.sqrt(2.0))
    )
    ffn = gelu @ layer.ffn_W2 + layer.ffn_b2
    pre = h + att + ffn
    mean = pre.mean(dim=-1, keepdim=True)
    var = pre.var(dim=-1, unbiased=False, keepdim=True)
    normed = (pre - mean) / torch.sqrt(var + LAYER_NORM_EPS)
    out = normed * layer.norm_scale + layer.norm_shift
    return out * valid[..., None].to(out.dtype)


def test_criterion_04_plain_transformer_reduction():
    start = time.perf_counter()
    cfg = ModelConfig(
        num_items=30, max_len=16, dim=16, num_layers=1, num_heads=2,
        alpha=1.0, gamma=1.0, dropout_rate=0.0, causal_mask=True,
    )
    rng = np.random.default_rng(104)
    worst = 0.0
    with torch.no_grad():
        for trial in range(50):
            model = FEARec(cfg, rng=torch.Generator().manual_seed(trial)).double()
            pad = int(rng.integers(0, 8))
            ids = np.zeros((1, 16), dtype=np.int64)
            ids[0, pad:] = rng.integers(1, 31, size=16 - pad)
            ids_t = torch.from_numpy(ids)
            valid = ids_t != 0
            h = model.embed_sequence(ids_t)
            band = bands_for_schedule(cfg.schedule())[0]
            out, _ = model.layers[0](h, band, valid)
            ref = _reference_sr_block(model.layers[0], cfg, h, valid)
            worst = max(worst, float((out - ref).abs().max()))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 10.0
    report(4, ok, f"max abs err {worst:.2e} over 50 inputs in {elapsed:.2f}s")
    assert worst < 1e-6
    assert elapsed < 10.0


def test_criterion_05_gradient_checks():
    start = time.perf_counter()
    cfg = ModelConfig(
        num_items=10, max_len=8, dim=8, num_layers=1, num_heads=2,
        alpha=0.8, gamma=0.5, dropout_rate=0.0,
    )
    errs = {sel: grad_check(cfg, loss=sel, seed=0) for sel in ("rec", "freg", "total")}
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-3 for v in errs.values()) and elapsed < 60.0
    detail = ", ".join(f"{k}={v:.2e}" for k, v in errs.items())
    report(5, ok, f"{detail} in {elapsed:.1f}s")
    assert all(v < 1e-3 for v in errs.values()), errs
    assert elapsed < 60.0


def _train(ds, model_cfg, weights, seed, epochs, after_epoch=None):
    model = FEARec(model_cfg, rng=torch.Generator().manual_seed(seed))
    optimizer = make_optimizer(model, TrainConfig(seed=seed, epochs=epochs))
    rng = torch.Generator().manual_seed(seed)
    for epoch in range(1, epochs + 1):
        for batch in make_batches(
            ds, 256, shuffle_seed=seed * 1000 + epoch, max_len=model_cfg.max_len
        ):
            train_step(model, optimizer, batch, weights, 1.0, rng)
        if after_epoch is not None and after_epoch(model, epoch):
            break
    return model


def test_criterion_06_periodicity_detection():
    start = time.perf_counter()
    period = 5
    ds = synthetic_periodic(200, 100, period, 50, seed=1)
    ids, _, _ = eval_examples(ds, "test", max_len=50)
    cfg = ModelConfig(num_items=ds.num_items, alpha=1.0, topk_scale=1.0)
    state = {"mass": 0.0, "epoch": 0}

    def after_epoch(model, epoch):
        state["mass"] = delay_weight_mass(model, ids, lag_multiple=period)
        state["epoch"] = epoch
        return state["mass"] >= 0.8

    _train(ds, cfg, LossWeights(0.1, 0.1), seed=0, epochs=50, after_epoch=after_epoch)
    elapsed = time.perf_counter() - start
    ok = state["mass"] >= 0.8 and elapsed < 600.0
    report(
        6, ok,
        f"delay mass on multiples of {period}: {state['mass']:.3f} "
        f"after {state['epoch']} epochs in {elapsed:.0f}s",
    )
    assert state["mass"] >= 0.8
    assert elapsed < 600.0


def _hr_at(model, ds, n=1, exclude_seen=True):
    ids, targets, seen = eval_examples(ds, "test", max_len=model.cfg.max_len)
    ranks = []
    with torch.no_grad():
        for lo in range(0, ids.shape[0], 256):
            logits, _ = model.encode_and_score(torch.from_numpy(ids[lo : lo + 256]))
            scores = logits.double().numpy()
            for row in range(scores.shape[0]):
                u = lo + row
                s = scores[row].copy()
                if exclude_seen:
                    drop = [i for i in seen[u] if i != targets[u]]
                    s[drop] = -np.inf
                ranks.append(rank_of_target(s, int(targets[u])))
    return float(np.mean(np.asarray(ranks) <= n))


def test_criterion_07_overfit_sanity():
    start = time.perf_counter()
    ds = synthetic_periodic(100, 50, 5, 10, seed=3)
    cfg = ModelConfig(num_items=ds.num_items)  # all architecture defaults
    state = {"best": 0.0, "epoch": 0}

    def after_epoch(model, epoch):
        state["epoch"] = epoch
        if epoch % 10 == 0 or epoch == 300:
            hr1 = _hr_at(model, ds, n=1)
            state["best"] = max(state["best"], hr1)
            return hr1 >= 0.9
        return False

    _train(ds, cfg, LossWeights(0.1, 0.1), seed=0, epochs=300, after_epoch=after_epoch)
    elapsed = time.perf_counter() - start
    ok = state["best"] >= 0.9
    report(
        7, ok,
        f"best test HR@1 {state['best']:.3f} after {state['epoch']} epochs "
        f"in {elapsed:.0f}s (known-red: auxiliary losses dominate at this "
        f"scale; see the README note)",
    )
    assert state["best"] >= 0.9, (
        "full multi-task objective does not memorize the fixture: best HR@1 "
        f"{state['best']:.3f} after {state['epoch']} epochs; with "
        "lambda1=lambda2=0 the same fixture reaches HR@1 >= 0.95 within 40 "
        "epochs (known-red criterion, analysis in the README)"
    )


def test_criterion_08_null_model_calibration():
    start = time.perf_counter()
    ds = synthetic_periodic(500, 200, 5, 10, seed=8)
    cfg = ModelConfig(num_items=ds.num_items)
    model = FEARec(cfg, rng=torch.Generator().manual_seed(8))
    rep = evaluate(model, ds, "test", exclude_seen=False)
    hr10 = rep.metrics["HR@10"]
    p = 10.0 / 200.0
    sigma = math.sqrt(p * (1 - p) / 500)
    elapsed = time.perf_counter() - start
    ok = abs(hr10 - p) <= 3 * sigma and elapsed < 60.0
    report(8, ok, f"untrained HR@10 {hr10:.4f} vs {p:.4f} +/- {3 * sigma:.4f} in {elapsed:.0f}s")
    assert abs(hr10 - p) <= 3 * sigma
    assert elapsed < 60.0


def test_criterion_09_ablation_direction():
    start = time.perf_counter()
    ds = synthetic_periodic(300, 500, 5, 20, seed=11)
    seeds = (0, 1, 2)
    epochs = 8
    means = {}
    for gamma in (1.0, 0.5):
        scores = []
        for seed in seeds:
            cfg = ModelConfig(num_items=ds.num_items, gamma=gamma)
            model = _train(ds, cfg, LossWeights(0.0, 0.0), seed=seed, epochs=epochs)
            scores.append(_hr_at(model, ds, n=5))
        means[gamma] = float(np.mean(scores))
    elapsed = time.perf_counter() - start
    ok = means[1.0] < means[0.5] and elapsed < 1800.0
    report(
        9, ok,
        f"HR@5 tda-only {means[1.0]:.4f} < hybrid {means[0.5]:.4f} over "
        f"{len(seeds)} seeds in {elapsed:.0f}s",
    )
    assert means[1.0] < means[0.5], means
    assert elapsed < 1800.0


def test_criterion_10_cli_determinism(tmp_path):
    start = time.perf_counter()
    ds = synthetic_periodic(12, 20, 5, 10, seed=10)
    data_path = tmp_path / "data.json"
    ds.save(data_path)
    outs = []
    for name in ("run_a", "run_b"):
        out = tmp_path / name
        rc = cli_main([
            "train", "--data", str(data_path), "--out", str(out), "--seed", "5",
            "--epochs", "2", "--batch-size", "32", "--max-len", "10",
            "--dim", "16", "--num-layers", "1",
        ])
        assert rc == 0
        outs.append(out)
    same_best = (outs[0] / "best.ckpt").read_bytes() == (outs[1] / "best.ckpt").read_bytes()
    same_last = (outs[0] / "last.ckpt").read_bytes() == (outs[1] / "last.ckpt").read_bytes()
    reports = []
    for out in outs:
        rc = cli_main([
            "evaluate", "--checkpoint", str(out / "best.ckpt"),
            "--data", str(data_path), "--split", "test",
        ])
        assert rc == 0
        reports.append((out / "report_test.json").read_bytes())
    same_report = reports[0] == reports[1]
    elapsed = time.perf_counter() - start
    ok = same_best and same_last and same_report
    report(
        10, ok,
        f"best/last checkpoints byte-identical: {same_best}/{same_last}, "
        f"reports identical: {same_report} in {elapsed:.0f}s",
    )
    assert same_best and same_last and same_report
