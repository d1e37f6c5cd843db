"""Self-contained property suites behind the ``check`` CLI command.

Each suite returns ``(ok, detail)`` and accepts injectable implementations so
a deliberately broken primitive (say, a sign-flipped transform) can be shown
to fail the gate.  The default wiring checks the shipped code.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from . import spectral
from .encoder import ModelConfig
from .evaluation import metrics_from_ranks, rank_of_target
from .ramp import OVERLAPPING, PARTITION, RampSchedule, bands_for_schedule, round_half_up
from .training import grad_check


def check_spectral(
    rfft_fn: Optional[Callable] = None,
    irfft_fn: Optional[Callable] = None,
    corr_fn: Optional[Callable] = None,
    trials: int = 200,
    seed: int = 0,
    tol: float = 1e-9,
) -> tuple[bool, str]:
    """Round trips and correlation oracle equivalence on random series."""
    rfft_fn = rfft_fn or spectral.rfft
    irfft_fn = irfft_fn or spectral.irfft
    corr_fn = corr_fn or spectral.cross_correlation_fft
    rng = np.random.default_rng(seed)
    worst_round = 0.0
    worst_corr = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 65))
        x = rng.normal(size=n)
        back = irfft_fn(rfft_fn(x))
        worst_round = max(worst_round, float(np.max(np.abs(back - x))))
        q = rng.normal(size=n)
        k = rng.normal(size=n)
        diff = corr_fn(q, k) - spectral.brute_cross_correlation(q, k)
        worst_corr = max(worst_corr, float(np.max(np.abs(diff))))
    ok = worst_round < tol and worst_corr < tol
    return ok, f"round-trip err {worst_round:.2e}, oracle err {worst_corr:.2e}"


def check_ramp() -> tuple[bool, str]:
    """Partition coverage/overlap and overlapping width/monotonicity."""
    failures = []
    for big_l in (2, 4):
        for big_m in (13, 26, 64):
            sched = RampSchedule(big_l, big_m, alpha=1.0 / big_l)
            assert sched.mode == PARTITION
            bands = bands_for_schedule(sched)
            covered = np.zeros(big_m, dtype=int)
            for band in bands:
                covered[band.start : band.end] += 1
            if int((covered == 0).sum()) != 0:
                failures.append(f"partition gap L={big_l} M={big_m}")
            if int((covered - 1).clip(min=0).sum()) > big_l - 1:
                failures.append(f"partition overlap L={big_l} M={big_m}")
            for alpha in (0.6, 0.8):
                sched = RampSchedule(big_l, big_m, alpha=alpha)
                assert sched.mode == OVERLAPPING
                bands = bands_for_schedule(sched)
                widths = [b.width for b in bands]
                if any(w != round_half_up(alpha * big_m) for w in widths):
                    failures.append(f"width L={big_l} M={big_m} a={alpha}: {widths}")
                starts = [b.start for b in bands]
                if any(s2 > s1 for s1, s2 in zip(starts, starts[1:])):
                    failures.append(f"starts not non-increasing L={big_l} M={big_m} a={alpha}")
    return (not failures, "; ".join(failures) if failures else "grid properties hold")


def check_gradients(threshold: float = 1e-3) -> tuple[bool, str]:
    """Finite-difference agreement of the three loss configurations."""
    cfg = ModelConfig(
        num_items=10, max_len=8, dim=8, num_layers=1, num_heads=2,
        alpha=0.8, gamma=0.5, dropout_rate=0.0,
    )
    errs = {sel: grad_check(cfg, loss=sel) for sel in ("rec", "freg", "total")}
    ok = all(v < threshold for v in errs.values())
    detail = ", ".join(f"{k}={v:.2e}" for k, v in errs.items())
    return ok, detail


def check_metrics() -> tuple[bool, str]:
    """Ranking identities: tie pessimism, metric formulas, monotonicity."""
    failures = []
    scores = np.zeros(11)
    scores[0] = -np.inf  # padding slot arrives pre-masked
    if rank_of_target(scores, 3) != 10:
        failures.append("constant scorer should rank last")
    scores = np.arange(11, dtype=float)
    if rank_of_target(scores, 10) != 1:
        failures.append("max logit should rank first")
    hr, ndcg = metrics_from_ranks([2], 5)
    if abs(hr - 1.0) > 1e-12 or abs(ndcg - 1.0 / np.log2(3.0)) > 1e-12:
        failures.append("rank-2 metric values wrong")
    ranks = np.array([1, 3, 6, 11, 2])
    for lo, hi in ((5, 10),):
        hr_lo, ndcg_lo = metrics_from_ranks(ranks, lo)
        hr_hi, ndcg_hi = metrics_from_ranks(ranks, hi)
        if not (0.0 <= ndcg_lo <= hr_lo <= 1.0 and hr_lo <= hr_hi and ndcg_lo <= ndcg_hi):
            failures.append("metric bounds/monotonicity violated")
    return (not failures, "; ".join(failures) if failures else "ranking identities hold")


def run_all_checks() -> dict[str, tuple[bool, str]]:
    """All suites in a fixed order."""
    return {
        "spectral": check_spectral(),
        "ramp": check_ramp(),
        "gradients": check_gradients(),
        "metrics": check_metrics(),
    }
