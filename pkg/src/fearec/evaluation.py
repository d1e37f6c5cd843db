"""Full-catalog ranking evaluation and attention export.

Every held-out target is ranked against the whole item set (no negative
sampling).  Ties are broken against the target, so a constant scorer gets
the worst possible rank rather than a flattering one.  Items already in the
user's input prefix are excluded from the candidate set by default — except
the target itself, which must stay rankable for repeat-consumption data —
and the exclusion can be switched off.

Metrics for a single ground truth: ``HR@n = mean(rank <= n)`` and
``NDCG@n = mean(1 / log2(rank + 1))`` for hits, 0 for misses (ranks are
1-based, so the ideal DCG is 1).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import SequenceDataset, eval_examples
from .encoder import FEARec

METRIC_CUTOFFS = (5, 10)


@dataclass(frozen=True)
class EvalReport:
    metrics: dict[str, float]  # keys "HR@5", "HR@10", "NDCG@5", "NDCG@10"
    num_users: int

    def to_dict(self) -> dict:
        out = dict(self.metrics)
        out["num_users"] = self.num_users
        return out

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        )

    @classmethod
    def load(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        num_users = d.pop("num_users")
        return cls(metrics=d, num_users=num_users)


def rank_of_target(logits, target: int) -> int:
    """1-based full-catalog rank of the target, pessimistic on ties."""
    scores = np.asarray(
        logits.detach().cpu().numpy() if isinstance(logits, torch.Tensor) else logits,
        dtype=np.float64,
    )
    if not 1 <= target < scores.shape[-1]:
        raise ValueError(f"target {target} outside item range [1, {scores.shape[-1] - 1}]")
    s_t = scores[target]
    greater = int(np.sum(scores > s_t))
    tied_others = int(np.sum(scores == s_t)) - 1
    return 1 + greater + tied_others


def metrics_from_ranks(ranks, n: int) -> tuple[float, float]:
    """(HR@n, NDCG@n) over 1-based ranks of single ground truths."""
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        raise ValueError("no ranks to aggregate")
    if ranks.min() < 1:
        raise ValueError("ranks are 1-based")
    hits = ranks <= n
    hr = float(np.mean(hits))
    gains = np.where(hits, 1.0 / np.log2(ranks + 1.0), 0.0)
    return hr, float(np.mean(gains))


def evaluate(
    model: FEARec,
    dataset: SequenceDataset,
    split: str,
    batch_size: int = 256,
    exclude_seen: bool = True,
) -> EvalReport:
    """Leave-one-out metrics of a model over the validation or test split."""
    ids, targets, seen = eval_examples(dataset, split, max_len=model.cfg.max_len)
    if ids.shape[0] == 0:
        raise ValueError(f"empty {split} split")
    ranks = np.zeros(ids.shape[0], dtype=np.int64)
    with torch.no_grad():
        for lo in range(0, ids.shape[0], batch_size):
            hi = min(lo + batch_size, ids.shape[0])
            chunk = torch.from_numpy(ids[lo:hi])
            logits, _ = model.encode_and_score(chunk)
            scores = logits.double().cpu().numpy()
            for row in range(hi - lo):
                user = lo + row
                if exclude_seen:
                    drop = np.fromiter(
                        (i for i in seen[user] if i != targets[user]),
                        dtype=np.int64,
                        count=-1,
                    )
                    if drop.size:
                        scores[row, drop] = -np.inf
                ranks[user] = rank_of_target(scores[row], int(targets[user]))
    metrics = {}
    for n in METRIC_CUTOFFS:
        hr, ndcg = metrics_from_ranks(ranks, n)
        metrics[f"HR@{n}"] = hr
        metrics[f"NDCG@{n}"] = ndcg
    return EvalReport(metrics=metrics, num_users=int(ids.shape[0]))


def delay_weight_mass(model: FEARec, ids: np.ndarray, lag_multiple: int, batch_size: int = 256) -> float:
    """Fraction of delay-aggregation weight on lags divisible by ``lag_multiple``,
    averaged over sequences, layers, and heads."""
    total = 0.0
    mass = 0.0
    with torch.no_grad():
        for lo in range(0, ids.shape[0], batch_size):
            chunk = torch.from_numpy(ids[lo : lo + batch_size])
            _, reports = model(chunk)
            for report in reports:
                hit = (report.delay_lags % lag_multiple == 0).to(report.delay_weights.dtype)
                mass += float((report.delay_weights * hit).sum())
                total += float(report.delay_weights.sum())
    return mass / total


def export_attention(model: FEARec, ids, out_dir) -> list[Path]:
    """Write per-layer, per-head CSVs of the two attention mechanisms.

    ``layer{l}_head{h}_tda.csv`` holds the [N x N] dot-product attention
    matrix (row = query position); ``layer{l}_head{h}_fda.csv`` holds one
    ``(tau, weight)`` row per aggregated lag.  Both paths are always
    exported, whatever the mixing weight.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids_t = torch.as_tensor(np.asarray(ids, dtype=np.int64))
    if ids_t.ndim == 1:
        ids_t = ids_t[None, :]
    if ids_t.shape[0] != 1:
        raise ValueError("export_attention inspects one sequence at a time")
    with torch.no_grad():
        _, reports = model(ids_t, collect_attention=True)
    written: list[Path] = []
    for layer, report in enumerate(reports, start=1):
        attn = report.attention[0].double().cpu().numpy()  # [heads, N, N]
        lags = report.delay_lags[0].cpu().numpy()  # [heads, k]
        weights = report.delay_weights[0].double().cpu().numpy()
        for head in range(attn.shape[0]):
            tda_path = out_dir / f"layer{layer}_head{head + 1}_tda.csv"
            with tda_path.open("w", newline="") as handle:
                writer = csv.writer(handle)
                for row in attn[head]:
                    writer.writerow([repr(float(v)) for v in row])
            written.append(tda_path)
            fda_path = out_dir / f"layer{layer}_head{head + 1}_fda.csv"
            with fda_path.open("w", newline="") as handle:
                writer = csv.writer(handle)
                writer.writerow(["tau", "weight"])
                for tau, w in zip(lags[head], weights[head]):
                    writer.writerow([int(tau), repr(float(w))])
            written.append(fda_path)
    return written
