"""Interaction-log ingestion and sequence dataset construction.

Raw logs are (user, item, timestamp) records from TSV or headered CSV files.
Building a dataset applies iterative 5-core filtering until both degree
floors hold (degree counts distinct counterparts), assigns dense IDs (items
from 1, ID 0 reserved for padding), orders each user's items chronologically
with input order breaking timestamp ties, and splits leave-one-out: the last
item is the test target, the second-to-last the validation target, and the
rest the training prefix.

Training examples are all next-item prediction pairs inside the training
prefix: ``(prefix[:t], prefix[t])`` for every position ``t >= 1``.  Each
example's semantic positive is another example sharing the same target,
drawn per epoch; an example with no partner falls back to itself.  Model
inputs keep the most recent ``max_len`` items, left-padded with zeros.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np


class Interaction(NamedTuple):
    user: str
    item: str
    timestamp: int


@dataclass
class InteractionLog:
    records: list[Interaction]

    def __len__(self) -> int:
        return len(self.records)


def load_interactions(path, fmt: str = "tsv") -> InteractionLog:
    """Parse a raw interaction file; malformed lines abort with line numbers."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"interaction file not found: {path}")
    if fmt not in ("tsv", "csv"):
        raise ValueError(f"format must be 'tsv' or 'csv', got {fmt!r}")

    records: list[Interaction] = []
    bad: list[str] = []
    with path.open(newline="") as handle:
        if fmt == "tsv":
            rows: Iterator[tuple[int, list[str]]] = (
                (i, line.rstrip("\n").split("\t"))
                for i, line in enumerate(handle, start=1)
                if line.strip()
            )
        else:
            reader = csv.DictReader(handle)
            if reader.fieldnames is None:
                return InteractionLog(records=[])
            missing = {"user", "item", "timestamp"} - set(reader.fieldnames)
            if missing:
                raise ValueError(
                    f"csv header missing columns: {sorted(missing)} in {path}"
                )
            rows = (
                (i, [row["user"], row["item"], row["timestamp"]])
                for i, row in enumerate(reader, start=2)
            )
        for line_no, fields in rows:
            if len(fields) != 3 or any(f is None or f == "" for f in fields):
                bad.append(f"line {line_no}: expected user/item/timestamp, got {fields!r}")
                continue
            user, item, ts = fields
            try:
                records.append(Interaction(user, item, int(ts)))
            except ValueError:
                bad.append(f"line {line_no}: unparseable timestamp {ts!r}")
    if bad:
        raise ValueError(f"malformed lines in {path}: " + "; ".join(bad))
    return InteractionLog(records=records)


def _k_core(records: list[Interaction], min_count: int) -> list[Interaction]:
    """Drop users/items with fewer than ``min_count`` distinct counterparts,
    repeating until the floor holds everywhere."""
    current = records
    while True:
        user_items: dict[str, set[str]] = {}
        item_users: dict[str, set[str]] = {}
        for r in current:
            user_items.setdefault(r.user, set()).add(r.item)
            item_users.setdefault(r.item, set()).add(r.user)
        good_users = {u for u, items in user_items.items() if len(items) >= min_count}
        good_items = {i for i, users in item_users.items() if len(users) >= min_count}
        kept = [r for r in current if r.user in good_users and r.item in good_items]
        if len(kept) == len(current):
            return kept
        current = kept


@dataclass
class SequenceDataset:
    """Dense-ID user sequences with leave-one-out splits."""

    user_index: dict[str, int]  # original user -> dense ID in [0, |U|)
    item_index: dict[str, int]  # original item -> dense ID in [1, |I|]
    sequences: list[list[int]]  # per dense user, chronological item IDs

    _examples: Optional[list[tuple[int, int]]] = field(
        default=None, repr=False, compare=False
    )
    _semantic: Optional[dict[int, list[int]]] = field(
        default=None, repr=False, compare=False
    )

    @property
    def num_users(self) -> int:
        return len(self.sequences)

    @property
    def num_items(self) -> int:
        return len(self.item_index)

    def train_items(self, user: int) -> list[int]:
        return self.sequences[user][:-2]

    def valid_target(self, user: int) -> int:
        return self.sequences[user][-2]

    def test_target(self, user: int) -> int:
        return self.sequences[user][-1]

    def splits(self, user: int) -> tuple[list[int], int, int]:
        seq = self.sequences[user]
        return seq[:-2], seq[-2], seq[-1]

    def training_examples(self) -> list[tuple[int, int]]:
        """(user, t) pairs meaning input ``train[:t]`` and target ``train[t]``."""
        if self._examples is None:
            out = []
            for user, seq in enumerate(self.sequences):
                train = seq[:-2]
                out.extend((user, t) for t in range(1, len(train)))
            self._examples = out
        return self._examples

    def semantic_index(self) -> dict[int, list[int]]:
        """target item ID -> indices of training examples with that target."""
        if self._semantic is None:
            index: dict[int, list[int]] = {}
            for idx, (user, t) in enumerate(self.training_examples()):
                target = self.sequences[user][t]
                index.setdefault(target, []).append(idx)
            self._semantic = index
        return self._semantic

    def stats(self) -> dict:
        actions = sum(len(s) for s in self.sequences)
        users, items = self.num_users, self.num_items
        return {
            "users": users,
            "items": items,
            "actions": actions,
            "avg_length": actions / users if users else 0.0,
            "sparsity": 1.0 - actions / (users * items) if users and items else 0.0,
        }

    def save(self, path) -> None:
        """Write the processed container; byte-stable for fixed content."""
        users = sorted(self.user_index, key=self.user_index.get)
        items = sorted(self.item_index, key=self.item_index.get)
        payload = {
            "users": users,
            "items": items,
            "sequences": self.sequences,
            "splits": [
                {"train": s[:-2], "valid": s[-2], "test": s[-1]}
                for s in self.sequences
            ],
        }
        Path(path).write_text(
            json.dumps(payload, sort_keys=True, separators=(",", ":"))
        )

    @classmethod
    def load(cls, path) -> "SequenceDataset":
        payload = json.loads(Path(path).read_text())
        return cls(
            user_index={u: i for i, u in enumerate(payload["users"])},
            item_index={it: i + 1 for i, it in enumerate(payload["items"])},
            sequences=[list(map(int, s)) for s in payload["sequences"]],
        )


def build_dataset(log: InteractionLog, min_count: int = 5) -> SequenceDataset:
    """Filter, densify, order, and split an interaction log."""
    if not log.records:
        raise ValueError("cannot build a dataset from an empty log")
    ordered = sorted(log.records, key=lambda r: (r.user, r.timestamp))
    kept = _k_core(ordered, min_count) if min_count > 1 else ordered
    if not kept:
        raise ValueError(f"dataset empty after k-core filtering (min_count={min_count})")

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    for r in kept:
        if r.user not in user_index:
            user_index[r.user] = len(user_index)
        if r.item not in item_index:
            item_index[r.item] = len(item_index) + 1

    sequences: list[list[int]] = [[] for _ in user_index]
    for r in kept:
        sequences[user_index[r.user]].append(item_index[r.item])
    short = [u for u, s in enumerate(sequences) if len(s) < 3]
    if short:
        raise ValueError(
            f"{len(short)} user(s) have fewer than 3 interactions; "
            "leave-one-out needs at least one training item"
        )
    return SequenceDataset(user_index=user_index, item_index=item_index, sequences=sequences)


def pad_truncate(seq: list[int], max_len: int) -> list[int]:
    """Most recent ``max_len`` items, left-padded with 0."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    tail = list(seq[-max_len:])
    return [0] * (max_len - len(tail)) + tail


@dataclass
class SequenceBatch:
    ids: np.ndarray  # [B, max_len] int64
    targets: np.ndarray  # [B] int64
    positive_ids: np.ndarray  # [B, max_len] int64


def make_batches(
    dataset: SequenceDataset,
    batch_size: int,
    shuffle_seed: int,
    max_len: int = 50,
) -> Iterator[SequenceBatch]:
    """One shuffled epoch over all training examples with semantic positives.

    Positives are drawn uniformly from the other examples sharing the target
    (the example itself when it is the only one).  Fully deterministic for a
    fixed seed.  A trailing single-example chunk is merged into the previous
    batch so contrastive losses always see at least two pairs.
    """
    examples = dataset.training_examples()
    semantic = dataset.semantic_index()
    rng = np.random.default_rng(shuffle_seed)
    order = rng.permutation(len(examples))

    def example_input(idx: int) -> list[int]:
        user, t = examples[idx]
        return pad_truncate(dataset.sequences[user][:t], max_len)

    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    for chunk in chunks:
        ids = np.zeros((len(chunk), max_len), dtype=np.int64)
        targets = np.zeros(len(chunk), dtype=np.int64)
        positives = np.zeros((len(chunk), max_len), dtype=np.int64)
        for row, idx in enumerate(chunk):
            user, t = examples[idx]
            ids[row] = example_input(idx)
            targets[row] = dataset.sequences[user][t]
            others = [c for c in semantic[targets[row]] if c != idx]
            pick = others[rng.integers(len(others))] if others else idx
            positives[row] = example_input(pick)
        yield SequenceBatch(ids=ids, targets=targets, positive_ids=positives)


def eval_examples(
    dataset: SequenceDataset, split: str, max_len: int = 50
) -> tuple[np.ndarray, np.ndarray, list[set[int]]]:
    """Padded inputs, targets, and seen-item sets for a held-out split."""
    if split not in ("valid", "test"):
        raise ValueError(f"split must be 'valid' or 'test', got {split!r}")
    ids = np.zeros((dataset.num_users, max_len), dtype=np.int64)
    targets = np.zeros(dataset.num_users, dtype=np.int64)
    seen: list[set[int]] = []
    for user in range(dataset.num_users):
        train, valid, test = dataset.splits(user)
        prefix = train if split == "valid" else train + [valid]
        ids[user] = pad_truncate(prefix, max_len)
        targets[user] = valid if split == "valid" else test
        seen.append(set(prefix))
    return ids, targets, seen


def synthetic_periodic(
    num_users: int,
    num_items: int,
    period: int,
    max_len: int,
    seed: int,
) -> SequenceDataset:
    """Desk-scale fixture: each user cycles a private random item motif.

    Sequences have length ``max_len + 2`` so the training prefix fills the
    model window exactly; every next item is determined by the motif, making
    the data exactly ``period``-periodic by construction.
    """
    if period < 2:
        raise ValueError("period must be >= 2")
    if period > max_len // 2:
        raise ValueError("period must be <= max_len / 2")
    if period > num_items:
        raise ValueError("period cannot exceed the catalog size")
    rng = np.random.default_rng(seed)
    total = max_len + 2
    sequences = []
    for _ in range(num_users):
        motif = rng.choice(np.arange(1, num_items + 1), size=period, replace=False)
        reps = -(-total // period)
        sequences.append(np.tile(motif, reps)[:total].tolist())
    return SequenceDataset(
        user_index={f"u{i}": i for i in range(num_users)},
        item_index={f"i{j}": j for j in range(1, num_items + 1)},
        sequences=sequences,
    )
