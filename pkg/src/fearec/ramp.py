"""Per-layer frequency band selection over a half spectrum.

Stacked encoder layers each look at a slice ``[p, q)`` of the ``M``
retained frequency bins, walking from the high-frequency end (layer 1) down
to the low-frequency end (layer L).  Two regimes, chosen by the sampling
ratio ``alpha``:

* overlapping (``alpha > 1/L``): every layer keeps a window of
  ``round(alpha * M)`` bins whose start slides linearly from
  ``M * (1 - alpha)`` down to 0.
* partition (``alpha <= 1/L``): the spectrum is split into L equal chunks of
  ``M / L`` bins so no frequency is dropped.

Fractional boundaries are resolved by rounding half up; indices are clamped
to ``[0, M]`` and a band is widened to at least one bin if rounding collapses
it.  In partition mode both edges are rounded from the *unrounded* boundary
``M * (1 - l/L)`` so adjacent layers share an edge exactly and the union of
bands covers ``[0, M)`` with no gap for any ``M`` and ``L``.

``alpha = 1`` yields the full band ``(0, M)`` for every layer, making the
sampling a no-op.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

OVERLAPPING = "overlapping"
PARTITION = "partition"


def round_half_up(x: float) -> int:
    """Deterministic rounding: halves go up (2.5 -> 3), unlike ``round``."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class RampSchedule:
    """Band layout for a stack of layers over an ``M``-bin half spectrum."""

    num_layers: int
    spectrum_length: int
    alpha: float

    def __post_init__(self) -> None:
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.spectrum_length < 1:
            raise ValueError("spectrum_length must be >= 1")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")

    @property
    def mode(self) -> str:
        return PARTITION if self.alpha <= 1.0 / self.num_layers else OVERLAPPING


@dataclass(frozen=True)
class Band:
    """Half-open frequency bin range ``[start, end)`` owned by one layer."""

    start: int
    end: int
    layer: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end <= self.start:
            raise ValueError(f"invalid band [{self.start}, {self.end})")
        if self.layer < 1:
            raise ValueError("layer index is 1-based")

    @property
    def width(self) -> int:
        return self.end - self.start


def band_for_layer(sched: RampSchedule, layer: int) -> Band:
    """Frequency band of ``layer`` (1-based, counting from the bottom)."""
    big_l = sched.num_layers
    big_m = sched.spectrum_length
    alpha = sched.alpha
    if not 1 <= layer <= big_l:
        raise ValueError(f"layer must be in [1, {big_l}], got {layer}")

    if big_l == 1:
        # A single layer keeps the low-frequency window of width ~alpha*M
        # ending at M (the top-layer behavior of the ramp).
        p = round_half_up(big_m * (1.0 - alpha))
        q = big_m
    elif sched.mode == PARTITION:
        raw_p = big_m * (1.0 - layer / big_l)
        p = round_half_up(raw_p)
        q = round_half_up(raw_p + big_m / big_l)
    else:
        raw_p = big_m * (1.0 - alpha) * (1.0 - (layer - 1) / (big_l - 1))
        p = round_half_up(raw_p)
        q = p + round_half_up(alpha * big_m)

    p = min(max(p, 0), big_m)
    q = min(max(q, 0), big_m)
    if q <= p:
        # Rounding collapsed the band; keep at least one bin.
        if p < big_m:
            q = p + 1
        else:
            p, q = big_m - 1, big_m
    return Band(start=p, end=q, layer=layer)


def bands_for_schedule(sched: RampSchedule) -> list[Band]:
    """Bands for all layers, ordered layer 1..L."""
    return [band_for_layer(sched, l) for l in range(1, sched.num_layers + 1)]


def _zeros_rows(template, rows: int):
    """Zero matrix with ``rows`` rows matching the template's columns/dtype."""
    if hasattr(template, "new_zeros"):  # torch tensor
        return template.new_zeros((rows,) + tuple(template.shape[1:]))
    arr = np.asarray(template)
    return np.zeros((rows,) + arr.shape[1:], dtype=arr.dtype)


def sample_band(spectrum, band: Band):
    """Rows ``[band.start, band.end)`` of an ``[M x D]`` spectrum matrix."""
    rows = spectrum.shape[0]
    if band.end > rows:
        raise ValueError(
            f"band [{band.start}, {band.end}) exceeds spectrum rows {rows}"
        )
    return spectrum[band.start : band.end]


def zero_pad_band(sampled, band: Band, spectrum_length: int):
    """Place sampled rows back at ``[band.start, band.end)``, zero elsewhere."""
    if band.end > spectrum_length:
        raise ValueError(
            f"band [{band.start}, {band.end}) exceeds spectrum length "
            f"{spectrum_length}"
        )
    if sampled.shape[0] != band.width:
        raise ValueError(
            f"shape mismatch: {sampled.shape[0]} rows for band width {band.width}"
        )
    out = _zeros_rows(sampled, spectrum_length)
    out[band.start : band.end] = sampled
    return out
