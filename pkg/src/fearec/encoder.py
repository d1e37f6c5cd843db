"""Hybrid time/frequency attention encoder for next-item prediction.

The model embeds a left-padded item-ID sequence, runs it through L stacked
hybrid attention blocks, and scores the full catalog from the hidden state at
the last valid position.  Each block:

1. projects the input to Q/K/V and band-limits them along the time axis
   (forward FFT, keep the layer's frequency band, zero-pad, inverse FFT);
2. runs masked multi-head dot-product attention on the band-limited tensors
   (the time-domain path);
3. in parallel, measures the circular auto-correlation of Q against K through
   the product of their band spectra, picks the top-k lags, and aggregates
   circularly rolled copies of the band-limited values with softmax weights
   (the frequency-domain path);
4. mixes the two paths with weight ``gamma`` on the time-domain output, adds
   a GELU feed-forward transform, and applies the residual + LayerNorm fusion.

Numerical conventions: LayerNorm epsilon 1e-12, exact (erf-based) GELU,
unnormalized forward FFT with 1/N on the inverse.  Masked attention scores
use a large negative constant rather than -inf so rows whose keys are all
padding stay finite; padded rows are re-zeroed after every block anyway.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .ramp import Band, RampSchedule, band_for_layer

LAYER_NORM_EPS = 1e-12
MASKED_SCORE = -1e9


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``num_items`` counts real items; ID 0 is reserved for padding.  ``alpha``
    is the per-layer frequency sampling ratio, ``gamma`` the mixing weight of
    the time-domain attention output, and ``topk_scale`` scales the number of
    aggregated lags ``k = floor(topk_scale * ln(max_len))``.
    """

    num_items: int
    max_len: int = 50
    dim: int = 64
    num_layers: int = 2
    num_heads: int = 2
    alpha: float = 1.0
    gamma: float = 0.5
    topk_scale: float = 1.0
    dropout_rate: float = 0.5
    causal_mask: bool = True

    def __post_init__(self) -> None:
        if self.num_items < 1:
            raise ValueError("num_items must be >= 1")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if self.dim < 1 or self.dim % self.num_heads != 0:
            raise ValueError(
                f"dim ({self.dim}) must be divisible by num_heads ({self.num_heads})"
            )
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.topk_scale <= 0:
            raise ValueError("topk_scale must be > 0")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")

    @property
    def spectrum_length(self) -> int:
        return self.max_len // 2 + 1

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads

    @property
    def top_k(self) -> int:
        k = int(math.floor(self.topk_scale * math.log(self.max_len)))
        return max(1, min(k, self.max_len))

    def schedule(self) -> RampSchedule:
        return RampSchedule(
            num_layers=self.num_layers,
            spectrum_length=self.spectrum_length,
            alpha=self.alpha,
        )

    def to_dict(self) -> dict:
        return {
            "num_items": self.num_items,
            "max_len": self.max_len,
            "dim": self.dim,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "topk_scale": self.topk_scale,
            "dropout_rate": self.dropout_rate,
            "causal_mask": self.causal_mask,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls(1).to_dict() if k in d})


@dataclass
class LayerReport:
    """Observables of one block: chosen lags/weights and attention maps."""

    delay_lags: Tensor  # [B, heads, k] long, lags in {1..N}
    delay_weights: Tensor  # [B, heads, k], rows sum to 1
    attention: Optional[Tensor] = None  # [B, heads, N, N] when collected


def seeded_dropout(x: Tensor, p: float, train: bool, rng: Optional[torch.Generator]) -> Tensor:
    """Inverted dropout driven by an explicit generator for reproducibility."""
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout requires a seeded generator")
    keep = torch.rand(x.shape, generator=rng, device=x.device, dtype=x.dtype) >= p
    return x * keep.to(x.dtype) / (1.0 - p)


def roll_rows(x: Tensor, tau: int) -> Tensor:
    """Circularly shift rows so output row t holds input row (t + tau) mod N.

    ``tau`` is a lag in {1..N}; ``tau == N`` is the identity.
    """
    n = x.shape[0]
    if not 1 <= tau <= n:
        raise ValueError(f"tau must be in [1, {n}], got {tau}")
    return torch.roll(x, shifts=-tau, dims=0)


def band_filter(x: Tensor, band: Band, length: int) -> Tensor:
    """Keep only the band's frequency bins of ``x`` along the time axis.

    ``x`` is ``[..., N, D]``; the transform runs down each feature column.
    Equivalent to inverse-transforming the zero-padded band sample of the
    half spectrum.
    """
    spec = torch.fft.rfft(x, dim=-2)
    if band.end > spec.shape[-2]:
        raise ValueError(
            f"band [{band.start}, {band.end}) exceeds spectrum rows {spec.shape[-2]}"
        )
    filtered = torch.zeros_like(spec)
    filtered[..., band.start : band.end, :] = spec[..., band.start : band.end, :]
    return torch.fft.irfft(filtered, n=length, dim=-2)


def _split_heads(x: Tensor, num_heads: int) -> Tensor:
    """[B, N, D] -> [B, heads, N, D/heads]."""
    b, n, d = x.shape
    return x.view(b, n, num_heads, d // num_heads).transpose(1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    """[B, heads, N, dh] -> [B, N, heads*dh]."""
    b, h, n, dh = x.shape
    return x.transpose(1, 2).reshape(b, n, h * dh)


class FeaLayer(nn.Module):
    """One hybrid attention block (projections, FFN, output LayerNorm)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.dim
        self.Wq = nn.Parameter(torch.empty(d, d))
        self.Wk = nn.Parameter(torch.empty(d, d))
        self.Wv = nn.Parameter(torch.empty(d, d))
        self.Wo = nn.Parameter(torch.empty(d, d))
        self.ffn_W1 = nn.Parameter(torch.empty(d, d))
        self.ffn_b1 = nn.Parameter(torch.zeros(d))
        self.ffn_W2 = nn.Parameter(torch.empty(d, d))
        self.ffn_b2 = nn.Parameter(torch.zeros(d))
        self.norm_scale = nn.Parameter(torch.ones(d))
        self.norm_shift = nn.Parameter(torch.zeros(d))

    def _band_limited_qkv(self, h: Tensor, band: Band):
        """Projections, their half spectra, and band-limited time versions."""
        n = h.shape[-2]
        q = h @ self.Wq
        k = h @ self.Wk
        v = h @ self.Wv
        spec_q = torch.fft.rfft(q, dim=-2)
        spec_k = torch.fft.rfft(k, dim=-2)
        if band.start == 0 and band.end == spec_q.shape[-2]:
            # Full band: sample + zero-pad + invert is the identity.
            return q, k, v, spec_q, spec_k
        spec_v = torch.fft.rfft(v, dim=-2)

        def filt(spec: Tensor) -> Tensor:
            z = torch.zeros_like(spec)
            z[..., band.start : band.end, :] = spec[..., band.start : band.end, :]
            return torch.fft.irfft(z, n=n, dim=-2)

        return filt(spec_q), filt(spec_k), filt(spec_v), spec_q, spec_k

    def time_domain_attention(
        self,
        h: Tensor,
        band: Band,
        valid: Tensor,
        collect: bool = False,
    ) -> tuple[Tensor, Optional[Tensor]]:
        """Masked multi-head attention over band-limited Q/K/V.

        ``valid`` flags non-padding positions [B, N].  Padding keys are always
        masked; future keys additionally when ``cfg.causal_mask``.  Returns the
        projected output [B, N, D] and, when ``collect``, the attention
        weights [B, heads, N, N].
        """
        qt, kt, vt, _, _ = self._band_limited_qkv(h, band)
        return self._dot_product_attention(qt, kt, vt, valid, collect)

    def _dot_product_attention(self, qt, kt, vt, valid, collect):
        cfg = self.cfg
        n = qt.shape[-2]
        qh = _split_heads(qt, cfg.num_heads)
        kh = _split_heads(kt, cfg.num_heads)
        vh = _split_heads(vt, cfg.num_heads)
        scores = qh @ kh.transpose(-1, -2) / math.sqrt(cfg.head_dim)
        key_pad = ~valid[:, None, None, :]  # [B, 1, 1, N]
        scores = scores.masked_fill(key_pad, MASKED_SCORE)
        if cfg.causal_mask:
            future = torch.triu(
                torch.ones(n, n, dtype=torch.bool, device=qt.device), diagonal=1
            )
            scores = scores.masked_fill(future, MASKED_SCORE)
        attn = torch.softmax(scores, dim=-1)
        out = _merge_heads(attn @ vh) @ self.Wo
        return out, (attn if collect else None)

    def frequency_domain_attention(
        self,
        h: Tensor,
        band: Band,
        fixed_lags: Optional[Tensor] = None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Aggregate circularly rolled values at the top-k correlation lags.

        Per head, the circular correlation profile of Q against K comes from
        the inverse transform of the zero-padded product of their band
        spectra, averaged over the head's feature columns.  ``fixed_lags``
        [B, heads, k] bypasses the top-k selection (used by gradient checks).
        Returns (output [B, N, D], lags [B, heads, k], weights [B, heads, k]).
        """
        _, _, vt, spec_q, spec_k = self._band_limited_qkv(h, band)
        return self._delay_aggregation(vt, spec_q, spec_k, band, fixed_lags)

    def _delay_aggregation(self, vt, spec_q, spec_k, band, fixed_lags):
        cfg = self.cfg
        b, n, _ = vt.shape
        prod = torch.zeros_like(spec_q)
        prod[..., band.start : band.end, :] = (
            spec_q[..., band.start : band.end, :]
            * torch.conj(spec_k[..., band.start : band.end, :])
        )
        corr = torch.fft.irfft(prod, n=n, dim=-2)  # [B, N, D], indexed by shift
        per_head = corr.view(b, n, cfg.num_heads, cfg.head_dim).mean(dim=-1)
        per_head = per_head.transpose(1, 2)  # [B, heads, N]
        # Reorder shifts to lags tau in {1..N}: scores[..., tau-1] = corr at
        # shift tau mod N (lag N is the zero-shift alignment).
        by_tau = torch.cat([per_head[..., 1:], per_head[..., :1]], dim=-1)

        k = cfg.top_k
        if fixed_lags is None:
            _, idx = torch.topk(by_tau, k, dim=-1)
            lags = idx + 1  # [B, heads, k]
        else:
            lags = fixed_lags
            if lags.shape != (b, cfg.num_heads, k):
                raise ValueError(
                    f"fixed_lags shape {tuple(lags.shape)} != {(b, cfg.num_heads, k)}"
                )
        picked = torch.gather(by_tau, -1, lags - 1)
        weights = torch.softmax(picked, dim=-1)  # [B, heads, k]

        vh = _split_heads(vt, cfg.num_heads)  # [B, heads, N, dh]
        positions = torch.arange(n, device=vt.device)
        # rolled[b, h, i, t] = vh[b, h, (t + lag_i) mod N]
        gather_idx = (positions[None, None, None, :] + lags[..., None]) % n
        gather_idx = gather_idx.unsqueeze(-1).expand(-1, -1, -1, -1, cfg.head_dim)
        rolled = torch.gather(
            vh.unsqueeze(2).expand(-1, -1, k, -1, -1), 3, gather_idx
        )  # [B, heads, k, N, dh]
        agg = (weights[..., None, None] * rolled).sum(dim=2)  # [B, heads, N, dh]
        out = _merge_heads(agg) @ self.Wo
        return out, lags, weights

    def feed_forward(self, x: Tensor) -> Tensor:
        inner = F.gelu(x @ self.ffn_W1 + self.ffn_b1)
        return inner @ self.ffn_W2 + self.ffn_b2

    def forward(
        self,
        h: Tensor,
        band: Band,
        valid: Tensor,
        train: bool = False,
        rng: Optional[torch.Generator] = None,
        collect: bool = False,
        fixed_lags: Optional[Tensor] = None,
    ) -> tuple[Tensor, LayerReport]:
        cfg = self.cfg
        qt, kt, vt, spec_q, spec_k = self._band_limited_qkv(h, band)
        tda, attn = self._dot_product_attention(qt, kt, vt, valid, collect)
        fda, lags, weights = self._delay_aggregation(vt, spec_q, spec_k, band, fixed_lags)
        mixed = cfg.gamma * tda + (1.0 - cfg.gamma) * fda
        ffn = self.feed_forward(mixed)
        out = F.layer_norm(
            h + mixed + seeded_dropout(ffn, cfg.dropout_rate, train, rng),
            (cfg.dim,),
            self.norm_scale,
            self.norm_shift,
            eps=LAYER_NORM_EPS,
        )
        out = out * valid[..., None].to(out.dtype)
        return out, LayerReport(delay_lags=lags, delay_weights=weights, attention=attn)


class FEARec(nn.Module):
    """Full model: embedding, L hybrid blocks, final norm, catalog scoring."""

    def __init__(self, cfg: ModelConfig, rng: Optional[torch.Generator] = None):
        super().__init__()
        self.cfg = cfg
        d = cfg.dim
        self.item_table = nn.Parameter(torch.empty(cfg.num_items + 1, d))
        self.pos_table = nn.Parameter(torch.empty(cfg.max_len, d))
        self.emb_norm_scale = nn.Parameter(torch.ones(d))
        self.emb_norm_shift = nn.Parameter(torch.zeros(d))
        self.layers = nn.ModuleList(FeaLayer(cfg) for _ in range(cfg.num_layers))
        self.final_norm_scale = nn.Parameter(torch.ones(d))
        self.final_norm_shift = nn.Parameter(torch.zeros(d))
        self.reset_parameters(rng)

    def reset_parameters(self, rng: Optional[torch.Generator] = None) -> None:
        """Normal(0, 0.02) weights, unit/zero norms, zero padding row."""
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("norm_scale"):
                    p.fill_(1.0)
                elif name.endswith(("norm_shift", "ffn_b1", "ffn_b2")):
                    p.zero_()
                else:
                    nn.init.normal_(p, mean=0.0, std=0.02, generator=rng)
            self.item_table[0].zero_()

    def zero_padding_row(self) -> None:
        """Force the padding embedding back to zero (after optimizer steps)."""
        with torch.no_grad():
            self.item_table[0].zero_()

    def _check_ids(self, ids: Tensor) -> Tensor:
        if ids.ndim != 2:
            raise ValueError(f"ids must be [batch, max_len], got shape {tuple(ids.shape)}")
        if ids.shape[1] != self.cfg.max_len:
            raise ValueError(
                f"sequence length {ids.shape[1]} != configured max_len {self.cfg.max_len}"
            )
        if ids.min() < 0 or ids.max() > self.cfg.num_items:
            raise ValueError(
                f"item IDs must lie in [0, {self.cfg.num_items}], "
                f"got range [{int(ids.min())}, {int(ids.max())}]"
            )
        return ids.long()

    def embed_sequence(
        self,
        ids: Tensor,
        train: bool = False,
        rng: Optional[torch.Generator] = None,
    ) -> Tensor:
        """Dropout(LayerNorm(item + position)) with padded rows zeroed."""
        ids = self._check_ids(ids)
        valid = ids != 0
        h = self.item_table[ids] + self.pos_table[None, :, :]
        h = F.layer_norm(
            h, (self.cfg.dim,), self.emb_norm_scale, self.emb_norm_shift,
            eps=LAYER_NORM_EPS,
        )
        h = seeded_dropout(h, self.cfg.dropout_rate, train, rng)
        return h * valid[..., None].to(h.dtype)

    def forward(
        self,
        ids: Tensor,
        train: bool = False,
        rng: Optional[torch.Generator] = None,
        collect_attention: bool = False,
        fixed_lags: Optional[list[Optional[Tensor]]] = None,
    ) -> tuple[Tensor, list[LayerReport]]:
        """Encode a batch of sequences; returns final states and per-layer reports."""
        ids = self._check_ids(ids)
        valid = ids != 0
        sched = self.cfg.schedule()
        h = self.embed_sequence(ids, train=train, rng=rng)
        reports: list[LayerReport] = []
        for i, layer in enumerate(self.layers):
            band = band_for_layer(sched, i + 1)
            fixed = fixed_lags[i] if fixed_lags is not None else None
            h, report = layer(
                h, band, valid, train=train, rng=rng,
                collect=collect_attention, fixed_lags=fixed,
            )
            reports.append(report)
        final = F.layer_norm(
            h, (self.cfg.dim,), self.final_norm_scale, self.final_norm_shift,
            eps=LAYER_NORM_EPS,
        )
        final = final * valid[..., None].to(final.dtype)
        return final, reports

    def last_hidden(self, final: Tensor, ids: Tensor) -> Tensor:
        """Hidden state at each sequence's last non-padding position."""
        ids = self._check_ids(ids)
        valid = ids != 0
        if not bool(valid.any(dim=1).all()):
            raise ValueError("sequence with no items has no readout position")
        positions = torch.arange(ids.shape[1], device=ids.device)
        last = torch.where(valid, positions, positions.new_full((), -1)).max(dim=1).values
        return final[torch.arange(final.shape[0], device=final.device), last]

    def predict_scores(self, final: Tensor, ids: Tensor) -> Tensor:
        """Catalog logits [B, num_items + 1] with the padding ID at -inf."""
        h_last = self.last_hidden(final, ids)
        logits = h_last @ self.item_table.T
        pad = torch.zeros(logits.shape[-1], dtype=torch.bool, device=logits.device)
        pad[0] = True
        return logits.masked_fill(pad, float("-inf"))

    def encode_and_score(
        self, ids: Tensor, collect_attention: bool = False
    ) -> tuple[Tensor, list[LayerReport]]:
        """Deterministic (no-dropout) scoring convenience for evaluation."""
        final, reports = self.forward(ids, train=False, collect_attention=collect_attention)
        return self.predict_scores(final, ids), reports
