"""Real-input FFT primitives and circular correlation on the half spectrum.

Conventions, fixed project-wide so every module agrees bit for bit:

* Forward transform: ``X_k = sum_n x_n * exp(-2j*pi*n*k/N)`` (unnormalized),
  inverse carries the ``1/N`` factor.
* Indexing is zero-based everywhere.
* A real series of length ``N`` is represented in the frequency domain by its
  first ``N//2 + 1`` coefficients (conjugate symmetry supplies the rest).
* Correlation is circular (mod-N wraparound), unnormalized, with scores
  indexed by lag ``tau`` in ``{1..N}``: ``scores[tau-1] = sum_n q[n] *
  k[(n-tau) % N]``.

``cross_correlation_fft`` computes all lags at once through the power
spectrum (O(N log N)); ``brute_cross_correlation`` is the direct O(N^2) sum
kept as its reference oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Maximum imaginary residue tolerated when inverting a half spectrum that is
#: supposed to describe a real series.
IMAG_TOL = 1e-9


def half_spectrum_length(n: int) -> int:
    """Number of retained coefficients for a real series of length ``n``."""
    return n // 2 + 1


def as_series(values) -> np.ndarray:
    """Validate and convert a real series to a float64 array."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"series must be one-dimensional, got shape {x.shape}")
    if x.size == 0:
        raise ValueError("empty series")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    return x


@dataclass(frozen=True)
class HalfSpectrum:
    """First ``N//2 + 1`` DFT coefficients of a real series of length ``N``.

    For a real origin series the DC coefficient is purely real, and so is the
    Nyquist coefficient when ``N`` is even.  Construction only enforces the
    shape relation; symmetry violations are detected by :func:`irfft`.
    """

    coeffs: np.ndarray
    origin_length: int

    def __post_init__(self) -> None:
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        object.__setattr__(self, "coeffs", coeffs)
        if coeffs.ndim != 1:
            raise ValueError(f"shape mismatch: coeffs must be 1-d, got {coeffs.shape}")
        if self.origin_length < 1:
            raise ValueError("shape mismatch: origin_length must be >= 1")
        expected = half_spectrum_length(self.origin_length)
        if coeffs.size != expected:
            raise ValueError(
                f"shape mismatch: expected {expected} coefficients for "
                f"origin_length {self.origin_length}, got {coeffs.size}"
            )


def rfft(x) -> HalfSpectrum:
    """Forward transform of a real series, keeping the half spectrum."""
    x = as_series(x)
    return HalfSpectrum(coeffs=np.fft.rfft(x), origin_length=x.size)


def irfft(s: HalfSpectrum, tol: float = IMAG_TOL) -> np.ndarray:
    """Recover the real series whose :func:`rfft` equals ``s``.

    The half spectrum is extended by conjugate symmetry and inverted with a
    full inverse DFT.  If the residual imaginary part exceeds ``tol`` (which
    happens when the DC or Nyquist coefficients carry imaginary content) the
    spectrum does not describe a real series and an error is raised.
    """
    n = s.origin_length
    m = half_spectrum_length(n)
    full = np.zeros(n, dtype=np.complex128)
    full[:m] = s.coeffs
    if n - m > 0:
        full[m:] = np.conj(s.coeffs[1 : n - m + 1][::-1])
    x = np.fft.ifft(full)
    residue = float(np.max(np.abs(x.imag))) if n else 0.0
    if residue > tol:
        raise ValueError(f"non-symmetric spectrum: imaginary residue {residue:.3e}")
    return np.ascontiguousarray(x.real)


def _paired(q, k) -> tuple[np.ndarray, np.ndarray]:
    q = as_series(q)
    k = as_series(k)
    if q.size != k.size:
        raise ValueError(f"length mismatch: {q.size} vs {k.size}")
    return q, k


def cross_correlation_fft(q, k) -> np.ndarray:
    """Circular cross-correlation of equal-length series at all N lags.

    Computed as the inverse transform of ``rfft(q) * conj(rfft(k))``; equals
    the auto-correlation when ``q is k``.  Returns ``scores`` with
    ``scores[tau-1]`` the correlation at lag ``tau`` in ``{1..N}`` (lag N is
    the zero-shift alignment).
    """
    q, k = _paired(q, k)
    n = q.size
    product = rfft(q).coeffs * np.conj(rfft(k).coeffs)
    r = irfft(HalfSpectrum(product, n))
    # r[j] is the correlation at shift j; lag tau maps to index tau % N.
    return np.concatenate([r[1:], r[:1]])


def brute_cross_correlation(q, k) -> np.ndarray:
    """Direct O(N^2) circular correlation; oracle for the FFT route."""
    q, k = _paired(q, k)
    n = q.size
    scores = np.empty(n, dtype=np.float64)
    for tau in range(1, n + 1):
        acc = 0.0
        for i in range(n):
            acc += q[i] * k[(i - tau) % n]
        scores[tau - 1] = acc
    return scores
