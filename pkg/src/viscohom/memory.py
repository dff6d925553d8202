"""Memory terms: Volterra convolution quadrature and fast-time kernel modes.

A memory kernel is a spatial coefficient field times a fast-time profile of
period one, ``A1(y, tau) = K(y) k(tau)``. At scale ``eps`` the fine solver
evaluates ``k((t - s) / eps)``; the cell problems only see its fast-time
modes, and mode zero is all that survives against fields constant in ``tau``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np

from .ap_core import TrigPolynomial
from .coefficients import CoefficientField
from .errors import HistoryError, ShapeError

DEFAULT_FAST_SAMPLES = 16


@dataclass(frozen=True)
class MemoryKernel:
    """Separable kernel ``spatial(y) * temporal(tau)`` with ``temporal`` 1-periodic.

    ``temporal`` is a one-dimensional :class:`TrigPolynomial` (frequencies
    multiples of ``2 pi``) or a callable. Callables may be flagged as
    discontinuous, in which case they are accepted for time stepping but not
    for fast-time Fourier analysis.
    """

    spatial: CoefficientField
    temporal: Union[TrigPolynomial, Callable] = None
    fast_samples: int = DEFAULT_FAST_SAMPLES
    continuous: bool = True

    def __post_init__(self):
        if self.fast_samples < 2:
            raise ValueError("at least two fast-time samples are required")
        if self.temporal is None:
            object.__setattr__(self, "temporal", TrigPolynomial.constant(1.0))

    @classmethod
    def zero(cls, n: int) -> "MemoryKernel":
        return cls(CoefficientField(np.zeros((n * n, n * n))))

    def is_zero(self) -> bool:
        if self.spatial.is_zero():
            return True
        return isinstance(self.temporal, TrigPolynomial) and len(self.temporal) == 0

    def time_profile(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if isinstance(self.temporal, TrigPolynomial):
            return np.real(self.temporal(tau.reshape(-1, 1))).reshape(tau.shape)
        return np.asarray(self.temporal(tau), dtype=float).reshape(tau.shape)

    def samples(self) -> np.ndarray:
        """Temporal profile on the uniform fast-time grid ``j / M``, ``j < M``."""
        return self.time_profile(np.arange(self.fast_samples) / self.fast_samples)

    def max_frequency(self) -> float:
        """Largest fast-time frequency in cycles per unit ``tau``."""
        if isinstance(self.temporal, TrigPolynomial):
            return self.temporal.max_frequency() / (2 * np.pi)
        return self.fast_samples / 2

    def to_dict(self) -> dict:
        if not isinstance(self.temporal, TrigPolynomial):
            raise ShapeError("only trigonometric temporal profiles are serializable")
        return {
            "spatial": self.spatial.to_dict(),
            "temporal": self.temporal.to_dict(),
            "fast_samples": self.fast_samples,
        }

    @classmethod
    def from_dict(cls, data: dict, n: int) -> "MemoryKernel":
        return cls(
            CoefficientField.from_dict(data["spatial"], n),
            TrigPolynomial.from_dict(data["temporal"]) if "temporal" in data else None,
            int(data.get("fast_samples", DEFAULT_FAST_SAMPLES)),
        )


@dataclass
class FieldHistory:
    """Append-only record of vectors at uniformly spaced steps ``0..n``."""

    dt: float
    values: List[np.ndarray] = field(default_factory=list)

    def append(self, v) -> None:
        v = np.asarray(v, dtype=float)
        if self.values and v.shape != self.values[0].shape:
            raise HistoryError(f"shape {v.shape} differs from stored {self.values[0].shape}")
        self.values.append(v.copy())

    def __len__(self) -> int:
        return len(self.values)

    @property
    def step(self) -> int:
        return len(self.values) - 1

    def as_array(self) -> np.ndarray:
        return np.stack(self.values)


def trapezoid_weights(n: int, dt: float) -> np.ndarray:
    """Composite trapezoid weights for ``n + 1`` samples."""
    w = np.full(n + 1, dt)
    if n == 0:
        return np.zeros(1)
    w[0] = w[-1] = dt / 2
    return w


def volterra_convolve(kernel, history: FieldHistory, n: int) -> np.ndarray:
    """Trapezoid approximation of ``int_0^{t_n} k(t_n - s) g(s) ds``.

    ``kernel[j]`` is ``k(j dt)`` for ``j = 0..n``: a scalar, or a matrix applied
    to the stored vector. ``history`` must hold ``g`` at steps ``0..n``.
    """
    k = np.asarray(kernel, dtype=float)
    if len(history) < n + 1:
        raise HistoryError(f"history holds {len(history)} steps, step {n} requested")
    if k.shape[0] < n + 1:
        raise HistoryError(f"kernel holds {k.shape[0]} samples, step {n} requested")
    g = history.as_array()[: n + 1]
    w = trapezoid_weights(n, history.dt)
    kk = k[n::-1] if n > 0 else k[:1]  # k(t_n - t_j) for j = 0..n
    if kk.ndim == 1:
        return np.tensordot(w * kk, g, axes=(0, 0))
    return np.einsum("j,jab,jb->a", w, kk, g.reshape(n + 1, -1))


def volterra_lagged(kernel, history: FieldHistory, n: int) -> np.ndarray:
    """The part of :func:`volterra_convolve` at step ``n`` that uses steps ``< n``.

    The missing term is ``dt / 2 * k(0) g_n``; implicit schemes add it to the
    step matrix. Only ``g_0..g_{n-1}`` are read.
    """
    k = np.asarray(kernel, dtype=float)
    if len(history) < n:
        raise HistoryError(f"history holds {len(history)} steps, {n} needed")
    if k.shape[0] < n + 1:
        raise HistoryError(f"kernel holds {k.shape[0]} samples, step {n} requested")
    if n == 0:
        return np.zeros_like(history.values[0]) if len(history) else np.zeros(0)
    w = trapezoid_weights(n, history.dt)[:n]
    kk = k[n:0:-1]  # k(t_n - t_j) for j = 0..n-1
    g = history.values
    out = np.zeros_like(g[0])
    for j in range(n):
        c = w[j] * kk[j]
        if c != 0.0:
            out += c * g[j]
    return out


def kernel_fast_time_modes(kernel: MemoryKernel) -> dict:
    """Discrete Fourier modes of the fast-time samples, keyed by integer frequency.

    Each mode is the spatial base tensor times the temporal coefficient; the
    spatial modulation (shared by all modes) stays on ``kernel.spatial``.
    """
    if not kernel.continuous:
        warnings.warn("discontinuous fast-time kernel rejected for Fourier treatment")
        raise ValueError("fast-time modes require a continuous kernel")
    s = kernel.samples()
    m = s.size
    coeffs = np.fft.fft(s) / m
    freqs = np.fft.fftfreq(m, d=1.0 / m).astype(int)
    base = np.asarray(kernel.spatial.base, dtype=float)
    return {int(k): c * base for k, c in zip(freqs, coeffs)}


def inverse_fast_time_modes(modes: dict, m: int) -> np.ndarray:
    """Samples of the temporal profile times the base tensor, from :func:`kernel_fast_time_modes`."""
    keys = np.fft.fftfreq(m, d=1.0 / m).astype(int)
    stack = np.stack([modes[int(k)] for k in keys])
    return np.real(np.fft.ifft(stack * m, axis=0))


def effective_time_average(kernel: MemoryKernel) -> CoefficientField:
    """Fast-time mean of the kernel as a spatial field (mode zero)."""
    mean = float(np.mean(kernel.samples()))
    return kernel.spatial.scaled(mean)


def fast_time_mean(kernel: Optional[MemoryKernel]) -> float:
    return 0.0 if kernel is None else float(np.mean(kernel.samples()))
