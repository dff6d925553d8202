"""Almost-periodic function algebra on trigonometric polynomials.

A :class:`TrigPolynomial` is a finite sum ``sum_k a_k exp(i mu_k . y)``; it is
the computational stand-in for an almost-periodic function. Mean values and
the quadratic Besicovitch seminorm are exact through frequency bookkeeping,
other seminorm orders fall back on window averaging of samples.

The pore distribution ``theta`` is a {0,1} lattice function. An almost-periodic
{0,1} sequence is periodic, so :func:`detect_period` simply searches for the
smallest exact translate inside a finite window.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidOrder, NoPeriodInWindow, ShapeError


@dataclass(frozen=True)
class TrigPolynomial:
    """Finite trigonometric polynomial on R^dim.

    Parameters
    ----------
    dimension : int
        Number of variables.
    frequencies : array_like, shape (K, dimension)
        Angular frequencies ``mu_k``; duplicates are merged on construction.
    amplitudes : array_like, shape (K,)
        Complex amplitudes ``a_k``.
    """

    dimension: int
    frequencies: np.ndarray = field(repr=False)
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        freqs = np.asarray(self.frequencies, dtype=float).reshape(-1, self.dimension)
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if freqs.shape[0] != amps.shape[0]:
            raise ShapeError("frequencies and amplitudes differ in length")
        merged: dict = {}
        order = []
        for mu, a in zip(map(tuple, freqs), amps):
            mu = tuple(0.0 if m == 0 else m for m in mu)  # fold -0.0 into 0.0
            if mu not in merged:
                merged[mu] = 0j
                order.append(mu)
            merged[mu] += a
        keep = [mu for mu in order if merged[mu] != 0]
        object.__setattr__(
            self, "frequencies", np.array(keep, dtype=float).reshape(-1, self.dimension)
        )
        object.__setattr__(self, "amplitudes", np.array([merged[mu] for mu in keep], dtype=complex))

    # constructors ---------------------------------------------------------

    @classmethod
    def constant(cls, value, dimension=1) -> "TrigPolynomial":
        return cls(dimension, np.zeros((1, dimension)), [value])

    @classmethod
    def cosine(cls, frequency, amplitude=1.0) -> "TrigPolynomial":
        """``amplitude * cos(frequency . y)`` as a conjugate-symmetric pair."""
        mu = np.atleast_1d(np.asarray(frequency, dtype=float))
        return cls(mu.size, np.stack([mu, -mu]), [amplitude / 2, amplitude / 2])

    @classmethod
    def sine(cls, frequency, amplitude=1.0) -> "TrigPolynomial":
        mu = np.atleast_1d(np.asarray(frequency, dtype=float))
        return cls(mu.size, np.stack([mu, -mu]), [amplitude / 2j, -amplitude / 2j])

    @classmethod
    def from_terms(cls, terms: Iterable, dimension: Optional[int] = None) -> "TrigPolynomial":
        terms = list(terms)
        if dimension is None:
            if not terms:
                raise ValueError("dimension required for an empty term list")
            dimension = len(np.atleast_1d(terms[0][0]))
        if not terms:
            return cls(dimension, np.zeros((0, dimension)), np.zeros(0))
        freqs = [np.atleast_1d(np.asarray(mu, dtype=float)) for mu, _ in terms]
        return cls(dimension, np.array(freqs), [a for _, a in terms])

    # evaluation and algebra -----------------------------------------------

    @property
    def terms(self):
        return list(zip(map(tuple, self.frequencies), self.amplitudes))

    def __len__(self):
        return self.amplitudes.size

    def __call__(self, y) -> np.ndarray:
        """Evaluate at points ``y`` of shape (..., dimension)."""
        y = np.asarray(y, dtype=float)
        if self.dimension == 1 and (y.ndim == 0 or y.shape[-1] != 1):
            y = y[..., None]
        if y.shape[-1] != self.dimension:
            raise ShapeError(f"expected trailing axis of size {self.dimension}")
        if len(self) == 0:
            return np.zeros(y.shape[:-1], dtype=complex)
        phase = np.tensordot(y, self.frequencies.T, axes=1)
        return np.exp(1j * phase) @ self.amplitudes

    def real(self, y) -> np.ndarray:
        return self(y).real

    def __add__(self, other):
        if np.isscalar(other):
            other = TrigPolynomial.constant(other, self.dimension)
        self._check_dim(other)
        return TrigPolynomial(
            self.dimension,
            np.vstack([self.frequencies, other.frequencies]),
            np.concatenate([self.amplitudes, other.amplitudes]),
        )

    __radd__ = __add__

    def __neg__(self):
        return TrigPolynomial(self.dimension, self.frequencies, -self.amplitudes)

    def __sub__(self, other):
        return self + (-other if isinstance(other, TrigPolynomial) else -other)

    def __mul__(self, other):
        if np.isscalar(other):
            return TrigPolynomial(self.dimension, self.frequencies, self.amplitudes * other)
        self._check_dim(other)
        freqs = (self.frequencies[:, None, :] + other.frequencies[None, :, :]).reshape(
            -1, self.dimension
        )
        amps = np.outer(self.amplitudes, other.amplitudes).reshape(-1)
        return TrigPolynomial(self.dimension, freqs, amps)

    __rmul__ = __mul__

    def conj(self):
        return TrigPolynomial(self.dimension, -self.frequencies, np.conj(self.amplitudes))

    def shift(self, a) -> "TrigPolynomial":
        """The translate ``y -> p(y + a)``."""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        return TrigPolynomial(
            self.dimension, self.frequencies, self.amplitudes * np.exp(1j * self.frequencies @ a)
        )

    def is_real(self, tol=1e-12) -> bool:
        """Conjugate symmetry of the term set."""
        diff = self - self.conj()
        return bool(np.all(np.abs(diff.amplitudes) <= tol))

    def max_frequency(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.max(np.abs(self.frequencies)))

    def _check_dim(self, other):
        if other.dimension != self.dimension:
            raise ShapeError("dimension mismatch between trigonometric polynomials")

    # serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dimension": int(self.dimension),
            "terms": [
                {"frequency": [float(m) for m in mu], "amplitude": [float(a.real), float(a.imag)]}
                for mu, a in self.terms
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrigPolynomial":
        dim = int(data["dimension"])
        terms = []
        for k, term in enumerate(data.get("terms", [])):
            mu = np.atleast_1d(np.asarray(term["frequency"], dtype=float))
            if mu.size != dim:
                raise ShapeError(f"terms[{k}].frequency has {mu.size} entries, expected {dim}")
            amp = term["amplitude"]
            a = complex(amp[0], amp[1]) if isinstance(amp, (list, tuple)) else complex(amp)
            terms.append((mu, a))
        return cls.from_terms(terms, dimension=dim)


def mean_value(p: TrigPolynomial) -> complex:
    """Mean value: the amplitude of the zero frequency (0 if absent)."""
    zero = np.all(p.frequencies == 0.0, axis=1)
    return complex(p.amplitudes[zero].sum())


def window_average(
    func: Callable[[np.ndarray], np.ndarray],
    dimension: int,
    radius: float,
    spacing: float = 0.25,
    weight: str = "fejer",
    origin=None,
    chunk: int = 1 << 20,
) -> complex:
    """Average of ``func`` over the cube ``origin + [0, radius]^dimension``.

    Samples on a midpoint grid of the given spacing. ``weight="cube"`` is the
    flat average; ``weight="fejer"`` uses triangular (Fejer) weights along each
    axis, which damp non-zero frequencies like ``(mu R)^-2`` instead of
    ``(mu R)^-1``.
    """
    n = max(int(np.ceil(radius / spacing)), 1)
    h = radius / n
    t = (np.arange(n) + 0.5) * h
    if weight == "cube":
        w1 = np.full(n, 1.0 / n)
    elif weight == "fejer":
        w1 = 1.0 - np.abs(2.0 * t / radius - 1.0)
        w1 /= w1.sum()
    else:
        raise ValueError(f"unknown weight {weight!r}")
    origin = np.zeros(dimension) if origin is None else np.asarray(origin, dtype=float)
    # first axis is chunked, remaining axes are materialized
    rest = int(n ** (dimension - 1))
    rows = max(1, chunk // max(rest, 1))
    total = 0j
    tail = np.stack(np.meshgrid(*([t] * (dimension - 1)), indexing="ij"), axis=-1).reshape(
        rest, dimension - 1
    ) if dimension > 1 else np.zeros((1, 0))
    wtail = np.ones(1)
    for _ in range(dimension - 1):
        wtail = np.multiply.outer(wtail, w1)
    wtail = wtail.reshape(-1)
    for start in range(0, n, rows):
        sl = slice(start, min(n, start + rows))
        x0 = t[sl]
        pts = np.concatenate(
            [np.repeat(x0, tail.shape[0])[:, None], np.tile(tail, (x0.size, 1))], axis=1
        ) + origin
        vals = np.asarray(func(pts)).reshape(x0.size, -1)
        total += np.sum(w1[sl][:, None] * vals * wtail[None, :])
    return complex(total)


def besicovitch_seminorm(
    p: TrigPolynomial,
    order: float = 2.0,
    radius: float = 16.0,
    rtol: float = 1e-6,
    max_radius: float = 4096.0,
) -> float:
    """``[M(|p|^order)]^(1/order)``.

    Exact (Parseval) for ``order == 2``. Otherwise the mean of ``|p|^order`` is
    estimated by Fejer-weighted cube averages with the radius doubled from
    ``radius`` until two successive estimates agree to ``rtol``.
    """
    if not order >= 1:
        raise InvalidOrder(f"order must be >= 1, got {order}")
    if len(p) == 0:
        return 0.0
    if order == 2:
        return float(np.sqrt(np.sum(np.abs(p.amplitudes) ** 2)))
    mu = p.max_frequency()
    spacing = min(0.25, np.pi / (4 * mu)) if mu > 0 else 1.0
    f = lambda y: np.abs(p(y)) ** order  # noqa: E731
    prev = None
    R = float(radius)
    while True:
        cur = window_average(f, p.dimension, R, spacing).real
        if prev is not None and abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            break
        if R >= max_radius:
            break
        prev, R = cur, 2 * R
    return float(max(cur, 0.0) ** (1.0 / order))


@dataclass(frozen=True)
class PoreDistribution:
    """Finite window of the {0,1} pore-distribution function theta.

    ``window[k]`` is theta at lattice point ``origin + k``. When
    ``declared_period`` is given it must be an exact period inside the window.
    """

    window: np.ndarray
    declared_period: Optional[tuple] = None
    origin: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.window)
        if w.ndim < 1:
            raise ShapeError("window must be at least one-dimensional")
        if not np.all((w == 0) | (w == 1)):
            raise ValueError("pore distribution values must be exactly 0 or 1")
        object.__setattr__(self, "window", w.astype(np.int8))
        if not self.origin:
            object.__setattr__(self, "origin", (0,) * w.ndim)
        if self.declared_period is not None:
            per = tuple(int(q) for q in self.declared_period)
            if len(per) != w.ndim or min(per) < 1:
                raise ShapeError("declared_period must be a positive vector of length N")
            if _sup_discrepancy(w, per) > 0:
                raise ValueError(f"declared period {per} is not a period of the window")
            object.__setattr__(self, "declared_period", per)

    @property
    def dimension(self) -> int:
        return self.window.ndim

    @classmethod
    def from_tile(cls, tile, reps=None, offset=None) -> "PoreDistribution":
        """Window obtained by tiling a base pattern; ``offset`` shifts the origin."""
        tile = np.asarray(tile)
        reps = tuple(reps) if reps is not None else (2,) * tile.ndim
        big = np.tile(tile, tuple(r + 1 for r in reps))
        offset = tuple(offset) if offset is not None else (0,) * tile.ndim
        sl = tuple(
            slice(o % s, o % s + s * r) for o, s, r in zip(offset, tile.shape, reps)
        )
        return cls(big[sl], declared_period=tile.shape)

    @classmethod
    def uniform(cls, dimension, size=4) -> "PoreDistribution":
        """theta = 1 everywhere (periodic porous medium)."""
        return cls(np.ones((size,) * dimension, dtype=np.int8), declared_period=(1,) * dimension)

    def value(self, k) -> np.ndarray:
        """theta at lattice points k (..., N), extended by the detected period."""
        per = np.asarray(self.period())
        k = np.asarray(k, dtype=int)
        idx = np.mod(k - np.asarray(self.origin), per)
        return self.window[tuple(np.moveaxis(idx, -1, 0))]

    def period(self) -> tuple:
        return self.declared_period if self.declared_period is not None else detect_period(self)

    def to_dict(self) -> dict:
        d = {"rows": self.window.tolist()}
        if self.declared_period is not None:
            d["period"] = list(self.declared_period)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PoreDistribution":
        per = data.get("period")
        return cls(np.asarray(data["rows"]), declared_period=tuple(per) if per else None)


def _sup_discrepancy(w: np.ndarray, shift) -> float:
    """max |theta(k + shift) - theta(k)| over in-window pairs."""
    a = w[tuple(slice(s, None) for s in shift)]
    b = w[tuple(slice(0, n - s) for n, s in zip(w.shape, shift))]
    if a.size == 0:
        return np.inf
    return float(np.max(np.abs(a.astype(int) - b.astype(int))))


def detect_period(theta: PoreDistribution) -> tuple:
    """Smallest positive lattice period of theta, axis by axis.

    Candidates ``p e_i`` with ``p <= window_i / 2`` are scanned in increasing
    order; a translate whose sup-discrepancy is below 1/2 is an exact period
    since theta only takes the values 0 and 1.
    """
    w = theta.window
    out = []
    for axis, n in enumerate(w.shape):
        found = None
        for p in range(1, n // 2 + 1):
            shift = [0] * w.ndim
            shift[axis] = p
            if _sup_discrepancy(w, shift) < 0.5:
                found = p
                break
        if found is None:
            raise NoPeriodInWindow(
                f"no period along axis {axis} within a window of length {n}"
            )
        out.append(found)
    return tuple(out)


def torus_convolve(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Circular convolution on the unit-measure torus.

    ``(u * v)(s) = integral u(r) v(s - r) dr`` discretized as the discrete
    circular sum times the grid-cell volume ``1 / u.size``.
    """
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ShapeError(f"grid mismatch: {u.shape} vs {v.shape}")
    out = np.fft.ifftn(np.fft.fftn(u) * np.fft.fftn(v)) / u.size
    if np.isrealobj(u) and np.isrealobj(v):
        return out.real
    return out


def lp_norm(u: np.ndarray, p: float = 2.0) -> float:
    """Discrete L^p norm of a grid function on the unit-measure torus."""
    u = np.asarray(u)
    return float(np.mean(np.abs(u) ** p) ** (1.0 / p))


def sample_on_grid(p: TrigPolynomial, shape: Sequence[int], lengths=None) -> np.ndarray:
    """Values of ``p`` at the midpoints of a uniform grid on a box."""
    lengths = np.ones(len(shape)) if lengths is None else np.asarray(lengths, dtype=float)
    axes = [(np.arange(n) + 0.5) * L / n for n, L in zip(shape, lengths)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return p(pts)
