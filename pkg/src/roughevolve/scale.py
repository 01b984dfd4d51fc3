"""Fourier-weighted Sobolev tower on the one-dimensional torus.

Fields are n1-vector valued functions on the periodic interval (-P/2, P/2)
truncated to wavenumbers k = -N..N.  The scale index beta in [0, 1] selects
the weight lambda_k**beta with lambda_k = 1 + (2 pi k / P)**2, i.e. the
domain of the beta-th power of (1 - Laplacian).

Two coordinate systems are used:

* complex coefficients ``coeffs[c, k + N]`` (the public ``SpectralField``);
* a real "packed" layout ``[Re c_0, sqrt2 Re c_1..c_N, sqrt2 Im c_1..c_N]``
  per component.  The packing map is an isometry for the Hermitian-symmetric
  coefficient vectors of real fields, so weighted norms and operator norms
  can be computed on real arrays.  Solver internals work in this layout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "ScaleError",
    "ScaleSpec",
    "SpectralField",
    "norm_beta",
    "interpolation_defect",
    "apply_multiplier",
    "transform",
    "inverse_transform",
    "save_field",
    "load_field",
    "field_to_csv",
]

_MAGIC = b"SPEC"


class ScaleError(ValueError):
    """Invalid scale index, ordering, or sampling request."""


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if beta < 0.0:
        raise ScaleError(f"scale index must be >= 0, got {beta!r}")
    return beta


@dataclass(frozen=True)
class ScaleSpec:
    """Discrete scale: mode cutoff, number of components and period."""

    N: int
    n1: int = 1
    period: float = 2.0

    def __post_init__(self):
        if self.N < 0 or self.n1 < 1 or self.period <= 0:
            raise ScaleError("need N >= 0, n1 >= 1 and a positive period")

    # ----------------------------------------------------------- basics
    @property
    def n_modes(self) -> int:
        return 2 * self.N + 1

    @property
    def dim(self) -> int:
        """Length of a flattened packed vector."""
        return self.n1 * self.n_modes

    @property
    def min_samples(self) -> int:
        return 2 * self.n_modes

    @cached_property
    def k(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1)

    @cached_property
    def wavenumber(self) -> np.ndarray:
        return 2.0 * np.pi * self.k / self.period

    @cached_property
    def lam(self) -> np.ndarray:
        return 1.0 + self.wavenumber**2

    def weights(self, beta: float) -> np.ndarray:
        """Weights lambda_k**beta indexed like complex coefficients."""
        return self.lam ** _check_beta(beta)

    # ----------------------------------------------------------- packing
    @cached_property
    def packed_k(self) -> np.ndarray:
        pos = np.arange(1, self.N + 1)
        return np.concatenate([[0], pos, pos])

    @cached_property
    def packed_lam(self) -> np.ndarray:
        return 1.0 + (2.0 * np.pi * self.packed_k / self.period) ** 2

    def packed_weights(self, beta: float) -> np.ndarray:
        """Weights in packed layout, tiled over components (length ``dim``)."""
        return np.tile(self.packed_lam ** _check_beta(beta), self.n1)

    def pack(self, coeffs: np.ndarray) -> np.ndarray:
        """Complex (..., n1, 2N+1) -> real packed (..., n1, 2N+1)."""
        c = np.asarray(coeffs)
        N = self.N
        pos = c[..., N + 1:]
        s2 = np.sqrt(2.0)
        return np.concatenate(
            [c[..., N:N + 1].real, s2 * pos.real, s2 * pos.imag], axis=-1)

    def unpack(self, packed: np.ndarray) -> np.ndarray:
        """Real packed (..., n1, 2N+1) -> Hermitian complex coefficients."""
        r = np.asarray(packed, dtype=float)
        N = self.N
        pos = (r[..., 1:N + 1] + 1j * r[..., N + 1:]) / np.sqrt(2.0)
        neg = np.conj(pos[..., ::-1])
        return np.concatenate([neg, r[..., :1].astype(complex), pos], axis=-1)

    @cached_property
    def _Q(self) -> np.ndarray:
        # unitary map packed -> complex for a single component
        n = self.n_modes
        return self.unpack(np.eye(n)).T

    def packed_operator(self, C: np.ndarray) -> np.ndarray:
        """Convert a real-preserving complex coefficient operator to packed form.

        ``C`` acts on flattened complex coefficients (component-major) and
        has shape (dim, dim).
        """
        Q = np.kron(np.eye(self.n1), self._Q)
        return (Q.conj().T @ C @ Q).real

    def packed_norm(self, r: np.ndarray, beta: float) -> np.ndarray:
        """Norm over the trailing flattened axis of packed vectors."""
        w = self.packed_weights(beta)
        return np.linalg.norm(np.asarray(r) * w, axis=-1)

    # ------------------------------------------------------- collocation
    def sample_points(self, n: int | None = None) -> np.ndarray:
        n = self.min_samples if n is None else n
        return -0.5 * self.period + self.period * np.arange(n) / n

    def _check_samples(self, n: int) -> None:
        if n < self.min_samples:
            raise ScaleError(
                f"need at least {self.min_samples} samples for N={self.N}, got {n}")

    def to_samples(self, packed: np.ndarray, n: int | None = None) -> np.ndarray:
        """Packed (..., n1, 2N+1) -> real samples (..., n1, n)."""
        n = self.min_samples if n is None else n
        self._check_samples(n)
        r = np.asarray(packed, dtype=float)
        N = self.N
        spec = np.zeros(r.shape[:-1] + (n // 2 + 1,), dtype=complex)
        shift = (-1.0) ** np.arange(N + 1)
        pos = np.empty(r.shape[:-1] + (N + 1,), dtype=complex)
        pos[..., 0] = r[..., 0]
        pos[..., 1:] = (r[..., 1:N + 1] + 1j * r[..., N + 1:]) / np.sqrt(2.0)
        # samples start at -P/2, giving a (-1)^k phase
        spec[..., :N + 1] = pos * shift
        return np.fft.irfft(spec, n=n, axis=-1) * n

    def from_samples(self, samples: np.ndarray) -> np.ndarray:
        """Real samples (..., n1, n) -> packed (..., n1, 2N+1), truncated."""
        s = np.asarray(samples, dtype=float)
        n = s.shape[-1]
        self._check_samples(n)
        N = self.N
        c = np.fft.rfft(s, axis=-1)[..., :N + 1] / n
        c = c * (-1.0) ** np.arange(N + 1)
        s2 = np.sqrt(2.0)
        return np.concatenate(
            [c[..., :1].real, s2 * c[..., 1:].real, s2 * c[..., 1:].imag], axis=-1)

    @cached_property
    def packed_derivative(self) -> np.ndarray:
        """Real (2N+1)x(2N+1) matrix of d/dx in packed layout."""
        N = self.N
        D = np.zeros((self.n_modes, self.n_modes))
        kk = 2.0 * np.pi * np.arange(1, N + 1) / self.period
        idx = np.arange(1, N + 1)
        # d/dx (a + ib) e^{ikx} = ik(a + ib) -> real part -k b, imag part k a
        D[idx, N + idx] = -kk
        D[N + idx, idx] = kk
        return D

    def derivative(self, packed: np.ndarray, order: int = 1) -> np.ndarray:
        r = np.asarray(packed, dtype=float)
        for _ in range(order):
            r = r @ self.packed_derivative.T
        return r

    def multiplication_operator(self, f_packed: np.ndarray) -> np.ndarray:
        """Galerkin matrix (packed, one component) of v -> P_N(f v)."""
        c = self.unpack(np.asarray(f_packed, dtype=float))
        N, n = self.N, self.n_modes
        # C[k, m] = f_{k - m}
        idx = np.arange(n)
        diff = idx[:, None] - idx[None, :]
        C = np.zeros((n, n), dtype=complex)
        mask = np.abs(diff) <= N
        C[mask] = c[diff[mask] + N]
        return (self._Q.conj().T @ C @ self._Q).real


@dataclass
class SpectralField:
    """Truncated Fourier coefficients of an n1-component real field."""

    coeffs: np.ndarray
    period: float = 2.0
    spec: ScaleSpec = field(init=False, repr=False)

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=complex))
        if c.shape[-1] % 2 != 1:
            raise ScaleError("coefficient axis must have odd length 2N+1")
        self.coeffs = c
        self.spec = ScaleSpec((c.shape[-1] - 1) // 2, c.shape[0], self.period)

    @property
    def N(self) -> int:
        return self.spec.N

    @property
    def n1(self) -> int:
        return self.spec.n1

    @classmethod
    def zeros(cls, N: int, n1: int = 1, period: float = 2.0) -> "SpectralField":
        return cls(np.zeros((n1, 2 * N + 1), dtype=complex), period)

    @classmethod
    def mode(cls, k: int, N: int, n1: int = 1, component: int = 0,
             period: float = 2.0) -> "SpectralField":
        """Unit amplitude single Fourier mode e_k in one component."""
        f = cls.zeros(N, n1, period)
        f.coeffs[component, k + N] = 1.0
        return f

    @classmethod
    def from_packed(cls, spec: ScaleSpec, packed: np.ndarray) -> "SpectralField":
        r = np.asarray(packed, dtype=float).reshape(spec.n1, spec.n_modes)
        return cls(spec.unpack(r), spec.period)

    def packed(self) -> np.ndarray:
        return self.spec.pack(self.coeffs).reshape(-1)

    def __add__(self, other):
        return SpectralField(self.coeffs + other.coeffs, self.period)

    def __sub__(self, other):
        return SpectralField(self.coeffs - other.coeffs, self.period)

    def __mul__(self, a):
        return SpectralField(self.coeffs * a, self.period)

    __rmul__ = __mul__

    def is_real(self, tol: float = 1e-12) -> bool:
        c = self.coeffs
        return bool(np.allclose(c, np.conj(c[:, ::-1]), atol=tol))


def norm_beta(x: SpectralField, beta: float) -> float:
    """Weighted l2 norm sqrt(sum |lambda_k**beta c_k|^2) over all components."""
    w = x.spec.weights(beta)
    return float(np.linalg.norm(x.coeffs * w))


def interpolation_defect(x: SpectralField, alpha: float, beta: float,
                         gamma: float) -> float:
    """|x|_b^(g-a) - |x|_a^(g-b) |x|_g^(b-a); nonpositive on a Hilbert scale."""
    if not (0.0 <= alpha <= beta <= gamma <= 1.0):
        raise ScaleError(
            f"need 0 <= alpha <= beta <= gamma <= 1, got {(alpha, beta, gamma)}")
    na, nb, ng = (norm_beta(x, b) for b in (alpha, beta, gamma))
    return nb ** (gamma - alpha) - na ** (gamma - beta) * ng ** (beta - alpha)


def apply_multiplier(x: SpectralField, symbol) -> SpectralField:
    """coeff(k) -> symbol(k) coeff(k).

    ``symbol`` may be a scalar, an array over modes (2N+1,), an array over
    (n1, 2N+1), a per-mode matrix stack (2N+1, n1, n1), or a callable of the
    wavenumber index array returning one of these.
    """
    if callable(symbol):
        symbol = symbol(x.spec.k)
    s = np.asarray(symbol)
    c = x.coeffs
    if s.ndim == 3:
        out = np.einsum("kij,jk->ik", s, c)
    else:
        out = c * s
    return SpectralField(out, x.period)


def transform(samples: np.ndarray, N: int, period: float = 2.0) -> SpectralField:
    """Point samples (n1, n) at x_j = -P/2 + jP/n -> coefficients up to |k| <= N.

    c_k = (1/n) sum_j u(x_j) exp(-2 pi i k x_j / P).
    """
    s = np.atleast_2d(np.asarray(samples, dtype=float))
    n = s.shape[-1]
    spec = ScaleSpec(N, s.shape[0], period)
    spec._check_samples(n)
    full = np.fft.fft(s, axis=-1) / n
    k = spec.k
    phase = np.exp(1j * np.pi * k)  # exp(-2 pi i k x_0 / P) with x_0 = -P/2
    return SpectralField(full[:, k % n] * phase, period)


def inverse_transform(x: SpectralField, n: int | None = None) -> np.ndarray:
    """Coefficients -> real samples (n1, n) at x_j = -P/2 + jP/n."""
    spec = x.spec
    n = spec.min_samples if n is None else n
    spec._check_samples(n)
    full = np.zeros((spec.n1, n), dtype=complex)
    k = spec.k
    full[:, k % n] = x.coeffs * np.exp(-1j * np.pi * k)
    return np.fft.ifft(full, axis=-1).real * n


# ------------------------------------------------------------------ I/O
def save_field(x: SpectralField, path) -> None:
    header = _MAGIC + struct.pack("<IId", x.n1, x.N, float(x.period))
    body = np.ascontiguousarray(x.coeffs, dtype="<c16").view("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + body)


def load_field(path) -> SpectralField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise ScaleError("not a spectral field file")
    n1, N, period = struct.unpack("<IId", raw[4:20])
    vals = np.frombuffer(raw[20:], dtype="<f8")
    if vals.size != 2 * n1 * (2 * N + 1):
        raise ScaleError("truncated spectral field file")
    c = vals.view("<c16").reshape(n1, 2 * N + 1)
    return SpectralField(c.copy(), period)


def field_to_csv(x: SpectralField, path, n: int | None = None) -> None:
    samples = inverse_transform(x, n)
    pts = x.spec.sample_points(samples.shape[-1])
    cols = ["x"] + [f"u{i + 1}" for i in range(x.n1)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\r\n")
        for j, p in enumerate(pts):
            fh.write(",".join(f"{v:.17g}" for v in (p, *samples[:, j])) + "\r\n")
