"""Step-2 rough paths on uniform dyadic grids.

Level 1 is stored per node, level 2 per consecutive cell.  Level-2 values
over arbitrary node pairs are assembled from a dyadic tree of block values
with Chen's relation

    XX[s, t] = XX[s, u] + XX[u, t] + (X_u - X_s) (x) (X_t - X_u),

where the first tensor slot is the inner (earlier) increment, i.e.
XX^{ij}[s, t] = int_s^t (X^i_r - X^i_s) dX^j_r.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RoughPathError",
    "RoughPath",
    "ShiftedView",
    "dyadic_grid",
    "lift_smooth",
    "lift_piecewise_linear",
    "brownian_lift",
    "chen_defect",
    "rough_metric",
    "hoelder_seminorms",
    "rho",
    "shift",
    "save_roughpath",
    "load_roughpath",
    "roughpath_to_csv",
    "make_rng",
]

_MAGIC = b"RGHP"
_VERSION = 1


class RoughPathError(ValueError):
    """Malformed grids or inconsistent rough path data."""


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox4x64 generator; bit-reproducible for a given seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def dyadic_grid(T: float, m: int) -> np.ndarray:
    """Uniform grid with 2**m cells on [0, T]."""
    if m < 0 or T <= 0:
        raise RoughPathError("need m >= 0 and T > 0")
    M = 2**m
    return T * np.arange(M + 1) / M


def _check_grid(times: np.ndarray, dyadic: bool) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise RoughPathError("grid needs at least two nodes")
    h = np.diff(t)
    if np.any(h <= 0):
        raise RoughPathError("grid must be strictly increasing")
    if not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise RoughPathError("grid must be uniform")
    M = t.size - 1
    if dyadic and M & (M - 1):
        raise RoughPathError(f"number of cells must be a power of two, got {M}")
    return t


def _build_levels(X: np.ndarray, XX: np.ndarray) -> list[np.ndarray]:
    levels = [XX]
    width = 1
    while XX.shape[0] >= 2:
        n = XX.shape[0] // 2
        left, right = XX[0:2 * n:2], XX[1:2 * n:2]
        a = np.arange(n) * 2 * width
        dl = X[a + width] - X[a]
        dr = X[a + 2 * width] - X[a + width]
        XX = left + right + dl[:, :, None] * dr[:, None, :]
        levels.append(XX)
        width *= 2
    return levels


class RoughPath:
    """Immutable rough path (X, XX) on a uniform grid."""

    def __init__(self, times, X, XX, gamma0: float = 0.45, levels=None,
                 dyadic: bool = False):
        self.times = _check_grid(times, dyadic)
        X = np.array(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        M = self.times.size - 1
        if X.shape[0] != M + 1:
            raise RoughPathError("level 1 must have one value per node")
        d = X.shape[1]
        XX = np.array(XX, dtype=float).reshape(M, d, d)
        if not (1.0 / 3.0 < gamma0 < 0.5):
            raise RoughPathError(f"gamma0 must lie in (1/3, 1/2), got {gamma0}")
        self.X, self.XX, self.gamma0 = X, XX, float(gamma0)
        if levels is None:
            self.levels = _build_levels(X, XX)
        else:
            # externally supplied upper tree levels (deserialisation, tests)
            self.levels = [XX] + [np.array(lv, dtype=float) for lv in levels]
        for arr in (self.times, self.X, self.XX, *self.levels):
            arr.setflags(write=False)

    # -------------------------------------------------------------- shape
    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def M(self) -> int:
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])

    def index(self, t: float) -> int:
        i = int(round((t - self.times[0]) / self.h))
        if i < 0 or i > self.M or abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise RoughPathError(f"time {t} is not a grid node")
        return i

    # ------------------------------------------------------------ queries
    def increment(self, a: int, b: int) -> np.ndarray:
        """delta X over nodes [a, b]."""
        return self.X[b] - self.X[a]

    def level2(self, a: int, b: int) -> np.ndarray:
        """XX over nodes [a, b] by Chen recursion on dyadic blocks."""
        if not (0 <= a <= b <= self.M):
            raise RoughPathError(f"bad node pair ({a}, {b})")
        acc = np.zeros((self.d, self.d))
        cur = a
        while cur < b:
            j = 0
            while (cur % (1 << (j + 1)) == 0 and cur + (1 << (j + 1)) <= b
                   and j + 1 < len(self.levels)
                   and (cur >> (j + 1)) < self.levels[j + 1].shape[0]):
                j += 1
            nxt = cur + (1 << j)
            acc = acc + self.levels[j][cur >> j] + np.outer(
                self.X[cur] - self.X[a], self.X[nxt] - self.X[cur])
            cur = nxt
        return acc

    def level2_from_origin(self) -> np.ndarray:
        """XX over [t_0, t_i] for every node, shape (M+1, d, d)."""
        Y = self.X - self.X[0]
        dX = np.diff(self.X, axis=0)
        terms = self.XX + Y[:-1, :, None] * dX[:, None, :]
        out = np.zeros((self.M + 1, self.d, self.d))
        np.cumsum(terms, axis=0, out=out[1:])
        return out

    def lag_increments(self, lag: int, cumulative=None):
        """(delta X, XX) over all node pairs (i, i + lag)."""
        C = self.level2_from_origin() if cumulative is None else cumulative
        Y = self.X - self.X[0]
        dX = Y[lag:] - Y[:-lag]
        XX = C[lag:] - C[:-lag] - Y[:-lag, :, None] * dX[:, None, :]
        return dX, XX

    def scaled(self, lam: float) -> "RoughPath":
        """Dilation: level 1 times lam, level 2 times lam**2."""
        return RoughPath(self.times, lam * self.X, lam**2 * self.XX, self.gamma0)

    def with_gamma0(self, gamma0: float) -> "RoughPath":
        return RoughPath(self.times, self.X, self.XX, gamma0)

    def restrict(self, a: int, b: int) -> "RoughPath":
        """Restriction to nodes [a, b], times re-based to start at zero."""
        t = self.times[a:b + 1] - self.times[a]
        return RoughPath(t, self.X[a:b + 1] - self.X[a], self.XX[a:b], self.gamma0)


@dataclass(frozen=True)
class ShiftedView:
    """theta_s applied to a rough path: t -> (X_{s+t} - X_s, XX[s, s+t])."""

    base: RoughPath
    offset: int

    @property
    def M(self) -> int:
        return self.base.M - self.offset

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def times(self) -> np.ndarray:
        return self.base.times[self.offset:] - self.base.times[self.offset]

    def level1(self, b: int) -> np.ndarray:
        return self.base.X[self.offset + b] - self.base.X[self.offset]

    def increment(self, a: int, b: int) -> np.ndarray:
        return self.base.increment(self.offset + a, self.offset + b)

    def level2(self, a: int, b: int) -> np.ndarray:
        return self.base.level2(self.offset + a, self.offset + b)

    def as_roughpath(self) -> RoughPath:
        return self.base.restrict(self.offset, self.base.M)


def shift(rp, s: float) -> ShiftedView:
    """theta_s; ``s`` must be a grid node time.  Shifts of views compose."""
    if isinstance(rp, ShiftedView):
        base, off = rp.base, rp.offset
        i = int(round(s / base.h))
        if abs(i * base.h - s) > 1e-9 * max(1.0, abs(s)) or off + i > base.M:
            raise RoughPathError(f"shift {s} is not a grid node")
        return ShiftedView(base, off + i)
    return ShiftedView(rp, rp.index(rp.times[0] + s))


# ------------------------------------------------------------ constructors
def _cell_lift(Xf: np.ndarray, r: int) -> np.ndarray:
    """Canonical lift of the piecewise-linear interpolant, per coarse cell."""
    d = Xf.shape[1]
    M = (Xf.shape[0] - 1) // r
    D = np.diff(Xf, axis=0).reshape(M, r, d)
    base = Xf[:-1:r]
    Y = Xf[:-1].reshape(M, r, d) - base[:, None, :] + 0.5 * D
    return np.einsum("mki,mkj->mij", Y, D)


def lift_smooth(samples, fine_times, target_times, gamma0: float = 0.45,
                min_refine: int = 16) -> RoughPath:
    """Canonical lift of a sampled smooth path onto a coarser target grid.

    Level 2 on each fine cell is the exact iterated integral of the linear
    interpolant (half the outer square of the increment); cells are chained
    with Chen's relation.  Exact for paths that are linear between fine
    nodes, second order otherwise.
    """
    Xf = np.asarray(samples, dtype=float)
    if Xf.ndim == 1:
        Xf = Xf[:, None]
    tf = _check_grid(fine_times, False)
    tt = _check_grid(target_times, True)
    if Xf.shape[0] != tf.size:
        raise RoughPathError("samples must match the fine grid")
    Mf, M = tf.size - 1, tt.size - 1
    r = Mf // M
    if r * M != Mf or not np.allclose(tf[::r], tt, rtol=0, atol=1e-12 * tt[-1]):
        raise RoughPathError("fine grid does not refine the target grid")
    if r < min_refine:
        raise RoughPathError(f"refinement factor {r} below {min_refine}")
    return RoughPath(tt, Xf[::r], _cell_lift(Xf, r), gamma0, dyadic=True)


def lift_piecewise_linear(times, X, gamma0: float = 0.45) -> RoughPath:
    """Canonical lift of the path that is linear between grid nodes."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    dX = np.diff(X, axis=0)
    return RoughPath(times, X, 0.5 * dX[:, :, None] * dX[:, None, :], gamma0)


def brownian_lift(seed: int, d: int, times, kind: str = "stratonovich",
                  gamma0: float = 0.45, refine: int = 16) -> RoughPath:
    """Brownian motion with Ito or Stratonovich level 2.

    Each grid cell is split into ``refine`` sub-steps; the Ito iterated
    integral is the left-point sum, and the Stratonovich one adds
    (t - s)/2 on the diagonal.
    """
    if kind not in ("ito", "stratonovich"):
        raise RoughPathError(f"unknown lift kind {kind!r}")
    if d < 1 or refine < 1:
        raise RoughPathError("need d >= 1 and refine >= 1")
    t = _check_grid(times, True)
    M = t.size - 1
    h = t[1] - t[0]
    rng = make_rng(seed)
    D = rng.standard_normal((M, refine, d)) * np.sqrt(h / refine)
    Y = np.cumsum(D, axis=1) - D  # left-point partial sums inside each cell
    XX = np.einsum("mki,mkj->mij", Y, D)
    if kind == "stratonovich":
        XX = XX + 0.5 * h * np.eye(d)
    X = np.zeros((M + 1, d))
    np.cumsum(D.sum(axis=1), axis=0, out=X[1:])
    return RoughPath(t, X, XX, gamma0, dyadic=True)


# ------------------------------------------------------------ diagnostics
def chen_defect(rp: RoughPath, max_triples: int = 4096, seed: int = 0) -> float:
    """Largest entrywise violation of Chen's relation.

    Checks every stored tree block against its two children and node
    triples s <= u <= t (all triples for small grids, a fixed random
    sample otherwise).
    """
    worst = 0.0
    X = rp.X
    width = 1
    for lo, hi in zip(rp.levels[:-1], rp.levels[1:]):
        n = hi.shape[0]
        a = np.arange(n) * 2 * width
        dl = X[a + width] - X[a]
        dr = X[a + 2 * width] - X[a + width]
        rec = lo[0:2 * n:2] + lo[1:2 * n:2] + dl[:, :, None] * dr[:, None, :]
        if n:
            worst = max(worst, float(np.abs(hi - rec).max()))
        width *= 2
    M = rp.M
    if (M + 1) * (M + 2) * (M + 3) // 6 <= max_triples:
        triples = [(s, u, t) for s in range(M + 1) for u in range(s, M + 1)
                   for t in range(u, M + 1)]
    else:
        rng = make_rng(seed)
        tri = np.sort(rng.integers(0, M + 1, size=(max_triples, 3)), axis=1)
        triples = [tuple(int(v) for v in row) for row in tri]
    for s, u, t in triples:
        lhs = rp.level2(s, t) - rp.level2(s, u) - rp.level2(u, t)
        rhs = np.outer(X[u] - X[s], X[t] - X[u])
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst


def _pair_sup(a: RoughPath, b: RoughPath | None, gamma0: float):
    Ca = a.level2_from_origin()
    Cb = None if b is None else b.level2_from_origin()
    t = a.times
    s1 = s2 = 0.0
    for lag in range(1, a.M + 1):
        dt = t[lag] - t[0]
        dXa, XXa = a.lag_increments(lag, Ca)
        if b is not None:
            dXb, XXb = b.lag_increments(lag, Cb)
            dXa, XXa = dXa - dXb, XXa - XXb
        s1 = max(s1, float(np.linalg.norm(dXa, axis=1).max()) / dt**gamma0)
        s2 = max(s2, float(np.linalg.norm(XXa, axis=(1, 2)).max()) / dt**(2 * gamma0))
    return s1, s2


def hoelder_seminorms(rp: RoughPath, gamma0: float | None = None):
    """([X]_{gamma0}, [XX]_{2 gamma0}) as sups over all node pairs."""
    return _pair_sup(rp, None, rp.gamma0 if gamma0 is None else gamma0)


def rough_metric(a: RoughPath, b: RoughPath, gamma0: float | None = None) -> float:
    """Inhomogeneous rough path distance on grid pairs (Euclidean/Frobenius)."""
    if a.M != b.M or a.d != b.d or not np.allclose(a.times, b.times):
        raise RoughPathError("rough paths live on different grids")
    g = a.gamma0 if gamma0 is None else gamma0
    return float(sum(_pair_sup(a, b, g)))


def rho(a: RoughPath, gamma0: float | None = None) -> float:
    """Distance to the zero rough path."""
    return float(sum(hoelder_seminorms(a, gamma0)))


# -------------------------------------------------------------------- I/O
def save_roughpath(rp: RoughPath, path) -> None:
    """Little-endian binary: magic, version, d, M, gamma0, T, X, XX."""
    header = _MAGIC + struct.pack("<IIIdd", _VERSION, rp.d, rp.M, rp.gamma0, rp.T)
    body = (np.ascontiguousarray(rp.X, dtype="<f8").tobytes()
            + np.ascontiguousarray(rp.XX, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(header + body)


def load_roughpath(path) -> RoughPath:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise RoughPathError("not a rough path file")
    version, d, M, gamma0, T = struct.unpack("<IIIdd", raw[4:32])
    if version != _VERSION:
        raise RoughPathError(f"unsupported rough path file version {version}")
    vals = np.frombuffer(raw[32:], dtype="<f8")
    n1 = (M + 1) * d
    if vals.size != n1 + M * d * d:
        raise RoughPathError("truncated rough path file")
    X = vals[:n1].reshape(M + 1, d)
    XX = vals[n1:].reshape(M, d, d)
    return RoughPath(T * np.arange(M + 1) / M, X, XX, gamma0)


def roughpath_to_csv(rp: RoughPath, path, header_comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        for line in header_comment.splitlines():
            fh.write(f"# {line}\r\n")
        fh.write(",".join(["t"] + [f"X{i + 1}" for i in range(rp.d)]) + "\r\n")
        for t, row in zip(rp.times, rp.X):
            fh.write(",".join(f"{v:.17g}" for v in (t, *row)) + "\r\n")
