"""Discrete Fourier integral operator problems.

A problem pairs a Cartesian grid (spatial points ``x`` in ``[0, 1)^d`` and
integer frequencies ``xi`` in ``[-n/2, n/2)^d``) with an analytic phase and
amplitude.  Matrix entries are ``a(x_i, xi_j) * exp(2 pi i Phi(x_i, xi_j))``.

Points are ordered row-major: in 2-D the flat index of grid position
``(i1, i2)`` is ``i1 * n + i2``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "FIOProblem",
    "Grid",
    "apply_inverse_dft",
    "assemble_block",
    "dft",
    "make_ellipse_2d",
    "make_gaussian_1d",
    "make_problem",
    "make_uniform_1d",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Grid:
    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise InvalidInputError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 2 or self.n % 2:
            raise InvalidInputError(f"points per dimension must be even and >= 2, got {self.n}")

    @property
    def N(self):
        return self.n ** self.dim

    @property
    def grid_indices(self):
        """``(N, dim)`` integer grid positions in flat order."""
        axes = np.meshgrid(*([np.arange(self.n)] * self.dim), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=1)

    @property
    def spatial_points(self):
        return self.grid_indices / self.n

    @property
    def freq_points(self):
        return self.grid_indices - self.n // 2


@dataclass(frozen=True, eq=False)
class FIOProblem:
    """Analytic FIO kernel on a grid.

    ``phase(x, xi)`` and ``amplitude(x, xi)`` take broadcastable arrays with a
    trailing axis of length ``dim`` and return arrays of the broadcast shape.
    ``params`` records the constructor arguments so the problem can be
    rebuilt by :func:`make_problem`.
    """

    grid: Grid
    phase: object
    amplitude: object
    label: str
    params: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.grid.N

    def block(self, rows, cols):
        """Kernel block without index validation."""
        x = self._x[np.asarray(rows)][:, None, :]
        xi = self._xi[np.asarray(cols)][None, :, :]
        amp = self.amplitude(x, xi)
        return amp * np.exp(1j * TWO_PI * self.phase(x, xi))

    def dense(self):
        idx = np.arange(self.N)
        return self.block(idx, idx)

    def matvec(self, v):
        """Dense ``K @ v`` assembled in row chunks to bound memory."""
        v = np.asarray(v, dtype=np.complex128)
        out = np.empty((self.N,) + v.shape[1:], dtype=np.complex128)
        cols = np.arange(self.N)
        step = max(1, 2 ** 22 // self.N)
        for s in range(0, self.N, step):
            rows = np.arange(s, min(s + step, self.N))
            out[s:s + step] = self.block(rows, cols) @ v
        return out

    def rmatvec(self, v):
        """Dense ``K^H @ v`` assembled in column chunks."""
        v = np.asarray(v, dtype=np.complex128)
        out = np.empty((self.N,) + v.shape[1:], dtype=np.complex128)
        rows = np.arange(self.N)
        step = max(1, 2 ** 22 // self.N)
        for s in range(0, self.N, step):
            cols = np.arange(s, min(s + step, self.N))
            out[s:s + step] = self.block(rows, cols).conj().T @ v
        return out

    @property
    def _x(self):
        cached = self.__dict__.get("_xcache")
        if cached is None:
            cached = self.grid.spatial_points
            object.__setattr__(self, "_xcache", cached)
        return cached

    @property
    def _xi(self):
        cached = self.__dict__.get("_xicache")
        if cached is None:
            cached = self.grid.freq_points.astype(float)
            object.__setattr__(self, "_xicache", cached)
        return cached


def _check_n(n, minimum=4):
    if int(n) != n or n < minimum or n % 2:
        raise InvalidInputError(f"n must be an even integer >= {minimum}, got {n}")
    return int(n)


def _unit_amplitude(x, xi):
    return np.ones(np.broadcast_shapes(x.shape[:-1], xi.shape[:-1]), dtype=np.complex128)


def _phase_1d(x, xi):
    x = x[..., 0]
    xi = xi[..., 0]
    c = (2.0 + np.sin(TWO_PI * x)) / 8.0
    return x * xi + c * np.abs(xi)


def make_uniform_1d(n):
    """1-D operator with unit amplitude and phase ``x xi + c(x)|xi|``."""
    n = _check_n(n)
    return FIOProblem(Grid(1, n), _phase_1d, _unit_amplitude, "uniform1d", {"n": n})


DEFAULT_CENTERS = ((1 / 6, 1 / 6), (1 / 2, 1 / 2), (5 / 6, 5 / 6))


def make_gaussian_1d(n, sigma2=0.1, centers=DEFAULT_CENTERS, floor=0.0):
    """1-D operator whose amplitude is a mixture of Gaussians plus an optional floor.

    Frequencies are mapped to ``xi / n + 1/2`` in ``[0, 1)`` before the
    Gaussians are evaluated; the spatial offset uses the periodic minimum
    image so the amplitude is 1-periodic in ``x``.
    """
    n = _check_n(n)
    if not sigma2 > 0:
        raise InvalidInputError(f"sigma2 must be positive, got {sigma2}")
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if len(centers) == 0:
        raise InvalidInputError("at least one Gaussian center is required")

    def amplitude(x, xi):
        x = x[..., 0]
        t = xi[..., 0] / n + 0.5
        out = np.full(np.broadcast_shapes(x.shape, t.shape), float(floor))
        for xk, tk in centers:
            dx = x - xk
            dx -= np.round(dx)
            out = out + np.exp(-(dx ** 2 + (t - tk) ** 2) / sigma2)
        return out.astype(np.complex128)

    params = {"n": n, "sigma2": float(sigma2), "centers": centers.tolist(), "floor": float(floor)}
    return FIOProblem(Grid(1, n), _phase_1d, amplitude, "gauss1d", params)


def _phase_ellipse(x, xi):
    s1 = np.sin(TWO_PI * x[..., 0])
    s2 = np.sin(TWO_PI * x[..., 1])
    k1 = np.cos(TWO_PI * x[..., 0])
    k2 = np.cos(TWO_PI * x[..., 1])
    c1 = (2.0 + s1 * s2) / 16.0
    c2 = (2.0 + k1 * k2) / 16.0
    dot = x[..., 0] * xi[..., 0] + x[..., 1] * xi[..., 1]
    return dot + np.sqrt(c1 ** 2 * xi[..., 0] ** 2 + c2 ** 2 * xi[..., 1] ** 2)


def make_ellipse_2d(n):
    """2-D generalized Radon transform integrating over ellipses."""
    n = _check_n(n)
    return FIOProblem(Grid(2, n), _phase_ellipse, _unit_amplitude, "ellipse2d", {"n": n})


_FACTORIES = {
    "uniform1d": make_uniform_1d,
    "gauss1d": make_gaussian_1d,
    "ellipse2d": make_ellipse_2d,
}


def make_problem(label, **params):
    """Rebuild a problem from its label and recorded parameters."""
    try:
        factory = _FACTORIES[label]
    except KeyError:
        raise InvalidInputError(f"unknown problem {label!r}; choose from {sorted(_FACTORIES)}")
    return factory(**params)


def assemble_block(problem, row_idx, col_idx):
    """Entries ``K[row_idx][:, col_idx]`` with index validation."""
    rows = np.asarray(row_idx, dtype=np.intp).ravel()
    cols = np.asarray(col_idx, dtype=np.intp).ravel()
    N = problem.N
    for name, idx in (("row", rows), ("column", cols)):
        if idx.size and (idx.min() < 0 or idx.max() >= N):
            raise InvalidInputError(f"{name} index out of range [0, {N})")
    return problem.block(rows, cols)


def _check_vector(v, grid):
    v = np.asarray(v, dtype=np.complex128)
    if v.shape[0] != grid.N:
        raise InvalidInputError(f"expected leading length {grid.N}, got {v.shape[0]}")
    return v


def dft(f, grid):
    """``f_hat(xi) = n^-d sum_x exp(-2 pi i x.xi) f(x)`` on the frequency grid."""
    f = _check_vector(f, grid)
    shape = (grid.n,) * grid.dim
    tail = f.shape[1:]
    axes = tuple(range(grid.dim))
    F = np.fft.fftshift(np.fft.fftn(f.reshape(shape + tail), axes=axes), axes=axes)
    return F.reshape(f.shape) / grid.N


def apply_inverse_dft(f_hat, grid):
    """Invert :func:`dft`: ``f(x) = sum_xi exp(2 pi i x.xi) f_hat(xi)``."""
    f_hat = _check_vector(f_hat, grid)
    shape = (grid.n,) * grid.dim
    tail = f_hat.shape[1:]
    axes = tuple(range(grid.dim))
    f = np.fft.ifftn(np.fft.ifftshift(f_hat.reshape(shape + tail), axes=axes), axes=axes)
    return f.reshape(f_hat.shape) * grid.N
