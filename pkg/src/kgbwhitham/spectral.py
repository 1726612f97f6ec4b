"""Periodic grids, transforms, Sobolev norms and the two-argument kernel
algebra.

Transform convention
--------------------
Fourier coefficients are stored as densities in wavenumber,

.. math::

    \\hat u(k_j) = \\frac{1}{2\\pi} \\int_0^L u(x) e^{-i k_j x}\\,dx
                 \\approx \\frac{1}{N \\Delta k} \\sum_n u(x_n) e^{-i k_j x_n},

so that :math:`u(x) = \\sum_j \\Delta k\\,\\hat u(k_j) e^{i k_j x}` and a
product becomes :math:`\\widehat{uv}(k) = \\sum_l \\Delta k\\,
\\hat u(k-l) \\hat v(l)`.  These are Riemann sums of the whole-line
formulas with :math:`\\Delta k = 2\\pi/L`.  Parseval reads
:math:`\\int |u|^2 dx = 2\\pi \\sum_j \\Delta k |\\hat u_j|^2`; the factor
:math:`2\\pi` is folded into the measure of :func:`sobolev_norm`, which
therefore has unit Parseval constant against the physical :math:`L^2`
norm.

Kernels
-------
A :class:`Kernel2` stores :math:`f(k, c)` for every grid wavenumber
:math:`k` and offsets :math:`|c| \\le L\\,\\Delta k`.  It acts on a
coefficient array by :math:`(T_f R)(k) = \\sum_c \\Delta k\\, f(k,c)
R(k-c)`, with periodic index arithmetic.
"""

from dataclasses import dataclass, field

import numba
import numpy as np


def _is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid on ``[0, length)``."""

    n_points: int
    length: float

    def __post_init__(self):
        if self.n_points < 8 or not _is_power_of_two(self.n_points):
            raise ValueError(
                f"n_points must be a power of two >= 8, got {self.n_points}")
        if not self.length > 0:
            raise ValueError("length must be positive")

    @property
    def dx(self):
        return self.length / self.n_points

    @property
    def dk(self):
        return 2 * np.pi / self.length

    @property
    def x(self):
        return np.arange(self.n_points) * self.dx

    @property
    def index(self):
        """Signed mode indices in FFT order; the Nyquist index is -N/2."""
        return np.fft.fftfreq(self.n_points, 1.0 / self.n_points).astype(int)

    @property
    def k(self):
        return self.index * self.dk

    @property
    def nyquist_mask(self):
        """True for every mode except the Nyquist mode."""
        return self.index != -self.n_points // 2

    @property
    def dealias_mask(self):
        """Two-thirds rule: keep modes with ``|j| <= N/3``."""
        return np.abs(self.index) <= self.n_points // 3


@dataclass
class SpectralField:
    """Fourier coefficients of a periodic field.

    ``real`` flags a field that represents a real function, whose
    coefficients are Hermitian symmetric.
    """

    grid: Grid1D
    coeffs: np.ndarray
    real: bool = True

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (self.grid.n_points,):
            raise ValueError("coefficient count does not match the grid")

    def _check(self, other):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other):
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs,
                             self.real and other.real)

    def __sub__(self, other):
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs,
                             self.real and other.real)

    def __mul__(self, scalar):
        scalar = complex(scalar)
        return SpectralField(self.grid, self.coeffs * scalar,
                             self.real and scalar.imag == 0)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs, self.real)

    def hermitian_defect(self):
        """Max of ``|c(-k) - conj(c(k))|`` over the non-Nyquist modes."""
        c = self.coeffs
        mirrored = np.conj(c[(-self.grid.index) % self.grid.n_points])
        mask = self.grid.nyquist_mask
        return float(np.max(np.abs(c - mirrored)[mask], initial=0.0))

    def physical(self):
        return transform_inverse(self)


def forward_coeffs(samples, grid):
    """Array version of :func:`transform_forward` (Nyquist mode zeroed)."""
    samples = np.asarray(samples)
    if samples.shape[-1] != grid.n_points:
        raise ValueError(
            f"expected {grid.n_points} samples, got {samples.shape[-1]}")
    c = np.fft.fft(samples, axis=-1) / (grid.n_points * grid.dk)
    c[..., grid.n_points // 2] = 0.0
    return c


def inverse_coeffs(coeffs, grid, real=True):
    """Array version of :func:`transform_inverse`."""
    u = np.fft.ifft(coeffs, axis=-1) * (grid.n_points * grid.dk)
    return u.real if real else u


def transform_forward(samples, grid, real=None):
    """Fourier coefficients of grid samples in the density normalization.

    The Nyquist mode is set to zero, so the round trip through
    :func:`transform_inverse` is exact for Nyquist-free data.
    """
    samples = np.asarray(samples)
    if samples.shape != (grid.n_points,):
        raise ValueError(
            f"expected {grid.n_points} samples, got shape {samples.shape}")
    if real is None:
        real = not np.iscomplexobj(samples)
    return SpectralField(grid, forward_coeffs(samples, grid), real)


def transform_inverse(field):
    """Grid samples of a :class:`SpectralField`."""
    return inverse_coeffs(field.coeffs, field.grid, field.real)


def dealias(coeffs, grid):
    return np.where(grid.dealias_mask, coeffs, 0.0)


def product_coeffs(a, b, grid):
    """Dealiased coefficients of the pointwise product of two real fields."""
    pa = inverse_coeffs(a, grid)
    pb = inverse_coeffs(b, grid)
    return dealias(forward_coeffs(pa * pb, grid), grid)


def convolve(f, g):
    """Spectral convolution of two fields, i.e. the transform of their
    product, with two-thirds dealiasing applied to the result."""
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    grid = f.grid
    real = f.real and g.real
    pa = inverse_coeffs(f.coeffs, grid, real)
    pb = inverse_coeffs(g.coeffs, grid, real)
    return SpectralField(grid, dealias(forward_coeffs(pa * pb, grid), grid),
                         real)


def derivative_coeffs(coeffs, grid, order=1):
    """Coefficients of the ``order``-th x-derivative."""
    return coeffs * np.where(grid.nyquist_mask, (1j * grid.k) ** order, 0.0)


def antiderivative_coeffs(coeffs, grid):
    """Zero-mean antiderivative; the mean of the input is discarded."""
    k = grid.k
    out = np.zeros_like(coeffs, dtype=complex)
    nz = (k != 0) & grid.nyquist_mask
    out[nz] = coeffs[nz] / (1j * k[nz])
    return out


def sobolev_norm_coeffs(coeffs, grid, s=0, kind="weighted"):
    """Sobolev norm of coefficient array(s) along the last axis.

    ``kind="weighted"`` gives the Fourier form with weight
    :math:`(1+k^2)^{s/2}`, ``kind="derivative"`` the sum of derivative
    :math:`L^2` norms up to order ``s``.  Both use the measure
    :math:`2\\pi\\Delta k`, so ``s = 0`` is the physical :math:`L^2` norm.
    """
    if s < 0:
        raise ValueError("s must be nonnegative")
    k2 = grid.k ** 2
    if kind == "weighted":
        w = (1.0 + k2) ** s
    elif kind == "derivative":
        if int(s) != s:
            raise ValueError("derivative norm needs an integer s")
        w = sum(k2 ** j for j in range(int(s) + 1))
    else:
        raise ValueError(f"unknown norm kind {kind!r}")
    a2 = np.abs(coeffs) ** 2
    return np.sqrt(2 * np.pi * grid.dk * np.sum(w * a2, axis=-1))


def sobolev_norm(f, s=0, kind="weighted"):
    """Sobolev norm of a :class:`SpectralField`; see
    :func:`sobolev_norm_coeffs`."""
    return float(sobolev_norm_coeffs(f.coeffs, f.grid, s, kind))


def embed_coeffs(coeffs, src, dst):
    """Spectral interpolation of a field from grid ``src`` onto ``dst``.

    Both grids are assumed to describe the same periodic function, with
    ``dst.length = src.length * scale``.  Mode ``j`` of one grid is mode
    ``j`` of the other; only the density normalization changes.  Modes that
    do not fit on ``dst`` are dropped.
    """
    coeffs = np.asarray(coeffs)
    n_src, n_dst = src.n_points, dst.n_points
    scale = src.dk / dst.dk
    out = np.zeros(coeffs.shape[:-1] + (n_dst,), dtype=complex)
    half = min(n_src, n_dst) // 2
    out[..., :half] = coeffs[..., :half]
    out[..., n_dst - half + 1:] = coeffs[..., n_src - half + 1:]
    return out * scale


# ---------------------------------------------------------------------------
# Two-argument kernels


@dataclass
class Kernel2:
    """Discrete kernel :math:`f(k, c)` on all grid ``k`` and offsets
    ``|c| <= half_width * dk``.

    ``values[i, half_width + m]`` holds :math:`f(k_i, m\\,\\Delta k)`;
    rows follow the FFT ordering of ``grid.k``.
    """

    grid: Grid1D
    values: np.ndarray
    eps: float
    s_weight: float = 1.0
    truncation_error: float = 0.0
    _meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        n, width = self.values.shape
        if n != self.grid.n_points or width % 2 != 1:
            raise ValueError("kernel values have the wrong shape")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("kernel has non-finite entries")

    @property
    def half_width(self):
        return self.values.shape[1] // 2

    @property
    def offsets(self):
        L = self.half_width
        return np.arange(-L, L + 1) * self.grid.dk

    @property
    def l_max(self):
        return self.half_width * self.grid.dk

    def _like(self, values, truncation_error=None):
        return Kernel2(self.grid, values, self.eps, self.s_weight,
                       self.truncation_error if truncation_error is None
                       else truncation_error)

    def padded(self, half_width):
        L = self.half_width
        if half_width < L:
            raise ValueError("cannot pad to a smaller width")
        out = np.zeros((self.grid.n_points, 2 * half_width + 1), dtype=complex)
        out[:, half_width - L:half_width + L + 1] = self.values
        return self._like(out)

    def _aligned(self, other):
        if other.grid != self.grid:
            raise ValueError("kernels live on different grids")
        L = max(self.half_width, other.half_width)
        return self.padded(L).values, other.padded(L).values

    def __add__(self, other):
        a, b = self._aligned(other)
        return self._like(a + b, self.truncation_error + other.truncation_error)

    def __sub__(self, other):
        a, b = self._aligned(other)
        return self._like(a - b, self.truncation_error + other.truncation_error)

    def __neg__(self):
        return self._like(-self.values)

    def __mul__(self, scalar):
        return self._like(self.values * scalar,
                          self.truncation_error * abs(scalar))

    __rmul__ = __mul__

    def scale_rows(self, weight):
        """Multiply by a function of the first argument ``k``.

        The weight is ignored on the Nyquist row, which stays zero.
        """
        weight = np.where(self.grid.nyquist_mask, weight, 0.0)
        return self._like(self.values * weight[:, None],
                          self.truncation_error * float(np.max(np.abs(weight))))

    def conj_reflected(self):
        """The kernel :math:`\\overline{f(-k, -c)}`."""
        n = self.grid.n_points
        rows = (-self.grid.index) % n
        return self._like(np.conj(self.values[rows, ::-1]))


def zero_kernel(grid, half_width, eps, s_weight=1.0):
    return Kernel2(grid, np.zeros((grid.n_points, 2 * half_width + 1)),
                   eps, s_weight)


def separable_kernel(coeffs, grid, half_width, eps, s_weight=1.0):
    """The k-independent kernel :math:`f(k, c) = \\hat\\Psi(c)`.

    Coefficients of ``coeffs`` outside the offset window are discarded;
    their X-norm is recorded as the truncation error.
    """
    idx = np.arange(-half_width, half_width + 1) % grid.n_points
    row = np.asarray(coeffs)[idx]
    values = np.broadcast_to(row, (grid.n_points, row.size)).copy()
    # The Nyquist row has no mirror partner; keeping it zero preserves the
    # reality symmetry of every kernel built from this one.
    values[~grid.nyquist_mask] = 0.0
    keep = np.zeros(grid.n_points, dtype=bool)
    keep[idx] = True
    dropped = np.where(keep, 0.0, np.abs(coeffs))
    w = (1 + (grid.k / eps) ** 2) ** (s_weight / 2)
    trunc = float(grid.dk * np.sum(dropped * w))
    return Kernel2(grid, values, eps, s_weight, trunc)


def kernel_xnorm(f):
    """Discrete X-norm
    :math:`\\sum_c \\Delta k\\, \\sup_k |f(k,c)|\\,(1+(c/\\varepsilon)^2)^{s/2}`.
    """
    col_sup = np.max(np.abs(f.values), axis=0)
    w = (1.0 + (f.offsets / f.eps) ** 2) ** (f.s_weight / 2)
    return float(f.grid.dk * np.sum(col_sup * w))


def kernel_apply(f, coeffs):
    """Apply the kernel operator :math:`T_f` to a coefficient array."""
    coeffs = np.asarray(coeffs)
    L = f.half_width
    out = np.zeros(f.grid.n_points, dtype=complex)
    for j in range(2 * L + 1):
        out += f.values[:, j] * np.roll(coeffs, j - L)
    return out * f.grid.dk


def kernel_compose(f, g, half_width=None):
    """Kernel of the operator product :math:`T_f T_g`,

    .. math::

        (f\\circ g)(k, c) = \\sum_a \\Delta k\\, f(k, a)\\, g(k-a, c-a).

    The exact support has half width ``Lf + Lg``.  With ``half_width`` set,
    offsets beyond it are dropped and their X-norm is added to the
    ``truncation_error`` of the result.
    """
    if f.grid != g.grid:
        raise ValueError("kernels live on different grids")
    if f.eps != g.eps or f.s_weight != g.s_weight:
        raise ValueError("kernels carry different norm metadata")
    Lf, Lg = f.half_width, g.half_width
    Lout = Lf + Lg
    out = _compose_values(f.values, g.values) * f.grid.dk
    # Truncation errors propagate through the product bound.
    trunc = (f.truncation_error * kernel_xnorm(g)
             + g.truncation_error * kernel_xnorm(f)
             + f.truncation_error * g.truncation_error)
    h = Kernel2(f.grid, out, f.eps, f.s_weight, trunc)
    if half_width is not None and half_width < Lout:
        h, _ = kernel_truncate(h, half_width)
    return h


@numba.njit(cache=True)
def _compose_values(f, g):
    n, wf = f.shape
    wg = g.shape[1]
    Lf = wf // 2
    out = np.zeros((n, wf + wg - 1), dtype=np.complex128)
    for i in range(n):
        for ja in range(wf):
            fa = f[i, ja]
            if fa == 0:
                continue
            r = (i - (ja - Lf)) % n
            for jb in range(wg):
                out[i, ja + jb] += fa * g[r, jb]
    return out


def kernel_truncate(f, half_width):
    """Restrict a kernel to ``|c| <= half_width * dk``.

    Returns the truncated kernel and the X-norm of the dropped part, which
    is also added to the kernel's recorded truncation error.
    """
    L = f.half_width
    if half_width >= L:
        return f, 0.0
    cut = L - half_width
    dropped = f.values.copy()
    dropped[:, cut:cut + 2 * half_width + 1] = 0.0
    dropped_norm = kernel_xnorm(f._like(dropped))
    kept = f.values[:, cut:cut + 2 * half_width + 1]
    return (Kernel2(f.grid, kept, f.eps, f.s_weight,
                    f.truncation_error + dropped_norm), dropped_norm)
