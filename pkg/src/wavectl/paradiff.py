"""Periodic paradifferential operators, paraproducts and Bony remainders.

The quantization follows the discrete convention

    (T_a u)^(xi) = sum_eta chi(xi - eta, eta) a_coef(xi - eta, eta) u_hat(eta),

where a_coef(theta, eta) are the Fourier coefficients in x of the symbol
profile a(., eta), so that T_a reduces to the identity for a = 1 and to a
Fourier multiplier for x-independent symbols.  Operators are realized as
dense (2N+1)^2 matrices reusable everywhere downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wavectl.spectral import Grid, operator_norm

__all__ = [
    "CutoffParams",
    "admissible_cutoff",
    "Symbol",
    "paraop",
    "paraproduct",
    "bony_remainder",
    "symbol_seminorm",
    "calculus_defect",
    "adjoint_defect",
]


@dataclass(frozen=True)
class CutoffParams:
    """Bony cutoff thresholds 0 < eps1 < eps2 < 1 and cosine-ramp smoothing."""

    eps1: float = 0.1
    eps2: float = 0.3

    def __post_init__(self):
        if not (0.0 < self.eps1 < self.eps2 < 1.0):
            raise ValueError("need 0 < eps1 < eps2 < 1")


DEFAULT_CUTOFF = CutoffParams()


def admissible_cutoff(theta, eta, params: CutoffParams = DEFAULT_CUTOFF):
    """chi(theta, eta): 1 for |theta| <= eps1|eta|, 0 for |theta| >= eps2|eta|,
    cosine ramp in between; chi(0, 0) = 1."""
    theta = np.asarray(theta, dtype=float)
    eta = np.asarray(eta, dtype=float)
    at, ae = np.abs(theta), np.abs(eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(ae > 0, at / np.where(ae > 0, ae, 1.0), np.inf)
    out = np.where(r <= params.eps1, 1.0, 0.0)
    ramp = (r > params.eps1) & (r < params.eps2)
    rr = np.where(np.isfinite(r), (r - params.eps1) / (params.eps2 - params.eps1), 1.0)
    out = np.where(ramp, 0.5 * (1.0 + np.cos(np.pi * np.clip(rr, 0.0, 1.0))), out)
    # eta = 0: only theta = 0 survives (chi(0,0) = 1)
    out = np.where((ae == 0) & (at == 0), 1.0, out)
    out = np.where((ae == 0) & (at > 0), 0.0, out)
    return out if out.shape else float(out)


class Symbol:
    """x-dependent symbol a(x_j, n) sampled on the physical grid x mode lattice.

    values: complex array (M_x, 2N+1); order: nominal order m in n.
    An x-independent Symbol is exactly a Fourier multiplier.
    """

    def __init__(self, grid: Grid, values: np.ndarray, order: float = 0.0, tag: str = ""):
        values = np.asarray(values, dtype=complex)
        if values.shape != (grid.M_x, 2 * grid.N + 1):
            raise ValueError(f"symbol values must have shape {(grid.M_x, 2*grid.N+1)}")
        if not np.all(np.isfinite(values)):
            raise ValueError("symbol values must be finite")
        self.grid = grid
        self.values = values
        self.order = order
        self.tag = tag

    @classmethod
    def from_multiplier(cls, grid: Grid, vals, order: float = 0.0, tag: str = "") -> "Symbol":
        vals = np.asarray(vals, dtype=complex)
        return cls(grid, np.tile(vals, (grid.M_x, 1)), order, tag)

    @classmethod
    def from_field(cls, grid: Grid, u: np.ndarray, tag: str = "") -> "Symbol":
        prof = grid.to_physical(u)
        return cls(grid, np.tile(prof[:, None], (1, 2 * grid.N + 1)), 0.0, tag)

    @classmethod
    def separable(cls, grid: Grid, xprofile: np.ndarray, nvals, order: float = 0.0,
                  tag: str = "") -> "Symbol":
        """Symbol a(x, n) = f(x) g(n); xprofile is a field or M_x samples."""
        xprofile = np.asarray(xprofile)
        prof = grid.to_physical(xprofile) if xprofile.shape[-1] == 2 * grid.N + 1 else xprofile
        return cls(grid, np.outer(prof, np.asarray(nvals, dtype=complex)), order, tag)

    def __add__(self, other: "Symbol") -> "Symbol":
        return Symbol(self.grid, self.values + other.values,
                      max(self.order, other.order))

    def x_independent(self, tol: float = 1e-13) -> bool:
        return bool(np.max(np.abs(self.values - self.values[:1, :])) <= tol)


def _coef_in_x(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Fourier coefficients in x of each mode column; index theta mod M_x."""
    return np.fft.fft(values, axis=0) / grid.M_x


def paraop(sym: Symbol, params: CutoffParams = DEFAULT_CUTOFF) -> np.ndarray:
    """Dense matrix of T_a on the truncated lattice |n| <= N."""
    g = sym.grid
    n = g.n
    coef = _coef_in_x(g, sym.values)
    Theta = n[:, None] - n[None, :]
    CHI = admissible_cutoff(Theta, np.broadcast_to(n[None, :], Theta.shape), params)
    A = coef[np.mod(Theta, g.M_x), np.arange(len(n))[None, :]]
    return CHI * A


def paraproduct(grid: Grid, a: np.ndarray, params: CutoffParams = DEFAULT_CUTOFF) -> np.ndarray:
    """Matrix of the paraproduct T_a for a function a (given as a field)."""
    return paraop(Symbol.from_field(grid, a), params)


def bony_remainder(grid: Grid, a: np.ndarray, u: np.ndarray,
                   params: CutoffParams = DEFAULT_CUTOFF) -> np.ndarray:
    """R(a, u) = au - T_a u - T_u a (dealiased product minus both paraproducts)."""
    return (grid.multiply(a, u)
            - paraproduct(grid, a, params) @ u
            - paraproduct(grid, u, params) @ a)


def _x_derivative_samples(grid: Grid, samples: np.ndarray, k: int) -> np.ndarray:
    """k-th spectral x-derivative of an M_x-sampled profile (full bandwidth)."""
    if k == 0:
        return samples
    theta = np.fft.fftfreq(grid.M_x, d=1.0 / grid.M_x)
    shape = (grid.M_x,) + (1,) * (samples.ndim - 1)
    return np.fft.ifft((1j * theta.reshape(shape)) ** k * np.fft.fft(samples, axis=0), axis=0)


def symbol_seminorm(sym: Symbol, m: float | None = None, rho: int = 0) -> float:
    """Estimator of the seminorm M^m_rho(a).

    The xi-derivatives are replaced by centered lattice differences up to
    order min(6+rho, N) and the W^{rho,infty} norms in x by grid suprema of
    spectral derivatives; this is an estimator, not the continuum value.
    """
    if rho not in (0, 1, 2):
        raise ValueError("rho must be 0, 1 or 2")
    g = sym.grid
    if m is None:
        m = sym.order
    amax = min(6 + rho, g.N)
    best = 0.0
    vals = sym.values
    nf = g.n.astype(float)
    for alpha in range(amax + 1):
        if alpha == 0:
            dvals, centers = vals, nf
        else:
            dvals = np.diff(vals, n=alpha, axis=1)
            centers = nf[: len(nf) - alpha] + alpha / 2.0
        w = (1.0 + np.abs(centers)) ** (alpha - m)
        wsup = np.zeros(dvals.shape[1])
        for k in range(rho + 1):
            dk = _x_derivative_samples(g, dvals, k)
            wsup = np.maximum(wsup, np.max(np.abs(dk), axis=0))
        best = max(best, float(np.max(w * wsup)))
    return best


def _xi_gradient(values: np.ndarray) -> np.ndarray:
    """Centered lattice difference in the mode variable (unit spacing)."""
    return np.gradient(values, axis=1)


def sharp_product(a: Symbol, b: Symbol, rho: int) -> Symbol:
    """a#b = sum_{alpha<rho} (1/(i^alpha alpha!)) d_xi^alpha a d_x^alpha b."""
    if rho not in (1, 2):
        raise ValueError("rho must be 1 or 2")
    g = a.grid
    out = a.values * b.values
    if rho == 2:
        da = _xi_gradient(a.values)
        db = _x_derivative_samples(g, b.values, 1)
        out = out + (da * db) / 1j
    return Symbol(g, out, a.order + b.order)


def calculus_defect(a: Symbol, b: Symbol, rho: int,
                    params: CutoffParams = DEFAULT_CUTOFF):
    """Defect operator T_a T_b - T_{a#b} and its H^mu -> H^{mu-m-m'+rho} norm.

    Returns (matrix, norm_estimate) with mu = 0 in the weighted estimate.
    """
    g = a.grid
    D = paraop(a, params) @ paraop(b, params) - paraop(sharp_product(a, b, rho), params)
    nu = -(a.order + b.order) + rho
    return D, operator_norm(D, g, mu=0.0, nu=nu)


def adjoint_symbol(a: Symbol, rho: int) -> Symbol:
    """a* = sum_{alpha<rho} (1/(i^alpha alpha!)) d_xi^alpha d_x^alpha conj(a)."""
    g = a.grid
    ab = np.conj(a.values)
    out = ab.copy()
    if rho >= 2:
        out = out + _xi_gradient(_x_derivative_samples(g, ab, 1)) / 1j
    return Symbol(g, out, a.order)


def adjoint_defect(a: Symbol, rho: int, params: CutoffParams = DEFAULT_CUTOFF):
    """Defect (T_a)^* - T_{a^*} and its H^mu -> H^{mu-m+rho} norm estimate."""
    g = a.grid
    D = paraop(a, params).conj().T - paraop(adjoint_symbol(a, rho), params)
    return D, operator_norm(D, g, mu=0.0, nu=-a.order + rho)
