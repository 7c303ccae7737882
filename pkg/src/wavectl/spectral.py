"""Fourier grid, spectral fields and multiplier operators on the torus.

A field is a complex numpy array of length 2N+1 holding the amplitudes
u_hat(n) for n = -N..N, so that u(x) = sum_n u_hat(n) exp(inx).  Physical
samples live on the uniform grid x_j = 2*pi*j/M_x with M_x >= 3N+1, which
gives exact (dealiased) evaluation of quadratic products after truncation
back to |n| <= N.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json

import numpy as np

__all__ = [
    "Grid",
    "is_real",
    "zero_mean",
    "operator_norm",
    "field_to_csv",
    "field_from_csv",
    "field_to_json",
    "field_from_json",
]


def _default_mx(N: int) -> int:
    return 3 * N + 1


@dataclass
class Grid:
    """Spectral grid: modes |n| <= N, M_x physical points, physics constants.

    depth=None means infinite depth (tanh factor replaced by 1).
    """

    N: int
    M_x: int | None = None
    g: float = 1.0
    depth: float | None = 1.0
    T: float = 1.0
    K_t: int = 256

    n: np.ndarray = field(init=False, repr=False)
    x: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.M_x is None:
            self.M_x = _default_mx(self.N)
        if self.M_x < 3 * self.N + 1:
            raise ValueError(f"M_x={self.M_x} violates dealiasing bound 3N+1={3*self.N+1}")
        if self.g <= 0:
            raise ValueError("gravity must be positive")
        if self.depth is not None and self.depth <= 0:
            raise ValueError("depth must be positive or None (infinite)")
        if self.K_t < 1:
            raise ValueError("K_t must be >= 1")
        self.n = np.arange(-self.N, self.N + 1)
        self.x = 2.0 * np.pi * np.arange(self.M_x) / self.M_x

    # -- dispersion symbols ------------------------------------------------

    def lam(self, n=None) -> np.ndarray:
        """lambda(n) = |n| tanh(b|n|); |n| for infinite depth."""
        n = self.n if n is None else np.asarray(n)
        a = np.abs(n).astype(float)
        if self.depth is None:
            return a
        return a * np.tanh(self.depth * a)

    def ell(self, n=None) -> np.ndarray:
        """ell(n) = sqrt((g + n^2) lambda(n)), the dispersion symbol of L."""
        n = self.n if n is None else np.asarray(n)
        return np.sqrt((self.g + np.asarray(n, dtype=float) ** 2) * self.lam(n))

    def dell(self, n=None) -> np.ndarray:
        """Exact derivative d ell/d xi evaluated on the lattice (odd in n)."""
        n = self.n if n is None else np.asarray(n)
        nf = np.asarray(n, dtype=float)
        a = np.abs(nf)
        s = np.sign(nf)
        if self.depth is None:
            lam, dlam = a, s
        else:
            th = np.tanh(self.depth * a)
            lam = a * th
            dlam = s * (th + self.depth * a * (1.0 - th**2))
        ell = np.sqrt((self.g + nf**2) * lam)
        out = np.zeros_like(nf)
        nz = ell > 0
        out[nz] = (2.0 * nf[nz] * lam[nz] + (self.g + nf[nz] ** 2) * dlam[nz]) / (2.0 * ell[nz])
        return out

    def chi_high(self, n=None) -> np.ndarray:
        """High-frequency cutoff on the integer lattice: 0 at n=0, 1 for |n|>=1."""
        n = self.n if n is None else np.asarray(n)
        return (np.abs(n) >= 1).astype(float)

    # -- multipliers -------------------------------------------------------

    def multiplier(self, kind: str, r: float | None = None) -> np.ndarray:
        """Diagonal symbol values for the named Fourier multiplier."""
        n = self.n
        if kind == "L":
            return self.ell().astype(complex)
        if kind == "L_half":
            return np.sqrt(self.ell()).astype(complex)
        if kind == "G0":
            return self.lam().astype(complex)
        if kind == "absD":
            if r is None:
                raise ValueError("absD requires the order r")
            a = np.abs(n).astype(float)
            with np.errstate(divide="ignore"):
                vals = np.where(a > 0, a**r, 0.0 if r > 0 else (1.0 if r == 0 else 0.0))
            return vals.astype(complex)
        if kind == "Dx":
            return 1j * n.astype(float)
        if kind == "DxInv":
            vals = np.zeros(2 * self.N + 1, dtype=complex)
            nz = n != 0
            vals[nz] = 1.0 / (1j * n[nz])
            return vals
        if kind == "chi_high":
            return self.chi_high().astype(complex)
        raise ValueError(f"unknown multiplier kind {kind!r}")

    def apply_multiplier(self, kind: str, u: np.ndarray, r: float | None = None) -> np.ndarray:
        if kind == "DxInv" and not zero_mean(u):
            raise ValueError("DxInv is defined only on zero-mean fields")
        return self.multiplier(kind, r) * u

    # -- transforms --------------------------------------------------------

    def to_physical(self, u: np.ndarray) -> np.ndarray:
        """Samples u(x_j) on the M_x grid (complex)."""
        N, M = self.N, self.M_x
        buf = np.zeros(M, dtype=complex)
        buf[: N + 1] = u[N:]
        buf[M - N:] = u[:N]
        return np.fft.ifft(buf) * M

    def to_spectral(self, samples: np.ndarray) -> np.ndarray:
        """Truncate samples to the |n| <= N coefficient window."""
        samples = np.asarray(samples, dtype=complex)
        if samples.shape[-1] != self.M_x:
            raise ValueError(f"expected {self.M_x} samples, got {samples.shape[-1]}")
        coef = np.fft.fft(samples) / self.M_x
        N = self.N
        return np.concatenate([coef[..., self.M_x - N:], coef[..., : N + 1]], axis=-1)

    def multiply(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Dealiased product of two fields (physical product, truncated)."""
        return self.to_spectral(self.to_physical(u) * self.to_physical(v))

    def mult_matrix(self, w) -> np.ndarray:
        """Matrix of the dealiased multiplication u -> trunc(w*u).

        `w` may be a field (2N+1 coefficients) or M_x physical samples; in
        the latter case the full sample values are used (exact grid zeros of
        compactly supported cutoffs are preserved).
        """
        w = np.asarray(w)
        ws = self.to_physical(w) if w.shape[-1] == 2 * self.N + 1 else w.astype(complex)
        coef = np.fft.fft(ws, axis=-1) / self.M_x
        Theta = np.mod(self.n[:, None] - self.n[None, :], self.M_x)
        return coef[..., Theta]

    def derivative_matrix(self) -> np.ndarray:
        return np.diag(self.multiplier("Dx"))

    # -- norms and inner products -------------------------------------------

    def sobolev_weights(self, s: float) -> np.ndarray:
        return (1.0 + self.n.astype(float) ** 2) ** (s / 2.0)

    def sobolev_norm(self, u: np.ndarray, s: float = 0.0) -> float:
        """Discrete H^s norm (sum (1+n^2)^s |u_hat|^2)^(1/2)."""
        return float(np.linalg.norm(self.sobolev_weights(s) * u))

    def inner(self, u: np.ndarray, v: np.ndarray) -> complex:
        """L^2(T) inner product (u, v) = int u conj(v) dx = 2*pi sum u_hat conj(v_hat)."""
        return 2.0 * np.pi * complex(np.vdot(v, u))

    def mean(self, u: np.ndarray) -> complex:
        """Mean value (1/2pi) int u dx = u_hat(0)."""
        return complex(u[self.N])

    # -- random fields for tests/diagnostics --------------------------------

    def random_field(self, rng, s: float = 2.0, real: bool = False,
                     zero_mean_field: bool = False, norm: float | None = None) -> np.ndarray:
        d = 2 * self.N + 1
        u = (rng.standard_normal(d) + 1j * rng.standard_normal(d)) * self.sobolev_weights(-s)
        if real:
            u = 0.5 * (u + np.conj(u[::-1]))
        if zero_mean_field:
            u[self.N] = 0.0
        if norm is not None:
            cur = self.sobolev_norm(u)
            if cur > 0:
                u = u * (norm / cur)
        return u


def is_real(u: np.ndarray, tol: float = 1e-12) -> bool:
    """Conjugate symmetry u_hat(-n) = conj(u_hat(n))."""
    return bool(np.max(np.abs(u - np.conj(u[::-1]))) <= tol * max(1.0, np.max(np.abs(u))))


def zero_mean(u: np.ndarray, tol: float = 1e-12) -> bool:
    N = (len(u) - 1) // 2
    return bool(abs(u[N]) <= tol * max(1.0, np.max(np.abs(u))))


def operator_norm(A: np.ndarray, grid: Grid | None = None, mu: float = 0.0,
                  nu: float = 0.0, n_iter: int = 60, tol: float = 1e-10) -> float:
    """Operator norm estimate H^mu -> H^nu by power iteration on A*A.

    Dense matrices at desk scale; the iteration runs with a deterministic
    start vector and a relative-increment convergence guard.
    """
    A = np.asarray(A)
    if grid is not None and (mu != 0.0 or nu != 0.0):
        wmu = grid.sobolev_weights(mu)
        wnu = grid.sobolev_weights(nu)
        A = (wnu[:, None] * A) / wmu[None, :]
    d = A.shape[1]
    v = np.exp(1j * 0.7 * np.arange(d)) / np.sqrt(d)
    B = A.conj().T @ A
    lam = 0.0
    for _ in range(n_iter):
        w = B @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v_new = w / nrm
        if abs(nrm - lam) <= tol * max(nrm, 1e-300):
            lam = nrm
            break
        lam, v = nrm, v_new
    return float(np.sqrt(lam))


# -- serialization ----------------------------------------------------------

def field_to_csv(u: np.ndarray) -> str:
    N = (len(u) - 1) // 2
    lines = [f"{n},{u[n + N].real!r},{u[n + N].imag!r}" for n in range(-N, N + 1)]
    return "\n".join(lines) + "\n"


def field_from_csv(text: str) -> np.ndarray:
    rows = [line.split(",") for line in text.strip().splitlines()]
    ns = [int(r[0]) for r in rows]
    N = max(ns)
    u = np.zeros(2 * N + 1, dtype=complex)
    for r in rows:
        u[int(r[0]) + N] = float(r[1]) + 1j * float(r[2])
    return u


def field_to_json(u: np.ndarray) -> str:
    N = (len(u) - 1) // 2
    return json.dumps([[n, u[n + N].real, u[n + N].imag] for n in range(-N, N + 1)])


def field_from_json(text: str) -> np.ndarray:
    triples = json.loads(text)
    N = max(int(t[0]) for t in triples)
    u = np.zeros(2 * N + 1, dtype=complex)
    for n, re, im in triples:
        u[int(n) + N] = re + 1j * im
    return u
