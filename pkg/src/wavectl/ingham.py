"""Ingham-type inequality constants and observability constants.

Both families of constants are realized as extreme eigenvalues of Gram
matrices: the Ingham constants C_1, C_2 bound the quadratic form of
oscillatory sums int_0^T |sum w_n e^{i mu_n(t)}|^2 dt and come from the
matrix K[m,n] = int e^{i(mu_n - mu_m)} dt; the observability constant is
the smallest eigenvalue of O^T O where O maps an initial state to the
(real part of the) observed solution samples on [0,T] x omega, restricted
to the real-Hilbert subspace L^2_M on which the HUM form is coercive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import eigh, null_space

from wavectl.spectral import Grid
from wavectl.evolution import Coefficients, PropagatorCache

__all__ = [
    "PhaseFamily",
    "phases",
    "ingham_gram",
    "highfreq_check",
    "separation_check",
    "l2m_basis",
    "vec_to_field",
    "field_to_vec",
    "observability_constant",
]


@dataclass
class PhaseFamily:
    """Perturbed phases mu_n(t) = sign(n)[ell(n) t + beta(t) |n|^{1/2}]."""

    grid: Grid
    T: float
    modes: np.ndarray | None = None
    beta: object = None      # callable t -> float (None = 0)
    dbeta: object = None
    d2beta: object = None

    def __post_init__(self):
        if self.modes is None:
            self.modes = self.grid.n.copy()
        self.modes = np.asarray(self.modes)

    def tanh_b(self) -> float:
        return 1.0 if self.grid.depth is None else float(np.tanh(self.grid.depth))

    def check_admissible(self, n_t: int = 201) -> bool:
        if self.dbeta is None:
            return True
        ts = np.linspace(0.0, self.T, n_t)
        bound = 0.5 * np.sqrt(self.tanh_b())
        return bool(np.max(np.abs([self.dbeta(t) for t in ts])) <= bound)


def phases(family: PhaseFamily, n, t):
    """mu_n(t); mu_0 = 0."""
    n = np.asarray(n)
    ell = family.grid.ell(n)
    b = family.beta(t) if family.beta is not None else 0.0
    return np.sign(n) * (ell * t + b * np.sqrt(np.abs(n)))


def _dphases(family: PhaseFamily, n, t):
    n = np.asarray(n)
    ell = family.grid.ell(n)
    db = family.dbeta(t) if family.dbeta is not None else 0.0
    return np.sign(n) * (ell + db * np.sqrt(np.abs(n)))


def _auto_panels(family: PhaseFamily, order: int) -> int:
    """Panel count resolving the fastest phase difference (~0.5*order rad/panel)."""
    S = family.modes
    fmax = 2.0 * float(np.max(family.grid.ell(S))) if len(S) else 1.0
    if family.dbeta is not None:
        ts = np.linspace(0.0, family.T, 65)
        fmax += 2.0 * max(abs(family.dbeta(t)) for t in ts) * np.sqrt(np.max(np.abs(S)))
    return max(8, int(np.ceil(family.T * fmax / (0.5 * order))))


def ingham_gram(family: PhaseFamily, panels: int | None = None, order: int = 12,
                refine_check: bool = True, quad_tol: float = 1e-10):
    """Gram matrix K[m,n] = int_0^T exp(i(mu_n - mu_m)) dt and its extreme
    eigenvalues (C_1 = lam_min, C_2 = lam_max).

    Composite Gauss-Legendre quadrature with the panel count scaled to the
    fastest phase difference; a panel-doubling refinement guards the
    quadrature error below quad_tol.
    """
    if panels is None:
        panels = _auto_panels(family, order)

    def assemble(npan):
        xg, wg = leggauss(order)
        S = family.modes
        K = np.zeros((len(S), len(S)), dtype=complex)
        edges = np.linspace(0.0, family.T, npan + 1)
        for a, bnd in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (a + bnd), 0.5 * (bnd - a)
            for xq, wq in zip(xg, wg):
                t = mid + half * xq
                mu = phases(family, S, t)
                e = np.exp(1j * mu)
                K += (half * wq) * np.outer(np.conj(e), e)
        return K

    K = assemble(panels)
    if refine_check:
        K2 = assemble(2 * panels)
        err = float(np.max(np.abs(K - K2)))
        if err > quad_tol:
            K, K2 = K2, assemble(4 * panels)
            err = float(np.max(np.abs(K - K2)))
            if err > quad_tol:
                raise RuntimeError(f"Ingham Gram quadrature not converged: {err:.2e}")
    w = eigh(K, eigvals_only=True)
    return K, float(w[0]), float(w[-1])


def highfreq_check(family: PhaseFamily, N_cut: int, panels: int | None = None,
                   order: int = 12, scan_N0: bool = True) -> dict:
    """High-frequency lower bound: lam_min of the Gram restricted to
    |n| >= N_cut must reach T/2; also reports the smallest cutoff that
    passes and the off-diagonal row sums of the integration-by-parts bound.

    The restricted Grams are principal submatrices of the full one, so a
    single assembly serves every cutoff.
    """
    S_all = family.modes
    Kfull, _, _ = ingham_gram(family, panels=panels, order=order)

    def lam_min_for(cut):
        idx = np.where(np.abs(S_all) >= cut)[0]
        if len(idx) == 0:
            return np.inf
        return float(eigh(Kfull[np.ix_(idx, idx)], eigvals_only=True)[0])

    lam = lam_min_for(N_cut)
    ok = bool(lam >= family.T / 2.0)
    N0 = None
    if scan_N0:
        for cut in range(0, int(np.max(np.abs(S_all))) + 1):
            if lam_min_for(cut) >= family.T / 2.0:
                N0 = cut
                break
    # kappa row-sum diagnostics at the requested cutoff
    sub = S_all[np.abs(S_all) >= N_cut]
    ts = np.linspace(0.0, family.T, 65)
    dmu = np.array([_dphases(family, sub, t) for t in ts])  # (n_t, |sub|)
    rowsums = []
    for i in range(len(sub)):
        gaps = np.abs(dmu - dmu[:, i][:, None])
        gaps[:, i] = np.inf
        rowsums.append(float(np.sum(2.0 / np.min(gaps, axis=0))))
    return {"pass": ok, "lam_min": lam, "margin": lam - family.T / 2.0,
            "N0_empirical": N0, "row_sums": rowsums}


def separation_check(family: PhaseFamily, n: int, m: int, n_t: int = 201) -> dict:
    """min_t |mu'_n - mu'_m| >= (1/2) tanh^{1/2}(b) sqrt(max(n,m)) |n-m|."""
    if n < 0 or m < 0 or n == m:
        raise ValueError("separation check needs n, m >= 0 and n != m")
    ts = np.linspace(0.0, family.T, n_t)
    gaps = np.abs(np.array([_dphases(family, [n], t)[0] - _dphases(family, [m], t)[0]
                            for t in ts]))
    lower = 0.5 * np.sqrt(family.tanh_b()) * np.sqrt(max(n, m)) * abs(n - m)
    return {"pass": bool(np.min(gaps) >= lower), "min_gap": float(np.min(gaps)),
            "bound": float(lower)}


# ---------------------------------------------------------------------------
# the real-Hilbert subspace L^2_M and observability
# ---------------------------------------------------------------------------

def field_to_vec(u: np.ndarray) -> np.ndarray:
    return np.concatenate([u.real, u.imag])


def vec_to_field(r: np.ndarray) -> np.ndarray:
    d = len(r) // 2
    return r[:d] + 1j * r[d:]


def l2m_basis(grid: Grid, M_field: np.ndarray) -> np.ndarray:
    """Orthonormal real basis (columns) of L^2_M = {Im int M phi dx = 0}.

    Coordinates are stacked (Re phi_hat, Im phi_hat); the constraint is the
    single real functional Im sum_n M_hat(-n) phi_hat(n).
    """
    d = 2 * grid.N + 1
    Mrev = M_field[::-1]           # M_hat(-n)
    gvec = np.concatenate([Mrev.imag, Mrev.real])
    B = null_space(gvec[None, :])
    if B.shape[1] != 2 * d - 1:
        raise RuntimeError("unexpected L2_M dimension")
    return B


def observability_constant(grid: Grid, coeffs: Coefficients, chi_samples: np.ndarray,
                           T: float, M_field: np.ndarray | None = None,
                           K: int = 128, A_op=None, data_at: str = "0") -> dict:
    """K_obs = lam_min of the observation Gramian on L^2_M.

    The observation map takes v0 (given at t=0 or t=T per data_at) to the
    samples of Re(v) (or Re(A v) when A_op is supplied) on the space-time
    grid, weighted by the quadrature of the measure chi(x) dx dt.
    K_obs is normalized so that it bounds
      int_0^T int chi |Re v|^2 dx dt >= K_obs * ||v0||_{L^2}^2.
    """
    d = 2 * grid.N + 1
    if M_field is None:
        M_field = np.zeros(d, dtype=complex)
        M_field[grid.N] = 1.0
    pc = PropagatorCache(grid, coeffs, T=T, K=K)
    B = l2m_basis(grid, M_field)
    wt = np.full(K + 1, pc.dts[0])
    wt[0] *= 0.5
    wt[-1] *= 0.5
    wx = (2.0 * np.pi / grid.M_x) * np.asarray(chi_samples, dtype=float)
    sq = np.sqrt(np.outer(wt, np.maximum(wx, 0.0)))    # (K+1, M_x)

    rows = []
    for j in range(B.shape[1]):
        v0 = vec_to_field(B[:, j])
        tr = (pc.solve_forward(v0) if data_at == "0" else pc.solve_backward(v0))
        obs = np.empty((K + 1, grid.M_x))
        for k in range(K + 1):
            w = tr.values[k]
            if A_op is not None:
                w = A_op.matrix(pc.times[k]) @ w
            obs[k] = grid.to_physical(w).real
        rows.append((sq * obs).ravel())
    O = np.array(rows).T
    Gram = O.T @ O
    wev = eigh(Gram, eigvals_only=True)
    K_obs = float(wev[0]) / (2.0 * np.pi)
    return {"K_obs": K_obs, "lam_max": float(wev[-1]) / (2.0 * np.pi),
            "non_observable": bool(K_obs <= 1e-12), "dim": B.shape[1]}
