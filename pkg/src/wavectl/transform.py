"""Changes of variables and the oscillatory conjugation operator.

Three L^2-preserving transformations reduce the classical operator
d_t + V d_x + i L^{1/2}(c L^{1/2} .) + R_2 to transport form
d_t + W d_x + i L + R_3 with zero-mean W:

  1. Psi_1: warp x -> x + beta_1(t,x) with Jacobian^(1/2) factor, where
     1 + d_x beta_1 = m(t)^{2/3} c^{-2/3} makes the leading coefficient
     m(t) space-independent,
  2. time reparametrization t -> psi(t) = int_0^t m, absorbing m(t),
  3. translation x -> x - p(t), removing the space-average of the
     transport coefficient.

A second, non-local conjugation A = Op(q e^{i beta |k|^{1/2}}) trades the
transport term W d_x for an order-0 remainder; the phase primitive and
amplitude are chosen so that the order-1 and order-1/2 terms cancel (the
numerical witness is an n-uniform bound on R_5 e^{inx}).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline

from wavectl.spectral import Grid, operator_norm
from wavectl.evolution import TimeField, Trajectory

__all__ = [
    "trig_interp",
    "DiffeoBundle",
    "diffeo_from_c",
    "psi1_matrix",
    "psi1_apply",
    "psi1_inverse_apply",
    "PhiBundle",
    "build_phi",
    "conj_check_L",
    "AOperator",
    "build_A",
    "conjugation_defect",
]


# ---------------------------------------------------------------------------
# trigonometric interpolation of grid samples at arbitrary points
# ---------------------------------------------------------------------------

def _full_modes(M):
    return np.fft.fftfreq(M, d=1.0 / M).astype(int)


def trig_interp(samples: np.ndarray, points: np.ndarray, deriv: int = 0) -> np.ndarray:
    """Evaluate the trigonometric interpolant of uniform samples at points."""
    M = samples.shape[-1]
    coef = np.fft.fft(samples, axis=-1) / M
    k = _full_modes(M)
    if deriv:
        coef = coef * (1j * k) ** deriv
    return np.exp(1j * np.outer(points, k)) @ coef if samples.ndim == 1 else \
        np.einsum("pk,...k->...p", np.exp(1j * np.outer(points, k)), coef)


def _zero_mean_primitive_samples(samples: np.ndarray) -> np.ndarray:
    """Zero-mean primitive of zero-mean samples, in the full grid band."""
    M = samples.shape[-1]
    coef = np.fft.fft(samples, axis=-1) / M
    k = _full_modes(M)
    out = np.zeros_like(coef)
    nz = k != 0
    out[..., nz] = coef[..., nz] / (1j * k[nz])
    return np.fft.ifft(out * M, axis=-1)


def _dx_samples(samples: np.ndarray) -> np.ndarray:
    M = samples.shape[-1]
    k = _full_modes(M)
    return np.fft.ifft(1j * k * np.fft.fft(samples, axis=-1), axis=-1)


# ---------------------------------------------------------------------------
# diffeomorphism from the symmetrizer coefficient
# ---------------------------------------------------------------------------

@dataclass
class DiffeoBundle:
    """x-diffeomorphism pair and time reparametrization built from c(t,x)."""

    grid: Grid
    times: np.ndarray
    beta1: np.ndarray        # (n_t, M_x) real samples of beta_1(t, .)
    tilde_beta1: np.ndarray  # (n_t, M_x) real samples of the inverse warp
    m: np.ndarray            # (n_t,) values of m(t)
    T1: float
    psi_vals: np.ndarray     # (n_t,) psi(t) on the sample grid
    _sp: dict = field(default_factory=dict, repr=False)

    def spline(self, name):
        if name not in self._sp:
            data = {"beta1": self.beta1, "tilde_beta1": self.tilde_beta1,
                    "m": self.m, "psi": self.psi_vals}[name]
            self._sp[name] = CubicSpline(self.times, data, axis=0)
        return self._sp[name]

    def psi(self, t):
        return self.spline("psi")(t)

    def psi_inv(self, tprime):
        if "psi_inv" not in self._sp:
            self._sp["psi_inv"] = CubicSpline(self.psi_vals, self.times)
        return self._sp["psi_inv"](tprime)

    def rho(self, tprime):
        return self.spline("m")(self.psi_inv(tprime))

    def beta1_at(self, t):
        return self.spline("beta1")(t)

    def beta1_t_at(self, t):
        return self.spline("beta1").derivative()(t)

    def tilde_beta1_at(self, t):
        return self.spline("tilde_beta1")(t)


def _invert_warp(grid: Grid, beta_s: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Newton inversion of y = x + beta(x) on the grid: returns tilde_beta(y_j)."""
    y = grid.x
    xg = y.copy()
    dbeta = _dx_samples(beta_s).real
    for _ in range(60):
        bx = trig_interp(beta_s, xg).real
        dbx = trig_interp(dbeta, xg).real
        jac = 1.0 + dbx
        if np.min(jac) <= 0.5:
            raise RuntimeError(f"warp Jacobian 1+dx beta = {np.min(jac):.3f} <= 1/2")
        step = (xg + bx - y) / jac
        xg = xg - step
        if np.max(np.abs(step)) <= tol:
            break
    else:
        raise RuntimeError("warp inversion did not converge")
    return xg - y


def diffeo_from_c(grid: Grid, c: TimeField, T: float, n_t: int = 129,
                  delta0: float = 0.5) -> DiffeoBundle:
    """beta_1 = dx^{-1}[m^{2/3} c^{-2/3} - 1], m = (mean c^{-2/3})^{-3/2},
    psi(t) = int_0^t m, with the inverse warp found by Newton iteration."""
    times = np.linspace(0.0, T, n_t)
    M = grid.M_x
    beta1 = np.empty((n_t, M))
    tbeta1 = np.empty((n_t, M))
    mvals = np.empty(n_t)
    for i, t in enumerate(times):
        cs = grid.to_physical(c(t)).real
        if np.max(np.abs(cs - 1.0)) >= delta0:
            raise ValueError(f"||c-1||_inf = {np.max(np.abs(cs-1)):.3f} >= {delta0}")
        cm23 = cs ** (-2.0 / 3.0)
        m = float(np.mean(cm23)) ** (-1.5)
        integ = m ** (2.0 / 3.0) * cm23 - 1.0
        b1 = _zero_mean_primitive_samples(integ).real
        beta1[i] = b1
        tbeta1[i] = _invert_warp(grid, b1)
        mvals[i] = m
    psi_vals = np.concatenate([[0.0], cumulative_simpson(mvals, x=times)])
    return DiffeoBundle(grid=grid, times=times, beta1=beta1, tilde_beta1=tbeta1,
                        m=mvals, T1=float(psi_vals[-1]), psi_vals=psi_vals)


# ---------------------------------------------------------------------------
# the Jacobian^(1/2) pull-back
# ---------------------------------------------------------------------------

def psi1_matrix(grid: Grid, warp_s: np.ndarray) -> np.ndarray:
    """Matrix of h -> (1 + w')^{1/2} h(. + w) for a warp given by samples w."""
    jac = 1.0 + _dx_samples(warp_s).real
    pts = grid.x + warp_s.real
    cols = np.sqrt(jac)[:, None] * np.exp(1j * np.outer(pts, grid.n))
    return grid.to_spectral(cols.T).T


def psi1_apply(grid: Grid, warp_s: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Apply the warp operator to a field without assembling the matrix."""
    jac = 1.0 + _dx_samples(warp_s).real
    pts = grid.x + warp_s.real
    vals = np.sqrt(jac) * (np.exp(1j * np.outer(pts, grid.n)) @ u)
    return grid.to_spectral(vals)


def psi1_inverse_apply(grid: Grid, warp_s: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Exact inverse of the truncated warp operator (dense solve)."""
    return np.linalg.solve(psi1_matrix(grid, warp_s), u)


# ---------------------------------------------------------------------------
# full change of variables Phi = phi_*^{-1} psi_*^{-1} Psi_1
# ---------------------------------------------------------------------------

@dataclass
class PhiBundle:
    grid: Grid
    diffeo: DiffeoBundle
    T: float
    T1: float
    W: TimeField              # zero-mean transport coefficient on [0, T1]
    M_field: np.ndarray       # weight M(x) = (1 + dx tilde_beta1(T, x - p(T1)))^{1/2}
    p_spline: object          # translation p(t'), t' in [0, T1]
    a6_samples: np.ndarray    # (n_t, M_x), for diagnostics
    t1_times: np.ndarray
    report: dict
    _cache: dict = field(default_factory=dict, repr=False)

    # -- scalar maps ---------------------------------------------------------

    def p(self, tprime):
        return self.p_spline(tprime)

    def m_of_s(self, s):
        return self.diffeo.spline("m")(s)

    # -- spatial operator of Phi at a T1-time ---------------------------------

    def phi_matrix(self, tprime: float) -> np.ndarray:
        key = ("phi", round(float(tprime), 12))
        if key not in self._cache:
            s = float(self.diffeo.psi_inv(tprime))
            Psi = psi1_matrix(self.grid, self.diffeo.tilde_beta1_at(s))
            D = np.exp(-1j * self.grid.n * float(self.p(tprime)))
            self._cache[key] = D[:, None] * Psi
        return self._cache[key]

    def phi_inv_matrix(self, tprime: float) -> np.ndarray:
        """Exact matrix inverse of the truncated warp operator.

        The reverse-warp formula only inverts Phi up to band-edge leakage;
        the dense inverse keeps the discrete conjugation identities exact.
        The reverse-warp formula itself remains available (phi_inv_warp_values)
        for the support-exact evaluation of localized controls.
        """
        key = ("phiinv", round(float(tprime), 12))
        if key not in self._cache:
            self._cache[key] = np.linalg.inv(self.phi_matrix(tprime))
        return self._cache[key]

    def phi_inv_warp_values(self, tprime: float, g_samples: np.ndarray,
                            chi2=None) -> np.ndarray:
        """(Phi^{-1} g)(s, x_j) by the local formula, with optional analytic
        cutoff chi2 evaluated at the warped points (exact grid zeros).

        g_samples are M_x samples of g(t', .); returns M_x samples at
        s = psi^{-1}(t').
        """
        gr = self.grid
        s = float(self.diffeo.psi_inv(tprime))
        b1 = self.diffeo.beta1_at(s)
        jac = 1.0 + _dx_samples(b1).real
        pts = gr.x + b1.real + float(self.p(tprime))
        vals = np.sqrt(jac) * trig_interp(g_samples, pts)
        if chi2 is not None:
            vals = vals * chi2(np.mod(pts, 2.0 * np.pi))
        return vals

    def phi_dot_matrix(self, tprime: float, delta: float) -> np.ndarray:
        tp = min(tprime + delta, self.T1)
        tm = max(tprime - delta, 0.0)
        return (self.phi_matrix(tp) - self.phi_matrix(tm)) / (tp - tm)

    # -- conjugated generator ---------------------------------------------------

    def conjugated_generator(self, tprime: float, B_of_s, delta: float | None = None) -> np.ndarray:
        """B_3(t') with  Phi (1/m) B(s) Phi^{-1} - Phi' Phi^{-1},  s = psi^{-1}(t').

        B_of_s(s) is the spatial generator of the classical operator upstairs;
        the returned matrix generates d_t w = -B_3 w for w = Phi u.
        """
        if delta is None:
            delta = self.T1 / (4096.0)
        s = float(self.diffeo.psi_inv(tprime))
        P = self.phi_matrix(tprime)
        Pinv = self.phi_inv_matrix(tprime)
        Pdot = self.phi_dot_matrix(tprime, delta)
        return P @ ((1.0 / float(self.m_of_s(s))) * B_of_s(s)) @ Pinv - Pdot @ Pinv

    def remainder_R3(self, tprime: float, B_of_s, delta: float | None = None) -> np.ndarray:
        g = self.grid
        B3 = self.conjugated_generator(tprime, B_of_s, delta)
        return (B3 - g.mult_matrix(self.W(tprime)) @ g.derivative_matrix()
                - 1j * np.diag(g.multiplier("L")))

    # -- trajectory maps ---------------------------------------------------------

    def apply_trajectory(self, traj: Trajectory, K: int) -> Trajectory:
        """w(t') = Phi(t') u(psi^{-1}(t')) on the uniform [0, T1] grid."""
        t1 = np.linspace(0.0, self.T1, K + 1)
        vals = np.array([self.phi_matrix(tp) @ traj.at(float(self.diffeo.psi_inv(tp)))
                         for tp in t1])
        return Trajectory(t1, vals)

    def inverse_trajectory(self, traj: Trajectory, K: int) -> Trajectory:
        """u(s) = Phi(psi(s))^{-1} w(psi(s)) on the uniform [0, T] grid."""
        t0 = np.linspace(0.0, self.T, K + 1)
        vals = np.array([self.phi_inv_matrix(float(self.diffeo.psi(s))) @
                         traj.at(float(self.diffeo.psi(s))) for s in t0])
        return Trajectory(t0, vals)


def build_phi(grid: Grid, c: TimeField, V: TimeField | None, T: float,
              n_t: int = 129, delta0: float = 0.5) -> PhiBundle:
    """Assemble the full change of variables and its transport coefficient W."""
    dif = diffeo_from_c(grid, c, T, n_t=n_t, delta0=delta0)
    times, T1 = dif.times, dif.T1
    M = grid.M_x
    x = grid.x

    # a_3(s, x) = a_1 + (B~V) a_2 on the s-sample grid
    a3 = np.empty((n_t, M))
    b1t_all = dif.spline("beta1").derivative()(times)
    for i, s in enumerate(times):
        tb = dif.tilde_beta1[i]
        pts = x + tb
        a1 = trig_interp(b1t_all[i], pts).real
        jac_tb = 1.0 + _dx_samples(tb).real
        a2 = 1.0 / jac_tb
        if V is not None:
            Vs = grid.to_physical(V(s)).real
            BV = trig_interp(Vs, pts).real
            a3[i] = a1 + BV * a2
        else:
            a3[i] = a1

    # uniform T1-grid; a_6(t', x) = a_3(psi^{-1} t', x) / rho(t')
    t1 = np.linspace(0.0, T1, n_t)
    s_of = dif.psi_inv(t1)
    a3sp = CubicSpline(times, a3, axis=0)
    rho = dif.spline("m")(s_of)
    a6 = a3sp(s_of) / rho[:, None]
    a6_mean = a6.mean(axis=1)
    p_vals = np.concatenate([[0.0], cumulative_simpson(-a6_mean, x=t1)])
    p_spline = CubicSpline(t1, p_vals)
    dp = p_spline.derivative()

    # W(t', x) = p'(t') + a_6(t', x - p(t')), zero mean enforced
    Wsam = np.empty((n_t, 2 * grid.N + 1), dtype=complex)
    wmaxdev = 0.0
    for i, tp in enumerate(t1):
        prof = trig_interp(a6[i], x - p_vals[i]).real + dp(tp)
        f = grid.to_spectral(prof.astype(complex))
        wmaxdev = max(wmaxdev, abs(f[grid.N]))
        f[grid.N] = 0.0
        Wsam[i] = f
    W = TimeField.from_samples(t1, Wsam)

    # weight M(x) and the p(T1) cross-check of the closed form
    tbT = dif.tilde_beta1_at(T)
    Mprof = np.sqrt(1.0 + trig_interp(_dx_samples(tbT).real, x - p_vals[-1]).real)
    M_field = grid.to_spectral(Mprof.astype(complex))
    pT1_direct = float(p_vals[-1])
    pT1_closed = float(-np.concatenate([[0.0], cumulative_simpson(a3.mean(axis=1), x=times)])[-1])
    report = {
        "T1": T1,
        "m_minus_1_max": float(np.max(np.abs(dif.m - 1.0))),
        "W_mean_residual": float(wmaxdev),
        "p_T1": pT1_direct,
        "p_T1_closed_form": pT1_closed,
        "p_T1_mismatch": abs(pT1_direct - pT1_closed),
        "M_minus_1_max": float(np.max(np.abs(Mprof - 1.0))),
    }
    return PhiBundle(grid=grid, diffeo=dif, T=T, T1=T1, W=W, M_field=M_field,
                     p_spline=p_spline, a6_samples=a6, t1_times=t1, report=report)


# ---------------------------------------------------------------------------
# conjugation of L under the warp: explicit two-term expansion
# ---------------------------------------------------------------------------

def conj_check_L(grid: Grid, beta1_field: np.ndarray,
                 modes=(4, 8, 16, 32)) -> dict:
    """Residual of Psi_1 L Psi_1^{-1} minus its two explicit terms.

    The principal term is (1+dx tilde_beta)^{-3/2} L and the order-1/2 term
    (9/8)(dxx tilde_beta)(1+dx tilde_beta)^{-5/2} |D|^{-1/2} dx; the residual
    must act like an order-0 operator (n-uniform norms).
    """
    b1s = grid.to_physical(beta1_field).real
    tbs = _invert_warp(grid, b1s)
    Psi = psi1_matrix(grid, tbs)
    PsiInv = psi1_matrix(grid, b1s)
    L = np.diag(grid.multiplier("L"))
    conj = Psi @ L @ PsiInv

    dtb = _dx_samples(tbs).real
    ddtb = _dx_samples(_dx_samples(tbs)).real
    w_main = grid.to_spectral(((1.0 + dtb) ** (-1.5)).astype(complex))
    w_half = grid.to_spectral((1.125 * ddtb * (1.0 + dtb) ** (-2.5)).astype(complex))
    absn = np.abs(grid.n).astype(float)
    half_sym = np.where(absn > 0, np.power(np.maximum(absn, 1.0), -0.5), 0.0) * (1j * grid.n)
    explicit = grid.mult_matrix(w_main) @ L + grid.mult_matrix(w_half) @ np.diag(half_sym)
    Rres = conj - explicit

    d = 2 * grid.N + 1
    norms = []
    for n in modes:
        e = np.zeros(d, complex)
        e[grid.N + n] = 1.0
        norms.append(float(np.linalg.norm(Rres @ e)))
    slope = float(np.polyfit(np.log(modes), np.log(np.maximum(norms, 1e-300)), 1)[0])
    # mode-wise ratio of the principal part on high modes
    ratios = []
    for n in modes[len(modes) // 2:]:
        e = np.zeros(d, complex)
        e[grid.N + n] = 1.0
        ratios.append(np.linalg.norm((conj - grid.mult_matrix(w_main) @ L) @ e)
                      / max(np.linalg.norm(conj @ e), 1e-300))
    return {"modes": list(modes), "residual_norms": norms, "slope": slope,
            "principal_rel_err_high": ratios, "residual_op": Rres}


# ---------------------------------------------------------------------------
# the oscillatory conjugation A = Op(q e^{i beta |k|^{1/2}})
# ---------------------------------------------------------------------------

@dataclass
class AOperator:
    grid: Grid
    W: TimeField
    beta0: object            # spline t -> beta_0(t)
    beta_w: object           # callable t -> M_x samples of the x-part of beta
    gamma_plus: object       # callable t -> M_x samples of the phase of q
    report: dict
    _cache: dict = field(default_factory=dict, repr=False)

    def phase_and_amp(self, t: float):
        beta = float(self.beta0(t)) + self.beta_w(t)
        gp = self.gamma_plus(t)
        return beta, gp

    def matrix(self, t: float) -> np.ndarray:
        key = round(float(t), 12)
        if key not in self._cache:
            g = self.grid
            beta, gp = self.phase_and_amp(t)
            cols = np.empty((g.M_x, 2 * g.N + 1), dtype=complex)
            for j, k in enumerate(g.n):
                if k == 0:
                    cols[:, j] = 1.0
                else:
                    q = np.exp(1j * np.sign(k) * gp)
                    cols[:, j] = q * np.exp(1j * beta * np.sqrt(abs(k))) * np.exp(1j * k * g.x)
            self._cache[key] = g.to_spectral(cols.T).T
        return self._cache[key]

    def inv_apply(self, t: float, u: np.ndarray, cond_max: float = 1e6) -> np.ndarray:
        A = self.matrix(t)
        if np.linalg.cond(A) > cond_max:
            raise RuntimeError("A operator ill-conditioned")
        return np.linalg.solve(A, u)

    def dot_matrix(self, t: float, delta: float, t_max: float) -> np.ndarray:
        tp, tm = min(t + delta, t_max), max(t - delta, 0.0)
        return (self.matrix(tp) - self.matrix(tm)) / (tp - tm)


def build_A(grid: Grid, W: TimeField, T: float, n_t: int = 65,
            negative_control: bool = False, mean_tol: float = 1e-10) -> AOperator:
    """Phase beta = beta_0(t) - (2/3) dx^{-1} W and amplitude q = e^gamma with

        gamma = -(2/3) i sign(k) dx^{-1}(d_t beta - (9/8)(d_x beta)^2),

    where beta_0 removes the x-mean of the integrand (so the primitive is
    periodic).  negative_control=True zeroes beta_0 and de-means by force,
    which is the deliberately wrong choice used to witness the cancellation.
    """
    times = np.linspace(0.0, T, n_t)
    M = grid.M_x

    bw = np.empty((n_t, M))
    for i, t in enumerate(times):
        Wf = W(t)
        if abs(Wf[grid.N]) > 1e-9 * max(1.0, np.max(np.abs(Wf))):
            raise ValueError("W must have zero mean at every time")
        Ws = grid.to_physical(Wf).real
        bw[i] = -(2.0 / 3.0) * _zero_mean_primitive_samples(Ws).real
    bw_sp = CubicSpline(times, bw, axis=0)
    bw_t = bw_sp.derivative()

    integ0 = lambda t: bw_t(t) - 1.125 * _dx_samples(bw_sp(t)).real ** 2
    if negative_control:
        beta0_sp = CubicSpline(times, np.zeros(n_t))
    else:
        d0 = np.array([-np.mean(integ0(t)) for t in times])
        beta0_vals = np.concatenate([[0.0], cumulative_simpson(d0, x=times)])
        beta0_sp = CubicSpline(times, beta0_vals)
    beta0_t = beta0_sp.derivative()

    mean_dev = 0.0

    def gamma_plus(t):
        nonlocal mean_dev
        integ = integ0(t) + float(beta0_t(t))
        mdev = abs(np.mean(integ))
        mean_dev = max(mean_dev, mdev)
        return -(2.0 / 3.0) * _zero_mean_primitive_samples(integ - np.mean(integ)).real

    if not negative_control:
        for t in times[:: max(1, n_t // 8)]:
            gamma_plus(t)
        if mean_dev > mean_tol:
            raise RuntimeError(f"gamma integrand mean {mean_dev:.2e} exceeds {mean_tol}")

    report = {"mean_dev": mean_dev, "negative_control": negative_control}
    return AOperator(grid=grid, W=W, beta0=beta0_sp,
                     beta_w=lambda t: bw_sp(t), gamma_plus=gamma_plus, report=report)


def conjugation_defect(grid: Grid, W: TimeField, R4, A: AOperator, t: float,
                       T: float, delta: float | None = None,
                       modes=(4, 8, 16, 32)) -> dict:
    """R_5 = A^{-1}([d_t, A] + R_4 A + W dx A + i[L, A]) and its order-0 witness.

    Returns the matrix at time t plus the log-log slope of ||R_5 e^{inx}||
    over the requested modes; slope near 0 certifies the cancellation of the
    order-1/2 part, slope near 1/2 indicates it failed.
    """
    if delta is None:
        delta = max(T / 4096.0, 1e-6)
    Amat = A.matrix(t)
    Adot = A.dot_matrix(t, delta, T)
    L = np.diag(grid.multiplier("L"))
    MW = grid.mult_matrix(W(t)) @ grid.derivative_matrix()
    R4m = R4(t) if callable(R4) else (R4 if R4 is not None else 0.0)
    S = Adot + MW @ Amat + 1j * (L @ Amat - Amat @ L)
    if isinstance(R4m, np.ndarray):
        S = S + R4m @ Amat
    R5 = np.linalg.solve(Amat, S)
    d = 2 * grid.N + 1
    norms = []
    for n in modes:
        e = np.zeros(d, complex)
        e[grid.N + n] = 1.0
        norms.append(float(np.linalg.norm(R5 @ e)))
    slope = float(np.polyfit(np.log(modes), np.log(np.maximum(norms, 1e-300)), 1)[0])
    return {"R5": R5, "modes": list(modes), "norms": norms, "slope": slope,
            "norm_L2": float(np.linalg.norm(R5, 2))}
