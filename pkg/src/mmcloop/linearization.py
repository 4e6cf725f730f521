"""Harmonic-domain linearization of the MMC control chain.

Each control signal is represented as a matrix mapping the stacked
perturbation inputs ``[di; dv_v; dv_dc; dv]`` (each 2n+1 rows, upper arm of
phase a) to its own harmonic rows. Park transforms, the PLL angle
perturbation, per-unit scaling, PI regulators and the transport delay are
composed exactly as the time-domain controller in :mod:`mmcloop.timesim`
executes them, so the two can be checked against each other.

Control chain (per end):

* SRF-PLL on the PCC voltage, ``h_PLL`` on per-unit v_q.
* Outer loops: SE regulates P and Q (``h_PQ``), RE regulates v_dc
  (``h_vdc``) and Q.
* PS current control in the PLL frame with dq decoupling and PCC voltage
  feed-forward, NS current control in the -theta frame (zero reference),
  both ``h_i1``.
* CCC in the -2*theta frame (``h_i2``), no decoupling or feed-forward.
  FCCC adds an outer loop ``h_ov`` acting on the 2nd-harmonic capacitor
  voltage, rotated by ``fccc_rotation_deg``.
* ``m = 0.5 - mod_gain * (e_ac + e_cc)(t - T_d)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemParams, evaluate_pi_offset, POLE_OFFSET
from .harmonics import (
    HarmonicOperator,
    cm_projector,
    convolve,
    dm_projector,
    orders,
    phase_rotation,
    shifted_frequencies,
    toeplitz_matrix,
)
from .steady_state import SteadyState


class ControllerPoleError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ControlSensitivities:
    B_i: HarmonicOperator
    B_v: HarmonicOperator
    B_vdc: HarmonicOperator
    B_vcap: HarmonicOperator
    s: complex
    end: str
    ccc_mode: str


def _trig(n: int, c: int, phase: float, kind: str) -> np.ndarray:
    """Coefficients of cos/sin(c*w1*t + phase)."""
    out = np.zeros(2 * n + 1, complex)
    e = np.exp(1j * phase)
    if kind == "cos":
        out[n + c] += 0.5 * e
        out[n - c] += 0.5 * np.conj(e)
    else:
        out[n + c] += e / 2j
        out[n - c] += -np.conj(e) / 2j
    return out


class _Park:
    """Park transform with angle c*theta (theta the PLL angle)."""

    def __init__(self, n: int, c: int, theta0: float = 0.0):
        self.n, self.c = n, c
        self.cos = [_trig(n, c, c * theta0 - p * 2 * np.pi / 3, "cos") for p in range(3)]
        self.sin = [_trig(n, c, c * theta0 - p * 2 * np.pi / 3, "sin") for p in range(3)]
        rot = [phase_rotation(n, p) for p in range(3)]
        self.Od = (2 / 3) * sum(toeplitz_matrix(self.cos[p]) @ rot[p] for p in range(3))
        self.Oq = -(2 / 3) * sum(toeplitz_matrix(self.sin[p]) @ rot[p] for p in range(3))
        self._rot_diag = [np.diag(r) for r in rot]

    def steady(self, xbar: np.ndarray):
        n = self.n
        xd = np.zeros(2 * n + 1, complex)
        xq = np.zeros(2 * n + 1, complex)
        for p in range(3):
            xp = self._rot_diag[p] * xbar
            xd += (2 / 3) * convolve(self.cos[p], xp, n)
            xq -= (2 / 3) * convolve(self.sin[p], xp, n)
        return xd, xq

    def forward(self, X, xbar, Theta):
        """Perturbed (d, q) signal matrices of a phase-a signal X."""
        xd, xq = self.steady(xbar)
        dphi = self.c * Theta
        d = self.Od @ X + toeplitz_matrix(xq) @ dphi
        q = self.Oq @ X - toeplitz_matrix(xd) @ dphi
        return d, q

    def inverse(self, D, Q, ud, uq, Theta):
        """Perturbed phase-a output of the inverse transform."""
        n = self.n
        c0, s0 = self.cos[0], self.sin[0]
        w = -(convolve(s0, ud, n) + convolve(c0, uq, n))
        return toeplitz_matrix(c0) @ D - toeplitz_matrix(s0) @ Q + toeplitz_matrix(w) @ (self.c * Theta)


def _pi_diag(pi, sk):
    return np.diag(evaluate_pi_offset(pi, sk))


def _safe(sk):
    return np.where(sk == 0, 1j * POLE_OFFSET, sk)


def steady_controller_outputs(state: SteadyState, params: SystemParams, end: str):
    """Steady dq outputs (PS loop, NS loop, CCC) implied by the steady m.

    The NS loop sees the PS current as a 2*w1 ripple in its -theta frame and
    answers with a periodic output; the PS loop output is whatever remains
    of the fundamental of m after that contribution.
    """
    p = params
    n, w1 = p.n, p.w1
    m = state[end].m.coeffs
    k = orders(n)
    e = -m * np.exp(1j * k * w1 * p.T_d[end]) / p.mod_gain
    e[n] = 0
    parkm1 = _Park(n, -1)
    nd, nq = parkm1.steady(state[end].i_g.coeffs / p.I_bpk)
    h = evaluate_pi_offset(p.controllers.h_i1, 1j * k * w1)
    und, unq = -h * nd, -h * nq
    und[n] = unq[n] = 0
    e_ns = convolve(parkm1.cos[0], und, n) - convolve(parkm1.sin[0], unq, n)
    u_ps = 2 * (e[n + 1] - e_ns[n + 1])
    u_cc = 2 * e[n - 2]
    zero = np.zeros(2 * n + 1, complex)
    ud, uq, ucd, ucq = zero.copy(), zero.copy(), zero.copy(), zero.copy()
    ud[n], uq[n] = u_ps.real, u_ps.imag
    ucd[n], ucq[n] = u_cc.real, u_cc.imag
    return (ud, uq), (und, unq), (ucd, ucq)


def pll_sensitivity(state: SteadyState, params: SystemParams, s, end: str = "re") -> complex:
    """Closed-loop angle response to a per-unit q-axis voltage disturbance."""
    s = complex(s)
    if s == 0:
        s = 1j * POLE_OFFSET
    v1 = 2 * abs(state[end].v_v[1]) / params.V_bpk
    h = evaluate_pi_offset(params.controllers.h_PLL, s)
    den = s + v1 * h
    if den == 0:
        raise ControllerPoleError("loop singularity")
    return h / den


def _chain(state: SteadyState, params: SystemParams, end: str, s: complex, overrides=None):
    p = params
    n = p.n
    N = 2 * n + 1
    ctl = p.controllers
    if overrides:
        from dataclasses import replace
        ctl = replace(ctl, **overrides)
    sk = shifted_frequencies(s, n, p.w1)
    I = np.eye(N, dtype=complex)
    Z = np.zeros((N, N), dtype=complex)
    es = state[end]

    def sig(a=Z, b=Z, c=Z, d=Z):
        return np.hstack([a, b, c, d])

    Dm, Cm = dm_projector(n), cm_projector(n)
    VV = sig(b=I / p.V_bpk)
    IG = sig(a=Dm / p.I_bv)
    IC = sig(a=Cm / p.I_bv)
    VC = sig(d=Cm / p.V_dcb)
    VDC = sig(c=I / p.V_dcb)

    vv_bar = es.v_v.coeffs / p.V_bpk
    ig_bar = es.i_g.coeffs / p.I_bpk
    ic_bar = (Cm @ es.i.coeffs) / p.I_bv
    vc_bar = (Cm @ es.v.coeffs) / p.V_dcb

    park1 = _Park(n, 1)
    parkm1 = _Park(n, -1)
    parkm2 = _Park(n, -2)

    # PLL
    K = np.diag(evaluate_pi_offset(ctl.h_PLL, sk) / _safe(sk))
    vd_bar, vq_bar = park1.steady(vv_bar)
    Theta_vv = np.linalg.solve(I + K @ toeplitz_matrix(vd_bar), K @ park1.Oq / p.V_bpk)
    Theta = sig(b=Theta_vv)

    vd, vq = park1.forward(VV, vv_bar, Theta)
    id_, iq = park1.forward(IG, ig_bar, Theta)
    id_bar, iq_bar = park1.steady(ig_bar)
    T = toeplitz_matrix
    dP = T(id_bar) @ vd + T(vd_bar) @ id_ + T(iq_bar) @ vq + T(vq_bar) @ iq
    dQ = T(iq_bar) @ vd + T(vd_bar) @ iq - T(id_bar) @ vq - T(vq_bar) @ id_

    H_PQ = _pi_diag(ctl.h_PQ, sk)
    if end == "re":
        id_ref = _pi_diag(ctl.h_vdc, sk) @ VDC
    else:
        id_ref = -H_PQ @ dP
    iq_ref = -H_PQ @ dQ

    H1 = _pi_diag(ctl.h_i1, sk)
    X = p.X_dec_pu
    ff = 1.0 if p.feedforward else 0.0
    ud = H1 @ (id_ref - id_) + ff * vd - X * iq
    uq = H1 @ (iq_ref - iq) + ff * vq + X * id_

    ind, inq = parkm1.forward(IG, ig_bar, Theta)
    und = -H1 @ ind
    unq = -H1 @ inq

    (ud_bar, uq_bar), (und_bar, unq_bar), (ucd_bar, ucq_bar) = steady_controller_outputs(state, p, end)
    e_ac = park1.inverse(ud, uq, ud_bar, uq_bar, Theta) + parkm1.inverse(und, unq, und_bar, unq_bar, Theta)

    icd, icq = parkm2.forward(IC, ic_bar, Theta)
    H2 = _pi_diag(ctl.h_i2, sk)
    if p.ccc_mode == "ccsc" or state.ccc_mode == "ccsc":
        ucd = -H2 @ icd
        ucq = -H2 @ icq
    else:
        vcd, vcq = parkm2.forward(VC, vc_bar, Theta)
        Hov = _pi_diag(ctl.h_ov, sk)
        rho = np.deg2rad(p.fccc_rotation_deg)
        ed, eq = -Hov @ vcd, -Hov @ vcq
        icd_ref = np.cos(rho) * ed - np.sin(rho) * eq
        icq_ref = np.sin(rho) * ed + np.cos(rho) * eq
        ucd = H2 @ (icd_ref - icd)
        ucq = H2 @ (icq_ref - icq)
    e_cc = parkm2.inverse(ucd, ucq, ucd_bar, ucq_bar, Theta)

    delay = np.diag(np.exp(-sk * p.T_d[end]))
    dm = -p.mod_gain * delay @ (e_ac + e_cc)
    return dm


def control_sensitivities(state: SteadyState, params: SystemParams, end: str, s: complex,
                          overrides=None) -> ControlSensitivities:
    """Operators B_i, B_v, B_vdc, B_vcap with dm = B_i di + B_v dv_v + B_vdc dv_dc + B_vcap dv."""
    if state.ccc_mode != params.ccc_mode:
        raise ValueError("steady state was solved for a different CCC mode")
    n = params.n
    N = 2 * n + 1
    dm = _chain(state, params, end, complex(s), overrides)
    blocks = [HarmonicOperator(n, dm[:, j * N : (j + 1) * N]) for j in range(4)]
    return ControlSensitivities(*blocks, s=complex(s), end=end, ccc_mode=params.ccc_mode)
