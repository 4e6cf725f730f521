"""Averaged-arm time-domain simulator of the back-to-back system.

Both converters share one DC bus; each sits behind its own transformer
(ungrounded valve-side star) and Thevenin grid. Per end the six arm
currents and six aggregate capacitor voltages are integrated with
fixed-step RK4. The valve neutral potentials and the DC voltage are
algebraic and come from a constant linear solve at every stage.

The control chain is the one linearized in :mod:`mmcloop.linearization`:
SRF-PLL, outer loops, PS/NS current loops, CCSC or FCCC, then the
modulation delay realized by a ring buffer of past controller outputs.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit
from scipy.signal import get_window

from .config import ENDS, SystemParams
from .harmonics import orders
from .linearization import _Park, steady_controller_outputs
from .steady_state import SteadyState, solve_steady_state

# parameter-array layout (one row per end)
(_L, _R, _C, _LT, _LG, _RG, _KA, _VGRE, _VGIM, _G, _VBPK, _IBV, _VDCB, _PREF, _QREF, _VDCREF,
 _XDEC, _FF, _RHO, _ISRE, _FCCC, _TD, _KPPQ, _TIPQ, _KPOV, _TIOV, _KPVDC, _TIVDC, _KPPLL, _TIPLL,
 _KPI1, _TII1, _KPI2, _TII2, _W1, _NPAR) = range(36)

# per-end state layout: 12 arm states then 12 controller states
_IU, _IL, _VU, _VL = 0, 3, 6, 9
_TH, _XPLL, _XOD, _XOQ, _XI1D, _XI1Q, _XNSD, _XNSQ, _XCCD, _XCCQ, _XOVD, _XOVQ = range(12, 24)
_NSTATE = 24

PROBES = ("P_r", "P_s", "v_dc", "i_u_a_re", "i_u_a_se", "i_c_a_re", "i_c_a_se", "v_u_a_re", "v_u_a_se",
          "theta_re", "theta_se")
_NPROBE = len(PROBES)
TWO_PI_3 = 2 * math.pi / 3


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeSeries:
    dt: float
    values: np.ndarray
    label: str = ""
    t0: float = 0.0
    diverged_at: float | None = None

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))

    def window(self, t_start: float, t_stop: float) -> "TimeSeries":
        i0 = max(0, int(round((t_start - self.t0) / self.dt)))
        i1 = min(len(self.values), int(round((t_stop - self.t0) / self.dt)))
        return TimeSeries(self.dt, self.values[i0:i1], self.label, self.t0 + i0 * self.dt)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_s", "value"])
        for t, v in zip(self.t, self.values):
            w.writerow([f"{t:.9g}", f"{v:.9g}"])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# numba kernel


@njit(cache=True)
def _park(x0, x1, x2, ang):
    c0, c1, c2 = math.cos(ang), math.cos(ang - TWO_PI_3), math.cos(ang + TWO_PI_3)
    s0, s1, s2 = math.sin(ang), math.sin(ang - TWO_PI_3), math.sin(ang + TWO_PI_3)
    d = (2.0 / 3.0) * (x0 * c0 + x1 * c1 + x2 * c2)
    q = -(2.0 / 3.0) * (x0 * s0 + x1 * s1 + x2 * s2)
    return d, q


@njit(cache=True)
def _ipark(d, q, ang, out, scale):
    out[0] += scale * (d * math.cos(ang) - q * math.sin(ang))
    out[1] += scale * (d * math.cos(ang - TWO_PI_3) - q * math.sin(ang - TWO_PI_3))
    out[2] += scale * (d * math.cos(ang + TWO_PI_3) - q * math.sin(ang + TWO_PI_3))


@njit(cache=True)
def _controller(P, S, vv, ig, vdc, eac, ecc, dS):
    """Controller outputs (pu of valve voltage) and integrator derivatives."""
    vb = P[_VBPK]
    ibv = P[_IBV]
    th = S[_TH]
    vd, vq = _park(vv[0] / vb, vv[1] / vb, vv[2] / vb, th)
    # (i_u - i_l) per valve-side base equals i_g per grid-side base
    sc = P[_KA] / ibv
    i0, i1, i2 = ig[0] * sc, ig[1] * sc, ig[2] * sc
    idd, iqq = _park(i0, i1, i2, th)
    dS[_TH] = P[_W1] + P[_KPPLL] * vq + S[_XPLL]
    dS[_XPLL] = vq / P[_TIPLL]
    pw = vd * idd + vq * iqq
    qw = vd * iqq - vq * idd
    if P[_ISRE] > 0.5:
        err = (vdc - P[_VDCREF]) / P[_VDCB]
        id_ref = P[_KPVDC] * err + S[_XOD]
        dS[_XOD] = err / P[_TIVDC]
    else:
        err = P[_PREF] - pw
        id_ref = P[_KPPQ] * err + S[_XOD]
        dS[_XOD] = err / P[_TIPQ]
    errq = P[_QREF] - qw
    iq_ref = P[_KPPQ] * errq + S[_XOQ]
    dS[_XOQ] = errq / P[_TIPQ]
    ed = id_ref - idd
    eq = iq_ref - iqq
    ud = P[_KPI1] * ed + S[_XI1D] + P[_FF] * vd - P[_XDEC] * iqq
    uq = P[_KPI1] * eq + S[_XI1Q] + P[_FF] * vq + P[_XDEC] * idd
    dS[_XI1D] = ed / P[_TII1]
    dS[_XI1Q] = eq / P[_TII1]
    nd, nq = _park(i0, i1, i2, -th)
    und = -P[_KPI1] * nd + S[_XNSD]
    unq = -P[_KPI1] * nq + S[_XNSQ]
    dS[_XNSD] = -nd / P[_TII1]
    dS[_XNSQ] = -nq / P[_TII1]
    eac[0] = 0.0
    eac[1] = 0.0
    eac[2] = 0.0
    _ipark(ud, uq, th, eac, 1.0)
    _ipark(und, unq, -th, eac, 1.0)
    iu = S[_IU:_IU + 3]
    il = S[_IL:_IL + 3]
    cd, cq = _park(0.5 * (iu[0] + il[0]) / ibv, 0.5 * (iu[1] + il[1]) / ibv, 0.5 * (iu[2] + il[2]) / ibv, -2 * th)
    rd = 0.0
    rq = 0.0
    if P[_FCCC] > 0.5:
        vu = S[_VU:_VU + 3]
        vl = S[_VL:_VL + 3]
        vbd = P[_VDCB]
        vcd, vcq = _park(0.5 * (vu[0] + vl[0]) / vbd, 0.5 * (vu[1] + vl[1]) / vbd,
                         0.5 * (vu[2] + vl[2]) / vbd, -2 * th)
        od = -P[_KPOV] * vcd + S[_XOVD]
        oq = -P[_KPOV] * vcq + S[_XOVQ]
        dS[_XOVD] = -vcd / P[_TIOV]
        dS[_XOVQ] = -vcq / P[_TIOV]
        cr, sr = math.cos(P[_RHO]), math.sin(P[_RHO])
        rd = cr * od - sr * oq
        rq = sr * od + cr * oq
    else:
        dS[_XOVD] = 0.0
        dS[_XOVQ] = 0.0
    ucd = P[_KPI2] * (rd - cd) + S[_XCCD]
    ucq = P[_KPI2] * (rq - cq) + S[_XCCQ]
    dS[_XCCD] = (rd - cd) / P[_TII2]
    dS[_XCCQ] = (rq - cq) / P[_TII2]
    ecc[0] = 0.0
    ecc[1] = 0.0
    ecc[2] = 0.0
    _ipark(ucd, ucq, -2 * th, ecc, 1.0)


@njit(cache=True)
def _delayed(buf, k_now, tau_steps, out):
    """Linear interpolation of the ring buffer at step position k_now - tau_steps."""
    nb = buf.shape[0]
    pos = k_now - tau_steps
    k0 = math.floor(pos)
    fr = pos - k0
    a = buf[int(k0) % nb]
    b = buf[int(k0 + 1) % nb]
    for j in range(6):
        out[j] = (1 - fr) * a[j] + fr * b[j]


@njit(cache=True)
def _injection(t, inj, end, out_u, out_l):
    """Series perturbation per phase; the lower arm carries the half-period-shifted copy."""
    for p in range(3):
        out_u[p] = 0.0
        out_l[p] = 0.0
    for r in range(inj.shape[0]):
        if int(inj[r, 0]) != end:
            continue
        f, amp, ph, t_on, ramp, krow = inj[r, 1], inj[r, 2], inj[r, 3], inj[r, 4], inj[r, 5], inj[r, 6]
        if t < t_on:
            continue
        w = 1.0
        if ramp > 0 and t < t_on + ramp:
            x = (t - t_on) / ramp
            w = x * x * (3 - 2 * x)
        sgn = 1.0 if int(krow) % 2 == 0 else -1.0
        for p in range(3):
            # phase p is phase a delayed by p/3 of a fundamental period, seen from row krow
            x = w * amp * math.cos(2 * math.pi * f * t + ph - krow * p * TWO_PI_3)
            out_u[p] += x
            out_l[p] += sgn * x


@njit(cache=True)
def _arm_rates(t, S, P, Minv, mu, ml, inj, dS, vv_out, vdc_out):
    """Arm-current and capacitor derivatives for given insertion indices."""
    rhs = np.zeros(15)
    vp = np.zeros(3)
    vl = np.zeros(3)
    for e in range(2):
        Pe = P[e]
        Se = S[e]
        ka = Pe[_KA]
        _injection(t, inj, e, vp, vl)
        for p in range(3):
            ang = Pe[_W1] * t - p * TWO_PI_3
            vg = 2 * (Pe[_VGRE] * math.cos(ang) - Pe[_VGIM] * math.sin(ang))
            ig = (Se[_IU + p] - Se[_IL + p]) / ka
            src = (vg + Pe[_RG] * ig) / ka
            rhs[6 * e + p] = -Pe[_R] * Se[_IU + p] - src - mu[e, p] * Se[_VU + p] - vp[p]
            rhs[6 * e + 3 + p] = -Pe[_R] * Se[_IL + p] + src - ml[e, p] * Se[_VL + p] - vl[p]
    x = Minv @ rhs
    vdc_out[0] = x[12]
    for e in range(2):
        Pe = P[e]
        Se = S[e]
        ka = Pe[_KA]
        for p in range(3):
            dS[e, _IU + p] = x[6 * e + p]
            dS[e, _IL + p] = x[6 * e + 3 + p]
            dS[e, _VU + p] = mu[e, p] * Se[_IU + p] / Pe[_C]
            dS[e, _VL + p] = ml[e, p] * Se[_IL + p] / Pe[_C]
            ang = Pe[_W1] * t - p * TWO_PI_3
            vg = 2 * (Pe[_VGRE] * math.cos(ang) - Pe[_VGIM] * math.sin(ang))
            ig = (Se[_IU + p] - Se[_IL + p]) / ka
            dig = (x[6 * e + p] - x[6 * e + 3 + p]) / ka
            vv_out[e, p] = vg + Pe[_RG] * ig + Pe[_LG] * dig


@njit(cache=True)
def _mods(P, e, eac, ecc, mu, ml):
    g = P[e, _G]
    for p in range(3):
        mu[e, p] = 0.5 - g * (eac[p] + ecc[p])
        ml[e, p] = 0.5 + g * (eac[p] - ecc[p])


@njit(cache=True)
def _set_direct(t, S, P, direct, guess, mu, ml, eac, ecc, ig, dctl):
    idx = 0
    for e in range(2):
        if direct[e]:
            for p in range(3):
                ig[p] = (S[e, _IU + p] - S[e, _IL + p]) / P[e, _KA]
            _controller(P[e], S[e], guess[idx:idx + 3], ig, guess[-1], eac, ecc, dctl)
            _mods(P, e, eac, ecc, mu, ml)
            idx += 3


@njit(cache=True)
def _rates(t, S, P, Minv, bufs, k_pos, inj, dS, e_out, vv, vdc_arr):
    """Full derivative at time t (step position k_pos); e_out gets the controller outputs."""
    mu = np.zeros((2, 3))
    ml = np.zeros((2, 3))
    direct = np.zeros(2, np.bool_)
    tmp = np.zeros(6)
    nd = 0
    for e in range(2):
        if P[e, _TD] > 0:
            _delayed(bufs[e], k_pos, P[e, _TD], tmp)
            _mods(P, e, tmp[:3], tmp[3:], mu, ml)
        else:
            direct[e] = True
            nd += 1
    eac = np.zeros(3)
    ecc = np.zeros(3)
    ig = np.zeros(3)
    dctl = np.zeros(_NSTATE)
    if nd > 0:
        # undelayed ends close an affine loop m -> di/dt -> (v_v, v_dc) -> m; solve it exactly
        nu = 3 * nd + 1
        base = np.zeros(nu)
        idx = 0
        for e in range(2):
            if direct[e]:
                for p in range(3):
                    ang = P[e, _W1] * t - p * TWO_PI_3
                    base[idx] = 2 * (P[e, _VGRE] * math.cos(ang) - P[e, _VGIM] * math.sin(ang))
                    idx += 1
        base[-1] = vdc_arr[0]
        outs = np.zeros((nu + 1, nu))
        for trial in range(nu + 1):
            guess = base.copy()
            if trial > 0:
                guess[trial - 1] += 1e3
            _set_direct(t, S, P, direct, guess, mu, ml, eac, ecc, ig, dctl)
            _arm_rates(t, S, P, Minv, mu, ml, inj, dS, vv, vdc_arr)
            idx = 0
            for e in range(2):
                if direct[e]:
                    for p in range(3):
                        outs[trial, idx] = vv[e, p] - guess[idx]
                        idx += 1
            outs[trial, -1] = vdc_arr[0] - guess[-1]
        J = np.zeros((nu, nu))
        for c in range(nu):
            J[:, c] = (outs[c + 1] - outs[0]) / 1e3
        sol = base + np.linalg.solve(J, -outs[0])
        _set_direct(t, S, P, direct, sol, mu, ml, eac, ecc, ig, dctl)
    _arm_rates(t, S, P, Minv, mu, ml, inj, dS, vv, vdc_arr)
    for e in range(2):
        for p in range(3):
            ig[p] = (S[e, _IU + p] - S[e, _IL + p]) / P[e, _KA]
        _controller(P[e], S[e], vv[e], ig, vdc_arr[0], eac, ecc, dctl)
        for j in range(12, _NSTATE):
            dS[e, j] = dctl[j]
        for p in range(3):
            e_out[e, p] = eac[p]
            e_out[e, 3 + p] = ecc[p]


@njit(cache=True)
def _run(S, P, Minv, bufs, k0, nsteps, dt, inj, every, rec, cap):
    """Advance nsteps RK4 steps from step index k0; returns steps done."""
    d1 = np.zeros_like(S)
    d2 = np.zeros_like(S)
    d3 = np.zeros_like(S)
    d4 = np.zeros_like(S)
    eo = np.zeros((2, 6))
    vv = np.zeros((2, 3))
    vdc = np.zeros(1)
    vdc[0] = P[0, _VDCREF]
    nrec = 0
    for j in range(nsteps):
        k = k0 + j
        t = k * dt
        _rates(t, S, P, Minv, bufs, float(k), inj, d1, eo, vv, vdc)
        nb = bufs.shape[1]
        for e in range(2):
            for q in range(6):
                bufs[e, k % nb, q] = eo[e, q]
        if j % every == 0 and nrec < rec.shape[0]:
            r = rec[nrec]
            for e in range(2):
                pw = 0.0
                for p in range(3):
                    pw += vv[e, p] * (S[e, _IU + p] - S[e, _IL + p]) / P[e, _KA]
                r[e] = pw
            r[2] = vdc[0]
            r[3] = S[0, _IU]
            r[4] = S[1, _IU]
            r[5] = 0.5 * (S[0, _IU] + S[0, _IL])
            r[6] = 0.5 * (S[1, _IU] + S[1, _IL])
            r[7] = S[0, _VU]
            r[8] = S[1, _VU]
            r[9] = S[0, _TH]
            r[10] = S[1, _TH]
            nrec += 1
        _rates(t + 0.5 * dt, S + 0.5 * dt * d1, P, Minv, bufs, k + 0.5, inj, d2, eo, vv, vdc)
        _rates(t + 0.5 * dt, S + 0.5 * dt * d2, P, Minv, bufs, k + 0.5, inj, d3, eo, vv, vdc)
        _rates(t + dt, S + dt * d3, P, Minv, bufs, k + 1.0, inj, d4, eo, vv, vdc)
        S += (dt / 6.0) * (d1 + 2 * d2 + 2 * d3 + d4)
        bad = False
        for e in range(2):
            for q in range(12):
                x = S[e, q]
                if not np.isfinite(x) or abs(x) > cap[e, q]:
                    bad = True
        if bad:
            return j + 1, nrec
    return nsteps, nrec


# ---------------------------------------------------------------------------
# Python side


def _param_array(params: SystemParams, dt: float, frame=(0.0, 0.0)) -> np.ndarray:
    """``frame`` holds the per-end angle of the PCC voltage in the source frame at t = 0."""
    p = params
    ctl = p.controllers
    P = np.zeros((2, _NPAR))
    for e, end in enumerate(ENDS):
        mmc, g = p.mmc[end], p.grid[end]
        ss_vg = g.phasor * np.exp(-1j * frame[e])
        r = P[e]
        r[_L], r[_R], r[_C] = mmc.L, mmc.R, mmc.C
        r[_LG], r[_RG] = g.L_g, g.R_g
        r[_LT] = g.L_g + p.L_x
        r[_KA] = p.k_a
        r[_VGRE], r[_VGIM] = ss_vg.real, ss_vg.imag
        r[_G] = p.mod_gain
        r[_VBPK], r[_IBV], r[_VDCB] = p.V_bpk, p.I_bv, p.V_dcb
        r[_PREF] = p.P_ref("se") / p.S_b if end == "se" else 0.0
        r[_QREF] = p.Q_ref[end] / p.S_b
        r[_VDCREF] = p.v_dc_ref
        r[_XDEC] = p.X_dec_pu
        r[_FF] = 1.0 if p.feedforward else 0.0
        r[_RHO] = math.radians(p.fccc_rotation_deg)
        r[_ISRE] = 1.0 if end == "re" else 0.0
        r[_FCCC] = 1.0 if p.ccc_mode == "fccc" else 0.0
        td = p.T_d[end] / dt
        if 0 < td < 1:
            raise SimulationError("modulation delay shorter than one time step")
        r[_TD] = td
        for (kp, ti), pi in zip(((_KPPQ, _TIPQ), (_KPOV, _TIOV), (_KPVDC, _TIVDC), (_KPPLL, _TIPLL),
                                 (_KPI1, _TII1), (_KPI2, _TII2)),
                                (ctl.h_PQ, ctl.h_ov, ctl.h_vdc, ctl.h_PLL, ctl.h_i1, ctl.h_i2)):
            r[kp], r[ti] = pi.Kp, pi.Ti
        r[_W1] = p.w1
    return P


def _mass_inverse(params: SystemParams) -> np.ndarray:
    """Inverse of the constant matrix of the arm-current/neutral/DC solve."""
    M = np.zeros((15, 15))
    for e, end in enumerate(ENDS):
        L = params.mmc[end].L
        lt = (params.grid[end].L_g + params.L_x) / params.k_a ** 2
        for p in range(3):
            ru, rl = 6 * e + p, 6 * e + 3 + p
            cu, cl = 6 * e + p, 6 * e + 3 + p
            M[ru, cu] += L + lt
            M[ru, cl] -= lt
            M[rl, cl] += L + lt
            M[rl, cu] -= lt
            M[ru, 13 + e] = 1.0
            M[rl, 13 + e] = -1.0
            M[ru, 12] = M[rl, 12] = -0.5
            M[12, cu] = 1.0
            M[13 + e, cu] = 1.0
            M[13 + e, cl] = -1.0
    return np.linalg.inv(M)


def _steady_e(ss: SteadyState, params: SystemParams, end: str, t: np.ndarray) -> np.ndarray:
    """Controller outputs (e_ac, e_cc per phase) that reproduce the steady insertion indices."""
    es, g, T = ss[end], params.mod_gain, 1 / params.f1
    from .harmonics import steady_evaluate
    out = np.zeros((len(t), 6))
    for p in range(3):
        tp = t + params.T_d[end] - p * T / 3
        mu = steady_evaluate(es.m, tp, params.f1)
        ml = steady_evaluate(es.m, tp + T / 2, params.f1)
        out[:, p] = (ml - mu) / (2 * g)
        out[:, 3 + p] = (1 - mu - ml) / (2 * g)
    return out


def _initial_state(ss: SteadyState, params: SystemParams) -> np.ndarray:
    from .harmonics import steady_evaluate
    p, n = params, params.n
    T = 1 / p.f1
    S = np.zeros((2, _NSTATE))
    k = orders(n)
    for e, end in enumerate(ENDS):
        es = ss[end]
        for ph in range(3):
            t = -ph * T / 3
            S[e, _IU + ph] = steady_evaluate(es.i, t, p.f1)
            S[e, _IL + ph] = steady_evaluate(es.i, t + T / 2, p.f1)
            S[e, _VU + ph] = steady_evaluate(es.v, t, p.f1)
            S[e, _VL + ph] = steady_evaluate(es.v, t + T / 2, p.f1)
        (ud, uq), _, (ucd, ucq) = steady_controller_outputs(ss, p, end)
        park1, parkm1, parkm2 = _Park(n, 1), _Park(n, -1), _Park(n, -2)
        vd, vq = park1.steady(es.v_v.coeffs / p.V_bpk)
        id_, iq = park1.steady(es.i_g.coeffs / p.I_bpk)
        ff = 1.0 if p.feedforward else 0.0
        X = p.X_dec_pu
        S[e, _XOD], S[e, _XOQ] = id_[n].real, iq[n].real
        S[e, _XI1D] = ud[n].real - ff * vd[n].real + X * iq[n].real
        S[e, _XI1Q] = uq[n].real - ff * vq[n].real - X * id_[n].real
        nd, nq = parkm1.steady(es.i_g.coeffs / p.I_bpk)
        w = 1j * k * p.w1
        w[n] = 1.0
        ti = p.controllers.h_i1.Ti
        for idx, c in ((_XNSD, nd), (_XNSQ, nq)):
            x = -c / (ti * w)
            x[n] = 0
            S[e, idx] = float(np.sum(x).real)
        S[e, _XCCD], S[e, _XCCQ] = ucd[n].real, ucq[n].real
        if p.ccc_mode == "fccc":
            cd, cq = parkm2.steady((es.i.coeffs + es.i.coeffs * (-1.0) ** k) / 2 / p.I_bv)
            rho = math.radians(p.fccc_rotation_deg)
            S[e, _XOVD] = math.cos(rho) * cd[n].real + math.sin(rho) * cq[n].real
            S[e, _XOVQ] = -math.sin(rho) * cd[n].real + math.cos(rho) * cq[n].real
    return S


@dataclass
class _Sim:
    params: SystemParams
    dt: float
    S: np.ndarray
    bufs: np.ndarray
    frame: tuple
    k: int = 0


def _start(params: SystemParams, dt: float, ss: SteadyState | None = None) -> _Sim:
    ss = ss or solve_steady_state(params)
    tds = [params.T_d[end] / dt for end in ENDS]
    nb = int(max(tds)) + 4
    bufs = np.zeros((2, nb, 6))
    kk = np.arange(-(nb - 1), 1)
    for e, end in enumerate(ENDS):
        vals = _steady_e(ss, params, end, kk * dt)
        bufs[e, kk % nb] = vals
    frame = tuple(ss[end].pcc_angle for end in ENDS)
    return _Sim(params, dt, _initial_state(ss, params), bufs, frame)


def _caps(params: SystemParams) -> np.ndarray:
    cap = np.empty((2, 12))
    cap[:, :6] = 50 * params.I_bv
    cap[:, 6:] = 5 * params.V_dcb
    return cap


def _advance(sim: _Sim, duration: float, inj: np.ndarray, every: int) -> tuple[np.ndarray, float | None]:
    nsteps = int(round(duration / sim.dt))
    rec = np.zeros((nsteps // every + 1, _NPROBE))
    P = _param_array(sim.params, sim.dt, sim.frame)
    Minv = _mass_inverse(sim.params)
    done, nrec = _run(sim.S, P, Minv, sim.bufs, sim.k, nsteps, sim.dt, inj, every, rec, _caps(sim.params))
    sim.k += done
    diverged = sim.k * sim.dt if done < nsteps else None
    return rec[:nrec], diverged


def _injection_rows(injections, f1: float) -> np.ndarray:
    rows = []
    for inj in injections or ():
        end = inj.get("end", "re")
        rows.append([ENDS.index(end), inj["f"], inj["amp"], inj.get("phase", 0.0), inj.get("t_on", 0.0),
                     inj.get("ramp", 0.0), inj.get("row", 2)])
    return np.array(rows, float).reshape(-1, 7)


def simulate(params: SystemParams, events=(), duration: float = 1.0, probes=("v_dc",), dt: float = 1e-5,
             record_dt: float = 1e-4, injections=(), steady: SteadyState | None = None) -> dict[str, TimeSeries]:
    """Integrate from the steady operating point; ``events`` are (time, path, value) parameter steps.

    ``injections`` are dicts with keys end, f, amp, phase, t_on, ramp, row; ``row`` is the
    harmonic order whose phase sequence and upper/lower symmetry the perturbation follows.
    """
    for name in probes:
        if name not in PROBES:
            raise ValueError(f"unknown probe {name}")
    every = max(1, int(round(record_dt / dt)))
    sim = _start(params, dt, steady)
    inj = _injection_rows(injections, params.f1)
    segs = sorted(events, key=lambda ev: ev[0])
    chunks = []
    diverged = None
    t_now = 0.0
    for t_ev, path, value in list(segs) + [(duration, None, None)]:
        t_ev = min(t_ev, duration)
        if t_ev > t_now:
            # keep the recording grid aligned across segments
            span = round((t_ev - t_now) / (every * dt)) * every * dt
            rec, diverged = _advance(sim, span, inj, every)
            chunks.append(rec)
            t_now += span
            if diverged is not None:
                break
        if path is not None:
            sim.params = sim.params.with_overrides({path: value})
    rec = np.vstack(chunks) if chunks else np.zeros((0, _NPROBE))
    return {name: TimeSeries(every * dt, rec[:, PROBES.index(name)].copy(), name, 0.0, diverged)
            for name in probes}


SCAN_ROWS = {"inner-n": 2, "inner-p": -2, "ac-dm": 1, "dc-cm": 0}


def _bin(x: np.ndarray, t: np.ndarray, f: float) -> complex:
    w = get_window("hann", len(x))
    return complex(2 * np.sum(w * x * np.exp(-2j * math.pi * f * t)) / np.sum(w))


def frequency_scan(params: SystemParams, f_p, quantity: str = "inner-n", amplitude: float | None = None,
                   settle: float = 1.0, measure: float = 1.0, end: str = "re", dt: float = 1e-5,
                   record_dt: float = 1e-4) -> np.ndarray:
    """Measured loop impedance at perturbation frequencies ``f_p`` (Hz, same axis as the model sweep).

    Each point is one run with a single series tone in every arm of ``end``;
    the response in the upper phase-a arm current is read with a Hann-window
    single-bin DFT after subtracting an unperturbed baseline run.
    """
    if quantity not in SCAN_ROWS:
        raise ValueError(f"unknown quantity {quantity}")
    row = SCAN_ROWS[quantity]
    amp = 1e-3 * params.V_dcb if amplitude is None else amplitude
    if amp == 0:
        raise ValueError("zero injection amplitude")
    f_arr = np.atleast_1d(np.asarray(f_p, float))
    f_inj = f_arr + (row - 1) * params.f1
    half = params.f1 / 2
    for fi in f_inj:
        if abs(fi / half - round(fi / half)) < 1e-9:
            raise ValueError(f"injection frequency {fi} Hz coincides with a steady harmonic")
    ss = solve_steady_state(params)
    probe = f"i_u_a_{end}"
    total = settle + measure
    base = simulate(params, (), total, (probe,), dt, record_dt, steady=ss)[probe]
    if base.diverged_at is not None:
        raise SimulationError(f"unperturbed system diverged at {base.diverged_at:.4g} s")
    scale = {2: 1.0, -2: 1.0, 1: params.k_ac, 0: params.k_dc}[row]
    out = np.empty(len(f_arr), complex)
    for j, fi in enumerate(f_inj):
        tone = {"end": end, "f": fi, "amp": amp, "phase": 0.0, "t_on": 0.0, "ramp": min(0.2, settle / 2),
                "row": row}
        ts = simulate(params, (), total, (probe,), dt, record_dt, injections=(tone,), steady=ss)[probe]
        if ts.diverged_at is not None:
            raise SimulationError(f"perturbed run diverged at {ts.diverged_at:.4g} s")
        d = ts.values - base.values
        t = ts.t
        sel = t >= settle
        resp = _bin(d[sel], t[sel], fi)
        out[j] = scale * amp / resp
    return out if np.ndim(f_p) else out[0]


def envelope(series: TimeSeries, t0: float, t1: float, f1: float = 50.0) -> tuple[np.ndarray, np.ndarray]:
    """Peak-to-peak of the detrended signal over consecutive fundamental periods in [t0, t1]."""
    T = 1.0 / f1
    t, x = series.t, series.values
    env, tc = [], []
    a = t0
    while a + T <= t1 + 1e-9:
        sel = (t >= a - 1e-12) & (t < a + T - 1e-12)
        if sel.sum() >= 3:
            y = x[sel] - np.polyval(np.polyfit(t[sel] - a, x[sel], 1), t[sel] - a)
            env.append(np.ptp(y))
            tc.append(a + T / 2)
        a += T
    return np.asarray(tc), np.asarray(env)


def divergence_rate(series: TimeSeries, t0: float, T_i: float, f1: float = 50.0) -> float:
    """Growth rate (1/s) of the oscillation envelope over [t0, t0 + T_i].

    The envelope is sampled once per fundamental period; its log is fitted
    with a straight line, which is the two-point ratio ln(E1/E0)/T_i made
    insensitive to where the peaks fall inside each period.
    """
    if T_i <= 0 or t0 < series.t0 - 1e-12 or t0 + T_i > series.t[-1] + series.dt + 1e-9:
        raise ValueError("interval outside the series")
    tc, env = envelope(series, t0, t0 + T_i, f1)
    if len(env) < 2:
        raise ValueError("interval shorter than two fundamental periods")
    floor = 1e-12 * max(1.0, float(np.max(np.abs(series.values))))
    if np.all(env <= floor):
        return 0.0  # no oscillation at all
    if np.any(env <= 0):
        raise ValueError("non-positive envelope")
    return float(np.polyfit(tc, np.log(env), 1)[0])


@dataclass(frozen=True)
class Spectrum:
    f_hz: np.ndarray
    magnitude: np.ndarray

    @property
    def dominant(self) -> float:
        # a DC level leaks into bin 1 with equal Hann amplitude; near-ties go to the lower bin
        m = self.magnitude
        return float(self.f_hz[int(np.flatnonzero(m >= m.max() * (1 - 1e-6))[0])])

    def peaks(self, count: int = 2, min_sep_hz: float = 3.0) -> list[tuple[float, float]]:
        """Largest local maxima, at least ``min_sep_hz`` apart, strongest first."""
        m = self.magnitude
        idx = [i for i in range(len(m)) if (i == 0 or m[i] >= m[i - 1]) and (i == len(m) - 1 or m[i] >= m[i + 1])]
        idx.sort(key=lambda i: -m[i])
        out: list[tuple[float, float]] = []
        for i in idx:
            if all(abs(self.f_hz[i] - f) >= min_sep_hz for f, _ in out):
                out.append((float(self.f_hz[i]), float(m[i])))
            if len(out) == count:
                break
        return out


def short_time_fft(series: TimeSeries, window: float, t_end: float | None = None,
                   f_max: float | None = None) -> Spectrum:
    """Hann-windowed amplitude spectrum of the ``window`` seconds ending at ``t_end`` (default: the end)."""
    n = int(round(window / series.dt))
    if n < 2 or n > len(series.values):
        raise ValueError("window longer than the series")
    stop = len(series.values) if t_end is None else int(round((t_end - series.t0) / series.dt))
    x = series.values[max(0, stop - n):stop]
    w = get_window("hann", len(x))
    X = np.abs(np.fft.rfft(x * w)) * 2 / w.sum()
    X[0] /= 2
    f = np.fft.rfftfreq(len(x), series.dt)
    if f_max is not None:
        keep = f <= f_max
        f, X = f[keep], X[keep]
    return Spectrum(f, X)


def remove_periodic(series: TimeSeries, f1: float = 50.0) -> TimeSeries:
    """x(t) - x(t - 1/f1): cancels the steady periodic ripple, keeps growth rate and frequency of a mode."""
    lag = int(round(1.0 / (f1 * series.dt)))
    if abs(lag * series.dt * f1 - 1) > 1e-9:
        raise ValueError("record step must divide the fundamental period")
    x = series.values
    return TimeSeries(series.dt, x[lag:] - x[:-lag], series.label, series.t0 + lag * series.dt, series.diverged_at)
