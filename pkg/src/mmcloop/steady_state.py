"""Periodic steady state of both MMC ends by harmonic balance.

The unknowns are the k >= 0 Fourier coefficients of the upper-arm insertion
index (orders 1, 2), arm current and aggregate capacitor voltage, plus the
floating zero-sequence valve voltage rows. Negative orders follow from
conjugate symmetry. Every residual is at most quadratic in the unknowns,
which the Jacobian exploits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ENDS, SystemParams
from .harmonics import HarmonicVector, orders, toeplitz_matrix


class SteadyStateError(RuntimeError):
    def __init__(self, msg, residual=float("nan")):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class EndState:
    """Steady harmonics of the upper arm of phase a (SI units).

    Phases are referred to the PCC voltage: ``v_v<1>`` is real positive.
    """

    m: HarmonicVector
    i: HarmonicVector
    v: HarmonicVector
    v_w: HarmonicVector
    v_v: HarmonicVector
    i_g: HarmonicVector
    v_dc: HarmonicVector
    v_g: complex
    pcc_angle: float  # angle of v_v<1> in the source frame, rad

    def table_row(self) -> dict[str, complex]:
        """Table-style values: m in pu, i in kA, v in kV."""
        out = {}
        for k in (1, 2):
            out[f"m<{k}>"] = self.m[k]
        for k in (0, 1, 2):
            out[f"i<{k}>"] = self.i[k] / 1e3
        for k in (0, 1, 2, 3):
            out[f"v<{k}>"] = self.v[k] / 1e3
        return out


@dataclass(frozen=True)
class SteadyState:
    ends: dict[str, EndState]
    ccc_mode: str
    residual: float
    iterations: int
    n: int = field(default=4)

    def __getitem__(self, end: str) -> EndState:
        return self.ends[end]


def _ac_rows(n):
    return [k for k in range(1, n + 1) if k % 2 == 1 and k % 3 != 0]


def _zsdm_rows(n):
    return [k for k in range(1, n + 1) if k % 2 == 1 and k % 3 == 0]


def _dc_rows(n):
    return [k for k in range(6, n + 1, 6)]


class _Layout:
    """Maps the real unknown vector onto per-end coefficient arrays."""

    def __init__(self, params: SystemParams):
        self.p = params
        n = params.n
        self.n = n
        self.zsdm = _zsdm_rows(n)
        self.dc = _dc_rows(n)
        per_end = 4 + (1 + 2 * n) * 2 + 2 * len(self.zsdm)
        self.per_end = per_end
        self.size = 2 * per_end + 2 * len(self.dc)

    def unpack(self, x):
        p, n = self.p, self.n
        out = {}
        for e, end in enumerate(ENDS):
            y = x[e * self.per_end : (e + 1) * self.per_end]
            m = np.zeros(n + 1, complex)
            m[0] = 0.5
            m[1] = y[0] + 1j * y[1]
            m[2] = y[2] + 1j * y[3]
            j = 4
            i = np.zeros(n + 1, complex)
            i[0] = y[j]
            i[1:] = y[j + 1 : j + 1 + 2 * n : 2] + 1j * y[j + 2 : j + 2 + 2 * n : 2]
            j += 1 + 2 * n
            v = np.zeros(n + 1, complex)
            v[0] = y[j]
            v[1:] = y[j + 1 : j + 1 + 2 * n : 2] + 1j * y[j + 2 : j + 2 + 2 * n : 2]
            j += 1 + 2 * n
            vw_free = {}
            for k in self.zsdm:
                vw_free[k] = (y[j] + 1j * y[j + 1]) * p.V_dcb
                j += 2
            out[end] = (m, i * p.I_bv, v * p.V_dcb, vw_free)
        vdc = np.zeros(n + 1, complex)
        vdc[0] = p.v_dc_ref
        base = 2 * self.per_end
        for q, k in enumerate(self.dc):
            vdc[k] = (x[base + 2 * q] + 1j * x[base + 2 * q + 1]) * p.V_dcb
        return out, vdc

    def pack(self, ends, vdc):
        p, n = self.p, self.n
        x = np.zeros(self.size)
        for e, end in enumerate(ENDS):
            m, i, v, vw_free = ends[end]
            y = []
            y += [m[1].real, m[1].imag, m[2].real, m[2].imag]
            ii = i / p.I_bv
            y.append(ii[0].real)
            for k in range(1, n + 1):
                y += [ii[k].real, ii[k].imag]
            vv = v / p.V_dcb
            y.append(vv[0].real)
            for k in range(1, n + 1):
                y += [vv[k].real, vv[k].imag]
            for k in self.zsdm:
                c = vw_free.get(k, 0j) / p.V_dcb
                y += [c.real, c.imag]
            x[e * self.per_end : (e + 1) * self.per_end] = y
        base = 2 * self.per_end
        for q, k in enumerate(self.dc):
            c = vdc[k] / p.V_dcb
            x[base + 2 * q] = c.real
            x[base + 2 * q + 1] = c.imag
        return x


def _full(pos):
    """Positive-order array (k=0..n) to full conjugate-symmetric array."""
    return HarmonicVector.from_positive(pos).coeffs


def _terminal(params: SystemParams, end: str, i_pos):
    """Grid-side current, PCC voltage and valve voltage on the AC rows."""
    p, n = params, params.n
    g = p.grid[end]
    ig = np.zeros(n + 1, complex)
    vv = np.zeros(n + 1, complex)
    vw = np.zeros(n + 1, complex)
    for k in _ac_rows(n):
        sk = 1j * k * p.w1
        ig[k] = 2 * i_pos[k] / p.k_a
        vg = g.phasor if k == 1 else 0j
        vv[k] = vg + g.impedance(sk) * ig[k]
        vw[k] = (vv[k] + sk * p.L_x * ig[k]) / p.k_a
    return ig, vv, vw


def _end_residual(params, end, m, i, v, vw_free, vdc, mode):
    p, n = params, params.n
    mmc = p.mmc[end]
    k = np.arange(n + 1)
    ig, vv, vw = _terminal(p, end, i)
    for kk, val in vw_free.items():
        vw[kk] = val
    mf, vf, iff = _full(m), _full(v), _full(i)
    Mv = (toeplitz_matrix(mf) @ vf)[n:]
    Mi = (toeplitz_matrix(mf) @ iff)[n:]
    z = mmc.L * 1j * k * p.w1 + mmc.R
    e1 = (z * i - 0.5 * vdc + vw + Mv) / p.V_dcb
    e2 = (1j * k * p.w1 * mmc.C * v - Mi) / p.I_bv
    res = [e1[0].real]
    for kk in range(1, n + 1):
        res += [e1[kk].real, e1[kk].imag]
    res.append(e2[0].real)
    for kk in range(1, n + 1):
        res += [e2[kk].real, e2[kk].imag]
    for kk in _zsdm_rows(n):
        c = i[kk] / p.I_bv
        res += [c.real, c.imag]
    P = 6 * sum((vv[kk] * np.conj(ig[kk])).real for kk in _ac_rows(n))
    Q = 6 * (np.conj(vv[1]) * ig[1]).imag
    if mode == "ccsc":
        c = i[2] / p.I_bv
    else:
        c = v[2] / p.V_dcb
    tail = {"P": P / p.S_b, "Q": (Q - p.Q_ref[end]) / p.S_b, "mode": [c.real, c.imag]}
    return res, tail


def residuals(x, params: SystemParams, mode: str | None = None):
    """Scaled real residual vector (per unit) of the joint two-end balance."""
    mode = mode or params.ccc_mode
    lay = _Layout(params)
    x = np.asarray(x, dtype=float)
    if x.shape != (lay.size,):
        raise ValueError(f"dimension mismatch: expected {lay.size} unknowns, got {x.shape}")
    ends, vdc = lay.unpack(x)
    out = []
    for end in ENDS:
        m, i, v, vw_free = ends[end]
        res, tail = _end_residual(params, end, m, i, v, vw_free, vdc, mode)
        out += res
        if end == "se":
            out.append(tail["P"] - params.P_ref("se") / params.S_b)
        else:
            # the receiving end holds the DC voltage; its power follows from the DC bus
            i_se = ends["se"][1]
            out.append(3 * (i[0] + i_se[0]).real / params.I_bv)
        out.append(tail["Q"])
        out += tail["mode"]
    for k in lay.dc:
        c = 3 * (ends["re"][1][k] + ends["se"][1][k]) / params.I_bv
        out += [c.real, c.imag]
    return np.array(out)


def jacobian(x, params: SystemParams, mode: str | None = None):
    """Exact Jacobian of :func:`residuals`.

    The residual map is a polynomial of degree two, for which the symmetric
    difference with any step is exact; unit steps keep rounding small.
    """
    x = np.asarray(x, dtype=float)
    J = np.empty((len(x), len(x)))
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = 1.0
        J[:, j] = 0.5 * (residuals(x + e, params, mode) - residuals(x - e, params, mode))
    return J


def initial_guess(params: SystemParams):
    """No-ripple guess from a phasor power flow; returns the unknown vector."""
    p, n = params, params.n
    lay = _Layout(p)
    ends = {}
    p_se = p.P_ref("se")
    for end in ENDS:
        P = p_se if end == "se" else -p_se
        Q = p.Q_ref[end]
        mmc = p.mmc[end]
        v1 = p.grid[end].phasor
        i = np.zeros(n + 1, complex)
        i[0] = P / (3 * p.V_dcb)
        ig1 = (P + 1j * Q) / (6 * np.conj(v1))
        i[1] = p.k_a * ig1 / 2
        _, _, vw = _terminal(p, end, i)
        v = np.zeros(n + 1, complex)
        v[0] = p.V_dcb
        m = np.zeros(n + 1, complex)
        m[0] = 0.5
        z1 = mmc.L * 1j * p.w1 + mmc.R
        m[1] = -(z1 * i[1] + vw[1]) / v[0]
        v[1] = (m[0] * i[1] + m[1] * i[0]) / (1j * p.w1 * mmc.C)
        ends[end] = (m, i, v, {})
    vdc = np.zeros(n + 1, complex)
    vdc[0] = p.v_dc_ref
    return lay.pack(ends, vdc)


def _rotate(c: np.ndarray, n: int, phi: float) -> np.ndarray:
    return c * np.exp(-1j * orders(n) * phi)


def _build(params, x, mode, resid, iters) -> SteadyState:
    p, n = params, params.n
    lay = _Layout(p)
    ends, vdc = lay.unpack(x)
    out = {}
    for end in ENDS:
        m, i, v, vw_free = ends[end]
        # the mode constraint holds to solver tolerance; store it exactly
        if mode == "ccsc":
            i[2] = 0
        else:
            v[2] = 0
        ig, vv, vw = _terminal(p, end, i)
        for k, val in vw_free.items():
            vw[k] = val
        phi = float(np.angle(vv[1]))
        vecs = {}
        for name, arr, unit in (("m", m, ""), ("i", i, "A"), ("v", v, "V"), ("v_w", vw, "V"),
                                ("v_v", vv, "V"), ("i_g", ig, "A"), ("v_dc", vdc, "V")):
            full = HarmonicVector.from_positive(arr).coeffs
            vecs[name] = HarmonicVector(n, _rotate(full, n, phi), unit)
        out[end] = EndState(**vecs, v_g=p.grid[end].phasor * np.exp(-1j * phi), pcc_angle=phi)
    return SteadyState(out, mode, resid, iters, n)


def solve_steady_state(params: SystemParams, initial=None, mode: str | None = None,
                       tol: float = 1e-10, max_iter: int = 50) -> SteadyState:
    """Damped Newton-Raphson on the joint harmonic balance of both ends."""
    mode = mode or params.ccc_mode
    x = initial_guess(params) if initial is None else np.asarray(initial, dtype=float)
    r = residuals(x, params, mode)
    norm = float(np.max(np.abs(r)))
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise SteadyStateError(f"no convergence after {max_iter} iterations", norm)
        J = jacobian(x, params, mode)
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise SteadyStateError("singular Jacobian", norm) from exc
        step = 1.0
        while True:
            x_new = x + step * dx
            r_new = residuals(x_new, params, mode)
            n_new = float(np.max(np.abs(r_new)))
            if n_new < norm or step < 1e-4:
                break
            step *= 0.5
        x, r, norm = x_new, r_new, n_new
        it += 1
    ss = _build(params, x, mode, norm, it)
    object.__setattr__(ss, "_x", x)
    return ss


def unknowns_of(ss: SteadyState) -> np.ndarray:
    """The solver unknown vector a SteadyState was built from."""
    return ss._x  # type: ignore[attr-defined]


def reconstruct(ss: SteadyState, params: SystemParams, end: str, t):
    """Time-domain samples of the steady upper-arm phase-a signals."""
    from .harmonics import steady_evaluate

    e = ss[end]
    # the stored vectors are in the PCC frame; shift back to absolute time
    shift = e.pcc_angle / params.w1
    tt = np.asarray(t) + shift
    return {name: steady_evaluate(getattr(e, name), tt, params.f1) for name in ("m", "i", "v", "v_w")}


def rms_of(hv: HarmonicVector, skip_dc: bool = False) -> float:
    c = hv.coeffs.copy()
    if skip_dc:
        c[hv.n] = 0
    return float(math.sqrt(np.sum(np.abs(c) ** 2)))
