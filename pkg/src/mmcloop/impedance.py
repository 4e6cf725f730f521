"""Closed-loop arm admittance matrix and the impedances read from it.

The arm of phase a (upper) is closed through its control sensitivities and
through the terminal networks: the grid impedance behind the transformer
on the AC rows and the DC-side impedance on the DC row. Grid and DC
impedances are black boxes: any callable ``Z(s)`` of complex rad/s, or an
:class:`ImpedanceTable` of measured values vs Hz.

Rows of the admittance matrix that carry zero-sequence differential-mode
current are blocked by the transformer delta and stay zero.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import SystemParams
from .harmonics import HarmonicOperator, orders, shifted_frequencies, toeplitz_matrix
from .linearization import control_sensitivities
from .steady_state import SteadyState

QUANTITIES = ("inner-p", "inner-n", "ac-dm", "dc-cm")


class SingularLoopError(ArithmeticError):
    def __init__(self, msg: str, cond: float = float("inf")):
        super().__init__(f"{msg} (condition estimate {cond:.3g})")
        self.cond = cond


class ImpedancePoleError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ImpedanceTable:
    """Tabulated impedance vs frequency in Hz, linearly interpolated."""

    f_hz: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f_hz, dtype=float)
        z = np.asarray(self.z, dtype=complex)
        if f.ndim != 1 or f.shape != z.shape or len(f) < 2:
            raise ValueError("table needs matching 1-D frequency and value arrays")
        if np.any(np.diff(f) <= 0):
            raise ValueError("table frequencies must be strictly increasing")
        object.__setattr__(self, "f_hz", f)
        object.__setattr__(self, "z", z)

    @classmethod
    def from_function(cls, fun: Callable[[complex], complex], f_hz) -> "ImpedanceTable":
        f = np.asarray(f_hz, dtype=float)
        return cls(f, np.array([fun(2j * math.pi * x) for x in f]))

    @classmethod
    def from_csv(cls, path) -> "ImpedanceTable":
        data = np.genfromtxt(path, delimiter=",", names=True)
        return cls(data["f_hz"], data["re_ohm"] + 1j * data["im_ohm"])

    def is_real_symmetric(self, tol: float = 1e-9) -> bool:
        """Z(-jw) == conj(Z(jw)) wherever both signs are tabulated."""
        pos = self.f_hz > 0
        for f, z in zip(self.f_hz[pos], self.z[pos]):
            j = np.searchsorted(self.f_hz, -f)
            if j < len(self.f_hz) and self.f_hz[j] == -f:
                if abs(self.z[j] - np.conj(z)) > tol * max(1.0, abs(z)):
                    return False
        return True

    def __call__(self, s) -> complex:
        f = np.imag(s) / (2 * math.pi)
        if np.any(f < self.f_hz[0] - 1e-9) or np.any(f > self.f_hz[-1] + 1e-9):
            raise ValueError(f"frequency {f} Hz outside table range")
        return np.interp(f, self.f_hz, self.z.real) + 1j * np.interp(f, self.f_hz, self.z.imag)


def _zero(s):
    return 0j * np.asarray(s)


PARTNER = "partner"


@dataclass(frozen=True)
class TerminalNetwork:
    """Grid-side and DC-side impedances per end.

    ``Z_dc[end]`` is the impedance the DC bus presents to that end. The
    string ``"partner"`` means: the other converter's closed-loop DC
    terminal impedance, computed with this module.
    """

    Z_g: dict = field(default_factory=dict)
    Z_dc: dict = field(default_factory=dict)

    @classmethod
    def from_params(cls, params: SystemParams) -> "TerminalNetwork":
        zg = {e: params.grid[e].impedance for e in ("re", "se")}
        return cls(zg, {"re": PARTNER, "se": PARTNER})

    @classmethod
    def blocked(cls) -> "TerminalNetwork":
        return cls({"re": _zero, "se": _zero}, {"re": _zero, "se": _zero})

    def replace(self, Z_g=None, Z_dc=None) -> "TerminalNetwork":
        zg = dict(self.Z_g)
        zd = dict(self.Z_dc)
        zg.update(Z_g or {})
        zd.update(Z_dc or {})
        return TerminalNetwork(zg, zd)


@dataclass(frozen=True)
class FrequencyResponse:
    f_hz: np.ndarray
    values: np.ndarray
    label: str = ""
    gaps: tuple = ()

    def __post_init__(self):
        f = np.asarray(self.f_hz, dtype=float)
        if len(f) > 1 and np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "f_hz", f)
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))

    def __len__(self):
        return len(self.f_hz)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["f_hz", "re_ohm", "im_ohm", "label"])
        for f, z in zip(self.f_hz, self.values):
            w.writerow([f"{f:.9g}", f"{z.real:.9g}", f"{z.imag:.9g}", self.label])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# closed-loop assembly


def _blocked_rows(n: int) -> np.ndarray:
    k = orders(n)
    return (k % 3 == 0) & (k % 2 != 0)


def _ac_rows(n: int) -> np.ndarray:
    k = orders(n)
    return (k % 3 != 0) & (k % 2 != 0)


def _open_dc(state: SteadyState, params: SystemParams, end: str, s: complex, zg, overrides=None):
    """Arm and capacitor equations with the DC voltage left as an input.

    Returns (F, g) with ``F [di; dv] + g dv_dc + [dv_ptb; 0] = 0``. Rows and
    columns of blocked current rows are already removed from F.
    """
    p, n = params, params.n
    N = 2 * n + 1
    sk = shifted_frequencies(s, n, p.w1)
    es = state[end]
    mmc = p.mmc[end]
    ac = _ac_rows(n)
    zg_k = np.where(ac, np.array([zg(x) for x in sk]), 0)
    Zv = np.diag(2 * zg_k / p.k_a)
    W = np.diag(np.where(ac, 2 * (zg_k + sk * p.L_x) / p.k_a ** 2, 0))
    cs = control_sensitivities(state, p, end, s, overrides)
    Bi = cs.B_i.entries + cs.B_v.entries @ Zv
    Bvc = cs.B_vcap.entries
    Bdc = cs.B_vdc.entries[:, n]
    M = toeplitz_matrix(es.m.coeffs)
    V = toeplitz_matrix(es.v.coeffs)
    Ib = toeplitz_matrix(es.i.coeffs)
    e0 = np.zeros(N, complex)
    e0[n] = 1.0
    F = np.block([
        [np.diag(mmc.L * sk + mmc.R) + W + V @ Bi, M + V @ Bvc],
        [-(M + Ib @ Bi), np.diag(mmc.C * sk) - Ib @ Bvc],
    ])
    g = np.concatenate([V @ Bdc - 0.5 * e0, -Ib @ Bdc])
    act = np.concatenate([~_blocked_rows(n), np.ones(N, bool)])
    return F[np.ix_(act, act)], g[act]


def _solve(F: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    cond = np.linalg.cond(F)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularLoopError("closed-loop matrix singular", cond)
    return np.linalg.solve(F, rhs)


def _expand_current(x: np.ndarray, n: int) -> np.ndarray:
    """Scatter the active current unknowns back onto all 2n+1 rows."""
    act = ~_blocked_rows(n)
    out = np.zeros((2 * n + 1,) + x.shape[1:], complex)
    out[act] = x[: act.sum()]
    return out


def dc_terminal_admittance(state, params, end, s, zg=None, overrides=None) -> complex:
    """DC current drawn by one end (3 x upper-arm DC-row current) per volt of DC bus."""
    zg = zg or params.grid[end].impedance
    F, g = _open_dc(state, params, end, complex(s), zg, overrides)
    x = _solve(F, -g)
    return 3 * _expand_current(x, params.n)[params.n]


def _other(end: str) -> str:
    return "se" if end == "re" else "re"


def _resolve(net: TerminalNetwork | None, params: SystemParams):
    return TerminalNetwork.from_params(params) if net is None else net


def _zdc_value(state, params, end, s, net, overrides):
    zd = net.Z_dc.get(end, PARTNER)
    if zd == PARTNER:
        other = _other(end)
        zg_o = net.Z_g.get(other, params.grid[other].impedance)
        y = dc_terminal_admittance(state, params, other, s, zg_o, overrides)
        if y == 0:
            raise ImpedancePoleError("partner DC admittance is zero")
        return 1.0 / y
    return complex(zd(s))


def inner_loop_admittance_matrix(state: SteadyState, params: SystemParams, end: str, s,
                                 net: TerminalNetwork | None = None,
                                 overrides: dict | None = None) -> HarmonicOperator:
    """Closed-loop arm admittance: di = Y dv_ptb for a voltage in series with the arm."""
    if state.ccc_mode != params.ccc_mode:
        raise ValueError("steady state was solved for a different CCC mode")
    s = complex(s)
    net = _resolve(net, params)
    zg = net.Z_g.get(end, params.grid[end].impedance)
    F, g = _open_dc(state, params, end, s, zg, overrides)
    zdc = _zdc_value(state, params, end, s, net, overrides)
    n = params.n
    act = ~_blocked_rows(n)
    na = int(act.sum())
    # dv_dc = -3 Zdc di_0, the DC row being column n minus the blocked rows below it
    F = F.copy()
    F[:, n - int((~act[:n]).sum())] += g * (-3.0 * zdc)
    rhs = np.zeros((F.shape[0], na), complex)
    rhs[:na, :na] = np.eye(na)
    X = -_solve(F, rhs)
    Y = np.zeros((2 * n + 1, 2 * n + 1), complex)
    Y[np.ix_(act, act)] = X[:na]
    return HarmonicOperator(n, Y)


def _recip(y: complex) -> complex:
    if y == 0:
        raise ImpedancePoleError("admittance element is zero")
    return 1.0 / y


def inner_loop_impedance(state, params, end, s, net=None, overrides=None) -> tuple[complex, complex]:
    """(Z_p, Z_n): circulating-circuit impedances at rows n-2 and n+2."""
    Y = inner_loop_admittance_matrix(state, params, end, s, net, overrides)
    n = params.n
    return _recip(Y.entries[n - 2, n - 2]), _recip(Y.entries[n + 2, n + 2])


def terminal_loop_impedances(state, params, end, s, net=None, overrides=None,
                             scaled: bool = True) -> tuple[complex, complex]:
    """(Z_ac_dm, Z_dc_cm) read at rows n+1 and n, times k_ac and k_dc."""
    Y = inner_loop_admittance_matrix(state, params, end, s, net, overrides)
    n = params.n
    kac, kdc = (params.k_ac, params.k_dc) if scaled else (1.0, 1.0)
    return kac * _recip(Y.entries[n + 1, n + 1]), kdc * _recip(Y.entries[n, n])


def evaluate(quantity: str, state, params, end, f_p: float, net=None, overrides=None) -> complex:
    """One quantity at probe frequency f_p (Hz); base s = j2pi(f_p - f1)."""
    s = 2j * math.pi * (f_p - params.f1)
    if quantity in ("inner-p", "inner-n"):
        zp, zn = inner_loop_impedance(state, params, end, s, net, overrides)
        return zp if quantity == "inner-p" else zn
    if quantity in ("ac-dm", "dc-cm"):
        zac, zdc = terminal_loop_impedances(state, params, end, s, net, overrides)
        return zac if quantity == "ac-dm" else zdc
    raise ValueError(f"unknown quantity {quantity}")


def frequency_grid(f_start: float, f_stop: float, step: float) -> np.ndarray:
    if not step > 0:
        raise ValueError("step must be positive")
    if not f_stop > f_start:
        raise ValueError("empty frequency range")
    count = int(math.floor((f_stop - f_start) / step + 1e-9)) + 1
    return f_start + step * np.arange(count)


def sweep(quantity: str, state, params, end: str, f_start: float, f_stop: float, step: float,
          net=None, overrides=None, label: str | None = None) -> FrequencyResponse:
    """Uniform sweep over f_p; points that raise are recorded as gaps."""
    if quantity not in QUANTITIES:
        raise ValueError(f"unknown quantity {quantity}")
    f = frequency_grid(f_start, f_stop, step)
    vals = np.empty(len(f), complex)
    gaps = []
    for j, fp in enumerate(f):
        try:
            vals[j] = evaluate(quantity, state, params, end, fp, net, overrides)
        except (ArithmeticError, np.linalg.LinAlgError):
            vals[j] = np.nan
            gaps.append(float(fp))
    return FrequencyResponse(f, vals, label or f"{quantity}-{end}", tuple(gaps))


def _closed_matrix(state, params, end, s, net, overrides):
    s = complex(s)
    net = _resolve(net, params)
    zg = net.Z_g.get(end, params.grid[end].impedance)
    F, g = _open_dc(state, params, end, s, zg, overrides)
    zdc = _zdc_value(state, params, end, s, net, overrides)
    n = params.n
    act = ~_blocked_rows(n)
    F = F.copy()
    F[:, n - int((~act[:n]).sum())] += g * (-3.0 * zdc)
    return F


def loop_determinant(state: SteadyState, params: SystemParams, end: str, s,
                     net: TerminalNetwork | None = None, overrides: dict | None = None) -> complex:
    """log det of the closed-loop arm/capacitor matrix; its zeros are closed-loop modes."""
    sign, logabs = np.linalg.slogdet(_closed_matrix(state, params, end, s, net, overrides))
    return complex(np.log(sign) + logabs)


def refine_mode(state, params, end, s0, net=None, overrides=None, tol=1e-9, max_iter=60, h=1e-4) -> complex:
    """Newton iteration on the loop determinant from s0; returns the closed-loop eigenvalue."""
    s = complex(s0)
    for _ in range(max_iter):
        F = _closed_matrix(state, params, end, s, net, overrides)
        dF = (_closed_matrix(state, params, end, s + h, net, overrides)
              - _closed_matrix(state, params, end, s - h, net, overrides)) / (2 * h)
        d = np.trace(np.linalg.solve(F, dF))
        if d == 0:
            break
        step = 1.0 / d
        # damp long jumps so the iteration stays near its start
        if abs(step) > 5.0:
            step *= 5.0 / abs(step)
        s -= step
        if abs(step) < tol * max(1.0, abs(s)):
            return s
    raise ArithmeticError("mode refinement did not converge")
