"""System parameters of the two-terminal MMC back-to-back system.

All quantities are SI. Per-unit conversion is done only where controllers
and power constraints need it, using the base values held here.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

ENDS = ("re", "se")
CCC_MODES = ("ccsc", "fccc")

# Controller evaluations landing exactly on an integrator pole are displaced
# by this many rad/s.
POLE_OFFSET = 1e-9


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PiParams:
    """PI controller ``Kp + 1/(Ti*s)``."""

    Kp: float
    Ti: float

    def __post_init__(self):
        if not self.Ti > 0:
            raise ConfigError("invariant violation: Ti")

    def __call__(self, s):
        return evaluate_pi(self, s)


def evaluate_pi(p: PiParams, s):
    s = np.asarray(s, dtype=complex)
    if np.any(s == 0):
        raise ConfigError("integrator pole at DC")
    out = p.Kp + 1.0 / (p.Ti * s)
    return out if out.ndim else complex(out)


def evaluate_pi_offset(p: PiParams, s):
    """Like :func:`evaluate_pi` but nudges s = 0 off the pole."""
    s = np.asarray(s, dtype=complex)
    s = np.where(s == 0, 1j * POLE_OFFSET, s)
    return evaluate_pi(p, s)


def delay_tf(T_d: float, s):
    """Exact transport delay ``exp(-s*T_d)``."""
    if T_d < 0:
        raise ConfigError("invariant violation: T_d")
    out = np.exp(-np.asarray(s, dtype=complex) * T_d)
    return out if out.ndim else complex(out)


@dataclass(frozen=True)
class GridParams:
    v_mag: float  # line-to-line RMS, V
    v_ang_deg: float
    L_g: float
    R_g: float

    @property
    def phasor(self) -> complex:
        """Fourier coefficient <1> of the phase-a source voltage."""
        peak = self.v_mag * math.sqrt(2.0 / 3.0)
        return 0.5 * peak * np.exp(1j * math.radians(self.v_ang_deg))

    def impedance(self, s):
        return self.R_g + np.asarray(s, dtype=complex) * self.L_g


@dataclass(frozen=True)
class MMCParams:
    L: float
    R: float
    C_sm: float
    N: int

    @property
    def C(self) -> float:
        return self.C_sm / self.N


@dataclass(frozen=True)
class Controllers:
    h_PQ: PiParams
    h_ov: PiParams
    h_vdc: PiParams
    h_PLL: PiParams
    h_i1: PiParams
    h_i2: PiParams


@dataclass(frozen=True)
class SystemParams:
    S_b: float
    V_acb: float
    V_dcb: float
    f1: float
    grid: dict[str, GridParams]
    mmc: dict[str, MMCParams]
    a: float
    X_T: float
    P_s_ref: float
    Q_ref: dict[str, float]
    v_dc_ref: float
    controllers: Controllers
    T_d: dict[str, float]
    ccc_mode: str = "ccsc"
    n: int = 4
    k_m: float = 1.0
    k_a_override: float | None = None
    # rotation (deg) applied by the FCCC outer loop from v_c,dq error to i_c,dq reference
    fccc_rotation_deg: float = -90.0
    feedforward: bool = True
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for end, m in self.mmc.items():
            if not m.L > 0:
                raise ConfigError("invariant violation: L")
            if not m.C_sm > 0:
                raise ConfigError("invariant violation: C_sm")
            if not m.N >= 1:
                raise ConfigError("invariant violation: N")
        if not self.f1 > 0:
            raise ConfigError("invariant violation: f1")
        if not self.n >= 2:
            raise ConfigError("invariant violation: n")
        if self.ccc_mode not in CCC_MODES:
            raise ConfigError("invariant violation: ccc_mode")
        for end, td in self.T_d.items():
            if td < 0:
                raise ConfigError("invariant violation: T_d")

    # derived bases -----------------------------------------------------
    @property
    def w1(self) -> float:
        return 2 * math.pi * self.f1

    @property
    def k_a(self) -> float:
        return self.a if self.k_a_override is None else self.k_a_override

    @property
    def k_dc(self) -> float:
        return self.a / 2

    @property
    def k_ac(self) -> float:
        return 1.0 / 3.0

    @property
    def V_bpk(self) -> float:
        """Grid-side peak phase voltage base."""
        return self.V_acb * math.sqrt(2.0 / 3.0)

    @property
    def I_bpk(self) -> float:
        return 2 * self.S_b / (3 * self.V_bpk)

    @property
    def V_bv(self) -> float:
        """Valve-side peak phase voltage base."""
        return self.V_bpk / self.k_a

    @property
    def I_bv(self) -> float:
        return 2 * self.S_b / (3 * self.V_bv)

    @property
    def L_x(self) -> float:
        """Transformer leakage inductance referred to the grid side."""
        z_b = self.V_acb ** 2 / self.S_b
        return self.X_T * z_b / self.w1

    @property
    def mod_gain(self) -> float:
        """Insertion-index change per per-unit valve voltage demand."""
        return self.k_m * self.V_bv / self.V_dcb

    @property
    def X_dec_pu(self) -> float:
        """Per-unit reactance used by the dq decoupling terms."""
        z_bv = self.V_bv / self.I_bv
        return self.X_T + self.w1 * self.mmc["re"].L / 2 / z_bv

    def P_ref(self, end: str) -> float:
        """Active power reference, positive from converter into the grid."""
        return -self.P_s_ref if end == "se" else float("nan")

    def with_overrides(self, overrides: dict[str, Any]) -> "SystemParams":
        d = to_dict(self)
        for path, value in overrides.items():
            set_path(d, path, value)
        return from_dict(d)


def set_path(d: dict, path: str, value):
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        if k not in cur or not isinstance(cur[k], dict):
            raise ConfigError(f"unknown parameter path: {path}")
        cur = cur[k]
    if keys[-1] not in cur:
        raise ConfigError(f"unknown parameter path: {path}")
    cur[keys[-1]] = value


def get_path(d: dict, path: str):
    cur = d
    for k in path.split("."):
        if not isinstance(cur, dict) or k not in cur:
            raise ConfigError(f"unknown parameter path: {path}")
        cur = cur[k]
    return cur


DEFAULTS: dict[str, Any] = {
    "base": {"S_b": 1380e6, "V_acb": 525e3, "V_dcb": 840e3, "f_1": 50.0},
    "grid_re": {"v_g_kv": 542.3, "angle_deg": 82.0, "L_g": 0.100, "R_g": 0.0},
    "grid_se": {"v_g_kv": 620.2, "angle_deg": 90.0, "L_g": 0.0, "R_g": 40.0},
    "mmc_re": {"L": 0.140, "R": 1.0, "C_sm": 11000e-6, "N": 500},
    "mmc_se": {"L": 0.140, "R": 1.0, "C_sm": 11000e-6, "N": 500},
    "transformer": {"a": 1.2007, "X_T": 0.14},
    "references": {"P_s": 1250e6, "Q_re": 200e6, "Q_se": 0.0, "v_dc": 840e3},
    "controllers": {
        "h_PQ": {"Kp": 1.0, "Ti": 0.01},
        "h_ov": {"Kp": 1.3, "Ti": 0.01},
        "h_vdc": {"Kp": 10.0, "Ti": 0.05},
        "h_PLL": {"Kp": 100.0, "Ti": 0.05},
        "h_i1": {"Kp": 0.35, "Ti": 0.1},
        "h_i2": {"Kp": 0.8, "Ti": 0.01},
    },
    "delays": {"T_d_re": 460e-6, "T_d_se": 0.0},
    "ccc_mode": "ccsc",
    "truncation_n": 4,
    "model": {
        "k_m": 1.0,
        "k_a": None,
        "fccc_rotation_deg": -90.0,
        "feedforward": True,
    },
}


def _merge(base: dict, upd: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def from_dict(raw: dict) -> SystemParams:
    d = _merge(DEFAULTS, raw)
    try:
        ctrl = {k: PiParams(float(v["Kp"]), float(v["Ti"])) for k, v in d["controllers"].items()}
        grid = {
            end: GridParams(
                float(d[f"grid_{end}"]["v_g_kv"]) * 1e3,
                float(d[f"grid_{end}"]["angle_deg"]),
                float(d[f"grid_{end}"]["L_g"]),
                float(d[f"grid_{end}"]["R_g"]),
            )
            for end in ENDS
        }
        mmc = {
            end: MMCParams(
                float(d[f"mmc_{end}"]["L"]),
                float(d[f"mmc_{end}"]["R"]),
                float(d[f"mmc_{end}"]["C_sm"]),
                int(d[f"mmc_{end}"]["N"]),
            )
            for end in ENDS
        }
        model = d["model"]
        return SystemParams(
            S_b=float(d["base"]["S_b"]),
            V_acb=float(d["base"]["V_acb"]),
            V_dcb=float(d["base"]["V_dcb"]),
            f1=float(d["base"]["f_1"]),
            grid=grid,
            mmc=mmc,
            a=float(d["transformer"]["a"]),
            X_T=float(d["transformer"]["X_T"]),
            P_s_ref=float(d["references"]["P_s"]),
            Q_ref={"re": float(d["references"]["Q_re"]), "se": float(d["references"]["Q_se"])},
            v_dc_ref=float(d["references"]["v_dc"]),
            controllers=Controllers(**ctrl),
            T_d={"re": float(d["delays"]["T_d_re"]), "se": float(d["delays"]["T_d_se"])},
            ccc_mode=str(d["ccc_mode"]).lower(),
            n=int(d["truncation_n"]),
            k_m=float(model["k_m"]),
            k_a_override=None if model["k_a"] is None else float(model["k_a"]),
            fccc_rotation_deg=float(model["fccc_rotation_deg"]),
            feedforward=bool(model["feedforward"]),
            extra={k: v for k, v in raw.items() if k not in DEFAULTS},
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc


def to_dict(p: SystemParams) -> dict:
    c = p.controllers
    d = {
        "base": {"S_b": p.S_b, "V_acb": p.V_acb, "V_dcb": p.V_dcb, "f_1": p.f1},
        "transformer": {"a": p.a, "X_T": p.X_T},
        "references": {"P_s": p.P_s_ref, "Q_re": p.Q_ref["re"], "Q_se": p.Q_ref["se"], "v_dc": p.v_dc_ref},
        "controllers": {f.name: {"Kp": getattr(c, f.name).Kp, "Ti": getattr(c, f.name).Ti} for f in fields(c)},
        "delays": {"T_d_re": p.T_d["re"], "T_d_se": p.T_d["se"]},
        "ccc_mode": p.ccc_mode,
        "truncation_n": p.n,
        "model": {
            "k_m": p.k_m,
            "k_a": p.k_a_override,
            "fccc_rotation_deg": p.fccc_rotation_deg,
            "feedforward": p.feedforward,
        },
    }
    for end in ENDS:
        g = p.grid[end]
        d[f"grid_{end}"] = {"v_g_kv": g.v_mag / 1e3, "angle_deg": g.v_ang_deg, "L_g": g.L_g, "R_g": g.R_g}
        m = p.mmc[end]
        d[f"mmc_{end}"] = {"L": m.L, "R": m.R, "C_sm": m.C_sm, "N": m.N}
    d.update(copy.deepcopy(p.extra))
    return d


def load_config(path) -> SystemParams:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse failure: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("parse failure: top level must be an object")
    return from_dict(raw)


def default_params(**kw) -> SystemParams:
    p = from_dict({})
    return replace(p, **kw) if kw else p


def parse_override(text: str) -> tuple[str, Any]:
    """Parse ``path=value`` into a (path, value) pair; value is JSON if it parses."""
    if "=" not in text:
        raise ConfigError(f"override must look like path=value: {text}")
    path, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path.strip(), value


def apply_overrides(p: SystemParams, items) -> SystemParams:
    d = to_dict(p)
    for item in items:
        path, value = parse_override(item) if isinstance(item, str) else item
        set_path(d, path, value)
    return from_dict(d)
