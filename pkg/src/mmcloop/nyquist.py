"""Terminal source/load loop gains and their eigenloci.

Three terminal loops are formed per operating point:

* ``ac-dm-re`` / ``ac-dm-se``: the grid impedance of one end against the
  converter's differential-mode admittance seen from an arm with that grid
  shorted (both referred to the arm port).
* ``dc-cm``: the SE converter's DC terminal impedance against the RE one.
  The shared DC bus closes exactly through these two scalars, so this loop
  is exact.

Gains follow the minor-loop convention ``z_source / z_load``; stability of
the terminal loop is read from encirclements of -1.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .config import SystemParams
from .impedance import (
    FrequencyResponse,
    SingularLoopError,
    TerminalNetwork,
    _zero,
    dc_terminal_admittance,
    frequency_grid,
    inner_loop_admittance_matrix,
)
from .steady_state import SteadyState

LOOPS = ("ac-dm-re", "ac-dm-se", "dc-cm")
F_RANGE = (-2900.0, 3000.0)


@dataclass(frozen=True)
class Locus:
    f_hz: np.ndarray
    points: np.ndarray
    encirclements: int
    label: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["f_hz", "re", "im"])
        for f, z in zip(self.f_hz, self.points):
            w.writerow([f"{f:.9g}", f"{z.real:.9g}", f"{z.imag:.9g}"])
        return buf.getvalue()


def open_loop_gain(z_source: FrequencyResponse, z_load: FrequencyResponse) -> FrequencyResponse:
    """Pointwise z_source / z_load; a zero load value becomes a gap."""
    if len(z_source) != len(z_load) or not np.allclose(z_source.f_hz, z_load.f_hz, rtol=0, atol=1e-9):
        raise ValueError("source and load must share one frequency grid")
    zl = z_load.values
    out = np.full(len(zl), np.nan + 0j)
    ok = (zl != 0) & np.isfinite(zl) & np.isfinite(z_source.values)
    out[ok] = z_source.values[ok] / zl[ok]
    gaps = tuple(float(f) for f in z_source.f_hz[~ok])
    return FrequencyResponse(z_source.f_hz, out, f"{z_source.label}/{z_load.label}", gaps)


def winding_number(points: np.ndarray, center: complex = -1 + 0j) -> int:
    """Net counter-clockwise turns of the path around ``center``."""
    z = np.asarray(points)
    z = z[np.isfinite(z)] - center
    if len(z) < 2:
        return 0
    dphi = np.angle(z[1:] / z[:-1])
    return int(round(dphi.sum() / (2 * math.pi)))


def eigenloci(gain: FrequencyResponse) -> Locus:
    """Locus of the gain over the sweep with its encirclement count of -1+0j.

    Gaps are dropped; the sweep is treated as closed through the far end of
    the frequency range.
    """
    z = gain.values
    ok = np.isfinite(z)
    pts = z[ok]
    closed = np.concatenate([pts, pts[:1]]) if len(pts) else pts
    return Locus(gain.f_hz[ok], pts, winding_number(closed), gain.label)


def terminal_partition(state: SteadyState, params: SystemParams, loop: str, f_p: float):
    """(z_source, z_load) of one terminal loop at perturbation frequency ``f_p``."""
    s = 2j * math.pi * (f_p - params.f1)
    if loop == "dc-cm":
        y_re = dc_terminal_admittance(state, params, "re", s)
        y_se = dc_terminal_admittance(state, params, "se", s)
        return 1.0 / y_se, 1.0 / y_re
    if loop not in LOOPS:
        raise ValueError(f"unknown loop {loop}")
    end = loop.rsplit("-", 1)[1]
    n = params.n
    net = TerminalNetwork.from_params(params).replace(Z_g={end: _zero})
    y = inner_loop_admittance_matrix(state, params, end, s, net).entries[n + 1, n + 1]
    z_src = 2 * params.grid[end].impedance(s + 1j * params.w1) / params.k_a ** 2
    return z_src, -1.0 / y


def terminal_gain(state: SteadyState, params: SystemParams, loop: str, f_start: float = F_RANGE[0],
                  f_stop: float = F_RANGE[1], step: float = 1.0, offset: float = 0.03) -> FrequencyResponse:
    """Open-loop gain of a terminal loop on a uniform grid.

    ``offset`` keeps the grid off the integrator poles at multiples of f1.
    """
    f = frequency_grid(f_start + offset, f_stop + offset, step)
    src = np.full(len(f), np.nan + 0j)
    load = np.full(len(f), np.nan + 0j)
    for j, x in enumerate(f):
        try:
            src[j], load[j] = terminal_partition(state, params, loop, x)
        except (SingularLoopError, ArithmeticError, np.linalg.LinAlgError):
            continue
    return open_loop_gain(FrequencyResponse(f, src, "source"), FrequencyResponse(f, load, "load"))


def terminal_loci(state: SteadyState, params: SystemParams, step: float = 1.0,
                  f_range: tuple[float, float] = F_RANGE) -> dict[str, Locus]:
    out = {}
    for loop in LOOPS:
        g = terminal_gain(state, params, loop, f_range[0], f_range[1], step)
        out[loop] = Locus(**{**eigenloci(g).__dict__, "label": loop})
    return out
