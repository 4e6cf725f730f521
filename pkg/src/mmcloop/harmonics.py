"""Truncated Fourier-coefficient vectors and harmonic operators.

Row convention used everywhere: harmonic order k in -n..n lives at row
``k + n``. The DC row is therefore ``n``.

Within the single-arm model every row also carries a fixed physical
circuit: phase b is phase a delayed by T/3 and the lower arm is the upper
arm delayed by T/2, so row k has sequence index ``k mod 3`` and is
differential-mode for odd k, common-mode for even k.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.linalg

KINDS = ("toeplitz", "diagonal", "general")


def orders(n: int) -> np.ndarray:
    return np.arange(-n, n + 1)


@dataclass(frozen=True)
class HarmonicVector:
    n: int
    coeffs: np.ndarray
    unit: str = ""
    real_signal: bool = True

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (2 * self.n + 1,):
            raise ValueError(f"expected {2 * self.n + 1} coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_positive(cls, pos, n: int | None = None, unit: str = "") -> "HarmonicVector":
        """Build a real-signal vector from coefficients at k = 0..n."""
        pos = np.asarray(pos, dtype=complex)
        n = len(pos) - 1 if n is None else n
        full = np.zeros(2 * n + 1, dtype=complex)
        m = min(len(pos), n + 1)
        full[n : n + m] = pos[:m]
        full[n] = full[n].real
        full[n - m + 1 : n][::-1] = np.conj(pos[1:m])
        return cls(n, full, unit)

    def __getitem__(self, k: int) -> complex:
        if abs(k) > self.n:
            return 0j
        return self.coeffs[k + self.n]

    @property
    def positive(self) -> np.ndarray:
        return self.coeffs[self.n :]

    def is_conjugate_symmetric(self, tol: float = 1e-12) -> bool:
        c = self.coeffs
        scale = max(1.0, float(np.max(np.abs(c))))
        return bool(np.max(np.abs(c - np.conj(c[::-1]))) <= tol * scale)

    def rms(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "re", "im"])
        for k, c in zip(orders(self.n), self.coeffs):
            w.writerow([int(k), f"{c.real:.9g}", f"{c.imag:.9g}"])
        return buf.getvalue()


@dataclass(frozen=True)
class HarmonicOperator:
    n: int
    entries: np.ndarray
    kind: str = "general"

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=complex)
        if e.shape != (2 * self.n + 1, 2 * self.n + 1):
            raise ValueError("operator shape does not match truncation order")
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind}")
        object.__setattr__(self, "entries", e)

    def __matmul__(self, other):
        if isinstance(other, HarmonicVector):
            return HarmonicVector(self.n, self.entries @ other.coeffs, other.unit, other.real_signal)
        if isinstance(other, HarmonicOperator):
            return HarmonicOperator(self.n, self.entries @ other.entries)
        return self.entries @ other

    def element(self, k: int, l: int) -> complex:
        return self.entries[k + self.n, l + self.n]


def toeplitz_matrix(coeffs: np.ndarray) -> np.ndarray:
    """entries[r, c] = coeffs[r - c] (orders beyond n are zero)."""
    c = np.asarray(coeffs, dtype=complex)
    n = (len(c) - 1) // 2
    col = np.concatenate([c[n:], np.zeros(n, complex)])
    row = np.concatenate([c[n::-1], np.zeros(n, complex)])
    return scipy.linalg.toeplitz(col, row)


def toeplitz(h: HarmonicVector) -> HarmonicOperator:
    return HarmonicOperator(h.n, toeplitz_matrix(h.coeffs), "toeplitz")


def shifted_frequencies(s: complex, n: int, w1: float) -> np.ndarray:
    return s + 1j * orders(n) * w1


class LRResonanceError(ArithmeticError):
    pass


def diagonal_admittance(kind: str, params, s: complex, end: str = "re") -> HarmonicOperator:
    m = params.mmc[end]
    sk = shifted_frequencies(s, params.n, params.w1)
    if kind == "LR":
        den = m.L * sk + m.R
        if np.any(den == 0):
            raise LRResonanceError("LR resonance at shifted frequency")
        diag = 1.0 / den
    elif kind == "C":
        diag = m.C * sk
    else:
        raise ValueError(f"unknown admittance kind {kind}")
    return HarmonicOperator(params.n, np.diag(diag), "diagonal")


def steady_evaluate(h: HarmonicVector, t, f1: float):
    t = np.asarray(t, dtype=float)
    k = orders(h.n)
    phase = np.exp(1j * 2 * np.pi * f1 * np.multiply.outer(t, k))
    val = phase @ h.coeffs
    return val.real if val.ndim else float(val.real)


# ---------------------------------------------------------------------------
# exact products of coefficient arrays


def convolve(a: np.ndarray, b: np.ndarray, n: int | None = None) -> np.ndarray:
    """Coefficients of the time-domain product a(t)b(t), truncated to order n.

    Unlike ``toeplitz(a) @ b`` this keeps every cross term whose order lands
    inside -n..n, including terms built from partners outside the range of a
    or b. Both inputs must have odd length.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    na, nb = (len(a) - 1) // 2, (len(b) - 1) // 2
    full = np.convolve(a, b)
    nf = na + nb
    n = nf if n is None else n
    out = np.zeros(2 * n + 1, dtype=complex)
    lo = max(-n, -nf)
    hi = min(n, nf)
    out[lo + n : hi + n + 1] = full[lo + nf : hi + nf + 1]
    return out


def pad(c: np.ndarray, n: int) -> np.ndarray:
    c = np.asarray(c, dtype=complex)
    m = (len(c) - 1) // 2
    if m == n:
        return c.copy()
    if m > n:
        return c[m - n : m + n + 1].copy()
    out = np.zeros(2 * n + 1, dtype=complex)
    out[n - m : n + m + 1] = c
    return out


def shift_matrix(n: int, d: int) -> np.ndarray:
    """Multiplication by exp(j*d*w1*t): row k takes the entry of row k - d."""
    return np.eye(2 * n + 1, k=-d, dtype=complex)


def phase_rotation(n: int, p: int) -> np.ndarray:
    """Phase p (0, 1, 2 for a, b, c) obtained from phase a: delay by p*T/3."""
    k = orders(n)
    return np.diag(np.exp(-1j * k * p * 2 * np.pi / 3))


def lower_arm(n: int) -> np.ndarray:
    """Lower arm obtained from the upper arm: delay by T/2."""
    return np.diag((-1.0) ** orders(n)).astype(complex)


def dm_projector(n: int) -> np.ndarray:
    """Upper minus lower arm."""
    return np.eye(2 * n + 1) - lower_arm(n)


def cm_projector(n: int) -> np.ndarray:
    """Half the sum of upper and lower arm."""
    return 0.5 * (np.eye(2 * n + 1) + lower_arm(n))


def row_kind(k: int) -> str:
    """Physical circuit carried by harmonic row k."""
    seq = {0: "ZS", 1: "PS", 2: "NS"}[k % 3]
    mode = "CM" if k % 2 == 0 else "DM"
    return f"{seq}-{mode}"
