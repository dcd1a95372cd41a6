"""Discrete LTI plant model, multi-rate downsampling, and polyhedral constraint sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Raised when an operand's shape does not match the model dimensions."""

    def __init__(self, operand, expected, got):
        self.operand = operand
        self.expected = expected
        self.got = got
        super().__init__(f"{operand}: expected shape {expected}, got {got}")


def _as_matrix(name, value):
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(name, "2-d array", arr.shape)
    return arr


def _as_vector(name, value, length=None):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise DimensionError(name, "1-d array", arr.shape)
    if length is not None and arr.shape[0] != length:
        raise DimensionError(name, (length,), arr.shape)
    return arr


@dataclass(frozen=True)
class LtiModel:
    """Discrete-time plant x+ = A x + B1 u + B2 u_hat with a fast/slow state split.

    ``slow_mask[i]`` is True for states with slow dynamics; constraint
    tightening acts on those states only.  ``sample_period`` is the step
    length in seconds.  Instances are immutable and safe to share.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    sample_period: float = 1.0
    slow_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        A = _as_matrix("A", self.A)
        B1 = _as_matrix("B1", self.B1)
        B2 = _as_matrix("B2", self.B2)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError("A", f"({n}, {n})", A.shape)
        if B1.shape[0] != n:
            raise DimensionError("B1", f"({n}, m)", B1.shape)
        if B2.shape[0] != n:
            raise DimensionError("B2", f"({n}, h)", B2.shape)
        if self.sample_period <= 0:
            raise ValueError(f"sample_period must be positive, got {self.sample_period}")
        mask = self.slow_mask
        if mask is None:
            mask = np.zeros(n, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n,):
            raise DimensionError("slow_mask", (n,), mask.shape)
        for name, arr in (("A", A), ("B1", B1), ("B2", B2), ("slow_mask", mask)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B1.shape[1]

    @property
    def n_demands(self):
        return self.B2.shape[1]

    def step(self, x, u, u_hat):
        """Advance one sample: A x + B1 u + B2 u_hat."""
        x = _as_vector("x", x, self.n_states)
        u = _as_vector("u", u, self.n_inputs)
        u_hat = _as_vector("u_hat", u_hat, self.n_demands)
        return self.A @ x + self.B1 @ u + self.B2 @ u_hat

    def downsample(self, nu):
        """Model sampled every ``nu`` fine steps.

        A -> A^nu and each input matrix B -> sum_{j<nu} A^j B, so one coarse
        step reproduces nu fine steps under inputs held constant per block.
        """
        if nu < 1:
            raise ValueError(f"nu must be a positive integer, got {nu}")
        nu = int(nu)
        n = self.n_states
        A_pow = np.eye(n)
        B1_sum = np.zeros_like(self.B1)
        B2_sum = np.zeros_like(self.B2)
        for _ in range(nu):
            B1_sum += A_pow @ self.B1
            B2_sum += A_pow @ self.B2
            A_pow = self.A @ A_pow
        return LtiModel(A_pow, B1_sum, B2_sum, self.sample_period * nu, self.slow_mask)


@dataclass(frozen=True)
class PolyhedralSet:
    """Halfspace set {x | P x <= q}."""

    P: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        P = _as_matrix("P", self.P)
        q = _as_vector("q", self.q)
        if P.shape[0] != q.shape[0]:
            raise DimensionError("q", (P.shape[0],), q.shape)
        P.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)

    @classmethod
    def box(cls, lower, upper):
        """Axis-aligned box, one +1/-1 row per finite bound.

        Infinite entries produce no row, so partially bounded boxes work.
        """
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if lower.shape != upper.shape:
            raise DimensionError("upper", lower.shape, upper.shape)
        dim = lower.shape[0]
        rows = []
        bounds = []
        for i in range(dim):
            if np.isfinite(upper[i]):
                row = np.zeros(dim)
                row[i] = 1.0
                rows.append(row)
                bounds.append(upper[i])
        for i in range(dim):
            if np.isfinite(lower[i]):
                row = np.zeros(dim)
                row[i] = -1.0
                rows.append(row)
                bounds.append(-lower[i])
        if rows:
            return cls(np.array(rows), np.array(bounds))
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def n_rows(self):
        return self.P.shape[0]

    @property
    def dim(self):
        return self.P.shape[1]

    def contains(self, x):
        """Membership test; returns (inside, worst violation magnitude).

        The violation is max(0, max_i(P_i x - q_i)) and is 0 exactly when
        the point is inside (boundary included).
        """
        x = _as_vector("x", x, self.dim)
        if self.n_rows == 0:
            return True, 0.0
        slack = self.P @ x - self.q
        violation = float(max(0.0, slack.max()))
        return violation == 0.0, violation

    def tightened(self, qbar):
        """Set with bounds shrunk to q - qbar; qbar must be nonnegative."""
        qbar = _as_vector("qbar", qbar, self.n_rows)
        if (qbar < 0).any():
            raise ValueError("qbar must be nonnegative")
        return PolyhedralSet(self.P, self.q - qbar)

    def row_state_index(self, row):
        """State index a box row constrains, or None for non-elementary rows."""
        nz = np.flatnonzero(self.P[row])
        if nz.size == 1 and abs(self.P[row, nz[0]]) == 1.0:
            return int(nz[0])
        return None
