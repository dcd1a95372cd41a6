"""Condense finite-horizon tracking MPC into a dense QP over inputs and slacks.

The decision vector stacks the input sequence u(0..H-1) followed by one
nonnegative slack per softened state-constraint row per step.  Predicted
states are eliminated through the dynamics, state constraints are imposed at
steps 1..H, input constraints at steps 0..H-1, and softened rows become
P x <= q + s with a quadratic penalty on s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DimensionError, LtiModel, PolyhedralSet, _as_vector
from .qp import QpProblem, QpSolution


@dataclass(frozen=True)
class QuadraticTrackingCost:
    """Stage cost ||E x + F u - ref||^2 weighted by a PSD matrix.

    ``reference`` holds one desired-output row per stage, terminal stage
    included.  The terminal stage drops the input term (u treated as zero);
    ``terminal_weights``, when given, replaces ``weights`` there.
    """

    E: np.ndarray
    F: np.ndarray
    weights: np.ndarray
    reference: np.ndarray
    terminal_weights: np.ndarray | None = None

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.E, dtype=float))
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        n_r = E.shape[0]
        if F.shape[0] != n_r:
            raise DimensionError("F", f"({n_r}, m)", F.shape)
        W = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if W.shape != (n_r, n_r):
            raise DimensionError("weights", (n_r, n_r), W.shape)
        if np.abs(W - W.T).max() > 1e-12 * max(1.0, np.abs(W).max()):
            raise ValueError("weights matrix must be symmetric")
        ref = np.atleast_2d(np.asarray(self.reference, dtype=float))
        if ref.shape[1] != n_r:
            raise DimensionError("reference", f"(steps, {n_r})", ref.shape)
        WT = self.terminal_weights
        if WT is not None:
            WT = np.atleast_2d(np.asarray(WT, dtype=float))
            if WT.shape != (n_r, n_r):
                raise DimensionError("terminal_weights", (n_r, n_r), WT.shape)
            WT.setflags(write=False)
        for arr in (E, F, W, ref):
            arr.setflags(write=False)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "terminal_weights", WT)

    @property
    def n_outputs(self):
        return self.E.shape[0]

    def stage_weights(self, j, last):
        if last and self.terminal_weights is not None:
            return self.terminal_weights
        return self.weights


def tracking_cost(cost: QuadraticTrackingCost, states, inputs) -> float:
    """Sum of stage costs over the given trajectory.

    ``states`` has one entry per stage; ``inputs`` may be one shorter, in
    which case the final stage uses a zero input.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    inputs = np.asarray(inputs, dtype=float)
    if inputs.size == 0:
        inputs = np.zeros((0, cost.F.shape[1]))
    inputs = np.atleast_2d(inputs)
    n_stages = states.shape[0]
    if inputs.shape[0] not in (n_stages, n_stages - 1):
        raise ValueError(
            f"got {inputs.shape[0]} inputs for {n_stages} states; expected "
            f"{n_stages - 1} or {n_stages}"
        )
    if cost.reference.shape[0] < n_stages:
        raise ValueError(
            f"reference has {cost.reference.shape[0]} rows, need {n_stages}"
        )
    total = 0.0
    for j in range(n_stages):
        u = inputs[j] if j < inputs.shape[0] else np.zeros(cost.F.shape[1])
        y = cost.E @ states[j] + cost.F @ u - cost.reference[j]
        W = cost.stage_weights(j, last=(j == n_stages - 1))
        total += float(y @ (W @ y))
    return total


@dataclass(frozen=True)
class MpcSpec:
    """Everything needed to pose one finite-horizon MPC solve."""

    model: LtiModel
    horizon: int
    cost: QuadraticTrackingCost
    state_set: PolyhedralSet
    input_set: PolyhedralSet
    soft_rows: tuple[int, ...] = ()
    slack_weight: float = 0.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.state_set.dim != self.model.n_states:
            raise DimensionError(
                "state_set", f"dim {self.model.n_states}", f"dim {self.state_set.dim}"
            )
        if self.input_set.dim != self.model.n_inputs:
            raise DimensionError(
                "input_set", f"dim {self.model.n_inputs}", f"dim {self.input_set.dim}"
            )
        soft = tuple(int(r) for r in self.soft_rows)
        if any(r < 0 or r >= self.state_set.n_rows for r in soft):
            raise ValueError(f"soft_rows {soft} outside state set rows")
        if soft and self.slack_weight <= 0:
            raise ValueError("slack_weight must be positive when rows are softened")
        object.__setattr__(self, "soft_rows", soft)


def evaluate_cost(spec: MpcSpec, states, inputs) -> float:
    """Tracking cost of a full-horizon trajectory (terminal input zero)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] != spec.horizon + 1:
        raise ValueError(
            f"expected {spec.horizon + 1} states for horizon {spec.horizon}, "
            f"got {states.shape[0]}"
        )
    return tracking_cost(spec.cost, states, inputs)


@dataclass(frozen=True)
class MpcPlan:
    """Decoded solution: input sequence, predicted states, per-step slacks."""

    inputs: np.ndarray  # (H, m)
    states: np.ndarray  # (H+1, n)
    slacks: np.ndarray  # (H, n_soft)

    @property
    def first_input(self):
        return self.inputs[0]


class CondensedMap:
    """Affine relation between the QP decision vector and the trajectory."""

    def __init__(self, spec, input_map, state_offset, objective_constant):
        self.spec = spec
        self._input_map = input_map  # ((H+1)*n, H*m)
        self._state_offset = state_offset  # ((H+1)*n,)
        self.objective_constant = objective_constant
        self.n_soft = len(spec.soft_rows)
        self.n_decisions = (
            spec.horizon * spec.model.n_inputs + spec.horizon * self.n_soft
        )

    def decode(self, solution) -> MpcPlan:
        z = solution.z if isinstance(solution, QpSolution) else np.asarray(solution)
        if z.shape != (self.n_decisions,):
            raise DimensionError("z", (self.n_decisions,), z.shape)
        H = self.spec.horizon
        m = self.spec.model.n_inputs
        n = self.spec.model.n_states
        u_flat = z[: H * m]
        slacks = z[H * m :].reshape(H, self.n_soft)
        states = (self._state_offset + self._input_map @ u_flat).reshape(H + 1, n)
        return MpcPlan(inputs=u_flat.reshape(H, m), states=states, slacks=slacks)


def condense(spec: MpcSpec, x0, demand_preview) -> tuple[QpProblem, CondensedMap]:
    """Build the dense QP for one solve from state x0 under the given preview."""
    model = spec.model
    H = spec.horizon
    n, m = model.n_states, model.n_inputs
    x0 = _as_vector("x0", x0, n)
    preview = np.asarray(demand_preview, dtype=float)
    if preview.ndim == 1 and model.n_demands == 1:
        preview = preview[:, None]
    preview = np.atleast_2d(preview)
    if preview.shape != (H, model.n_demands):
        raise ValueError(
            f"demand preview: expected shape ({H}, {model.n_demands}), "
            f"got {preview.shape}"
        )
    cost = spec.cost
    if cost.reference.shape[0] != H + 1:
        raise ValueError(
            f"cost reference needs {H + 1} rows for horizon {H}, "
            f"got {cost.reference.shape[0]}"
        )
    if cost.E.shape[1] != n or cost.F.shape[1] != m:
        raise DimensionError("cost", f"E (*, {n}), F (*, {m})",
                             (cost.E.shape, cost.F.shape))

    # State prediction: stacked x(0..H) = offset + input_map @ stacked u.
    A_pows = [np.eye(n)]
    for _ in range(H):
        A_pows.append(model.A @ A_pows[-1])
    offset = np.zeros((H + 1) * n)
    input_map = np.zeros(((H + 1) * n, H * m))
    offset[:n] = x0
    for j in range(1, H + 1):
        acc = A_pows[j] @ x0
        for i in range(j):
            acc = acc + A_pows[j - 1 - i] @ (model.B2 @ preview[i])
            input_map[j * n : (j + 1) * n, i * m : (i + 1) * m] = (
                A_pows[j - 1 - i] @ model.B1
            )
        offset[j * n : (j + 1) * n] = acc

    n_soft = len(spec.soft_rows)
    d = H * m + H * n_soft
    n_r = cost.n_outputs

    # Stacked output error: y(0..H) = M z + c, with the terminal input dropped.
    M = np.zeros(((H + 1) * n_r, d))
    c = np.zeros((H + 1) * n_r)
    W_big = np.zeros(((H + 1) * n_r, (H + 1) * n_r))
    for j in range(H + 1):
        rows = slice(j * n_r, (j + 1) * n_r)
        M[rows, : H * m] = cost.E @ input_map[j * n : (j + 1) * n]
        if j < H:
            M[rows, j * m : (j + 1) * m] += cost.F
        c[rows] = cost.E @ offset[j * n : (j + 1) * n] - cost.reference[j]
        W_big[rows, rows] = cost.stage_weights(j, last=(j == H))
    WM = W_big @ M
    H_qp = 2.0 * (M.T @ WM)
    f_qp = 2.0 * (WM.T @ c)
    constant = float(c @ (W_big @ c))
    for idx in range(H * m, d):
        H_qp[idx, idx] += 2.0 * spec.slack_weight

    # Inequalities: inputs at 0..H-1, states at 1..H, slack nonnegativity.
    Pu, qu = spec.input_set.P, spec.input_set.q
    Px, qx = spec.state_set.P, spec.state_set.q
    n_qu, n_qx = Pu.shape[0], Px.shape[0]
    n_rows = H * n_qu + H * n_qx + H * n_soft
    G = np.zeros((n_rows, d))
    g = np.zeros(n_rows)
    row = 0
    for j in range(H):
        if n_qu:
            G[row : row + n_qu, j * m : (j + 1) * m] = Pu
            g[row : row + n_qu] = qu
        row += n_qu
    for j in range(1, H + 1):
        if n_qx:
            G[row : row + n_qx, : H * m] = Px @ input_map[j * n : (j + 1) * n]
            g[row : row + n_qx] = qx - Px @ offset[j * n : (j + 1) * n]
            for s_idx, r in enumerate(spec.soft_rows):
                G[row + r, H * m + (j - 1) * n_soft + s_idx] = -1.0
        row += n_qx
    if n_soft:
        for j in range(H):
            for s_idx in range(n_soft):
                G[row, H * m + j * n_soft + s_idx] = -1.0
                row += 1

    problem = QpProblem(H=H_qp, f=f_qp, G=G, g=g)
    return problem, CondensedMap(spec, input_map, offset, constant)
