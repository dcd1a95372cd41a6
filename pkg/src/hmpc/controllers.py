"""Single-layer and two-layer receding-horizon controllers.

The hierarchical controller runs a slow scheduling MPC on the downsampled
model every ``nu`` fine steps and a fast piloting MPC every step.  The
scheduling layer plans with a long-range approximate demand forecast; its
slow-state trajectory is handed to the piloting layer as a piecewise
constant reference.  The piloting layer tracks that reference using an
accurate short-range preview.  Predicted (robust) or measured (passive)
constraint violations of the slow states shrink the scheduling layer's
state set.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import LtiModel, PolyhedralSet, _as_vector
from .mpc import CondensedMap, MpcPlan, MpcSpec, QuadraticTrackingCost, condense
from .preview import DemandScenario
from .qp import OPTIMAL, QpSettings, QpSolution, QpSolver

VARIANTS = ("smpc", "hmpc", "hmpc-passive", "hmpc-robust")

SOURCE_NONE = "none"
SOURCE_ROBUST = "robust"
SOURCE_PASSIVE = "passive"


class SolveFailedError(RuntimeError):
    """A layer's QP did not reach optimality."""

    def __init__(self, stage, solution):
        self.stage = stage
        self.solution = solution
        super().__init__(
            f"{stage} solve failed: status={solution.status} "
            f"residuals=({solution.primal_residual:.2e}, {solution.dual_residual:.2e}) "
            f"{solution.message}".strip()
        )


@dataclass(frozen=True)
class SlowStatePlan:
    """Scheduled slow-state trajectory at coarse steps, issued at a fine step."""

    values: np.ndarray  # (n_plan, n_slow)
    nu: int
    origin_step: int

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[0] == 0 or values.shape[1] == 0:
            raise ValueError("plan must contain at least one slow-state vector")
        if self.nu < 1:
            raise ValueError(f"nu must be >= 1, got {self.nu}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def extract_slow_plan(coarse_states, slow_mask, nu, origin_step) -> SlowStatePlan:
    """Slow components of each scheduled coarse state, in schedule order."""
    states = np.atleast_2d(np.asarray(coarse_states, dtype=float))
    mask = np.asarray(slow_mask, dtype=bool)
    return SlowStatePlan(values=states[:, mask], nu=nu, origin_step=origin_step)


def expand_plan(plan: SlowStatePlan, k, length) -> np.ndarray:
    """Piecewise-constant expansion of the plan onto fine steps [k, k+length).

    Each coarse value repeats ``nu`` times starting at the plan's origin;
    past the end of the plan the final value holds.
    """
    if k < plan.origin_step:
        raise ValueError(f"step {k} precedes plan origin {plan.origin_step}")
    if length < 0:
        raise ValueError("length must be >= 0")
    idx = (int(k) - plan.origin_step + np.arange(length)) // plan.nu
    idx = np.minimum(idx, plan.values.shape[0] - 1)
    return plan.values[idx].copy()


@dataclass(frozen=True)
class TighteningState:
    """Per-row shrink amounts for the scheduling layer's state set."""

    qbar: np.ndarray
    source: str = SOURCE_NONE

    def __post_init__(self):
        qbar = np.asarray(self.qbar, dtype=float).ravel()
        if (qbar < 0).any():
            raise ValueError("tightening amounts must be nonnegative")
        qbar.setflags(write=False)
        object.__setattr__(self, "qbar", qbar)

    @classmethod
    def none(cls, n_rows):
        return cls(qbar=np.zeros(n_rows), source=SOURCE_NONE)


def slow_constraint_rows(state_set: PolyhedralSet, slow_mask) -> np.ndarray:
    """Rows whose nonzero entries touch slow states only.

    Rows mixing fast and slow states are treated as fast (never tightened),
    which keeps the tightened set a superset of the exact intersection.
    """
    mask = np.asarray(slow_mask, dtype=bool)
    nonzero = state_set.P != 0.0
    touches_any = nonzero.any(axis=1)
    touches_fast = (nonzero & ~mask[None, :]).any(axis=1)
    return touches_any & ~touches_fast


def _row_violations(state_set, x, rows):
    viol = np.zeros(state_set.n_rows)
    if state_set.n_rows:
        excess = state_set.P @ x - state_set.q
        viol[rows] = np.maximum(0.0, excess[rows])
    return viol


def predict_violation(
    model: LtiModel,
    x0,
    planned_inputs,
    demand_preview,
    state_set: PolyhedralSet,
    slow_mask=None,
) -> TighteningState:
    """Tightening from the predicted state path under the planned inputs.

    Propagates the plant model over the piloting horizon and records, per
    slow constraint row, the worst predicted bound excess.  Taking the
    per-row maximum over the horizon realizes the intersection of the
    per-step tightened sets for parallel halfspaces.
    """
    mask = model.slow_mask if slow_mask is None else np.asarray(slow_mask, dtype=bool)
    inputs = np.atleast_2d(np.asarray(planned_inputs, dtype=float))
    preview = np.asarray(demand_preview, dtype=float)
    if preview.ndim == 1 and model.n_demands == 1:
        preview = preview[:, None]
    preview = np.atleast_2d(preview)
    if inputs.shape[0] != preview.shape[0]:
        raise ValueError(
            f"planned inputs ({inputs.shape[0]}) and preview ({preview.shape[0]}) "
            "must cover the same horizon"
        )
    rows = slow_constraint_rows(state_set, mask)
    qbar = np.zeros(state_set.n_rows)
    x = _as_vector("x0", x0, model.n_states)
    for j in range(inputs.shape[0]):
        x = model.step(x, inputs[j], preview[j])
        qbar = np.maximum(qbar, _row_violations(state_set, x, rows))
    return TighteningState(qbar=qbar, source=SOURCE_ROBUST)


def passive_tightening(x_measured, state_set: PolyhedralSet, slow_mask) -> TighteningState:
    """Tightening from the currently measured state only (event-triggered)."""
    rows = slow_constraint_rows(state_set, slow_mask)
    x = _as_vector("x", x_measured, state_set.dim)
    return TighteningState(
        qbar=_row_violations(state_set, x, rows), source=SOURCE_PASSIVE
    )


@dataclass
class MpcSolve:
    """Decoded trajectory plus the certified QP solution behind it."""

    plan: MpcPlan
    qp: QpSolution

    @property
    def first_input(self):
        return self.plan.first_input


def _solve_spec(spec, x0, preview, solver, stage):
    problem, mapping = condense(spec, x0, preview)
    solution = solver.solve(problem)
    if solution.status != OPTIMAL:
        raise SolveFailedError(stage, solution)
    return MpcSolve(plan=mapping.decode(solution), qp=solution)


def solve_smpc(spec: MpcSpec, x0, preview, solver: QpSolver | None = None) -> MpcSolve:
    """One single-layer MPC solve; the first input is what gets commanded."""
    return _solve_spec(spec, x0, preview, solver or QpSolver(), "smpc")


def solve_scheduling(
    spec_coarse: MpcSpec,
    x0,
    approx_preview,
    tightening: TighteningState,
    solver: QpSolver | None = None,
) -> MpcSolve:
    """Scheduling-layer solve on the downsampled model with a shrunk state set."""
    spec = replace(
        spec_coarse, state_set=spec_coarse.state_set.tightened(tightening.qbar)
    )
    return _solve_spec(spec, x0, approx_preview, solver or QpSolver(), "scheduling")


def solve_piloting(
    spec_fine: MpcSpec,
    x0,
    accurate_preview,
    slow_reference,
    solver: QpSolver | None = None,
) -> MpcSolve:
    """Piloting-layer solve tracking the scheduled slow states.

    The cost's trailing outputs are the slow states (builder convention);
    their reference rows are overwritten with ``slow_reference``, extended by
    one held value for the terminal stage.
    """
    n_slow = int(np.asarray(spec_fine.model.slow_mask, dtype=bool).sum())
    slow_ref = np.atleast_2d(np.asarray(slow_reference, dtype=float))
    if slow_ref.shape != (spec_fine.horizon, n_slow):
        raise ValueError(
            f"slow reference: expected shape ({spec_fine.horizon}, {n_slow}), "
            f"got {slow_ref.shape}"
        )
    reference = spec_fine.cost.reference.copy()
    padded = np.vstack([slow_ref, slow_ref[-1:]])
    if n_slow:
        reference[:, reference.shape[1] - n_slow :] = padded
    cost = replace(spec_fine.cost, reference=reference)
    spec = replace(spec_fine, cost=cost)
    return _solve_spec(spec, x0, accurate_preview, solver or QpSolver(), "piloting")


@dataclass(frozen=True)
class Weights:
    """Cost weights: per-input effort, position tracking, slow-state tracking."""

    input_effort: tuple
    position: float = 1.0
    slow_tracking: float = 10.0
    slack: float = 1e6


@dataclass(frozen=True)
class ControllerConfig:
    """Shared configuration for every controller variant."""

    model: LtiModel
    state_set: PolyhedralSet
    input_set: PolyhedralSet
    weights: Weights
    position_reference: np.ndarray  # desired position per fine step, hold-last
    position_index: int = 0
    horizon: int = 100  # single-layer horizon N
    horizon_scheduling: int = 20  # H_s (coarse steps)
    horizon_piloting: int = 20  # H_p (fine steps)
    nu: int = 5
    soft_rows: tuple = ()
    qp_settings: QpSettings = field(default_factory=QpSettings)
    terminal_weight_scale: float | None = None
    position_rows: tuple = ()  # state-set rows reported as position slack
    thermal_row: int | None = None  # state-set row reported as the slow bound

    def __post_init__(self):
        ref = np.asarray(self.position_reference, dtype=float).ravel()
        ref.setflags(write=False)
        object.__setattr__(self, "position_reference", ref)
        object.__setattr__(self, "soft_rows", tuple(int(r) for r in self.soft_rows))
        object.__setattr__(
            self, "position_rows", tuple(int(r) for r in self.position_rows)
        )
        if self.nu < 1:
            raise ValueError(f"nu must be >= 1, got {self.nu}")
        for name in ("horizon", "horizon_scheduling", "horizon_piloting"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def reference_at(self, step):
        idx = min(max(int(step), 0), self.position_reference.shape[0] - 1)
        return self.position_reference[idx]


def _tracking_outputs(config, include_slow):
    """Output matrices (E, F, W) for the stage cost.

    Outputs are the inputs (effort terms), then the tracked position, then,
    when requested, each slow state; slow rows come last by convention.
    """
    model = config.model
    n, m = model.n_states, model.n_inputs
    effort = np.asarray(config.weights.input_effort, dtype=float)
    if effort.shape != (m,):
        raise ValueError(f"input_effort must have {m} entries, got {effort.shape}")
    slow_idx = np.flatnonzero(model.slow_mask) if include_slow else np.zeros(0, int)
    n_r = m + 1 + slow_idx.size
    E = np.zeros((n_r, n))
    F = np.zeros((n_r, m))
    F[:m, :] = np.eye(m)
    E[m, config.position_index] = 1.0
    diag = list(effort) + [config.weights.position]
    for i, s in enumerate(slow_idx):
        E[m + 1 + i, s] = 1.0
        diag.append(config.weights.slow_tracking)
    return E, F, np.diag(diag)


def _stage_reference(config, E_rows, horizon, start_step, stride):
    """Reference rows for stages 0..horizon: zeros except the position row."""
    m = config.model.n_inputs
    ref = np.zeros((horizon + 1, E_rows))
    for j in range(horizon + 1):
        ref[j, m] = config.reference_at(start_step + j * stride)
    return ref


def _make_spec(config, model, horizon, include_slow, start_step, stride):
    E, F, W = _tracking_outputs(config, include_slow)
    terminal = (
        None
        if config.terminal_weight_scale is None
        else config.terminal_weight_scale * W
    )
    cost = QuadraticTrackingCost(
        E=E,
        F=F,
        weights=W,
        reference=_stage_reference(config, E.shape[0], horizon, start_step, stride),
        terminal_weights=terminal,
    )
    return MpcSpec(
        model=model,
        horizon=horizon,
        cost=cost,
        state_set=config.state_set,
        input_set=config.input_set,
        soft_rows=config.soft_rows,
        slack_weight=config.weights.slack,
    )


@dataclass
class StepResult:
    """Applied input plus the bookkeeping the simulator records."""

    u: np.ndarray
    sched_solve: bool
    qp_iterations: int
    slack_position: float
    slack_thermal: float
    thermal_bound: float
    qbar: np.ndarray
    plan: MpcPlan


def _slack_report(config, spec, plan):
    by_row = {row: i for i, row in enumerate(spec.soft_rows)}
    def worst(rows):
        cols = [by_row[r] for r in rows if r in by_row]
        if not cols or plan.slacks.size == 0:
            return 0.0
        return float(plan.slacks[:, cols].max())
    return worst(config.position_rows), worst(
        [] if config.thermal_row is None else [config.thermal_row]
    )


def _thermal_bound(config, qbar):
    if config.thermal_row is None:
        return float("nan")
    return float(config.state_set.q[config.thermal_row] - qbar[config.thermal_row])


class SmpcController:
    """Single-layer receding-horizon controller with an exact demand preview."""

    def __init__(self, config: ControllerConfig):
        self.config = config
        self.variant = "smpc"
        self.reset()

    def reset(self):
        self.solver = QpSolver(self.config.qp_settings)

    def step(self, k, x, scenario: DemandScenario) -> StepResult:
        config = self.config
        spec = _make_spec(
            config, config.model, config.horizon, include_slow=False,
            start_step=k, stride=1,
        )
        preview = scenario.accurate_preview(k, config.horizon)
        result = solve_smpc(spec, x, preview, solver=self.solver)
        slack_pos, slack_th = _slack_report(config, spec, result.plan)
        qbar = np.zeros(config.state_set.n_rows)
        return StepResult(
            u=result.first_input,
            sched_solve=False,
            qp_iterations=result.qp.iterations,
            slack_position=slack_pos,
            slack_thermal=slack_th,
            thermal_bound=_thermal_bound(config, qbar),
            qbar=qbar,
            plan=result.plan,
        )


class HierarchicalController:
    """Two-layer controller; ``tightening_mode`` picks the scheduling variant.

    Modes: "none" (baseline), "passive" (tighten by the measured violation at
    each scheduling instant), "robust" (tighten by the violation predicted
    from the latest piloting solve).
    """

    def __init__(self, config: ControllerConfig, tightening_mode=SOURCE_NONE):
        if tightening_mode not in (SOURCE_NONE, SOURCE_PASSIVE, SOURCE_ROBUST):
            raise ValueError(f"unknown tightening mode {tightening_mode!r}")
        self.config = config
        self.mode = tightening_mode
        self.variant = {
            SOURCE_NONE: "hmpc",
            SOURCE_PASSIVE: "hmpc-passive",
            SOURCE_ROBUST: "hmpc-robust",
        }[tightening_mode]
        self.coarse_model = config.model.downsample(config.nu)
        self.reset()

    def reset(self):
        self.solver = QpSolver(self.config.qp_settings)
        self._plan = None
        self._predicted = TighteningState.none(self.config.state_set.n_rows)
        self._active = TighteningState.none(self.config.state_set.n_rows)

    def _scheduling_tightening(self, x):
        if self.mode == SOURCE_ROBUST:
            return self._predicted
        if self.mode == SOURCE_PASSIVE:
            return passive_tightening(x, self.config.state_set, self.config.model.slow_mask)
        return TighteningState.none(self.config.state_set.n_rows)

    def step(self, k, x, scenario: DemandScenario) -> StepResult:
        config = self.config
        iterations = 0
        sched = False
        if self._plan is None or k % config.nu == 0:
            sched = True
            k_s = k // config.nu
            self._active = self._scheduling_tightening(x)
            spec_s = _make_spec(
                config, self.coarse_model, config.horizon_scheduling,
                include_slow=False, start_step=k, stride=config.nu,
            )
            approx = scenario.approximate_preview(
                k_s, config.horizon_scheduling, config.nu
            )
            outcome = solve_scheduling(spec_s, x, approx, self._active, solver=self.solver)
            iterations += outcome.qp.iterations
            self._plan = extract_slow_plan(
                outcome.plan.states, config.model.slow_mask, config.nu, origin_step=k
            )
        slow_ref = expand_plan(self._plan, k, config.horizon_piloting)
        spec_p = _make_spec(
            config, config.model, config.horizon_piloting,
            include_slow=True, start_step=k, stride=1,
        )
        preview = scenario.accurate_preview(k, config.horizon_piloting)
        result = solve_piloting(spec_p, x, preview, slow_ref, solver=self.solver)
        iterations += result.qp.iterations
        if self.mode == SOURCE_ROBUST:
            self._predicted = predict_violation(
                config.model, x, result.plan.inputs, preview,
                config.state_set, config.model.slow_mask,
            )
        slack_pos, slack_th = _slack_report(config, spec_p, result.plan)
        return StepResult(
            u=result.first_input,
            sched_solve=sched,
            qp_iterations=iterations,
            slack_position=slack_pos,
            slack_thermal=slack_th,
            thermal_bound=_thermal_bound(config, self._active.qbar),
            qbar=self._active.qbar,
            plan=result.plan,
        )


def make_controller(variant, config: ControllerConfig):
    """Controller instance for a variant identifier."""
    if variant == "smpc":
        return SmpcController(config)
    if variant == "hmpc":
        return HierarchicalController(config, SOURCE_NONE)
    if variant == "hmpc-passive":
        return HierarchicalController(config, SOURCE_PASSIVE)
    if variant == "hmpc-robust":
        return HierarchicalController(config, SOURCE_ROBUST)
    raise ValueError(f"unknown controller variant {variant!r}; expected one of {VARIANTS}")
