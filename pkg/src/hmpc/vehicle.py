"""Vehicle thermal-management case study: model, bounds, and fixture scenario.

States: position x1, speed x2, on-board stored energy x3, and thermal index
x4 (the slow state, kept below its upper operating limit of 30).  Inputs:
acceleration u1, deceleration u2, thermal-management power u3.  The scalar
demand u_hat is an external power load on the energy storage.

The demand profiles and the desired-position trajectory are invented test
fixtures (the published study shows them only graphically): a constant 0.4
forecast against an actual profile with two unit pulses, and a constant-speed
position ramp.
"""

from __future__ import annotations

import numpy as np

from .controllers import ControllerConfig, Weights
from .model import LtiModel, PolyhedralSet
from .preview import DemandScenario

THERMAL_LIMIT = 30.0

STATE_LOWER = (-1.0, -20.0, 0.0, 0.0)
STATE_UPPER = (100.0, 20.0, 100.0, THERMAL_LIMIT)
INPUT_LOWER = (-1.0, -1.0, -1.0)
INPUT_UPPER = (1.0, 1.0, 1.0)

# Box rows come out as upper bounds x1..x4 then lower bounds x1..x4.
X1_UPPER_ROW = 0
X4_UPPER_ROW = 3
X1_LOWER_ROW = 4
SOFT_ROWS = (X1_UPPER_ROW, X1_LOWER_ROW, X4_UPPER_ROW)

DEFAULT_INITIAL_STATE = (0.0, 0.0, 100.0, 15.0)
DEFAULT_DURATION = 120
DEFAULT_PULSES = ((10, 40, 1.0), (70, 85, 1.0))
DEFAULT_BASE_DEMAND = 0.4
DEFAULT_BREAKPOINTS = ((0, 0.0), (100, 80.0), (120, 80.0))


def vehicle_model(sample_period=1.0) -> LtiModel:
    """Four-state vehicle model with the thermal index as the slow state."""
    A = np.array(
        [
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    B1 = np.array(
        [
            [1.0, 1.0, 0.0],
            [1.0, -1.0, 0.0],
            [-0.8, 0.8, -0.15],
            [1.0, 1.0, -0.85],
        ]
    )
    B2 = np.array([[0.0], [0.0], [-0.25], [1.0]])
    slow = np.array([False, False, False, True])
    return LtiModel(A=A, B1=B1, B2=B2, sample_period=sample_period, slow_mask=slow)


def state_set(lower=STATE_LOWER, upper=STATE_UPPER) -> PolyhedralSet:
    return PolyhedralSet.box(lower, upper)


def input_set(lower=INPUT_LOWER, upper=INPUT_UPPER) -> PolyhedralSet:
    return PolyhedralSet.box(lower, upper)


def default_weights() -> Weights:
    return Weights(
        input_effort=(0.1, 0.1, 0.0), position=1.0, slow_tracking=10.0, slack=1e6
    )


def pulse_demand(duration, base=DEFAULT_BASE_DEMAND, pulses=DEFAULT_PULSES):
    """Baseline demand with additive rectangular pulses on [start, stop)."""
    series = np.full(duration, float(base))
    for start, stop, amplitude in pulses:
        series[int(start) : int(stop)] += float(amplitude)
    return series


def default_scenario(duration=DEFAULT_DURATION) -> DemandScenario:
    """Shipped fixture: constant forecast, pulsed actual demand."""
    return DemandScenario(
        actual=pulse_demand(duration),
        approximate=np.full(duration, DEFAULT_BASE_DEMAND),
        duration_steps=duration,
    )


def position_reference(breakpoints=DEFAULT_BREAKPOINTS, length=None):
    """Piecewise-linear desired position sampled on the fine grid."""
    pts = sorted((int(s), float(v)) for s, v in breakpoints)
    if not pts:
        raise ValueError("reference needs at least one breakpoint")
    steps = np.array([p[0] for p in pts], dtype=float)
    values = np.array([p[1] for p in pts], dtype=float)
    if length is None:
        length = int(steps[-1]) + 1
    grid = np.arange(length, dtype=float)
    return np.interp(grid, steps, values)


def default_config(
    horizon=100,
    horizon_scheduling=20,
    horizon_piloting=20,
    nu=5,
    weights=None,
    reference_length=DEFAULT_DURATION + 101,
    qp_settings=None,
    breakpoints=DEFAULT_BREAKPOINTS,
) -> ControllerConfig:
    """Case-study controller configuration with published parameter defaults."""
    kwargs = {} if qp_settings is None else {"qp_settings": qp_settings}
    return ControllerConfig(
        model=vehicle_model(),
        state_set=state_set(),
        input_set=input_set(),
        weights=weights or default_weights(),
        position_reference=position_reference(breakpoints, reference_length),
        position_index=0,
        horizon=horizon,
        horizon_scheduling=horizon_scheduling,
        horizon_piloting=horizon_piloting,
        nu=nu,
        soft_rows=SOFT_ROWS,
        position_rows=(X1_UPPER_ROW, X1_LOWER_ROW),
        thermal_row=X4_UPPER_ROW,
        **kwargs,
    )
