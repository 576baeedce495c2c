"""Fixed-step simulation of the closed loops, event schedules and transient metrics.

All runs use classical fourth-order Runge-Kutta on a uniform grid.  Events
(reference or load steps) snap to the first grid point at or after their
time, so steps only ever happen between samples and a given scenario always
produces the same numbers.

Three plants are understood by :func:`integrate`:

``buck``
    the cascaded-PI buck converter (linear unless ``saturate`` is set);
``pmsm``
    the PMSM active rectifier, run by the compiled kernel when available;
``custom-linear``
    any :class:`~twoscale.sptheory.PartitionedLinearSystem` given by its
    blocks, optionally forced by a scalar reference ``r``.
"""

import dataclasses
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import config, kernel
from . import densemath as dm
from .errors import (
    GridMismatch,
    InvalidEpsilon,
    InvalidParams,
    InvalidScenario,
    NonFiniteState,
    NonPhysicalState,
    ParseError,
    SingularJacobian,
    TwoScaleError,
)
from .plants import (
    BUCK_STATES,
    PMSM_STATES,
    BuckParams,
    PmsmParams,
    buck_closedloop,
    buck_rhs_saturated,
    load_current,
    pmsm_equilibrium,
)
from .senscond import Mode, injection_gain, resolve_mode, sensitivity_linear, solve_injection
from .sptheory import PartitionedLinearSystem, eigen_report, scale_epsilon, spectral_displacement

PLANTS = ("buck", "pmsm", "custom-linear")

# Reference keys each plant accepts in events, and the one its tracked
# output follows.
EVENT_KEYS = {
    "buck": ("v_ref",),
    "pmsm": ("v_dc_ref", "i_load", "p_load"),
    "custom-linear": ("r",),
}
TRACKED = {"buck": (0, "v_ref"), "pmsm": (0, "v_dc_ref"), "custom-linear": (0, "r")}

# An event this close to a grid point (in units of dt) counts as on it.
_SNAP_TOL = 1e-9

# numpy renamed trapz to trapezoid in 2.0
_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class LinearPlantSpec:
    """A user-supplied partitioned system with optional reference forcing.

    ``forcing_x`` and ``forcing_z`` are the columns multiplying the scalar
    reference ``r`` in the slow and (physical-time) fast equations.
    """

    system: PartitionedLinearSystem
    forcing_x: Optional[np.ndarray] = None
    forcing_z: Optional[np.ndarray] = None
    r: float = 0.0

    def forcing(self):
        fx = np.zeros(self.system.n_x) if self.forcing_x is None else np.asarray(self.forcing_x, float)
        fz = np.zeros(self.system.n_z) if self.forcing_z is None else np.asarray(self.forcing_z, float)
        if fx.shape != (self.system.n_x,) or fz.shape != (self.system.n_z,):
            raise InvalidParams("forcing vectors do not match the state dimensions")
        return fx, fz


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one simulation run.

    ``params`` is a :class:`BuckParams`, :class:`PmsmParams` or
    :class:`LinearPlantSpec` matching ``plant``.  ``events`` is a sequence of
    ``(time, key, value)``; ``initial_state`` is ``"equilibrium"`` or a state
    vector.
    """

    plant: str
    params: object
    mode: object = "none"
    dt: float = 1e-6
    horizon: float = 0.1
    events: tuple = ()
    initial_state: object = "equilibrium"

    def __post_init__(self):
        if self.plant not in PLANTS:
            raise InvalidScenario(f"unknown plant {self.plant!r}; expected one of {', '.join(PLANTS)}")
        expected = {"buck": BuckParams, "pmsm": PmsmParams, "custom-linear": LinearPlantSpec}[self.plant]
        if not isinstance(self.params, expected):
            raise InvalidScenario(f"{self.plant} scenario needs {expected.__name__} parameters")
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise InvalidScenario(f"dt must be positive, got {self.dt!r}")
        if not (math.isfinite(self.horizon) and self.horizon >= 0.0):
            raise InvalidScenario(f"horizon must be non-negative, got {self.horizon!r}")
        if 0.0 < self.horizon < self.dt:
            raise InvalidScenario(f"horizon {self.horizon!r} is shorter than one step of {self.dt!r}")
        events = tuple((float(t), config.normalize_key(k), float(v)) for t, k, v in self.events)
        allowed = EVENT_KEYS[self.plant]
        last = -math.inf
        for t, key, value in events:
            if key not in allowed:
                raise InvalidScenario(f"event key {key!r} is not valid for {self.plant}; use {', '.join(allowed)}")
            if not (0.0 <= t <= self.horizon):
                raise InvalidScenario(f"event at t={t!r} lies outside [0, {self.horizon!r}]")
            if t < last:
                raise InvalidScenario("events must be sorted by time")
            if not math.isfinite(value):
                raise InvalidScenario(f"event value for {key} is not finite")
            last = t
        object.__setattr__(self, "events", events)
        if not isinstance(self.initial_state, str):
            state = np.asarray(self.initial_state, dtype=float).ravel()
            object.__setattr__(self, "initial_state", state)
        elif self.initial_state != "equilibrium":
            raise InvalidScenario(f"initial state must be 'equilibrium' or a vector, got {self.initial_state!r}")

    @property
    def n_steps(self):
        return int(math.ceil(self.horizon / self.dt - _SNAP_TOL))

    def with_mode(self, mode):
        return dataclasses.replace(self, mode=mode)


@dataclass(frozen=True)
class Trajectory:
    """Samples of one run on the grid ``times``.

    ``references`` maps each reference key to its per-sample value; the
    value at sample ``k`` is the one in force during the step that starts
    there.
    """

    times: np.ndarray
    states: np.ndarray
    injections: np.ndarray
    residual_norms: np.ndarray
    slow_deriv_norms: np.ndarray
    state_names: tuple
    injection_names: tuple
    references: dict = field(default_factory=dict)
    tracked: tuple = (0, None)

    def __len__(self):
        return len(self.times)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def tracked_reference(self):
        index, key = self.tracked
        if key is None:
            return index, np.zeros(len(self.times))
        return index, self.references[key]


class TransientMetrics(NamedTuple):
    ise: float
    overshoot: float
    settling_time: float
    settled: bool


class CompareReport(NamedTuple):
    metrics_a: TransientMetrics
    metrics_b: TransientMetrics
    ise_delta: float
    max_state_deviation: np.ndarray
    max_normalized_deviation: float


# ---------------------------------------------------------------------------
# Scenario files


def _plant_params(plant, entries, source):
    if plant == "buck":
        return config.build_dataclass(BuckParams, entries, source)
    if plant == "pmsm":
        entries = dict(entries)
        if "p_load" in entries:
            if "i_load" in entries:
                lineno = entries["p_load"][0]
                raise ParseError("give either p-load or i-load, not both", lineno)
            lineno, raw = entries.pop("p_load")
            power = config.parse_float(raw, lineno, "p-load")
            probe = {k: v for k, v in entries.items()}
            probe["i_load"] = (lineno, "0")
            base = config.build_dataclass(PmsmParams, probe, source)
            entries["i_load"] = (lineno, repr(load_current(power, base.v_dc_ref, base.r_load)))
        return config.build_dataclass(PmsmParams, entries, source)
    return _linear_spec(entries, source)


def _linear_spec(entries, source):
    known = {"a11", "a12", "a21", "a22", "b", "epsilon", "forcing_x", "forcing_z", "r"}
    for key, (lineno, _) in entries.items():
        if key not in known:
            raise ParseError(f"unknown key {key!r} in {source}", lineno)
    for key in ("a11", "a12", "a21", "a22", "b"):
        if key not in entries:
            raise ParseError(f"missing required key {key!r} in {source}")
    mats = {key: config.parse_matrix(entries[key][1], entries[key][0], key) for key in ("a11", "a12", "a21", "a22", "b")}
    eps = config.parse_float(entries["epsilon"][1], entries["epsilon"][0], "epsilon") if "epsilon" in entries else 1.0
    vectors = {
        key: config.parse_vector(entries[key][1], entries[key][0], key) if key in entries else None
        for key in ("forcing_x", "forcing_z")
    }
    r = config.parse_float(entries["r"][1], entries["r"][0], "r") if "r" in entries else 0.0
    try:
        sys = PartitionedLinearSystem(epsilon=eps, **mats)
    except (ValueError, TwoScaleError) as exc:
        raise ParseError(f"{source}: {exc}") from exc
    return LinearPlantSpec(sys, vectors["forcing_x"], vectors["forcing_z"], r)


def parse_params(text, plant, source="parameters"):
    """Build the parameter object of ``plant`` from key=value ``text``."""
    if plant not in PLANTS:
        raise ParseError(f"unknown plant {plant!r}")
    return _plant_params(plant, config.collect(text), source)


def parse_scenario(text, base_dir=None, source="scenario"):
    """Parse a scenario file.

    Scenario-level keys are ``plant``, ``mode``, ``dt``, ``horizon``,
    ``initial-state``, ``params-file`` and any number of
    ``event = t, key, value`` lines.  Every other key is a plant parameter;
    inline parameters override those read from ``params-file``.
    """
    from pathlib import Path

    entries = {}
    events = []
    for lineno, key, raw in config.parse_lines(text):
        if key == "event":
            parts = [s.strip() for s in raw.split(",")]
            if len(parts) != 3:
                raise ParseError(f"event needs 't, key, value', got {raw!r}", lineno)
            t = config.parse_float(parts[0], lineno, "event time")
            value = config.parse_float(parts[2], lineno, "event value")
            events.append((lineno, t, config.normalize_key(parts[1]), value))
            continue
        if key in entries:
            raise ParseError(f"duplicate key {key!r}", lineno)
        entries[key] = (lineno, raw)

    if "plant" not in entries:
        raise ParseError(f"missing required key 'plant' in {source}")
    plant = entries.pop("plant")[1].strip().lower()
    if plant not in PLANTS:
        raise ParseError(f"unknown plant {plant!r}", None)

    mode = entries.pop("mode", (None, "none"))[1]
    dt = _pop_float(entries, "dt", 1e-6)
    if "horizon" not in entries:
        raise ParseError(f"missing required key 'horizon' in {source}")
    horizon = _pop_float(entries, "horizon", None)

    initial = "equilibrium"
    if "initial_state" in entries:
        lineno, raw = entries.pop("initial_state")
        initial = raw.strip().lower() if raw.strip().lower() == "equilibrium" else config.parse_vector(raw, lineno, "initial-state")

    params_entries = {}
    if "params_file" in entries:
        lineno, raw = entries.pop("params_file")
        path = Path(raw.strip())
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        params_entries.update(config.collect(config.read_text(path)))
    params_entries.update(entries)
    params = _plant_params(plant, params_entries, source)

    events = _convert_events(plant, params, events)
    try:
        return ScenarioConfig(plant, params, mode, dt, horizon, tuple(events), initial)
    except InvalidScenario as exc:
        raise ParseError(str(exc)) from exc


def _pop_float(entries, key, default):
    if key not in entries:
        return default
    lineno, raw = entries.pop(key)
    return config.parse_float(raw, lineno, key.replace("_", "-"))


def _convert_events(plant, params, events):
    """Turn power events into load-current events (at the reference bus voltage in force)."""
    out = []
    v_ref = getattr(params, "v_dc_ref", None)
    for lineno, t, key, value in events:
        if key not in EVENT_KEYS[plant]:
            raise ParseError(f"event key {key!r} is not valid for {plant}", lineno)
        if key == "v_dc_ref":
            v_ref = value
        if key == "p_load":
            key, value = "i_load", load_current(value, v_ref, params.r_load)
        out.append((t, key, value))
    return out


def load_scenario(path):
    from pathlib import Path

    return parse_scenario(config.read_text(path), base_dir=Path(path).parent, source=str(path))


# ---------------------------------------------------------------------------
# Schedules and initial states


def _schedule(scenario, initial):
    """Per-sample reference arrays, starting from ``initial`` (a key -> value dict)."""
    n = scenario.n_steps
    out = {key: np.full(n + 1, float(value)) for key, value in initial.items()}
    for t, key, value in scenario.events:
        k = int(math.ceil(t / scenario.dt - _SNAP_TOL))
        if key == "p_load":
            key, value = "i_load", load_current(value, out["v_dc_ref"][k], scenario.params.r_load)
        out[key][k:] = value
    return out


def _initial_refs(scenario):
    p = scenario.params
    if scenario.plant == "buck":
        return {"v_ref": p.v_ref}
    if scenario.plant == "pmsm":
        return {"v_dc_ref": p.v_dc_ref, "i_load": p.i_load}
    return {"r": p.r}


def linear_equilibrium(system, forcing, reference):
    """Forced steady state ``s`` of ``ds/dt = M s + forcing * reference``."""
    return -dm.solve_linear(system.full_matrix(), np.asarray(forcing, dtype=float) * reference)


def _initial_state(scenario, refs):
    start = {key: float(values[0]) for key, values in refs.items()}
    n_state = {"buck": 4, "pmsm": 6}.get(scenario.plant)
    if isinstance(scenario.initial_state, np.ndarray):
        state = scenario.initial_state
        if n_state is None:
            n_state = scenario.params.system.n_x + scenario.params.system.n_z
        if state.size != n_state:
            raise InvalidScenario(f"initial state has {state.size} entries, the plant has {n_state}")
        return state.copy()
    if scenario.plant == "buck":
        model = buck_closedloop(scenario.params)
        return linear_equilibrium(model.system, np.concatenate([model.ref_slow, model.ref_fast]), start["v_ref"])
    if scenario.plant == "pmsm":
        p = dataclasses.replace(scenario.params, v_dc_ref=start["v_dc_ref"], i_load=start["i_load"])
        return pmsm_equilibrium(p)
    spec = scenario.params
    fx, fz = spec.forcing()
    return linear_equilibrium(spec.system, np.concatenate([fx, fz]), start["r"])


# ---------------------------------------------------------------------------
# Integration


def integrate(scenario):
    """Run ``scenario`` and return its :class:`Trajectory`.

    Raises NonFiniteState (with the time of failure) when the run diverges,
    NonPhysicalState when a PMSM run reaches a non-positive bus voltage and
    ModeShapeMismatch when the mode does not fit the plant's input matrix.
    """
    refs = _schedule(scenario, _initial_refs(scenario))
    state0 = _initial_state(scenario, refs)
    if not np.all(np.isfinite(state0)):
        raise NonFiniteState(0.0, "initial state is not finite")
    if scenario.plant == "pmsm":
        return _integrate_pmsm(scenario, state0, refs)
    if scenario.plant == "buck":
        model = buck_closedloop(scenario.params)
        spec = LinearPlantSpec(model.system, model.ref_slow, model.ref_fast)
        names = BUCK_STATES
        ref_key = "v_ref"
        if scenario.params.saturate:
            return _integrate_buck_saturated(scenario, spec, state0, refs)
    else:
        spec = scenario.params
        sys = spec.system
        names = tuple(f"x{i + 1}" for i in range(sys.n_x)) + tuple(f"z{i + 1}" for i in range(sys.n_z))
        ref_key = "r"
    return _integrate_linear(scenario, spec, state0, refs[ref_key], names, refs)


def _linear_closed_loop(spec, mode):
    """Affine closed loop ``ds/dt = M s + F r`` with the conditioning folded in.

    Also returns the maps giving the slow derivative ``D s + E r`` and the
    injection gain ``K`` (``v = K xdot``).
    """
    sys = spec.system
    fx, fz = spec.forcing()
    _, _, b = sys.fast_blocks()
    m_open = sys.full_matrix()
    f_open = np.concatenate([fx, fz])
    d = np.hstack([sys.a11, sys.a12])
    if mode is Mode.NONE:
        k = np.zeros((sys.m, sys.n_x))
    else:
        k, _ = injection_gain(sys, mode)
    lift = sys.input_matrix_full() @ k
    return m_open + lift @ d, f_open + lift @ fx, d, fx, k, b


def _rk4_affine(m, f, h):
    """One RK4 step of ``ds/dt = M s + F r`` written as ``s+ = Phi s + Gamma r``."""
    n = m.shape[0]
    hm = h * m
    hm2 = hm @ hm
    hm3 = hm2 @ hm
    eye = np.eye(n)
    phi = eye + hm + hm2 / 2.0 + hm3 / 6.0 + hm3 @ hm / 24.0
    gamma = h * (eye + hm / 2.0 + hm2 / 6.0 + hm3 / 24.0) @ f
    return phi, gamma


def _integrate_linear(scenario, spec, state0, reference, names, refs):
    sys = spec.system
    mode = resolve_mode(scenario.mode, sys.n_z, sys.m)
    m_eff, f_eff, d, fx, k, b = _linear_closed_loop(spec, mode)
    n = scenario.n_steps
    h = scenario.dt
    phi, gamma = _rk4_affine(m_eff, f_eff, h)
    states = np.empty((n + 1, state0.size))
    states[0] = state0
    s = state0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            s = phi @ s + gamma * reference[i]
            states[i + 1] = s
    bad = ~np.all(np.isfinite(states), axis=1)
    if bad.any():
        first = int(np.argmax(bad))
        raise NonFiniteState(first * h)
    xdot = states @ d.T + np.outer(reference, fx)
    inj = xdot @ k.T
    target = xdot @ sensitivity_linear(sys).T
    residual = inj @ b.T - target
    times = np.arange(n + 1) * h
    return Trajectory(
        times,
        states,
        inj,
        np.linalg.norm(residual, axis=1),
        np.linalg.norm(xdot, axis=1),
        tuple(names),
        ("v",) if scenario.plant == "buck" else tuple(f"v{i + 1}" for i in range(sys.m)),
        refs,
        TRACKED[scenario.plant],
    )


def _integrate_buck_saturated(scenario, spec, state0, refs):
    p = scenario.params
    sys = spec.system
    mode = resolve_mode(scenario.mode, sys.n_z, sys.m)
    _, _, d, fx, k, b = _linear_closed_loop(spec, mode)
    s_mat = sensitivity_linear(sys)
    v_ref = refs["v_ref"]
    n = scenario.n_steps
    h = scenario.dt

    def rhs(s, r):
        v = float(k[0] @ (d @ s + fx * r))
        return buck_rhs_saturated(p, s, r, v)

    states = np.empty((n + 1, 4))
    states[0] = state0
    s = state0
    for i in range(n):
        r = v_ref[i]
        k1 = rhs(s, r)
        k2 = rhs(s + 0.5 * h * k1, r)
        k3 = rhs(s + 0.5 * h * k2, r)
        k4 = rhs(s + h * k3, r)
        s = s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(s)):
            raise NonFiniteState((i + 1) * h)
        states[i + 1] = s
    xdot = states @ d.T + np.outer(v_ref, fx)
    inj = xdot @ k.T
    residual = inj @ b.T - xdot @ s_mat.T
    return Trajectory(
        np.arange(n + 1) * h, states, inj,
        np.linalg.norm(residual, axis=1), np.linalg.norm(xdot, axis=1),
        BUCK_STATES, ("v",), refs, TRACKED["buck"],
    )


def _integrate_pmsm(scenario, state0, refs, run=None):
    p = scenario.params
    mode = resolve_mode(scenario.mode, 4, 2)
    if not state0[0] > 0.0:
        raise NonPhysicalState(f"dc-bus voltage must be positive, got {float(state0[0])!r} V at t=0")
    run = kernel.pmsm_run if run is None else run
    status, step, states, inj, res, fnorm = run(
        kernel.pack_params(p), state0, scenario.dt, refs["v_dc_ref"], refs["i_load"], mode is Mode.APPROXIMATE
    )
    t_fail = step * scenario.dt
    if status == kernel.NONPHYSICAL:
        raise NonPhysicalState(f"dc-bus voltage left the positive range at t={t_fail:.9g} s")
    if status == kernel.NONFINITE:
        raise NonFiniteState(t_fail)
    if status == kernel.SINGULAR:
        raise SingularJacobian(f"fast-state Jacobian became singular at t={t_fail:.9g} s")
    times = np.arange(len(states)) * scenario.dt
    return Trajectory(times, states, inj, res, fnorm, PMSM_STATES, ("v_d", "v_q"), refs, TRACKED["pmsm"])


def integrate_plant(plant, state0, dt, n_steps, refs=None, mode=Mode.NONE):
    """Generic RK4 run of a :class:`~twoscale.plants.TwoTimescalePlant`.

    Recomputes the sensitivity and the injection at every stage through the
    dense-matrix path, so it is slow but independent of the PMSM kernel.
    ``refs`` is a dict of constant reference values.
    """
    mode = resolve_mode(mode, plant.n_z, plant.m)
    nx = plant.n_x

    def conditioning(x, z):
        f = plant.slow(x, z, refs, np.zeros(plant.m))
        gx, gz = plant.fast_jacobians(x, z, refs)
        target = -dm.solve_linear(gz, gx) @ f
        if mode is Mode.NONE:
            return np.zeros(plant.m), target, f
        return solve_injection(plant.input_matrix(x, z), target, mode).v, target, f

    def rhs(s):
        v, _, _ = conditioning(s[:nx], s[nx:])
        return plant.rhs(s, refs, v)

    s = np.asarray(state0, dtype=float).copy()
    states = np.empty((n_steps + 1, s.size))
    inj = np.zeros((n_steps + 1, plant.m))
    res = np.zeros(n_steps + 1)
    fn = np.zeros(n_steps + 1)
    for i in range(n_steps + 1):
        x, z = s[:nx], s[nx:]
        v, target, f = conditioning(x, z)
        states[i] = s
        inj[i] = v
        res[i] = np.linalg.norm(plant.input_matrix(x, z) @ v - target)
        fn[i] = np.linalg.norm(f)
        if i == n_steps:
            break
        k1 = rhs(s)
        k2 = rhs(s + 0.5 * dt * k1)
        k3 = rhs(s + 0.5 * dt * k2)
        k4 = rhs(s + dt * k3)
        s = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(s)):
            raise NonFiniteState((i + 1) * dt)
    names = plant.state_names or tuple(f"s{i + 1}" for i in range(s.size))
    return Trajectory(
        np.arange(n_steps + 1) * dt, states, inj, res, fn, tuple(names),
        tuple(f"v{i + 1}" for i in range(plant.m)),
    )


# ---------------------------------------------------------------------------
# Metrics and comparisons


def metrics(traj, tracked_index=None, reference=None, band=0.02):
    """ISE, overshoot and settling time of one tracked output.

    ``reference`` is a per-sample array or a constant; by default the
    trajectory's own tracked reference is used.  The step analysed is the
    last change in the reference; when the reference never changes the
    step is taken from the initial output value to the reference at t = 0.
    Overshoot is in percent of the step size and the settling time counts
    from the step until the output stays inside ``band`` times the step
    size around the final reference.  Without a reference change the size
    used is the larger of that initial offset and the reference value, so
    a regulation run is judged against its set point.
    """
    default_index, default_ref = traj.tracked_reference()
    index = default_index if tracked_index is None else tracked_index
    if not 0 <= index < traj.states.shape[1]:
        raise IndexError(f"tracked index {index} out of range for {traj.states.shape[1]} states")
    y = traj.states[:, index]
    ref = default_ref if reference is None else reference
    ref = np.broadcast_to(np.asarray(ref, dtype=float), y.shape)
    t = traj.times
    err = y - ref
    ise = float(_trapezoid(err**2, t)) if len(t) > 1 else 0.0

    changes = np.nonzero(np.diff(ref))[0]
    if changes.size:
        k_step = int(changes[-1]) + 1
        step = ref[-1] - ref[k_step - 1]
    else:
        k_step = 0
        step = ref[-1] - y[0]
    final = ref[-1]
    scale = abs(step) if changes.size else max(abs(step), abs(final))
    if scale == 0.0:
        scale = 1.0
    after = y[k_step:] - final
    direction = 1.0 if step >= 0.0 else -1.0
    peak = float(np.max(direction * after)) if after.size else 0.0
    overshoot = max(0.0, peak) / scale * 100.0
    outside = np.nonzero(np.abs(after) > band * scale)[0]
    if outside.size == 0:
        settling, settled = 0.0, True
    elif outside[-1] == after.size - 1:
        settling, settled = math.inf, False
    else:
        settling, settled = float(t[k_step + outside[-1] + 1] - t[k_step]), True
    return TransientMetrics(ise, float(overshoot), float(settling), settled)


def compare_runs(a, b, tracked_index=None):
    """Paired metrics of two runs on the same grid plus pointwise state deviations."""
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        raise GridMismatch("trajectories are sampled on different time grids")
    if a.states.shape != b.states.shape:
        raise GridMismatch("trajectories have different state dimensions")
    ma = metrics(a, tracked_index)
    mb = metrics(b, tracked_index)
    dev = np.max(np.abs(a.states - b.states), axis=0)
    peak = np.max(np.abs(a.states), axis=0)
    norm_dev = float(np.max(dev / np.where(peak > 0.0, peak, 1.0)))
    return CompareReport(ma, mb, mb.ise - ma.ise, dev, norm_dev)


def epsilon_sweep(base, eps_list, probe_state, forcing=None):
    """Relative size of the conditioning term as the fast dynamics are sped up.

    For each ``eps`` the system is rescaled with
    :func:`~twoscale.sptheory.scale_epsilon` and the returned value is
    ``||eps S f|| / ||g||`` at ``probe_state``, where ``f`` is the slow
    derivative and ``g = A21 x + A22 z`` the unscaled fast vector field.  The
    sensitivity does not depend on ``eps``, so the values are linear in it.
    """
    eps_list = [float(e) for e in eps_list]
    for e in eps_list:
        if not (math.isfinite(e) and e > 0.0):
            raise InvalidEpsilon(f"epsilon must be positive, got {e!r}")
    x, z = base.split(probe_state)
    f = base.a11 @ x + base.a12 @ z
    if forcing is not None:
        f = f + np.asarray(forcing, dtype=float)
    g_norm = float(np.linalg.norm(base.a21 @ x + base.a22 @ z))
    out = []
    for e in eps_list:
        scaled = scale_epsilon(base, e)
        num = float(np.linalg.norm(scaled.epsilon * (sensitivity_linear(scaled) @ f)))
        if g_norm > 0.0:
            out.append((e, num / g_norm))
        else:
            out.append((e, 0.0 if num == 0.0 else math.inf))
    return out


class SweepRow(NamedTuple):
    gains: tuple
    no_sc: Optional[np.ndarray]
    with_sc: Optional[np.ndarray]
    gap_ratio: float
    displacement: float
    error: Optional[str] = None


def gain_sweep(base, gain_sets):
    """Eigen-analysis of the buck loop for each ``(kp_v, ki_v, kp_i, ki_i)``.

    Rows that fail keep their place in the output and carry the error
    message instead of results.
    """
    rows = []
    for gains in gain_sets:
        gains = tuple(float(g) for g in gains)
        try:
            if len(gains) != 4:
                raise InvalidParams(f"expected 4 gains, got {len(gains)}")
            sys = buck_closedloop(base.with_gains(*gains)).system
            rep = eigen_report(sys)
            disp = spectral_displacement(rep.full_with_sc, rep.full_no_sc)
            rows.append(SweepRow(gains, rep.full_no_sc, rep.full_with_sc, rep.gap_ratio, disp))
        except (TwoScaleError, ValueError) as exc:
            rows.append(SweepRow(gains, None, None, math.nan, math.nan, str(exc)))
    return rows
