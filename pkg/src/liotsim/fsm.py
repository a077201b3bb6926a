"""Duty-cycle state machine for one sensor node.

The kernel drives each node with timer and frame-delivery callbacks; the
functions here perform the phase transitions, debit the supercapacitor for
the elapsed phase, and emit the protocol frames of the two node variants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from . import protocol
from .energy import (
    EnergyProfile,
    HarvesterCurve,
    StageName,
    Supercap,
    active_totals,
    solve_sleep_time,
    supercap_step,
    Feasibility,
)
from .protocol import (
    ExchangeSession,
    FailReason,
    Frame,
    FrameKind,
    SessionOutcome,
    ble_exchange_step,
    exchange_step,
    liot_exchange_step,
    make_ble_session,
    make_liot_session,
)
from .sensors import EnvironmentModel, SensorSample, read_sensors


class NodeKind(str, Enum):
    BLE = "ble"
    LIOT = "liot"


class Phase(str, Enum):
    SLEEPING = "sleeping"
    SENSING = "sensing"
    ADVERTISING = "advertising"
    EXCHANGING = "exchanging"
    UPLINKING = "uplinking"
    AWAITING_REQUEST = "awaiting_request"
    UPLOADING = "uploading"
    AWAITING_SLEEP_SET = "awaiting_sleep_set"


LEGAL_TRANSITIONS: dict[NodeKind, dict[Phase, frozenset[Phase]]] = {
    NodeKind.BLE: {
        Phase.SLEEPING: frozenset({Phase.SLEEPING, Phase.SENSING}),
        Phase.SENSING: frozenset({Phase.ADVERTISING, Phase.SLEEPING}),
        Phase.ADVERTISING: frozenset({Phase.EXCHANGING, Phase.SLEEPING}),
        Phase.EXCHANGING: frozenset({Phase.SLEEPING}),
    },
    NodeKind.LIOT: {
        Phase.SLEEPING: frozenset({Phase.SLEEPING, Phase.UPLINKING}),
        Phase.UPLINKING: frozenset({Phase.AWAITING_REQUEST, Phase.SLEEPING}),
        Phase.AWAITING_REQUEST: frozenset({Phase.SENSING, Phase.SLEEPING}),
        Phase.SENSING: frozenset({Phase.UPLOADING, Phase.SLEEPING}),
        Phase.UPLOADING: frozenset({Phase.AWAITING_SLEEP_SET, Phase.SLEEPING}),
        Phase.AWAITING_SLEEP_SET: frozenset({Phase.SLEEPING}),
    },
}

_PHASE_STAGE: dict[NodeKind, dict[Phase, StageName]] = {
    NodeKind.BLE: {
        Phase.SENSING: StageName.SENSOR_READ,
        Phase.ADVERTISING: StageName.BLE_ADVERTISE,
        Phase.EXCHANGING: StageName.BLE_DATA_EXCHANGE,
    },
    NodeKind.LIOT: {
        Phase.UPLINKING: StageName.GW_REQUEST,
        Phase.AWAITING_REQUEST: StageName.GW_REQUEST,
        Phase.SENSING: StageName.LIOT_SENSOR_READ,
        Phase.UPLOADING: StageName.LIOT_DATA_UPLOAD,
        Phase.AWAITING_SLEEP_SET: StageName.LIOT_SLEEP_SET,
    },
}

_REQUIRED_STAGES: dict[NodeKind, set[StageName]] = {
    NodeKind.BLE: {
        StageName.SENSOR_READ,
        StageName.BLE_ADVERTISE,
        StageName.BLE_DATA_EXCHANGE,
    },
    NodeKind.LIOT: {
        StageName.GW_REQUEST,
        StageName.LIOT_SENSOR_READ,
        StageName.LIOT_DATA_UPLOAD,
        StageName.LIOT_SLEEP_SET,
    },
}


class FsmError(RuntimeError):
    pass


@dataclass(frozen=True)
class NodeConfig:
    node_id: str
    kind: NodeKind
    profile: EnergyProfile
    harvester: HarvesterCurve
    supercap: Supercap  # initial buffer state
    margin: float = 0.05
    sensors: tuple[str, ...] = protocol.SENSOR_CHANNELS
    adv_mode: str = "fixed"  # "fixed" (profile duration) | "uniform" (0.5..4 s)
    backoff_s: float = 60.0
    efficiency: float = 1.0

    def __post_init__(self) -> None:
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.adv_mode not in ("fixed", "uniform"):
            raise ValueError("adv_mode must be 'fixed' or 'uniform'")
        have = {s.name for s in self.profile.active_stages}
        missing = _REQUIRED_STAGES[self.kind] - have
        if missing:
            raise ValueError(
                f"profile lacks stages for {self.kind.value} node: "
                f"{sorted(m.value for m in missing)}"
            )


@dataclass
class NodeState:
    phase: Phase
    phase_deadline: float
    phase_started: float
    supercap: Supercap
    next_sleep_s: float = 0.0
    depleted: bool = False
    awaiting_reeval: bool = False
    timeout_extended: bool = False
    phase_nominal_s: float = 0.0
    session: Optional[ExchangeSession] = None
    sample: Optional[SensorSample] = None
    gw_request_end: float = 0.0
    # cycle bookkeeping (one cycle = one sleep period plus the active burst)
    cycle_index: int = 0
    cycle_start: float = 0.0
    cycle_v_start: float = 0.0
    cycle_consumed_j: float = 0.0
    cycle_harvested_j: float = 0.0
    total_consumed_j: float = 0.0
    total_harvested_j: float = 0.0
    last_energy_update: float = 0.0
    transitions: list[tuple[Phase, Phase]] = field(default_factory=list)


# Emissions returned to the kernel.
@dataclass(frozen=True)
class SendFrame:
    frame: Frame


@dataclass(frozen=True)
class SessionStarted:
    session: ExchangeSession


@dataclass(frozen=True)
class CycleFinished:
    outcome: SessionOutcome
    fail_reason: Optional[FailReason]


Emission = SendFrame | SessionStarted | CycleFinished


def initial_state(cfg: NodeConfig, first_sleep_s: float) -> NodeState:
    """Node boots asleep, charging, and wakes after its first solved sleep."""
    return NodeState(
        phase=Phase.SLEEPING,
        phase_deadline=first_sleep_s,
        phase_started=0.0,
        supercap=cfg.supercap,
        next_sleep_s=first_sleep_s,
        cycle_v_start=cfg.supercap.voltage_v,
    )


def schedule_next_cycle(
    cfg: NodeConfig, lux: float, assigned_s: Optional[float] = None
) -> Optional[float]:
    """Sleep duration to arm the wake timer with; None when infeasible.

    Locally solved sleeps stretch the whole cycle by (1 + margin);
    gateway-assigned sleeps are used verbatim.
    """
    if lux < 0:
        raise ValueError("lux must be >= 0")
    if assigned_s is not None:
        return assigned_s
    sol = solve_sleep_time(cfg.profile, cfg.harvester.power_mw(lux))
    if sol.feasibility is Feasibility.INFEASIBLE:
        return None
    if sol.feasibility is Feasibility.CONTINUOUS:
        return 0.0
    t_active, _ = active_totals(cfg.profile)
    return (t_active + sol.t_sleep_s) * (1.0 + cfg.margin) - t_active


def phase_power_mw(cfg: NodeConfig, phase: Phase) -> float:
    if phase is Phase.SLEEPING:
        return cfg.profile.sleep_power_mw
    stage = cfg.profile.stage(_PHASE_STAGE[cfg.kind][phase])
    return stage.current_ma * cfg.profile.voltage_v


def accrue_energy(state: NodeState, cfg: NodeConfig, now: float, lux: float) -> None:
    """Integrate harvest minus load from the last checkpoint up to now."""
    dt = now - state.last_energy_update
    if dt <= 0:
        return
    p_load = phase_power_mw(cfg, state.phase)
    p_harv = cfg.harvester.power_mw(lux)
    cap, depleted = supercap_step(
        state.supercap, p_harv - p_load, dt, cfg.efficiency
    )
    state.supercap = cap
    consumed = p_load * 1e-3 * dt
    harvested = p_harv * 1e-3 * dt
    state.cycle_consumed_j += consumed
    state.cycle_harvested_j += harvested
    state.total_consumed_j += consumed
    state.total_harvested_j += harvested
    state.last_energy_update = now
    if depleted:
        state.depleted = True


def _set_phase(
    state: NodeState, cfg: NodeConfig, phase: Phase, now: float, deadline: float
) -> None:
    allowed = LEGAL_TRANSITIONS[cfg.kind].get(state.phase, frozenset())
    if phase not in allowed:
        raise FsmError(
            f"illegal transition {state.phase.value} -> {phase.value} "
            f"for {cfg.kind.value} node"
        )
    state.transitions.append((state.phase, phase))
    state.phase = phase
    state.phase_started = now
    state.phase_deadline = deadline
    state.timeout_extended = False


def _stage_duration(cfg: NodeConfig, name: StageName) -> float:
    return cfg.profile.stage(name).duration_s


def _finish_cycle(
    state: NodeState,
    cfg: NodeConfig,
    now: float,
    lux: float,
    outcome: SessionOutcome,
    fail_reason: Optional[FailReason],
    assigned_sleep: Optional[float],
) -> list[Emission]:
    emissions: list[Emission] = [CycleFinished(outcome, fail_reason)]
    sleep = schedule_next_cycle(cfg, lux, assigned_s=assigned_sleep)
    if sleep is None:
        sleep = cfg.backoff_s
        state.awaiting_reeval = True
    state.next_sleep_s = sleep
    _set_phase(state, cfg, Phase.SLEEPING, now, now + sleep)
    state.session = None
    return emissions


def advance(
    state: NodeState,
    cfg: NodeConfig,
    now: float,
    *,
    lux: float,
    env: EnvironmentModel,
    rng,
) -> list[Emission]:
    """Handle the expiry of the current phase deadline."""
    if state.depleted and state.phase is not Phase.SLEEPING:
        # Brown-out mid-cycle: abort, recover in sleep, count the cycle failed.
        if state.session is not None:
            protocol.fail_session(state.session, FailReason.BROWN_OUT)
        emissions = [CycleFinished(SessionOutcome.FAILED, FailReason.BROWN_OUT)]
        state.next_sleep_s = cfg.backoff_s
        _set_phase(state, cfg, Phase.SLEEPING, now, now + cfg.backoff_s)
        state.session = None
        return emissions

    phase = state.phase

    if phase is Phase.SLEEPING:
        if state.depleted:
            if state.supercap.voltage_v > state.supercap.v_min:
                state.depleted = False
            else:
                _set_phase(state, cfg, Phase.SLEEPING, now, now + cfg.backoff_s)
                return []
        if state.awaiting_reeval:
            sleep = schedule_next_cycle(cfg, lux)
            if sleep is None:
                _set_phase(state, cfg, Phase.SLEEPING, now, now + cfg.backoff_s)
                return []
            state.awaiting_reeval = False
        if cfg.kind is NodeKind.BLE:
            _set_phase(
                state, cfg, Phase.SENSING, now,
                now + _stage_duration(cfg, StageName.SENSOR_READ),
            )
            return []
        # LIoT: read the LDR and open the session with an IR uplink.
        session = make_liot_session(
            cfg.node_id, now, lux=lux, requested_channels=cfg.sensors
        )
        state.session = session
        out = liot_exchange_step(session, None)
        assert out is not None
        state.gw_request_end = now + _stage_duration(cfg, StageName.GW_REQUEST)
        _set_phase(state, cfg, Phase.UPLINKING, now, now + out.airtime_s)
        return [SessionStarted(session), SendFrame(out)]

    if phase is Phase.SENSING and cfg.kind is NodeKind.BLE:
        state.sample = read_sensors(env, now)
        session = make_ble_session(cfg.node_id, now)
        state.session = session
        out = ble_exchange_step(session, None)
        assert out is not None
        if cfg.adv_mode == "fixed":
            adv = _stage_duration(cfg, StageName.BLE_ADVERTISE)
        else:
            adv = rng.uniform(0.5, 4.0)
        _set_phase(state, cfg, Phase.ADVERTISING, now, now + adv)
        return [SessionStarted(session), SendFrame(out)]

    if phase is Phase.ADVERTISING:
        session = state.session
        held = session.held if session else None
        if held is not None and held.kind is FrameKind.CONN_REQ:
            session.held = None
            nominal = _stage_duration(cfg, StageName.BLE_DATA_EXCHANGE)
            state.phase_nominal_s = nominal
            _set_phase(state, cfg, Phase.EXCHANGING, now, now + nominal)
            out = ble_exchange_step(session, held)
            return [SendFrame(out)] if out is not None else []
        if session is not None:
            protocol.fail_session(session, FailReason.NO_GATEWAY)
        return _finish_cycle(
            state, cfg, now, lux, SessionOutcome.FAILED, FailReason.NO_GATEWAY, None
        )

    if phase is Phase.EXCHANGING:
        session = state.session
        if session is not None and session.outcome is SessionOutcome.DELIVERED:
            return _finish_cycle(
                state, cfg, now, lux, SessionOutcome.DELIVERED, None, None
            )
        if not state.timeout_extended:
            # Await steps time out at twice their nominal duration.
            state.phase_deadline = state.phase_started + 2.0 * state.phase_nominal_s
            state.timeout_extended = True
            return []
        if session is not None:
            protocol.fail_session(session, FailReason.TIMEOUT)
        return _finish_cycle(
            state, cfg, now, lux, SessionOutcome.FAILED, FailReason.TIMEOUT, None
        )

    if phase is Phase.UPLINKING:
        state.phase_nominal_s = max(state.gw_request_end - now, 1e-9)
        _set_phase(state, cfg, Phase.AWAITING_REQUEST, now, state.gw_request_end)
        return []

    if phase is Phase.AWAITING_REQUEST:
        session = state.session
        held = session.held if session else None
        if held is not None and held.kind is FrameKind.SENSOR_REQUEST:
            _set_phase(
                state, cfg, Phase.SENSING, now,
                now + _stage_duration(cfg, StageName.LIOT_SENSOR_READ),
            )
            return []
        if not state.timeout_extended:
            state.phase_deadline = state.phase_started + 2.0 * state.phase_nominal_s
            state.timeout_extended = True
            return []
        if session is not None:
            protocol.fail_session(session, FailReason.TIMEOUT)
        return _finish_cycle(
            state, cfg, now, lux, SessionOutcome.FAILED, FailReason.TIMEOUT, None
        )

    if phase is Phase.SENSING and cfg.kind is NodeKind.LIOT:
        state.sample = read_sensors(env, now)
        session = state.session
        held = session.held
        session.held = None
        _set_phase(
            state, cfg, Phase.UPLOADING, now,
            now + _stage_duration(cfg, StageName.LIOT_DATA_UPLOAD),
        )
        out = liot_exchange_step(session, held)
        return [SendFrame(out)] if out is not None else []

    if phase is Phase.UPLOADING:
        nominal = _stage_duration(cfg, StageName.LIOT_SLEEP_SET)
        state.phase_nominal_s = nominal
        _set_phase(state, cfg, Phase.AWAITING_SLEEP_SET, now, now + nominal)
        session = state.session
        held = session.held if session else None
        if held is not None and held.kind is FrameKind.SLEEP_SET:
            # Short (subset) uploads finish before the measured full-upload
            # window ends, so the assignment can already be waiting.
            session.held = None
            out = liot_exchange_step(session, held)
            return [SendFrame(out)] if out is not None else []
        return []

    if phase is Phase.AWAITING_SLEEP_SET:
        session = state.session
        if session is not None and session.outcome is SessionOutcome.DELIVERED:
            return _finish_cycle(
                state, cfg, now, lux, SessionOutcome.DELIVERED, None,
                session.assigned_sleep_s,
            )
        if not state.timeout_extended:
            state.phase_deadline = state.phase_started + 2.0 * state.phase_nominal_s
            state.timeout_extended = True
            return []
        if session is not None:
            protocol.fail_session(session, FailReason.TIMEOUT)
        return _finish_cycle(
            state, cfg, now, lux, SessionOutcome.FAILED, FailReason.TIMEOUT, None
        )

    raise FsmError(f"unhandled phase {phase!r} for {cfg.kind.value} node")


def receive(
    state: NodeState, cfg: NodeConfig, frame: Frame, now: float
) -> list[Emission]:
    """Handle a frame delivered to this node."""
    if state.depleted:
        return []  # a browned-out node neither processes nor emits
    session = state.session
    if session is None or session.outcome is not SessionOutcome.PENDING:
        return []
    kind = frame.kind
    # Frames that arrive ahead of their service phase are held and consumed
    # at the phase boundary (connection setup, sensor request).
    if kind is FrameKind.CONN_REQ and state.phase is Phase.ADVERTISING:
        session.held = frame
        return []
    if kind is FrameKind.SENSOR_REQUEST and state.phase in (
        Phase.UPLINKING, Phase.AWAITING_REQUEST
    ):
        session.held = frame
        return []
    if kind in (FrameKind.ESS_ATTR_REQUEST, FrameKind.CONFIG_OR_DISCONNECT):
        if state.phase is Phase.EXCHANGING:
            out = ble_exchange_step(session, frame)
            return [SendFrame(out)] if out is not None else []
        protocol.fail_session(session, FailReason.PROTOCOL_VIOLATION)
        return []
    if kind is FrameKind.SLEEP_SET:
        if state.phase is Phase.AWAITING_SLEEP_SET:
            out = liot_exchange_step(session, frame)
            return [SendFrame(out)] if out is not None else []
        if state.phase is Phase.UPLOADING:
            session.held = frame
            return []
        protocol.fail_session(session, FailReason.PROTOCOL_VIOLATION)
        return []
    # Anything else is out of sequence for a node-addressed frame.
    protocol.fail_session(session, FailReason.PROTOCOL_VIOLATION)
    return []
