"""Deterministic discrete-event engine.

Virtual clock with a (time, insertion-seq) ordered heap, a gateway agent,
a seeded Bernoulli loss channel, time-varying illumination, and multi-node
scenario execution.  One kernel owns all of its state; identical scenario
and seed give byte-identical results.
"""

from __future__ import annotations

import dataclasses
import hashlib
import heapq
import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from . import fsm, metrics
from .energy import Feasibility, solve_sleep_time
from .fsm import NodeConfig, NodeState, Phase
from .protocol import (
    GATEWAY_ID,
    ExchangeSession,
    Frame,
    FrameKind,
    LinkType,
    SessionOutcome,
    exchange_step,
)
from .sensors import EnvironmentModel


class EventKind(Enum):
    TIMER_FIRED = "timer_fired"
    FRAME_DELIVERED = "frame_delivered"
    FRAME_LOST = "frame_lost"
    SUPERCAP_SAMPLED = "supercap_sampled"
    RUN_ENDED = "run_ended"


@dataclass(frozen=True)
class Event:
    time: float
    seq: int
    kind: EventKind
    node_id: Optional[str] = None
    frame: Optional[Frame] = None


@dataclass(frozen=True)
class ChannelModel:
    """Per-frame Bernoulli loss; a scalar applies to every link."""

    loss: Union[float, dict[LinkType, float]] = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        probs = (
            [self.loss] if isinstance(self.loss, float) else list(self.loss.values())
        )
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise ValueError("loss probabilities must lie in [0, 1]")

    def loss_for(self, link: LinkType) -> float:
        if isinstance(self.loss, dict):
            return self.loss.get(link, 0.0)
        return self.loss


def deliver(frame: Frame, channel: ChannelModel, rng: random.Random) -> bool:
    """Bernoulli(1 - loss) delivery decision for one frame."""
    p = channel.loss_for(frame.link)
    if p <= 0.0:
        return True
    if p >= 1.0:
        return False
    return rng.random() >= p


def per_frame_loss_for_session_pdr(target_pdr: float, n_frames: int) -> float:
    """Per-frame loss so an n-frame session succeeds with the target rate."""
    if not (0.0 < target_pdr <= 1.0):
        raise ValueError("target_pdr must be in (0, 1]")
    if n_frames <= 0:
        raise ValueError("n_frames must be >= 1")
    return 1.0 - target_pdr ** (1.0 / n_frames)


# Frames a session must carry end to end for delivery (the trailing LIoT Ack
# only closes the gateway side, see protocol.liot_exchange_step).
BLE_SESSION_FRAMES = 5
LIOT_SESSION_FRAMES = 4


@dataclass(frozen=True)
class IlluminationProfile:
    """Illuminance vs time: constant, stepwise, or sinusoidal, optional jitter."""

    kind: str = "constant"
    lux: float = 700.0
    steps: tuple[tuple[float, float], ...] = ()  # (t_start, lux)
    mean: float = 0.0
    amplitude: float = 0.0
    period_s: float = 86400.0
    jitter_pct: float = 0.0  # seeded per-second multiplicative jitter
    jitter_seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "step", "sinusoid"):
            raise ValueError(f"unknown illumination kind {self.kind!r}")
        if self.kind == "step":
            if not self.steps:
                raise ValueError("step profile needs at least one step")
            ts = [t for t, _ in self.steps]
            if ts[0] != 0.0 or any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("steps must start at t=0 and increase")
        if self.kind == "sinusoid" and self.amplitude > self.mean:
            raise ValueError("sinusoid would go below zero lux")
        if not (0.0 <= self.jitter_pct < 1.0):
            raise ValueError("jitter_pct must be in [0, 1)")

    def lux_at(self, t_s: float, max_t: Optional[float] = None) -> float:
        if t_s < 0 or (max_t is not None and t_s > max_t):
            raise ValueError(f"time {t_s} outside the profile domain")
        if self.kind == "constant":
            v = self.lux
        elif self.kind == "step":
            v = self.steps[0][1]
            for t_start, lux in self.steps:
                if t_start <= t_s:
                    v = lux
                else:
                    break
        else:
            v = self.mean + self.amplitude * math.sin(
                2.0 * math.pi * t_s / self.period_s
            )
        if self.jitter_pct > 0:
            rng = random.Random(f"{self.jitter_seed}|lux|{math.floor(t_s)}")
            v *= 1.0 + rng.uniform(-self.jitter_pct, self.jitter_pct)
        return max(v, 0.0)


@dataclass(frozen=True)
class GatewayConfig:
    present: bool = True
    # Single optical transceiver: one LIoT session serviced at a time.
    liot_concurrency: int = 1


@dataclass(frozen=True)
class Scenario:
    duration_s: float
    nodes: tuple[NodeConfig, ...]
    channel: ChannelModel = ChannelModel()
    illumination: IlluminationProfile = IlluminationProfile()
    gateway: GatewayConfig = GatewayConfig()
    environment: EnvironmentModel = EnvironmentModel()
    seed: int = 1
    sample_interval_s: float = 1.0

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("duration must be > 0")
        if not self.nodes:
            raise ValueError("scenario needs at least one node")
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        if self.sample_interval_s <= 0:
            raise ValueError("sample interval must be > 0")


def scenario_fingerprint(scenario: Scenario) -> str:
    blob = json.dumps(dataclasses.asdict(scenario), default=str, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class FrameLogEntry:
    sent_s: float
    arrival_s: float
    src: str
    dst: str
    link: str
    kind: str
    payload_bytes: int
    delivered: bool


@dataclass
class NodeResult:
    records: list[metrics.CycleRecord] = field(default_factory=list)
    trace: list[tuple[float, float]] = field(default_factory=list)
    packets_sent: int = 0
    packets_received: int = 0
    total_consumed_j: float = 0.0
    total_harvested_j: float = 0.0
    trailing_consumed_j: float = 0.0  # consumed in the unfinished final cycle
    transitions: list[tuple[Phase, Phase]] = field(default_factory=list)


@dataclass
class RunResult:
    summary: metrics.RunSummary
    nodes: dict[str, NodeResult]
    frames: list[FrameLogEntry]

    @property
    def records(self) -> list[metrics.CycleRecord]:
        return [r for nr in self.nodes.values() for r in nr.records]

    @property
    def traces(self) -> dict[str, list[tuple[float, float]]]:
        return {nid: nr.trace for nid, nr in self.nodes.items()}


class _Kernel:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.clock = 0.0
        self._heap: list[tuple[float, int, Event]] = []
        self._seq = 0
        self.rng_channel = random.Random(
            f"{scenario.seed}|channel|{scenario.channel.seed}"
        )
        self.node_cfg = {n.node_id: n for n in scenario.nodes}
        self.node_state: dict[str, NodeState] = {}
        self.node_rng = {
            n.node_id: random.Random(f"{scenario.seed}|node|{n.node_id}")
            for n in scenario.nodes
        }
        self.results = {n.node_id: NodeResult() for n in scenario.nodes}
        self.frames: list[FrameLogEntry] = []
        self.gw_liot_busy: Optional[ExchangeSession] = None
        self.env = dataclasses.replace(scenario.environment, seed=scenario.seed)

    # -- plumbing ------------------------------------------------------------

    def _push(self, ev: Event) -> None:
        heapq.heappush(self._heap, (ev.time, ev.seq, ev))

    def _mk_event(self, time: float, kind: EventKind, **kw) -> Event:
        self._seq += 1
        return Event(time=time, seq=self._seq, kind=kind, **kw)

    def _lux(self, t: float) -> float:
        return self.sc.illumination.lux_at(t, max_t=self.sc.duration_s)

    def _schedule_timer(self, node_id: str) -> None:
        state = self.node_state[node_id]
        self._push(
            self._mk_event(state.phase_deadline, EventKind.TIMER_FIRED, node_id=node_id)
        )

    def _send(self, frame: Frame, now: float) -> None:
        ok = deliver(frame, self.sc.channel, self.rng_channel)
        arrival = now + frame.airtime_s
        self.frames.append(
            FrameLogEntry(
                sent_s=now,
                arrival_s=arrival,
                src=frame.src,
                dst=frame.dst,
                link=frame.link.value,
                kind=frame.kind.value,
                payload_bytes=frame.payload_bytes,
                delivered=ok,
            )
        )
        kind = EventKind.FRAME_DELIVERED if ok else EventKind.FRAME_LOST
        self._push(self._mk_event(arrival, kind, frame=frame))

    def _handle_emissions(self, node_id: str, emissions, now: float) -> None:
        state = self.node_state[node_id]
        result = self.results[node_id]
        for em in emissions:
            if isinstance(em, fsm.SendFrame):
                self._send(em.frame, now)
            elif isinstance(em, fsm.SessionStarted):
                result.packets_sent += 1
            elif isinstance(em, fsm.CycleFinished):
                record = metrics.CycleRecord(
                    node_id=node_id,
                    cycle_index=state.cycle_index,
                    start_s=state.cycle_start,
                    end_s=now,
                    outcome=em.outcome,
                    fail_reason=em.fail_reason,
                    scap_v_start=state.cycle_v_start,
                    scap_v_end=state.supercap.voltage_v,
                    energy_consumed_j=state.cycle_consumed_j,
                    energy_harvested_j=state.cycle_harvested_j,
                )
                result.records.append(record)
                if em.outcome is SessionOutcome.DELIVERED:
                    result.packets_received += 1
                state.cycle_index += 1
                state.cycle_start = now
                state.cycle_v_start = state.supercap.voltage_v
                state.cycle_consumed_j = 0.0
                state.cycle_harvested_j = 0.0
                if self.gw_liot_busy is not None and (
                    self.gw_liot_busy.node_id == node_id
                ):
                    self.gw_liot_busy = None

    # -- gateway -------------------------------------------------------------

    def _assigned_sleep_policy(self, cfg: NodeConfig):
        def policy(lux: float) -> float:
            sol = solve_sleep_time(cfg.profile, cfg.harvester.power_mw(lux))
            if sol.feasibility is Feasibility.FINITE:
                return sol.t_sleep_s
            if sol.feasibility is Feasibility.CONTINUOUS:
                return 0.0
            return cfg.backoff_s

        return policy

    def _gateway_receive(self, frame: Frame, now: float) -> None:
        if not self.sc.gateway.present:
            return
        cfg = self.node_cfg.get(frame.src)
        state = self.node_state.get(frame.src)
        if cfg is None or state is None:
            return
        session = state.session
        if session is None or session.outcome is not SessionOutcome.PENDING:
            return
        if frame.kind is FrameKind.NODE_ID_LUX:
            busy = self.gw_liot_busy
            if busy is not None and busy is not session and (
                busy.outcome is SessionOutcome.PENDING
            ):
                return  # single optical transceiver is occupied
            self.gw_liot_busy = session
            session.sleep_for_lux = self._assigned_sleep_policy(cfg)
        out = exchange_step(session, frame)
        if frame.kind is FrameKind.ACK and self.gw_liot_busy is session:
            self.gw_liot_busy = None
        if out is not None:
            self._send(out, now)

    # -- main loop -----------------------------------------------------------

    def run(self) -> RunResult:
        sc = self.sc
        for cfg in sc.nodes:
            first = fsm.schedule_next_cycle(cfg, self._lux(0.0))
            state = fsm.initial_state(cfg, first if first is not None else cfg.backoff_s)
            if first is None:
                state.awaiting_reeval = True
            self.node_state[cfg.node_id] = state
            self._schedule_timer(cfg.node_id)
        self._push(self._mk_event(0.0, EventKind.SUPERCAP_SAMPLED))
        self._push(self._mk_event(sc.duration_s, EventKind.RUN_ENDED))

        while self._heap:
            _, _, ev = heapq.heappop(self._heap)
            if ev.time < self.clock:
                raise RuntimeError("causality violation: event in the past")
            self.clock = ev.time

            if ev.kind is EventKind.RUN_ENDED:
                self._finalize(ev.time)
                break

            if ev.kind is EventKind.SUPERCAP_SAMPLED:
                for node_id, state in self.node_state.items():
                    fsm.accrue_energy(
                        state, self.node_cfg[node_id], ev.time, self._lux(ev.time)
                    )
                    self.results[node_id].trace.append(
                        (ev.time, state.supercap.voltage_v)
                    )
                nxt = ev.time + sc.sample_interval_s
                if nxt <= sc.duration_s:
                    self._push(self._mk_event(nxt, EventKind.SUPERCAP_SAMPLED))
                continue

            if ev.kind is EventKind.TIMER_FIRED:
                node_id = ev.node_id
                state = self.node_state[node_id]
                if ev.time != state.phase_deadline:
                    continue  # superseded deadline
                cfg = self.node_cfg[node_id]
                lux = self._lux(ev.time)
                fsm.accrue_energy(state, cfg, ev.time, lux)
                emissions = fsm.advance(
                    state, cfg, ev.time, lux=lux, env=self.env,
                    rng=self.node_rng[node_id],
                )
                self._handle_emissions(node_id, emissions, ev.time)
                self._schedule_timer(node_id)
                continue

            if ev.kind is EventKind.FRAME_DELIVERED:
                frame = ev.frame
                if frame.dst == GATEWAY_ID:
                    self._gateway_receive(frame, ev.time)
                elif frame.dst in self.node_state:
                    cfg = self.node_cfg[frame.dst]
                    state = self.node_state[frame.dst]
                    fsm.accrue_energy(state, cfg, ev.time, self._lux(ev.time))
                    emissions = fsm.receive(state, cfg, frame, ev.time)
                    self._handle_emissions(frame.dst, emissions, ev.time)
                continue

            # FRAME_LOST: nothing to do, timeouts recover.

        return self._result()

    def _finalize(self, end: float) -> None:
        for node_id, state in self.node_state.items():
            fsm.accrue_energy(state, self.node_cfg[node_id], end, self._lux(end))
            trace = self.results[node_id].trace
            if not trace or trace[-1][0] < end:
                trace.append((end, state.supercap.voltage_v))
            res = self.results[node_id]
            res.total_consumed_j = state.total_consumed_j
            res.total_harvested_j = state.total_harvested_j
            res.trailing_consumed_j = state.cycle_consumed_j
            res.transitions = list(state.transitions)

    def _result(self) -> RunResult:
        node_summaries = tuple(
            metrics.summarize_node(
                cfg.node_id,
                cfg.kind.value,
                self.results[cfg.node_id].packets_sent,
                self.results[cfg.node_id].packets_received,
                self.results[cfg.node_id].trace,
            )
            for cfg in self.sc.nodes
        )
        summary = metrics.RunSummary(
            duration_s=self.sc.duration_s,
            seed=self.sc.seed,
            config_hash=scenario_fingerprint(self.sc),
            nodes=node_summaries,
        )
        return RunResult(summary=summary, nodes=self.results, frames=self.frames)


def run(scenario: Scenario) -> RunResult:
    """Execute a scenario to completion; deterministic for a given seed."""
    return _Kernel(scenario).run()
