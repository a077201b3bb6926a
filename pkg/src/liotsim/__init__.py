"""Batteryless BLE / light-based IoT node simulator and energy-budget solver."""

from .energy import (
    BLE_HARVESTER,
    BLE_PROFILE,
    CycleBudget,
    EnergyProfile,
    Feasibility,
    HarvesterCurve,
    LIOT_HARVESTER,
    LIOT_PROFILE,
    SleepSolution,
    Stage,
    StageName,
    Supercap,
    active_totals,
    builtin_harvester,
    builtin_profile,
    cycle_budget,
    implied_harvest_power,
    solve_sleep_time,
    stage_energy,
    supercap_step,
)
from .fsm import NodeConfig, NodeKind, NodeState, Phase, schedule_next_cycle
from .kernel import (
    ChannelModel,
    GatewayConfig,
    IlluminationProfile,
    RunResult,
    Scenario,
    deliver,
    per_frame_loss_for_session_pdr,
    run,
)
from .metrics import CycleRecord, NodeSummary, RunSummary
from .protocol import (
    AirtimeModel,
    ExchangeSession,
    FailReason,
    Frame,
    FrameKind,
    LinkType,
    SessionOutcome,
    ble_exchange_step,
    frame_airtime,
    liot_exchange_step,
    make_ble_session,
    make_liot_session,
)
from .scenario import load_preset, load_scenario_file, PRESET_NAMES
from .sensors import EnvironmentModel, SensorSample, read_sensors

__version__ = "0.1.0"
