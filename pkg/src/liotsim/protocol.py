"""Message-level models of the BLE and optical (IR up / VLC down) exchanges.

Each exchange is a serialized handshake: given the frame just delivered,
the step function returns the next frame to transmit (whichever side sends
it) and advances the session state.  Airtimes follow a linear per-link model
calibrated against the measured stage durations of the two node builds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

GATEWAY_ID = "gw"


class LinkType(str, Enum):
    BLE_ADV = "ble_adv"
    BLE_CONN = "ble_conn"
    IR_UPLINK = "ir_uplink"
    VLC_DOWNLINK = "vlc_downlink"


class FrameKind(str, Enum):
    ADV_ESS = "adv_ess"
    CONN_REQ = "conn_req"
    ESS_ATTR_REQUEST = "ess_attr_request"
    ESS_ATTR_DATA = "ess_attr_data"
    CONFIG_OR_DISCONNECT = "config_or_disconnect"
    NODE_ID_LUX = "node_id_lux"
    SENSOR_REQUEST = "sensor_request"
    SENSOR_DATA = "sensor_data"
    SLEEP_SET = "sleep_set"
    ACK = "ack"


# Which link each frame kind is allowed on (mutually exclusive media).
LINK_FOR_KIND: dict[FrameKind, LinkType] = {
    FrameKind.ADV_ESS: LinkType.BLE_ADV,
    FrameKind.CONN_REQ: LinkType.BLE_ADV,
    FrameKind.ESS_ATTR_REQUEST: LinkType.BLE_CONN,
    FrameKind.ESS_ATTR_DATA: LinkType.BLE_CONN,
    FrameKind.CONFIG_OR_DISCONNECT: LinkType.BLE_CONN,
    FrameKind.NODE_ID_LUX: LinkType.IR_UPLINK,
    FrameKind.SENSOR_REQUEST: LinkType.VLC_DOWNLINK,
    FrameKind.SENSOR_DATA: LinkType.IR_UPLINK,
    FrameKind.SLEEP_SET: LinkType.VLC_DOWNLINK,
    FrameKind.ACK: LinkType.IR_UPLINK,
}

ADV_CHANNELS = (37, 38, 39)
SENSOR_CHANNELS = ("temperature", "humidity", "pressure", "gas")


@dataclass(frozen=True)
class AirtimeModel:
    """Per-link airtime constants: overhead + payload_bytes * per_byte.

    Defaults are calibrated so that the full 4-channel optical upload takes
    3.58 s and the BLE attribute exchange fits its 1.3 s stage.
    """

    overhead_s: dict[LinkType, float]
    per_byte_s: dict[LinkType, float]

    @classmethod
    def default(cls) -> "AirtimeModel":
        return cls(
            overhead_s={
                LinkType.BLE_ADV: 0.001,
                LinkType.BLE_CONN: 0.02,
                LinkType.IR_UPLINK: 0.02,
                LinkType.VLC_DOWNLINK: 0.01,
            },
            per_byte_s={
                LinkType.BLE_ADV: 0.0001,
                LinkType.BLE_CONN: 0.01,
                LinkType.IR_UPLINK: (3.58 - 0.02) / 64.0,
                LinkType.VLC_DOWNLINK: 0.005,
            },
        )


DEFAULT_AIRTIME = AirtimeModel.default()

# Default payload sizes (bytes).
ADV_PAYLOAD = 31
CONN_REQ_PAYLOAD = 22
ATTR_REQUEST_PAYLOAD = 4
ATTR_DATA_PAYLOAD = 117
CONFIG_PAYLOAD = 2
NODE_ID_LUX_PAYLOAD = 3
SENSOR_REQUEST_PAYLOAD = 1
BYTES_PER_OPTICAL_CHANNEL = 16
SLEEP_SET_PAYLOAD = 2
ACK_PAYLOAD = 0


def frame_airtime(
    kind: FrameKind,
    payload_bytes: int,
    link: LinkType,
    model: AirtimeModel = DEFAULT_AIRTIME,
) -> float:
    if payload_bytes < 0:
        raise ValueError("payload_bytes must be >= 0")
    if LINK_FOR_KIND[kind] is not link:
        raise ValueError(f"{kind.value} frames are not carried on {link.value}")
    return model.overhead_s[link] + payload_bytes * model.per_byte_s[link]


@dataclass(frozen=True)
class Frame:
    src: str
    dst: str
    link: LinkType
    kind: FrameKind
    payload_bytes: int
    airtime_s: float
    channel: Optional[int] = None  # BLE radio channel
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.airtime_s <= 0:
            raise ValueError("airtime must be > 0")
        if LINK_FOR_KIND[self.kind] is not self.link:
            raise ValueError(f"{self.kind.value} not allowed on {self.link.value}")
        if self.link is LinkType.BLE_ADV and self.channel not in ADV_CHANNELS:
            raise ValueError("BLE advertising frames must use channels 37-39")
        if self.link is LinkType.BLE_CONN and not (
            self.channel is not None and 0 <= self.channel <= 36
        ):
            raise ValueError("BLE connection frames must use channels 0-36")


class SessionOutcome(Enum):
    PENDING = "pending"
    DELIVERED = "delivered"
    FAILED = "failed"


class FailReason(Enum):
    TIMEOUT = "timeout"
    NO_GATEWAY = "no_gateway"
    PROTOCOL_VIOLATION = "protocol_violation"
    BROWN_OUT = "brown_out"


class BleStep(Enum):
    START = 0
    ADV_SENT = 1
    CONN_SENT = 2
    ATTR_REQUESTED = 3
    ATTR_SENT = 4
    DONE = 5


class LiotStep(Enum):
    START = 0
    ID_SENT = 1
    REQUEST_SENT = 2
    DATA_SENT = 3
    SLEEP_SENT = 4
    DONE = 5


@dataclass
class ExchangeSession:
    """State of one node-gateway handshake attempt."""

    node_id: str
    protocol: str  # "ble" | "liot"
    started_at: float
    step: Enum
    outcome: SessionOutcome = SessionOutcome.PENDING
    fail_reason: Optional[FailReason] = None
    deadline: Optional[float] = None
    lux: float = 0.0
    requested_channels: tuple[str, ...] = SENSOR_CHANNELS
    assigned_sleep_s: Optional[float] = None
    # Gateway policy: sleep seconds to assign for a reported illuminance.
    sleep_for_lux: Optional[Callable[[float], float]] = None
    airtime: AirtimeModel = field(default_factory=AirtimeModel.default)
    adv_channel: int = 37
    conn_channel: int = 5
    attr_payload_bytes: int = ATTR_DATA_PAYLOAD
    held: Optional[Frame] = None  # frame received outside its service phase


def make_ble_session(node_id: str, started_at: float, **kw) -> ExchangeSession:
    return ExchangeSession(node_id, "ble", started_at, BleStep.START, **kw)


def make_liot_session(node_id: str, started_at: float, **kw) -> ExchangeSession:
    return ExchangeSession(node_id, "liot", started_at, LiotStep.START, **kw)


def fail_session(session: ExchangeSession, reason: FailReason) -> None:
    if session.outcome is SessionOutcome.PENDING:
        session.outcome = SessionOutcome.FAILED
        session.fail_reason = reason


def _frame(
    session: ExchangeSession,
    src: str,
    dst: str,
    kind: FrameKind,
    payload: int,
    channel: Optional[int] = None,
    meta: Optional[dict] = None,
) -> Frame:
    link = LINK_FOR_KIND[kind]
    return Frame(
        src=src,
        dst=dst,
        link=link,
        kind=kind,
        payload_bytes=payload,
        airtime_s=frame_airtime(kind, payload, link, session.airtime),
        channel=channel,
        meta=meta or {},
    )


def ble_exchange_step(
    session: ExchangeSession, incoming: Optional[Frame]
) -> Optional[Frame]:
    """Advance the BLE handshake; returns the next frame to transmit, if any.

    Sequence: AdvEss -> ConnReq -> EssAttrRequest -> EssAttrData ->
    ConfigOrDisconnect -> Delivered.  An out-of-sequence frame tears the
    session down as a protocol violation.
    """
    if session.protocol != "ble":
        raise ValueError("not a BLE session")
    if session.outcome is not SessionOutcome.PENDING:
        return None
    node, gw = session.node_id, GATEWAY_ID
    step = session.step
    kind = incoming.kind if incoming is not None else None

    if step is BleStep.START and kind is None:
        session.step = BleStep.ADV_SENT
        return _frame(session, node, gw, FrameKind.ADV_ESS, ADV_PAYLOAD,
                      channel=session.adv_channel)
    if step is BleStep.ADV_SENT and kind is FrameKind.ADV_ESS:
        session.step = BleStep.CONN_SENT
        return _frame(session, gw, node, FrameKind.CONN_REQ, CONN_REQ_PAYLOAD,
                      channel=session.adv_channel)
    if step is BleStep.CONN_SENT and kind is FrameKind.CONN_REQ:
        session.step = BleStep.ATTR_REQUESTED
        return _frame(session, gw, node, FrameKind.ESS_ATTR_REQUEST,
                      ATTR_REQUEST_PAYLOAD, channel=session.conn_channel)
    if step is BleStep.ATTR_REQUESTED and kind is FrameKind.ESS_ATTR_REQUEST:
        session.step = BleStep.ATTR_SENT
        return _frame(session, node, gw, FrameKind.ESS_ATTR_DATA,
                      session.attr_payload_bytes, channel=session.conn_channel)
    if step is BleStep.ATTR_SENT and kind is FrameKind.ESS_ATTR_DATA:
        session.step = BleStep.DONE
        return _frame(session, gw, node, FrameKind.CONFIG_OR_DISCONNECT,
                      CONFIG_PAYLOAD, channel=session.conn_channel)
    if step is BleStep.DONE and kind is FrameKind.CONFIG_OR_DISCONNECT:
        # Connection closed by the gateway: the attributes were received.
        session.outcome = SessionOutcome.DELIVERED
        return None
    fail_session(session, FailReason.PROTOCOL_VIOLATION)
    return None


def liot_exchange_step(
    session: ExchangeSession, incoming: Optional[Frame]
) -> Optional[Frame]:
    """Advance the optical handshake; returns the next frame to transmit.

    Sequence: NodeIdLux(IR) -> SensorRequest(VLC) -> SensorData(IR) ->
    SleepSet(VLC) -> Ack(IR).  The session counts as delivered once the
    node acknowledges the assigned sleep time.
    """
    if session.protocol != "liot":
        raise ValueError("not a LIoT session")
    if session.outcome is not SessionOutcome.PENDING:
        return None
    node, gw = session.node_id, GATEWAY_ID
    step = session.step
    kind = incoming.kind if incoming is not None else None

    if step is LiotStep.START and kind is None:
        session.step = LiotStep.ID_SENT
        return _frame(session, node, gw, FrameKind.NODE_ID_LUX,
                      NODE_ID_LUX_PAYLOAD, meta={"lux": session.lux})
    if step is LiotStep.ID_SENT and kind is FrameKind.NODE_ID_LUX:
        session.step = LiotStep.REQUEST_SENT
        return _frame(session, gw, node, FrameKind.SENSOR_REQUEST,
                      SENSOR_REQUEST_PAYLOAD,
                      meta={"channels": session.requested_channels})
    if step is LiotStep.REQUEST_SENT and kind is FrameKind.SENSOR_REQUEST:
        session.step = LiotStep.DATA_SENT
        payload = BYTES_PER_OPTICAL_CHANNEL * len(session.requested_channels)
        return _frame(session, node, gw, FrameKind.SENSOR_DATA, payload)
    if step is LiotStep.DATA_SENT and kind is FrameKind.SENSOR_DATA:
        session.step = LiotStep.SLEEP_SENT
        if session.sleep_for_lux is None:
            raise ValueError("LIoT session needs a sleep_for_lux policy")
        reported = incoming.meta.get("lux", session.lux) if incoming else session.lux
        session.assigned_sleep_s = session.sleep_for_lux(reported)
        return _frame(session, gw, node, FrameKind.SLEEP_SET, SLEEP_SET_PAYLOAD,
                      meta={"sleep_s": session.assigned_sleep_s})
    if step is LiotStep.SLEEP_SENT and kind is FrameKind.SLEEP_SET:
        session.step = LiotStep.DONE
        # Delivered once the acknowledgment goes out; a lost Ack only keeps
        # the gateway from closing early, the readings were already decoded.
        session.outcome = SessionOutcome.DELIVERED
        return _frame(session, node, gw, FrameKind.ACK, ACK_PAYLOAD)
    fail_session(session, FailReason.PROTOCOL_VIOLATION)
    return None


def exchange_step(
    session: ExchangeSession, incoming: Optional[Frame]
) -> Optional[Frame]:
    if session.protocol == "ble":
        return ble_exchange_step(session, incoming)
    return liot_exchange_step(session, incoming)
