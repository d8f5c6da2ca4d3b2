"""Per-device behavioral features from summarized traffic flows.

Flows arrive as JSON lines (one record per line); features accumulate
over fixed-length windows (default 10 minutes) and reset whenever a
window is emitted.  Packet capture itself is out of scope; any conformer
to the FlowRecord schema can feed this module.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, Iterator, TextIO

DEFAULT_MAX_PERIOD = 600.0  # seconds

DNS_PORT = 53
NTP_PORT = 123

FEATURE_COLUMNS = [
    "totalSleepTime",
    "totalActiveTime",
    "totalFlowVolume",
    "flowRate",
    "avgPacketSize",
    "numberOfServers",
    "numberOfProtocols",
    "numberOfUniqueDNS",
    "DNSinterval",
    "NTPinterval",
]

_REQUIRED_FIELDS = (
    "device_mac",
    "src_addr",
    "dst_addr",
    "dst_port",
    "protocol",
    "start_time",
    "end_time",
    "bytes",
    "packets",
)


class FlowError(ValueError):
    """Malformed or mis-ordered flow input."""


@dataclass(frozen=True)
class FlowRecord:
    """One summarized traffic flow for a single device."""

    device_mac: str
    src_addr: str
    dst_addr: str
    dst_port: int
    protocol: int
    start_time: float
    end_time: float
    bytes: int
    packets: int
    dns_query: str | None = None

    def __post_init__(self):
        if self.end_time < self.start_time:
            raise FlowError(
                f"flow ends ({self.end_time}) before it starts ({self.start_time})"
            )
        if not 0 <= self.dst_port <= 65535:
            raise FlowError(f"dst_port {self.dst_port} outside 0..65535")
        if self.bytes < 0 or self.packets < 0:
            raise FlowError("bytes and packets must be nonnegative")
        if self.bytes > 0 and self.packets < 1:
            raise FlowError("a flow with bytes must carry at least one packet")

    @classmethod
    def from_json(cls, line: str) -> "FlowRecord":
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FlowError(f"invalid JSON flow record: {exc}") from exc
        missing = [f for f in _REQUIRED_FIELDS if f not in raw]
        if missing:
            raise FlowError(f"flow record missing fields: {', '.join(missing)}")
        return cls(
            device_mac=str(raw["device_mac"]),
            src_addr=str(raw["src_addr"]),
            dst_addr=str(raw["dst_addr"]),
            dst_port=int(raw["dst_port"]),
            protocol=int(raw["protocol"]),
            start_time=float(raw["start_time"]),
            end_time=float(raw["end_time"]),
            bytes=int(raw["bytes"]),
            packets=int(raw["packets"]),
            dns_query=raw.get("dns_query"),
        )


@dataclass(frozen=True)
class FeatureRow:
    """One labeled sample: the ten windowed features plus the device id."""

    totalSleepTime: float
    totalActiveTime: float
    totalFlowVolume: int
    flowRate: float
    avgPacketSize: float
    numberOfServers: int
    numberOfProtocols: int
    numberOfUniqueDNS: int
    DNSinterval: float
    NTPinterval: float
    device_id: int

    def as_csv_values(self) -> list:
        return [getattr(self, col) for col in FEATURE_COLUMNS] + [self.device_id]


@dataclass(frozen=True)
class DeviceTable:
    """MAC address -> (device name, contiguous integer id)."""

    entries: dict[str, tuple[str, int]]

    def __post_init__(self):
        ids = sorted(device_id for _, device_id in self.entries.values())
        if ids != list(range(len(ids))):
            raise FlowError(f"device ids must be contiguous from 0, got {ids}")

    @classmethod
    def from_csv(cls, handle: TextIO) -> "DeviceTable":
        entries = {}
        for row in csv.DictReader(handle):
            entries[row["mac"]] = (row["name"], int(row["device_id"]))
        if len(entries) == 0:
            raise FlowError("device table is empty")
        return cls(entries)

    def device_id(self, mac: str) -> int | None:
        entry = self.entries.get(mac)
        return entry[1] if entry else None


class _WindowAccumulator:
    def __init__(self):
        self.reset()

    def reset(self):
        self.window_start = None
        self.last_end = 0.0
        self.sleep = 0.0
        self.active = 0.0
        self.volume = 0
        self.packets = 0
        self.ports: set[int] = set()
        self.servers: set[str] = set()
        self.dns_queries: set[str] = set()
        self.dns_interval = 0.0
        self.ntp_interval = 0.0

    def emit(self, device_id: int) -> FeatureRow:
        flow_rate = self.volume / self.active if self.active > 0.0 else 0.0
        avg_packet = self.volume / self.packets if self.packets > 0 else 0.0
        return FeatureRow(
            totalSleepTime=self.sleep,
            totalActiveTime=self.active,
            totalFlowVolume=self.volume,
            flowRate=flow_rate,
            avgPacketSize=avg_packet,
            numberOfServers=len(self.servers),
            numberOfProtocols=len(self.ports),
            numberOfUniqueDNS=len(self.dns_queries),
            DNSinterval=self.dns_interval,
            NTPinterval=self.ntp_interval,
            device_id=device_id,
        )


def extract_features(
    flows: Iterable[FlowRecord],
    device_id: int,
    max_period: float = DEFAULT_MAX_PERIOD,
) -> list[FeatureRow]:
    """Fold one device's time-ordered flows into windowed feature rows.

    A window closes (and all accumulators reset) once a flow's end time
    reaches ``max_period`` past the window's first flow; the trailing
    partial window is discarded.  Overlapping flows contribute no
    negative sleep, and the gap that spans a window boundary is charged
    to neither window.  DNS (53) and NTP (123) flows feed their interval
    features and are excluded from the server count, but their ports do
    count toward the protocol count.
    """
    if max_period <= 0:
        raise FlowError("max_period must be positive")
    acc = _WindowAccumulator()
    rows = []
    prev_start = None
    for flow in flows:
        if prev_start is not None and flow.start_time < prev_start:
            raise FlowError(
                f"out-of-order flow: start {flow.start_time} precedes "
                f"previous start {prev_start}"
            )
        prev_start = flow.start_time

        if acc.window_start is None:
            acc.window_start = flow.start_time
        else:
            acc.sleep += max(0.0, flow.start_time - acc.last_end)

        flow_time = flow.end_time - flow.start_time
        acc.active += flow_time
        acc.volume += flow.bytes
        acc.packets += flow.packets
        acc.ports.add(flow.dst_port)
        if flow.dst_port == DNS_PORT:
            acc.dns_interval += flow_time
            if flow.dns_query is not None:
                acc.dns_queries.add(flow.dns_query)
        elif flow.dst_port == NTP_PORT:
            acc.ntp_interval += flow_time
        else:
            acc.servers.add(flow.dst_addr)
        acc.last_end = flow.end_time

        if flow.end_time - acc.window_start >= max_period:
            rows.append(acc.emit(device_id))
            acc.reset()
    return rows


def label_stream(
    flows: Iterable[FlowRecord], table: DeviceTable
) -> tuple[dict[int, list[FlowRecord]], int]:
    """Partition a mixed-device stream by MAC; unknown MACs are dropped.

    Returns ({device_id: flows}, dropped count).
    """
    substreams: dict[int, list[FlowRecord]] = {}
    dropped = 0
    for flow in flows:
        device_id = table.device_id(flow.device_mac)
        if device_id is None:
            dropped += 1
            continue
        substreams.setdefault(device_id, []).append(flow)
    return substreams, dropped


def read_flow_records(handle: TextIO) -> Iterator[FlowRecord]:
    """Parse a JSON-lines stream of flow records, skipping blank lines."""
    for line in handle:
        line = line.strip()
        if line:
            yield FlowRecord.from_json(line)


def write_features_csv(rows: Iterable[FeatureRow], handle: TextIO) -> None:
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(FEATURE_COLUMNS + ["label"])
    for row in rows:
        writer.writerow(row.as_csv_values())
