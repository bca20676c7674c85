"""Streaming per-peer packet sensor.

Turns raw L2-L4 header metadata into a 14-metric telemetry vector per
packet: three stateless per-packet metrics (peer count, frame size,
protocol efficiency) and eleven per-connection metrics maintained over
per-peer sliding windows (rate, inter-arrival, rolling size statistics,
max-scaled size/gap, port diversity, clients-per-MAC, size entropy and
divergence from a learned benign baseline).

The sensor is strictly streaming: every metric emitted at packet k is
reproducible by a from-scratch recomputation over packets 1..k of the
same peer, with the current packet included in all windows.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

# Rolling-window length for size statistics and the size histogram.
WINDOW_SIZE = 1000

# Trailing interval (microseconds) for rate and port-diversity counters.
RATE_WINDOW_US = 60_000_000
RATE_WINDOW_S = 60.0

# Equal-width size bins over a standard Ethernet frame; sizes beyond the
# ceiling are clamped into the last bin.
NUM_BINS = 5
FRAME_CEILING = 1518.0
DEFAULT_BIN_EDGES = tuple(np.linspace(0.0, FRAME_CEILING, NUM_BINS + 1))

# Minimum packets per peer before a baseline histogram is trusted.
BASELINE_MIN_PACKETS = 100

# Baseline-map key holding a fleet-wide histogram used for peers that
# have no per-peer baseline (e.g. a source first seen after fitting).
POOLED_BASELINE_KEY = "*"

FEATURE_NAMES = [
    "n_peers",
    "packet_size",
    "protocol_efficiency",
    "mean_flow",
    "inter_arrival_us",
    "mov_mean",
    "mov_var",
    "mov_median",
    "scaled_size",
    "scaled_dt",
    "src_ports",
    "clients_per_mac",
    "entropy_bits",
    "kl_bits",
]

CSV_HEADER = ["timestamp_us", "peer"] + FEATURE_NAMES + ["label"]


class MalformedPacketError(ValueError):
    """Packet header fields violate basic sanity; the packet is rejected."""


@dataclass
class PacketMeta:
    """L2-L4 header snapshot of one packet."""

    timestamp_us: int
    src_mac: str
    src_ip: str
    src_port: int
    dst_port: int
    frame_len_bytes: int
    payload_len_bytes: int
    transport: str = "TCP"

    def validate(self) -> None:
        if self.frame_len_bytes < 1:
            raise MalformedPacketError(
                f"frame length {self.frame_len_bytes} < 1 byte"
            )
        if self.payload_len_bytes > self.frame_len_bytes:
            raise MalformedPacketError(
                f"payload {self.payload_len_bytes} B exceeds frame "
                f"{self.frame_len_bytes} B"
            )
        if self.payload_len_bytes < 0:
            raise MalformedPacketError("negative payload length")


@dataclass
class FeatureVector:
    """The 14 telemetry metrics for one inspected packet."""

    timestamp_us: int
    peer: str
    n_peers: int
    packet_size: float
    protocol_efficiency: float
    mean_flow: float
    inter_arrival_us: float
    mov_mean: float
    mov_var: float
    mov_median: float
    scaled_size: float
    scaled_dt: float
    src_ports: int
    clients_per_mac: int
    entropy_bits: float
    kl_bits: float
    baseline_absent: bool = False
    label: str = ""

    def values(self) -> np.ndarray:
        """The 14 metrics as a float vector, in FEATURE_NAMES order."""
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=float)

    def csv_row(self) -> list:
        return [self.timestamp_us, self.peer] + [
            getattr(self, n) for n in FEATURE_NAMES
        ] + [self.label]


@dataclass
class BaselineHistogram:
    """Smoothed 5-bin frame-size distribution of a peer's benign traffic."""

    peer_key: str
    bin_edges: tuple
    probabilities: np.ndarray

    def to_dict(self) -> dict:
        return {
            "peer": self.peer_key,
            "bin_edges": list(self.bin_edges),
            "probabilities": [float(p) for p in self.probabilities],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineHistogram":
        return cls(
            peer_key=d["peer"],
            bin_edges=tuple(d["bin_edges"]),
            probabilities=np.asarray(d["probabilities"], dtype=float),
        )


@dataclass
class PeerState:
    """Per-peer sliding-window state; single writer per peer."""

    peer_key: str
    size_window: deque = field(default_factory=lambda: deque(maxlen=WINDOW_SIZE))
    last_arrival_us: int | None = None
    max_size_bytes: int = 0
    max_gap_us: int = 0
    recent: deque = field(default_factory=deque)  # (timestamp_us, src_port)
    port_counts: Counter = field(default_factory=Counter)
    packet_count: int = 0

    def prune(self, now_us: int) -> None:
        cutoff = now_us - RATE_WINDOW_US
        while self.recent and self.recent[0][0] < cutoff:
            _, port = self.recent.popleft()
            self.port_counts[port] -= 1
            if self.port_counts[port] == 0:
                del self.port_counts[port]


@dataclass
class GlobalState:
    """Cross-peer registry: peers by source MAC, and MAC-to-IP multimap."""

    peers: dict = field(default_factory=dict)
    mac_to_ips: dict = field(default_factory=dict)

    def peer(self, key: str) -> PeerState:
        st = self.peers.get(key)
        if st is None:
            st = PeerState(peer_key=key)
            self.peers[key] = st
        return st


def window_stats(window) -> tuple[float, float, float]:
    """Population mean/variance and median of a size window.

    Median of an even-length window is the mean of the two middle values.
    """
    arr = np.asarray(window, dtype=float)
    if arr.size == 0:
        raise ValueError("empty window")
    mean = float(arr.mean())
    var = float(((arr - mean) ** 2).mean())
    med = float(np.median(arr))
    return mean, var, med


def bin_counts(window, edges=DEFAULT_BIN_EDGES) -> np.ndarray:
    """Histogram counts of frame sizes over the fixed bins (clamped)."""
    arr = np.clip(np.asarray(window, dtype=float), edges[0], edges[-1])
    counts, _ = np.histogram(arr, bins=np.asarray(edges))
    return counts


def size_entropy(window, edges=DEFAULT_BIN_EDGES) -> float:
    """Shannon entropy (bits) of the window's size distribution.

    Empty bins contribute zero; the result lies in [0, log2(#bins)].
    """
    counts = bin_counts(window, edges)
    total = counts.sum()
    if total == 0:
        raise ValueError("empty window")
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def kl_divergence(base: BaselineHistogram, window) -> float:
    """Divergence (bits) of the current window from the peer baseline.

    The baseline distribution weights the log-ratio; current-window
    counts get add-one smoothing so every bin probability is positive.
    """
    counts = bin_counts(window, base.bin_edges).astype(float)
    if counts.sum() == 0:
        raise ValueError("empty window")
    p_cur = (counts + 1.0) / (counts.sum() + len(counts))
    p_base = base.probabilities
    return float((p_base * np.log2(p_base / p_cur)).sum())


@dataclass
class BaselineFit:
    """Result of baseline fitting: histograms plus peers skipped as too small."""

    histograms: dict
    skipped: dict  # peer -> packet count below the minimum


def fit_baseline(benign_packets, min_packets: int = BASELINE_MIN_PACKETS,
                 edges=DEFAULT_BIN_EDGES) -> BaselineFit:
    """Learn per-peer smoothed size histograms from benign traffic."""
    sizes: dict[str, list] = {}
    for pkt in benign_packets:
        sizes.setdefault(pkt.src_mac, []).append(pkt.frame_len_bytes)
    histograms, skipped = {}, {}
    for peer, vals in sizes.items():
        if len(vals) < min_packets:
            skipped[peer] = len(vals)
            continue
        counts = bin_counts(vals, edges).astype(float)
        probs = (counts + 1.0) / (counts.sum() + len(counts))
        histograms[peer] = BaselineHistogram(peer, tuple(edges), probs)
    return BaselineFit(histograms=histograms, skipped=skipped)


def save_baselines(fit_or_map, path) -> None:
    hmap = fit_or_map.histograms if isinstance(fit_or_map, BaselineFit) else fit_or_map
    with open(path, "w") as f:
        json.dump([h.to_dict() for h in hmap.values()], f, indent=1)


def load_baselines(path) -> dict:
    with open(path) as f:
        entries = json.load(f)
    out = {}
    for e in entries:
        h = BaselineHistogram.from_dict(e)
        out[h.peer_key] = h
    return out


class Sensor:
    """Stateful feature extractor; one instance per relay process.

    Peers are keyed by source MAC.  All packets of one peer must be
    ingested sequentially; emitted FeatureVectors are immutable.
    """

    def __init__(self, baselines: dict | None = None,
                 edges=DEFAULT_BIN_EDGES):
        self.state = GlobalState()
        self.baselines = baselines or {}
        self.edges = edges

    def ingest(self, packet: PacketMeta) -> FeatureVector:
        packet.validate()
        existing = self.state.peers.get(packet.src_mac)
        if existing is not None and existing.last_arrival_us is not None \
                and packet.timestamp_us < existing.last_arrival_us:
            raise MalformedPacketError(
                f"timestamp regression for peer {packet.src_mac}: "
                f"{packet.timestamp_us} < {existing.last_arrival_us}"
            )

        st = self.state.peer(packet.src_mac)
        now = packet.timestamp_us
        if st.last_arrival_us is None:
            dt = 0
            first = True
        else:
            dt = now - st.last_arrival_us
            first = False

        st.size_window.append(packet.frame_len_bytes)
        st.max_size_bytes = max(st.max_size_bytes, packet.frame_len_bytes)
        if not first:
            st.max_gap_us = max(st.max_gap_us, dt)
        st.prune(now)
        st.recent.append((now, packet.src_port))
        st.port_counts[packet.src_port] += 1
        st.last_arrival_us = now
        st.packet_count += 1
        self.state.mac_to_ips.setdefault(packet.src_mac, set()).add(packet.src_ip)

        mean, var, med = window_stats(st.size_window)
        entropy = size_entropy(st.size_window, self.edges)
        base = (self.baselines.get(packet.src_mac)
                or self.baselines.get(POOLED_BASELINE_KEY))
        if base is not None:
            kl = kl_divergence(base, st.size_window)
            baseline_absent = False
        else:
            kl = 0.0
            baseline_absent = True

        return FeatureVector(
            timestamp_us=now,
            peer=packet.src_mac,
            n_peers=len(self.state.peers),
            packet_size=float(packet.frame_len_bytes),
            protocol_efficiency=packet.payload_len_bytes / packet.frame_len_bytes,
            mean_flow=len(st.recent) / RATE_WINDOW_S,
            inter_arrival_us=float(dt),
            mov_mean=mean,
            mov_var=var,
            mov_median=med,
            scaled_size=packet.frame_len_bytes / st.max_size_bytes,
            scaled_dt=(dt / st.max_gap_us) if st.max_gap_us > 0 else 0.0,
            src_ports=len(st.port_counts),
            clients_per_mac=len(self.state.mac_to_ips[packet.src_mac]),
            entropy_bits=entropy,
            kl_bits=kl,
            baseline_absent=baseline_absent,
        )


def write_feature_csv(path, vectors) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for fv in vectors:
            w.writerow(fv.csv_row())


def read_feature_csv(path) -> tuple[np.ndarray, list, list]:
    """Load a feature CSV -> (matrix of 14 columns, labels, peers)."""
    rows, labels, peers = [], [], []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if header[2:16] != FEATURE_NAMES:
            raise ValueError(f"unexpected feature CSV header in {path}")
        for rec in r:
            peers.append(rec[1])
            rows.append([float(x) for x in rec[2:16]])
            labels.append(rec[16] if len(rec) > 16 else "")
    return np.asarray(rows, dtype=float), labels, peers
