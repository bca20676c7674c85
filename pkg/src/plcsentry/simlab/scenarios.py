"""Deterministic traffic generators for the benign and attack scenarios.

Each generator emits a timed stream of header snapshots (plus payload
bytes for live replay) carrying the scenario's signature:

  Benign  periodic polling with small reads and occasional multi-register
          writes
  EX-1    MITM blackhole: session establishment, then an inter-arrival
          collapse burst, then silence
  EX-2    sensor spoofing: read traffic at several times the benign rate
          with perturbed frame sizes
  EX-3    actuator spoofing: write commands at a higher multiple of the
          benign rate
  EX-4    eavesdropping MITM: one MAC presenting several IPs, paired
          duplicate packets with timing jitter
  EX-6    command injection: bursts of writes from rotating source ports
  EX-7    volumetric flood at a configured packet size and thread count

Attack traces open with a benign warm-up phase (labeled Normal) and a
short unlabeled onset margin, so labeled attack rows describe the
steady-state attack rather than cold-start artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..telemetry import PacketMeta
from .modbus import (FC_READ_COILS, FC_READ_DISCRETE, FC_READ_HOLDING,
                     FC_READ_INPUT, FC_WRITE_COIL, FC_WRITE_COILS,
                     FC_WRITE_REGISTER, FC_WRITE_REGISTERS, build_request,
                     mbap)

SCENARIO_KINDS = ["Benign", "EX-1", "EX-2", "EX-3", "EX-4", "EX-6", "EX-7"]

# Synthetic L2-L4 overhead added to an application message to form the
# frame length; must match the relay's convention.
LINK_HEADER_BYTES = 54

READ_FCS = [FC_READ_COILS, FC_READ_DISCRETE, FC_READ_HOLDING, FC_READ_INPUT]
WRITE_FCS = [FC_WRITE_COIL, FC_WRITE_REGISTER, FC_WRITE_COILS,
             FC_WRITE_REGISTERS]


@dataclass
class ScenarioSpec:
    kind: str = "Benign"
    duration_s: float = 60.0
    peer_count: int = 1
    poll_interval_ms: float = 250.0
    packet_size_bytes: int = 1200      # EX-7 payload size (200-2000)
    thread_count: int = 500            # EX-7 sender concurrency
    rng_seed: int = 0
    warmup_s: float = 5.0              # benign lead-in for attack traces
    onset_margin_s: float = 1.0        # unlabeled transition window
    preamble_profile: str = "fleet"    # "fleet" poller or live "client" mix
    start_ts_us: int = 1_000_000
    base_ip: str = "10.0.0.0"

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.kind == "EX-7" and not 200 <= self.packet_size_bytes <= 2000:
            raise ValueError("EX-7 packet size must be within [200, 2000]")


@dataclass
class TracePacket:
    meta: PacketMeta
    payload: bytes
    label: str | None  # None rows are ingested but excluded from datasets


def _ip(base: str, host: int) -> str:
    parts = [int(p) for p in base.split(".")]
    parts[3] = (parts[3] + host) % 250 + 1
    return ".".join(str(p) for p in parts)


def _mac(peer: int) -> str:
    # Peer identity is stable across captures so baselines learned on one
    # benign trace apply to the same trusted node in later captures.
    return f"02:aa:00:00:{(peer >> 8) & 0xff:02x}:{peer & 0xff:02x}"


def _packet(ts_us, mac, ip, port, payload) -> PacketMeta:
    return PacketMeta(
        timestamp_us=int(ts_us), src_mac=mac, src_ip=ip, src_port=port,
        dst_port=502, frame_len_bytes=len(payload) + LINK_HEADER_BYTES,
        payload_len_bytes=len(payload))


def _benign_message(rng, tid: int, block_share: float = 0.0) -> bytes:
    """Polling mix: small reads and single writes, plus setpoint block
    writes on peers whose duty includes them."""
    r = rng.random()
    if r < block_share:
        return build_request(FC_WRITE_REGISTERS, tid=tid,
                             address=int(rng.integers(0, 32)),
                             quantity=int(rng.integers(1, 24)),
                             value=int(rng.integers(0, 2 ** 16)))
    if r < block_share + 0.10:
        fc = [FC_WRITE_COIL, FC_WRITE_REGISTER][int(rng.integers(2))]
        return build_request(fc, tid=tid, address=int(rng.integers(0, 64)),
                             value=int(rng.integers(0, 2 ** 16)))
    fc = READ_FCS[int(rng.integers(len(READ_FCS)))]
    return build_request(fc, tid=tid, address=int(rng.integers(0, 64)),
                         quantity=int(rng.integers(1, 12)))


FAST_POLL_RATIO = 0.06   # command/readback turnaround vs base poll
FAST_POLL_SHARE = 0.3    # fraction of polls followed by a quick readback
# Mean pace of the bimodal reader cadence relative to the poll interval;
# the steady writer peer runs at this pace so every peer presents the
# same average packet rate and flow stays flat across the fleet.
MEAN_PACE_RATIO = 1.0 - FAST_POLL_SHARE * (1.0 - FAST_POLL_RATIO)
WRITER_BLOCK_SHARE = 0.25
# Share of live-client gaps stretched by a host scheduling stall; real
# wall-clock pacers exhibit these and the trained envelope must too.
# Dense enough that stalled windows have stalled neighbors (the
# quantile-fitted bounds keep them from stretching the feature scale).
STALL_SHARE = 0.01


def benign_gap_us(rng, interval_us: float,
                  fast_share: float = FAST_POLL_SHARE) -> float:
    """One benign inter-poll gap: mixed quick-readback / slow-scan cadence.

    Read-duty pollers chase a share of commands with an immediate
    readback, so their inter-arrivals are strongly bimodal with thin
    Gaussian tails on both modes and a wide empty stretch between them.
    """
    if fast_share <= 0.0:
        # Steady single-mode cadence pinned between the two reader modes.
        return (interval_us * MEAN_PACE_RATIO
                * float(rng.uniform(0.94, 1.06)))
    base = interval_us * (FAST_POLL_RATIO if rng.random() < fast_share
                          else 1.0)
    return base * max(0.4, float(rng.normal(1.0, 0.06)))


def relay_client_gap_us(rng, interval_us: float,
                        fast_share: float = FAST_POLL_SHARE,
                        stall_share: float = STALL_SHARE) -> float:
    """One inter-poll gap of a live relay client.

    Same bimodal quick-readback/slow-scan shape as the simulated benign
    cadence, but with hard uniform edges instead of Gaussian jitter.
    Hard edges keep both bands densely populated right up to their
    limits, so a wall-clock pacer that occasionally overshoots produces
    gaps that clip onto the dense top edge of the slow band rather than
    into a thin probabilistic tail.

    A sparse stall component (one gap in ~300 stretched to 1.5-3 poll
    periods) mirrors host scheduling hiccups.  It keeps the running
    max-gap that scales inter-arrivals in the same regime the live
    relay will observe, so a single runtime stall cannot rescale every
    subsequent value into untrained territory.
    """
    r = rng.random()
    if r < stall_share:
        return interval_us * float(rng.uniform(1.5, 3.0))
    if r < stall_share + fast_share:
        return interval_us * FAST_POLL_RATIO * float(rng.uniform(0.85, 1.15))
    return interval_us * float(rng.uniform(0.88, 1.12))


# The live client scans the same fixed operation cycle the loopback
# client issues at runtime: all four reads, both single writes, and
# both multi-writes at quantity 4, in a fixed order.  Cycling keeps
# every rolling window's size composition constant, so the window
# statistics the detector learns are exactly the ones it will see.
CLIENT_OPERATION_CYCLE = [FC_READ_COILS, FC_READ_DISCRETE,
                          FC_READ_HOLDING, FC_READ_INPUT,
                          FC_WRITE_COIL, FC_WRITE_REGISTER,
                          FC_WRITE_COILS, FC_WRITE_REGISTERS]


def relay_client_message(rng, tid: int) -> bytes:
    """One request of a live relay client: the fixed operation cycle."""
    fc = CLIENT_OPERATION_CYCLE[tid % len(CLIENT_OPERATION_CYCLE)]
    if fc in (FC_WRITE_COIL, FC_WRITE_REGISTER):
        return build_request(fc, tid=tid, address=int(rng.integers(0, 64)),
                             value=int(rng.integers(0, 2 ** 16)))
    return build_request(fc, tid=tid, address=int(rng.integers(0, 32)),
                         quantity=4, value=int(rng.integers(0, 2 ** 16)))


def relay_client_stream(rng, mac, ip, start_us, duration_s, label,
                        interval_ms: float,
                        writer: bool = False) -> list[TracePacket]:
    """Benign live stream: the loopback client mix, or a dedicated
    block-scan writer that pushes full register blocks on the slow
    cadence (no quick readbacks).  Keeping the writer single-purpose
    makes every size-related feature a clean two-cluster split between
    the peers instead of a smooth mixture an attacker could hide in.
    """
    interval_us = interval_ms * 1000.0
    port = 49152 + int(rng.integers(0, 8192))
    out = []
    t = float(start_us)
    end = start_us + duration_s * 1e6
    tid = 0
    while t < end:
        if writer:
            msg = build_request(FC_WRITE_REGISTERS, tid=tid,
                                address=int(rng.integers(0, 32)),
                                quantity=int(rng.integers(20, 24)),
                                value=int(rng.integers(0, 2 ** 16)))
        else:
            msg = relay_client_message(rng, tid)
        out.append(TracePacket(_packet(t, mac, ip, port, msg), msg, label))
        tid += 1
        # Scheduling stalls model the wall-clock client on this host; the
        # dedicated writer is a remote hardware poller and keeps a tight
        # cadence, so its stall share is zero.
        t += relay_client_gap_us(
            rng, interval_us,
            fast_share=0.0 if writer else FAST_POLL_SHARE,
            stall_share=0.0 if writer else STALL_SHARE)
    return out


def _benign_stream(spec, rng, mac, ip, start_us, duration_s, label,
                   interval_ms=None, block_share: float = 0.0,
                   fast_share: float = FAST_POLL_SHARE) -> list[TracePacket]:
    interval_us = (interval_ms or spec.poll_interval_ms) * 1000.0
    port = 49152 + int(rng.integers(0, 8192))
    out = []
    t = float(start_us)
    end = start_us + duration_s * 1e6
    tid = 0
    next_rotate = t + 600e6
    while t < end:
        if t >= next_rotate:  # infrequent reconnect on a fresh ephemeral port
            port = 49152 + int(rng.integers(0, 8192))
            next_rotate = t + 600e6
        msg = _benign_message(rng, tid, block_share)
        out.append(TracePacket(_packet(t, mac, ip, port, msg), msg, label))
        tid += 1
        t += benign_gap_us(rng, interval_us, fast_share)
    return out


def _attack_preamble(spec, rng, mac, ip) -> tuple[list[TracePacket], float]:
    """Benign warm-up plus unlabeled onset margin before the attack phase.

    Warm-up rows are unlabeled: they exist to give the attacking peer
    plausible window state, and a freshly appeared peer is legitimately
    outside the settled benign envelope, so they belong to neither class.
    """
    if spec.preamble_profile == "client":
        out = relay_client_stream(rng, mac, ip, spec.start_ts_us,
                                  spec.warmup_s, None,
                                  interval_ms=spec.poll_interval_ms)
    else:
        out = _benign_stream(spec, rng, mac, ip, spec.start_ts_us,
                             spec.warmup_s, None)
    # The attack phase starts right away; a silent pause here would become
    # the peer's largest observed gap and distort its scaled inter-arrival.
    return out, spec.start_ts_us + spec.warmup_s * 1e6


def gen_traffic(spec: ScenarioSpec) -> list[TracePacket]:
    """Deterministic scenario trace; identical specs yield identical traces."""
    rng = np.random.default_rng(spec.rng_seed)
    gen = {
        "Benign": _gen_benign,
        "EX-1": _gen_ex1,
        "EX-2": _gen_ex2,
        "EX-3": _gen_ex3,
        "EX-4": _gen_ex4,
        "EX-6": _gen_ex6,
        "EX-7": _gen_ex7,
    }[spec.kind]
    packets = gen(spec, rng)
    packets.sort(key=lambda p: p.meta.timestamp_us)
    return packets


def _gen_benign(spec, rng) -> list[TracePacket]:
    out = []
    for p in range(spec.peer_count):
        mac, ip = _mac(p), _ip(spec.base_ip, p)
        # Stagger starts so the peer count ramps 1..N in the features.
        start = spec.start_ts_us + int(p * 2e6)
        # Every third peer is a setpoint writer: it mixes block writes
        # into its polling and runs a steady single-mode cadence instead
        # of the readers' bimodal one, at the same average rate.
        writer = (p % 3) == 2
        out.extend(_benign_stream(
            spec, rng, mac, ip, start, spec.duration_s, "Normal",
            block_share=WRITER_BLOCK_SHARE if writer else 0.0,
            fast_share=0.0 if writer else FAST_POLL_SHARE))
    return out


def _gen_ex1(spec, rng) -> list[TracePacket]:
    """Blackhole MITM: inter-arrival collapse burst, then silence."""
    mac, ip = _mac(101), _ip(spec.base_ip, 101)
    out, t = _attack_preamble(spec, rng, mac, ip)
    port = 49152 + int(rng.integers(0, 8192))
    interval_us = spec.poll_interval_ms * 1000.0 / 5.5
    end = t + spec.duration_s * 1e6
    attack_start = t
    tid = 0
    while t < end:
        # Replayed capture: mostly reads, with occasional full-size block
        # writes mixed in.
        if rng.random() < 0.70:
            msg = build_request(READ_FCS[int(rng.integers(len(READ_FCS)))],
                                tid=tid, address=int(rng.integers(0, 64)),
                                quantity=int(rng.integers(1, 12)))
        else:
            msg = build_request(FC_WRITE_REGISTERS, tid=tid,
                                address=int(rng.integers(0, 64)),
                                quantity=23)
        label = None if t < attack_start + spec.onset_margin_s * 1e6 else "EX-1"
        out.append(TracePacket(_packet(t, mac, ip, port, msg), msg, label))
        t += interval_us * float(rng.uniform(0.9, 1.1))
        tid += 1
    return out  # silence afterwards: the generator simply stops


def _gen_ex2(spec, rng) -> list[TracePacket]:
    """Sensor spoofing: elevated read rate with perturbed frame sizes."""
    mac, ip = _mac(102), _ip(spec.base_ip, 102)
    out, t = _attack_preamble(spec, rng, mac, ip)
    port = 49152 + int(rng.integers(0, 8192))
    rate_mult = float(rng.uniform(4.5, 6.0))
    interval_us = spec.poll_interval_ms * 1000.0 / rate_mult
    end = t + spec.duration_s * 1e6
    attack_start = t
    tid = 0
    while t < end:
        fc = READ_FCS[int(rng.integers(len(READ_FCS)))]
        msg = build_request(fc, tid=tid, address=int(rng.integers(0, 64)),
                            quantity=int(rng.integers(1, 12)))
        msg += bytes(int(rng.integers(1, 7)))  # trailing perturbation pad
        label = None if t < attack_start + spec.onset_margin_s * 1e6 else "EX-2"
        out.append(TracePacket(_packet(t, mac, ip, port, msg), msg, label))
        t += interval_us * float(rng.uniform(0.9, 1.1))
        tid += 1
    return out


def _gen_ex3(spec, rng) -> list[TracePacket]:
    """Actuator spoofing: write commands at a high multiple of benign rate."""
    mac, ip = _mac(103), _ip(spec.base_ip, 103)
    out, t = _attack_preamble(spec, rng, mac, ip)
    port = 49152 + int(rng.integers(0, 8192))
    rate_mult = float(rng.uniform(5.5, 7.5))
    interval_us = spec.poll_interval_ms * 1000.0 / rate_mult
    end = t + spec.duration_s * 1e6
    attack_start = t
    tid = 0
    while t < end:
        fc = [FC_WRITE_COIL, FC_WRITE_REGISTER][int(rng.integers(2))]
        msg = build_request(fc, tid=tid, address=int(rng.integers(0, 64)),
                            value=int(rng.integers(0, 2 ** 16)))
        label = None if t < attack_start + spec.onset_margin_s * 1e6 else "EX-3"
        out.append(TracePacket(_packet(t, mac, ip, port, msg), msg, label))
        t += interval_us * float(rng.uniform(0.8, 1.2))
        tid += 1
    return out


def _gen_ex4(spec, rng) -> list[TracePacket]:
    """Eavesdropping MITM: several IPs behind one MAC, paired duplicates."""
    mac = _mac(104)
    ips = [_ip(spec.base_ip, 104 + i) for i in range(3)]
    out, t = _attack_preamble(spec, rng, mac, ips[0])
    port = 49152 + int(rng.integers(0, 8192))
    interval_us = spec.poll_interval_ms * 1000.0 * 0.85
    end = t + spec.duration_s * 1e6
    attack_start = t
    tid = 0
    while t < end:
        label = None if t < attack_start + spec.onset_margin_s * 1e6 else "EX-4"
        # Passive re-polling: the eavesdropper only issues reads.
        msg = build_request(READ_FCS[int(rng.integers(len(READ_FCS)))],
                            tid=tid, address=int(rng.integers(0, 64)),
                            quantity=int(rng.integers(1, 12)))
        out.append(TracePacket(
            _packet(t, mac, ips[tid % len(ips)], port, msg), msg, label))
        # The eavesdropper re-emits each poll about half a tick later, so
        # both gaps of the pair land in the empty stretch between the
        # readers' quick-readback mode and the writer's steady cadence.
        echo_t = t + interval_us * float(rng.uniform(0.47, 0.53))
        out.append(TracePacket(
            _packet(echo_t, mac, ips[(tid + 1) % len(ips)], port, msg),
            msg, label))
        t += interval_us * float(rng.uniform(0.96, 1.04))
        tid += 1
    return out


def _gen_ex6(spec, rng) -> list[TracePacket]:
    """Command injection: write bursts from rotating source ports."""
    mac, ip = _mac(106), _ip(spec.base_ip, 106)
    out, t = _attack_preamble(spec, rng, mac, ip)
    end = t + spec.duration_s * 1e6
    attack_start = t
    tid = 0
    while t < end:
        port = 49152 + int(rng.integers(0, 16384))  # new port per burst
        burst = int(rng.integers(20, 40))
        for i in range(burst):
            if t >= end:
                break
            msg = build_request(FC_WRITE_REGISTERS, tid=tid,
                                address=int(rng.integers(0, 64)),
                                quantity=int(rng.integers(12, 23)),
                                value=int(rng.integers(0, 2 ** 16)))
            # The opening packet of each burst follows a long quiet gap and
            # is indistinguishable from an ordinary poll; leave it unlabeled.
            if i == 0 or t < attack_start + spec.onset_margin_s * 1e6:
                label = None
            else:
                label = "EX-6"
            out.append(TracePacket(_packet(t, mac, ip, port, msg), msg, label))
            t += spec.poll_interval_ms * 1000.0 * float(rng.uniform(0.11, 0.22))
            tid += 1
        t += float(rng.uniform(0.3e6, 1.0e6))  # inter-burst quiet gap
    return out


def flood_frame(size_bytes: int, tid: int) -> bytes:
    """Opaque flood message of the requested payload size (valid MBAP)."""
    pdu = bytes([FC_WRITE_REGISTERS]) + bytes(max(size_bytes - 1, 5))
    return mbap(tid, pdu)


def _gen_ex7(spec, rng) -> list[TracePacket]:
    """Volumetric flood: high rate, large frames, many ephemeral ports."""
    mac, ip = _mac(107), _ip(spec.base_ip, 107)
    out, t = _attack_preamble(spec, rng, mac, ip)
    end = t + spec.duration_s * 1e6
    attack_start = t
    # Aggregate rate scales with thread count, capped to keep traces sane.
    pps = min(float(spec.thread_count) * 20.0, 40000.0)
    interval_us = 1e6 / pps
    ports = [49152 + int(rng.integers(0, 16384))
             for _ in range(min(spec.thread_count, 512))]
    tid = 0
    while t < end:
        size = int(rng.integers(spec.packet_size_bytes * 3 // 4,
                                spec.packet_size_bytes + 300))
        msg = flood_frame(size, tid)
        label = None if t < attack_start + spec.onset_margin_s * 1e6 else "EX-7"
        out.append(TracePacket(
            _packet(t, mac, ip, ports[tid % len(ports)], msg), msg, label))
        t += interval_us * float(rng.uniform(0.5, 1.5))
        tid += 1
    return out
