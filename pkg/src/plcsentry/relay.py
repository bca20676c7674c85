"""Embedded TCP mediation proxy.

Owns the protocol port, splits each client stream into application
messages on Modbus/TCP (MBAP) boundaries, scores every client-to-
controller message through the detection pipeline, and forwards only
traffic the detector accepts.  Controller-to-client bytes pass through
unmodified.  Anomalous messages are dropped (never forwarded), handed
to the classifier for a label, and reported to the incident responder
asynchronously so rule installation never sits on the mediation path.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

from . import forest as forest_mod
from . import lof as lof_mod
from .models import ModelBundle
from .respond import ResponseEngine
from .telemetry import MalformedPacketError, PacketMeta, Sensor

log = logging.getLogger("plcsentry.relay")

MBAP_HEADER_LEN = 7
# Synthetic Ethernet+IP+TCP header estimate added to reassembled frames
# so size-based metrics stay meaningful above the socket layer.
LINK_HEADER_BYTES = 54

FORWARD = "Forward"
DROP = "Drop"

# A freshly seen peer has no window support: its inter-arrival scaling,
# size statistics and rate counters all read as degenerate extremes that
# the detector was never trained on.  Its first packets are ingested for
# state but forwarded unscored; scoring starts once the rolling
# 1000-packet statistics window is full AND the slower flow statistics
# have run as long as the settle cutoff the training corpus applies
# before emitting rows (8 s at the 5 ms reference cadence).
WARMUP_PACKETS = 1600
# Diagnostic label for fail-closed drops that never reached the classifier.
ERROR_LABEL = "extraction-error"

# Modbus exception code returned to the client for a dropped request:
# "gateway target device failed to respond".  The request never reaches
# the controller, but a well-formed client is told the transaction
# failed instead of hanging on a response that will never come.
GATEWAY_TARGET_FAILED = 0x0B


def exception_response(request: bytes) -> bytes | None:
    """Modbus exception reply mirroring a dropped request's header."""
    if len(request) < MBAP_HEADER_LEN + 1:
        return None
    proto = int.from_bytes(request[2:4], "big")
    if proto != 0:
        return None
    tid, unit, fc = request[0:2], request[6], request[7]
    pdu = bytes([unit, fc | 0x80, GATEWAY_TARGET_FAILED])
    return tid + b"\x00\x00" + len(pdu).to_bytes(2, "big") + pdu


class MalformedStream(ValueError):
    """Stream framing is broken; the session is dropped fail-closed."""


class MbapFramer:
    """Splits a TCP byte stream into Modbus/TCP application messages.

    A message is 6 + MBAP-length bytes (length field at offset 4-5,
    big-endian).  Bursts whose MBAP protocol-id field is nonzero are not
    Modbus and are passed through as one message per read burst.  Bytes
    are never altered.
    """

    def __init__(self):
        self.buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self.buf.extend(data)
        out = []
        while len(self.buf) >= MBAP_HEADER_LEN:
            proto = int.from_bytes(self.buf[2:4], "big")
            if proto != 0:
                out.append(bytes(self.buf))
                self.buf.clear()
                break
            length = int.from_bytes(self.buf[4:6], "big")
            if length == 0 or length > 0xFFFF:
                raise MalformedStream(f"MBAP length field {length}")
            total = 6 + length
            if len(self.buf) < total:
                break
            out.append(bytes(self.buf[:total]))
            del self.buf[:total]
        return out


def mac_from_ip(ip: str) -> str:
    """Deterministic synthetic MAC for a socket peer (no L2 visibility)."""
    octets = [int(p) for p in ip.split(".")]
    return "02:00:" + ":".join(f"{o:02x}" for o in octets)


def now_us() -> int:
    return time.time_ns() // 1000


@dataclass
class RelayConfig:
    listen_host: str = "0.0.0.0"
    listen_port: int = 502
    upstream_host: str = "127.0.0.1"
    upstream_port: int = 4321
    models_path: str = "models.json"
    policy_path: str | None = None
    decision_log: str | None = None
    max_sessions: int = 64
    idle_timeout_s: float = 60.0

    @classmethod
    def load(cls, path) -> "RelayConfig":
        with open(path) as f:
            doc = json.load(f)
        return cls(**doc)


@dataclass
class MediationDecision:
    ts_us: int
    peer: str
    verdict: str
    lof_score: float
    label: str | None
    latency_us: int

    def to_dict(self) -> dict:
        return {
            "ts_us": self.ts_us,
            "peer": self.peer,
            "verdict": self.verdict,
            "score": self.lof_score,
            "label": self.label,
            "latency_us": self.latency_us,
        }


class Mediator:
    """Scores one application message at a time through the pipeline."""

    def __init__(self, bundle: ModelBundle, responder: ResponseEngine,
                 decision_log=None):
        self.bundle = bundle
        self.responder = responder
        self.sensor = Sensor(baselines=bundle.baselines)
        self.decisions: list[MediationDecision] = []
        self._sensor_lock = threading.Lock()
        self._log_lock = threading.Lock()
        self._log_file = open(decision_log, "a") if decision_log else None
        self._incidents: queue.Queue = queue.Queue()
        self._worker = threading.Thread(target=self._drain, daemon=True)
        self._worker.start()

    def _drain(self):
        while True:
            item = self._incidents.get()
            if item is None:
                return
            label, ip, mac = item
            try:
                self.responder.handle_incident(label, ip, mac)
            except Exception:
                log.exception("incident handling failed")

    def mediate(self, packet: PacketMeta) -> MediationDecision:
        start = time.perf_counter_ns()
        verdict, label, score = DROP, None, float("inf")
        try:
            with self._sensor_lock:
                fv = self.sensor.ingest(packet)
                warmup = (self.sensor.state.peer(packet.src_mac).packet_count
                          <= WARMUP_PACKETS)
            if warmup:
                verdict = FORWARD
            else:
                row = fv.values()
                embedding = self.bundle.embed(row)
                score = float(
                    lof_mod.lof_scores(self.bundle.lof, [embedding])[0])
                if score <= self.bundle.lof.threshold:
                    verdict = FORWARD
                else:
                    label, _ = forest_mod.classify(
                        self.bundle.forest,
                        self.bundle.classifier_rows(row)[0])
                    self._incidents.put(
                        (label, packet.src_ip, packet.src_mac))
        except MalformedPacketError:
            label = ERROR_LABEL
        except Exception:
            log.exception("mediation failure; dropping fail-closed")
            label = ERROR_LABEL
        latency = (time.perf_counter_ns() - start) // 1000
        decision = MediationDecision(
            ts_us=packet.timestamp_us, peer=packet.src_mac, verdict=verdict,
            lof_score=score if score != float("inf") else -1.0,
            label=label, latency_us=int(latency))
        self.decisions.append(decision)
        if self._log_file:
            with self._log_lock:
                self._log_file.write(json.dumps(decision.to_dict()) + "\n")
                self._log_file.flush()
        return decision

    def close(self):
        self._incidents.put(None)
        self._worker.join(timeout=5)
        if self._log_file:
            self._log_file.close()


class RelayServer:
    """Threaded TCP proxy: one upstream connection per client session."""

    def __init__(self, config: RelayConfig, mediator: Mediator,
                 blocklist):
        self.config = config
        self.mediator = mediator
        self.blocklist = blocklist
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._shutdown = threading.Event()
        self.forwarded_count = 0

    @property
    def listen_port(self) -> int:
        return self._listener.getsockname()[1]

    def start(self):
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((self.config.listen_host, self.config.listen_port))
        self._listener.listen(self.config.max_sessions)
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self):
        while not self._shutdown.is_set():
            try:
                client, addr = self._listener.accept()
            except OSError:
                return
            if self.blocklist.is_blocked(addr[0]):
                client.close()
                continue
            t = threading.Thread(target=self._session, args=(client, addr),
                                 daemon=True)
            t.start()
            self._threads.append(t)

    def _session(self, client: socket.socket, addr):
        ip, port = addr[0], addr[1]
        mac = mac_from_ip(ip)
        upstream = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            upstream.connect((self.config.upstream_host, self.config.upstream_port))
        except OSError:
            log.warning("upstream unreachable; refusing session from %s", ip)
            client.close()
            return
        stop = threading.Event()

        def pump_responses():
            # Controller-to-client bytes pass through unscored.
            try:
                while not stop.is_set():
                    data = upstream.recv(65536)
                    if not data:
                        break
                    client.sendall(data)
            except OSError:
                pass
            finally:
                stop.set()
                for s in (client, upstream):
                    try:
                        s.shutdown(socket.SHUT_RDWR)
                    except OSError:
                        pass

        rt = threading.Thread(target=pump_responses, daemon=True)
        rt.start()
        framer = MbapFramer()
        client.settimeout(self.config.idle_timeout_s)
        try:
            while not stop.is_set():
                try:
                    data = client.recv(65536)
                except socket.timeout:
                    break
                if not data:
                    break
                try:
                    messages = framer.feed(data)
                except MalformedStream:
                    log.warning("malformed stream from %s; dropping session", ip)
                    break
                for msg in messages:
                    if self.blocklist.is_blocked(ip):
                        stop.set()
                        break
                    meta = PacketMeta(
                        timestamp_us=now_us(), src_mac=mac, src_ip=ip,
                        src_port=port, dst_port=self.config.listen_port,
                        frame_len_bytes=len(msg) + LINK_HEADER_BYTES,
                        payload_len_bytes=len(msg))
                    decision = self.mediator.mediate(meta)
                    if decision.verdict == FORWARD:
                        upstream.sendall(msg)
                        self.forwarded_count += 1
                    else:
                        reply = exception_response(msg)
                        if reply is not None:
                            try:
                                client.sendall(reply)
                            except OSError:
                                pass
        except OSError:
            pass
        finally:
            stop.set()
            for s in (client, upstream):
                try:
                    s.close()
                except OSError:
                    pass

    def stop(self):
        self._shutdown.set()
        if self._listener:
            try:
                self._listener.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=2)


def build_relay(config: RelayConfig, policy=None,
                blocklist=None) -> tuple[RelayServer, Mediator, ResponseEngine]:
    """Load models and assemble a ready-to-start relay stack."""
    bundle = ModelBundle.load(config.models_path)
    if bundle.lof.threshold is None:
        raise ValueError("model bundle has no calibrated anomaly threshold")
    from .respond import MemoryBlocklist, ResponsePolicy

    if policy is None:
        policy = (ResponsePolicy.load(config.policy_path)
                  if config.policy_path else ResponsePolicy())
    if blocklist is None:
        blocklist = MemoryBlocklist()
    responder = ResponseEngine(policy=policy, blocklist=blocklist)
    mediator = Mediator(bundle, responder, decision_log=config.decision_log)
    server = RelayServer(config, mediator, blocklist)
    return server, mediator, responder


def run_relay(config: RelayConfig) -> None:  # pragma: no cover - interactive
    """Serve until interrupted."""
    server, mediator, _ = build_relay(config)
    server.start()
    log.info("relay listening on %s:%d -> %s:%d", config.listen_host,
             server.listen_port, config.upstream_host, config.upstream_port)
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        mediator.close()
