"""Flood-mitigation experiment against a live relay stack.

Replays a volumetric flood at the relay over loopback sockets and
measures, per setting and repetition, how many attack messages reached
the protected controller before the source block landed and how long
the block took to install.  Logical attacker threads are multiplexed
onto a bounded pool of real connections; each connection uses its own
ephemeral source port.
"""

from __future__ import annotations

import csv
import socket
import threading
import time
from dataclasses import dataclass, field

from ..relay import Mediator, RelayConfig, RelayServer
from ..respond import MemoryBlocklist, ResponseEngine, ResponsePolicy
from .modbus import StubController
from .scenarios import flood_frame

SIZE_SWEEP = list(range(200, 2001, 200))
THREAD_SWEEP = [100, 500, 1000, 5000, 10000]
MAX_REAL_CONNECTIONS = 12


@dataclass
class FloodReport:
    sweep: str                       # "size" or "threads"
    repetitions: int
    rows: list = field(default_factory=list)
    # row: {setting, repetition, allowed_requests, block_time_ms, failed}

    def medians(self, key: str) -> dict:
        per_setting: dict = {}
        for r in self.rows:
            if not r["failed"]:
                per_setting.setdefault(r["setting"], []).append(r[key])
        out = {}
        for setting, vals in per_setting.items():
            vals = sorted(vals)
            n = len(vals)
            mid = (vals[n // 2] if n % 2 else
                   (vals[n // 2 - 1] + vals[n // 2]) / 2)
            out[setting] = mid
        return out

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["setting", "repetition", "allowed_requests",
                        "block_time_ms"])
            for r in self.rows:
                w.writerow([r["setting"], r["repetition"],
                            r["allowed_requests"], f"{r['block_time_ms']:.3f}"])


def _flood_sender(addr, size_bytes, stop: threading.Event, pace_s: float):
    try:
        sock = socket.create_connection(addr, timeout=2)
    except OSError:
        return
    tid = 0
    try:
        while not stop.is_set():
            sock.sendall(flood_frame(size_bytes, tid))
            tid += 1
            if pace_s:
                time.sleep(pace_s)
    except OSError:
        pass
    finally:
        try:
            sock.close()
        except OSError:
            pass


def run_flood_once(bundle, size_bytes: int, thread_count: int,
                   timeout_s: float = 10.0) -> dict:
    """One repetition: fresh stub, relay and responder; flood until blocked."""
    stub = StubController()
    stub.start()
    blocklist = MemoryBlocklist()
    responder = ResponseEngine(policy=ResponsePolicy(), blocklist=blocklist)
    config = RelayConfig(listen_host="127.0.0.1", listen_port=0,
                         upstream_host="127.0.0.1", upstream_port=stub.port)
    mediator = Mediator(bundle, responder)
    server = RelayServer(config, mediator, blocklist)
    server.start()
    addr = ("127.0.0.1", server.listen_port)

    real = min(thread_count, MAX_REAL_CONNECTIONS)
    # Pace each real connection so aggregate send rate tracks the logical
    # thread count without melting the single-core test host.
    pace_s = max(0.0002, real / (min(thread_count, 2000) * 50.0))
    stop = threading.Event()
    senders = [threading.Thread(target=_flood_sender,
                                args=(addr, size_bytes, stop, pace_s),
                                daemon=True)
               for _ in range(real)]
    t0_us = time.time_ns() // 1000
    for s in senders:
        s.start()
    deadline = time.monotonic() + timeout_s
    block_ts = None
    while time.monotonic() < deadline:
        if blocklist.is_blocked("127.0.0.1"):
            for rec in responder.records:
                if rec.block_installed_ts_us:
                    block_ts = rec.block_installed_ts_us
                    break
            break
        time.sleep(0.002)
    stop.set()
    for s in senders:
        s.join(timeout=2)
    time.sleep(0.05)
    allowed = stub.request_count
    server.stop()
    mediator.close()
    stub.stop()
    failed = block_ts is None
    return {
        "allowed_requests": allowed,
        "block_time_ms": ((block_ts - t0_us) / 1000.0) if block_ts else -1.0,
        "failed": failed,
    }


def flood_experiment(bundle, sweep: str = "size", repetitions: int = 10,
                     sizes=None, threads=None,
                     fixed_threads: int = 500,
                     fixed_size: int = 1200) -> FloodReport:
    """Sweep payload size (fixed threads) or thread count (fixed size)."""
    if sweep == "size":
        settings = [(s, fixed_threads) for s in (sizes or SIZE_SWEEP)]
    elif sweep == "threads":
        settings = [(fixed_size, t) for t in (threads or THREAD_SWEEP)]
    else:
        raise ValueError(f"unknown sweep {sweep!r}")
    report = FloodReport(sweep=sweep, repetitions=repetitions)
    for size_bytes, thread_count in settings:
        setting = size_bytes if sweep == "size" else thread_count
        for rep in range(repetitions):
            result = run_flood_once(bundle, size_bytes, thread_count)
            result.update({"setting": setting, "repetition": rep})
            report.rows.append(result)
    return report
