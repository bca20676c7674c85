"""Incident response: maps classified attacks to containment actions.

The default policy installs a source block for every attack category
except the eavesdropping MITM, which is only logged.  Two blocklist
backends exist: an in-memory set used by tests and the relay, and a
command-template backend that renders a firewall rule (by default an
iptables DROP) for deployment hosts.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field

from .forest import ATTACK_LABELS

BLOCK = "block"
LOG_ONLY = "log"

DEFAULT_POLICY = {
    "EX-1": [BLOCK],
    "EX-2": [BLOCK],
    "EX-3": [BLOCK],
    "EX-4": [LOG_ONLY],
    "EX-6": [BLOCK],
    "EX-7": [BLOCK],
}

DEFAULT_BLOCK_CMD = "iptables -A INPUT -s {ip} -j DROP"


class BlockError(RuntimeError):
    """Blocklist backend failed to install a rule."""


def _now_us() -> int:
    return time.time_ns() // 1000


class MemoryBlocklist:
    """Thread-safe in-memory source blocklist."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict[str, int] = {}

    def block(self, ip: str) -> int:
        ts = _now_us()
        with self._lock:
            self._entries.setdefault(ip, ts)
            return self._entries[ip]

    def is_blocked(self, ip: str) -> bool:
        with self._lock:
            return ip in self._entries

    def entries(self) -> dict:
        with self._lock:
            return dict(self._entries)


class CommandBlocklist:
    """Renders a firewall command template per blocked source.

    Keeps a local mirror of installed rules so is_blocked() works
    without querying the host firewall.
    """

    def __init__(self, template: str = DEFAULT_BLOCK_CMD):
        self.template = template
        self._mirror = MemoryBlocklist()

    def block(self, ip: str) -> int:
        if self._mirror.is_blocked(ip):
            return self._mirror.block(ip)
        cmd = shlex.split(self.template.format(ip=ip))
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise BlockError(
                f"block command exited {proc.returncode}: {proc.stderr.strip()}"
            )
        return self._mirror.block(ip)

    def is_blocked(self, ip: str) -> bool:
        return self._mirror.is_blocked(ip)

    def entries(self) -> dict:
        return self._mirror.entries()


def _valid_ipv4(ip: str) -> bool:
    parts = ip.split(".")
    return len(parts) == 4 and all(
        p.isdigit() and 0 <= int(p) <= 255 for p in parts
    )


def block_source(ip: str, backend) -> int:
    """Install a source block; returns the installation timestamp (us)."""
    if not _valid_ipv4(ip):
        raise ValueError(f"not a valid IPv4 address: {ip}")
    return backend.block(ip)


@dataclass
class ResponsePolicy:
    rules: dict = field(default_factory=lambda: dict(DEFAULT_POLICY))
    default_action: str = BLOCK

    def resolve(self, label: str) -> list:
        actions = self.rules.get(label)
        if not actions:
            return [self.default_action]
        return list(actions)

    @classmethod
    def load(cls, path) -> "ResponsePolicy":
        with open(path) as f:
            raw = json.load(f)
        default = raw.pop("default", BLOCK)
        return cls(rules=raw, default_action=default)

    def save(self, path) -> None:
        doc = dict(self.rules)
        doc["default"] = self.default_action
        with open(path, "w") as f:
            json.dump(doc, f, indent=1)


@dataclass
class IncidentRecord:
    ts_us: int
    label: str
    src_ip: str
    src_mac: str
    actions_taken: list
    block_installed_ts_us: int | None = None
    action_failed: bool = False

    def to_dict(self) -> dict:
        return {
            "ts_us": self.ts_us,
            "label": self.label,
            "src_ip": self.src_ip,
            "src_mac": self.src_mac,
            "actions_taken": self.actions_taken,
            "block_installed_ts_us": self.block_installed_ts_us,
            "action_failed": self.action_failed,
        }


# Block installation debounce: a source is blocked once it accumulates
# this many incidents inside the sliding window.  An attack burst
# crosses the bar within milliseconds, while the sporadic false alarms
# inherent to a quantile-calibrated threshold (roughly one per thousand
# messages, each already dropped individually) never cluster tightly
# enough to cut off a legitimate client.
BLOCK_MIN_HITS = 8
BLOCK_WINDOW_US = 2_000_000


class ResponseEngine:
    """Executes policy actions per incident; idempotent per (ip, label).

    Drop-versus-block separation: every flagged message was already
    dropped by the mediator, so blocking is pure containment and can
    afford the short evidence window before firing.
    """

    def __init__(self, policy: ResponsePolicy | None = None,
                 blocklist=None, log_path=None,
                 block_min_hits: int = BLOCK_MIN_HITS,
                 block_window_us: int = BLOCK_WINDOW_US):
        self.policy = policy or ResponsePolicy()
        self.blocklist = blocklist if blocklist is not None else MemoryBlocklist()
        self.log_path = log_path
        self.block_min_hits = block_min_hits
        self.block_window_us = block_window_us
        self.records: list[IncidentRecord] = []
        self._handled: set = set()
        self._hits: dict[str, list[int]] = {}
        self._lock = threading.Lock()

    def _block_ready(self, src_ip: str, ts: int) -> bool:
        hits = self._hits.setdefault(src_ip, [])
        hits.append(ts)
        floor = ts - self.block_window_us
        while hits and hits[0] < floor:
            hits.pop(0)
        return len(hits) >= self.block_min_hits

    def handle_incident(self, label: str, src_ip: str, src_mac: str,
                        ts_us: int | None = None) -> IncidentRecord:
        ts = ts_us if ts_us is not None else _now_us()
        with self._lock:
            block_ready = self._block_ready(src_ip, ts)
            duplicate = (src_ip, label) in self._handled
            self._handled.add((src_ip, label))
        record = IncidentRecord(ts_us=ts, label=label, src_ip=src_ip,
                                src_mac=src_mac, actions_taken=[])
        for action in self.policy.resolve(label):
            if action == BLOCK:
                if not block_ready or self.blocklist.is_blocked(src_ip):
                    continue
                try:
                    record.block_installed_ts_us = max(
                        block_source(src_ip, self.blocklist), ts)
                    record.actions_taken.append(BLOCK)
                except (BlockError, ValueError):
                    record.action_failed = True
            elif not duplicate:
                record.actions_taken.append(LOG_ONLY)
        with self._lock:
            self.records.append(record)
            if self.log_path:
                with open(self.log_path, "a") as f:
                    f.write(json.dumps(record.to_dict()) + "\n")
        return record
