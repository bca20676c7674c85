"""Run manifests: a JSON audit record written once per CLI invocation.

A manifest captures what a run was (command + config snapshot + seeds),
what it touched (input/output paths), how long it took, and sha256
hashes of every artifact it produced.  Two runs with identical manifests
(modulo duration) must hash to identical artifacts; the determinism
acceptance check relies on that.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    duration_s: float | None = None
    artifact_hashes: dict = field(default_factory=dict)
    _t0: float = field(default_factory=time.monotonic, repr=False)

    def add_input(self, path) -> None:
        self.inputs.append(str(path))

    def add_output(self, path) -> None:
        path = str(path)
        self.outputs.append(path)
        self.artifact_hashes[os.path.basename(path)] = sha256_file(path)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "duration_s": self.duration_s,
            "artifact_hashes": self.artifact_hashes,
        }

    def write(self, path) -> None:
        """Finalize and write; exactly one manifest per run."""
        self.duration_s = round(time.monotonic() - self._t0, 3)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)
