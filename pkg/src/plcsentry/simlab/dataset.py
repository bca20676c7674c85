"""Labeled dataset construction from scenario traces.

Traces are merged onto one timeline and replayed through a fresh
telemetry sensor, so cross-peer metrics (peer count) reflect the whole
capture.  Unlabeled onset rows are ingested for state continuity but
excluded from the emitted rows.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..telemetry import (FEATURE_NAMES, PacketMeta, Sensor,
                         write_feature_csv)
from .scenarios import TracePacket


@dataclass
class LabeledDataset:
    rows: np.ndarray          # (n, 14) feature matrix
    labels: list
    vectors: list             # FeatureVector records, CSV-ready
    label_counts: dict

    def summary(self) -> dict:
        return {"total": len(self.labels), "per_label": dict(self.label_counts)}

    def save_csv(self, path) -> None:
        write_feature_csv(path, self.vectors)


def make_dataset(traces, baselines=None,
                 emit_after_us: float | None = None) -> LabeledDataset:
    """Extract features over merged traces and attach scenario labels.

    Rows before `emit_after_us` are ingested for window continuity but
    not emitted; the trailing-60s rate counters need that long to settle,
    and rows from the settling ramp are not representative of steady
    operation.
    """
    merged: list[TracePacket] = []
    for trace in traces:
        merged.extend(trace)
    merged.sort(key=lambda p: p.meta.timestamp_us)
    sensor = Sensor(baselines=baselines)
    rows, labels, vectors = [], [], []
    for tp in merged:
        fv = sensor.ingest(tp.meta)
        if tp.label is None:
            continue
        if emit_after_us is not None and tp.meta.timestamp_us < emit_after_us:
            continue
        fv.label = tp.label
        rows.append(fv.values())
        labels.append(tp.label)
        vectors.append(fv)
    return LabeledDataset(
        rows=np.asarray(rows, dtype=float),
        labels=labels,
        vectors=vectors,
        label_counts=dict(Counter(labels)),
    )


def save_trace(path, packets) -> None:
    """Trace JSONL: one header snapshot (plus payload hex) per line."""
    with open(path, "w") as f:
        for tp in packets:
            f.write(json.dumps({
                "ts_us": tp.meta.timestamp_us,
                "src_mac": tp.meta.src_mac,
                "src_ip": tp.meta.src_ip,
                "src_port": tp.meta.src_port,
                "frame_len": tp.meta.frame_len_bytes,
                "payload_len": tp.meta.payload_len_bytes,
                "payload_hex": tp.payload.hex(),
                "label": tp.label,
            }) + "\n")


def load_trace(path) -> list:
    packets = []
    with open(path) as f:
        for line in f:
            d = json.loads(line)
            meta = PacketMeta(
                timestamp_us=d["ts_us"], src_mac=d["src_mac"],
                src_ip=d["src_ip"], src_port=d["src_port"], dst_port=502,
                frame_len_bytes=d["frame_len"],
                payload_len_bytes=d["payload_len"])
            packets.append(TracePacket(
                meta, bytes.fromhex(d.get("payload_hex", "")),
                d.get("label")))
    return packets
