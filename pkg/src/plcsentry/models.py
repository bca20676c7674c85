"""Serialized model bundle shared by train, serve and eval.

One JSON document holds everything the relay needs at runtime: min-max
bounds, the PCA projection, per-peer baseline histograms, the selected
feature subsets, the calibrated LOF model and the trained forest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import forest as forest_mod
from . import lof as lof_mod
from . import preprocess as pre
from .telemetry import FEATURE_NAMES, BaselineHistogram


@dataclass
class ModelBundle:
    minmax: pre.MinMaxBounds
    pca: pre.PcaModel
    baselines: dict
    corr_kept: list
    rfe_kept: list
    lof: lof_mod.LofModel
    forest: forest_mod.ForestModel

    def embed(self, rows: np.ndarray) -> np.ndarray:
        """Pipeline I: min-max then PCA projection to 2-D."""
        return pre.project(pre.apply_minmax(rows, self.minmax), self.pca)

    def classifier_rows(self, rows: np.ndarray) -> np.ndarray:
        """Pipeline II: min-max then the RFE-selected columns."""
        cols = [FEATURE_NAMES.index(n) for n in self.rfe_kept]
        norm = pre.apply_minmax(np.atleast_2d(rows), self.minmax)
        return norm[:, cols]

    def to_dict(self) -> dict:
        return {
            "minmax": self.minmax.to_dict(),
            "pca": self.pca.to_dict(),
            "baselines": [h.to_dict() for h in self.baselines.values()],
            "corr_kept": self.corr_kept,
            "rfe_kept": self.rfe_kept,
            "lof": self.lof.to_dict(),
            "forest": self.forest.to_dict(),
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        baselines = {}
        for e in d["baselines"]:
            h = BaselineHistogram.from_dict(e)
            baselines[h.peer_key] = h
        return cls(
            minmax=pre.MinMaxBounds.from_dict(d["minmax"]),
            pca=pre.PcaModel.from_dict(d["pca"]),
            baselines=baselines,
            corr_kept=list(d["corr_kept"]),
            rfe_kept=list(d["rfe_kept"]),
            lof=lof_mod.LofModel.from_dict(d["lof"]),
            forest=forest_mod.ForestModel.from_dict(d["forest"]),
        )

    @classmethod
    def load(cls, path) -> "ModelBundle":
        with open(path) as f:
            return cls.from_dict(json.load(f))
