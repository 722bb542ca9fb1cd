"""Experiment reports: JSON (machine), aligned text (human), CSV sweeps."""

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

__all__ = ["SCHEMA_VERSION", "ExperimentReport", "aggregate", "sweep_csv"]

SCHEMA_VERSION = "1.0"
SD_CONVENTION = "population (ddof=0) over restarts"


def aggregate(restarts: List[dict]):
    """Mean and SD over restarts of every per-task and overall metric."""
    out = {"per_task": {}, "overall": {}}
    tasks = list(restarts[0]["per_task"]) if restarts else []
    for metric in ("MAE", "MSE"):
        vals = np.array([r["overall"][metric] for r in restarts])
        out["overall"][metric] = {"mean": float(vals.mean()), "sd": float(vals.std())}
        for t in tasks:
            vals = np.array([r["per_task"][t][metric] for r in restarts])
            out["per_task"].setdefault(t, {})[metric] = {"mean": float(vals.mean()), "sd": float(vals.std())}
    return out


@dataclass
class ExperimentReport:
    config: dict
    models: Dict[str, List[dict]]
    normalization: List[dict] = field(default_factory=list)
    timing: Dict[str, List[dict]] = field(default_factory=dict)  # per restart: fit/step1/step2 seconds
    schema_version: str = SCHEMA_VERSION

    @property
    def summary(self):
        return {name: aggregate(runs) for name, runs in self.models.items()}

    def mean_time(self, stage="fit"):
        """Mean seconds per restart spent in ``stage`` for each model."""
        out = {}
        for name, runs in self.timing.items():
            vals = [r[stage] if isinstance(r, dict) else float(r) for r in runs
                    if not isinstance(r, dict) or stage in r]
            if vals:
                out[name] = float(np.mean(vals))
        return out

    def normalized_time(self):
        t = self.mean_time()
        b = t.get("gp")
        if not b:
            return {}
        return {name: v / b for name, v in t.items()}

    def to_dict(self, include_timing=False):
        d = {
            "schema_version": self.schema_version,
            "config": self.config,
            "sd_convention": SD_CONVENTION,
            "normalization": self.normalization,
            "restarts": self.models,
            "summary": self.summary,
        }
        if include_timing:
            d["timing"] = {"seconds": self.timing, "normalized_to_gp": self.normalized_time()}
        return d

    def to_json(self, include_timing=False):
        """Byte-stable JSON unless ``include_timing`` adds wall-clock data."""
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def write(self, path, include_timing=False):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json(include_timing))

    def text_table(self):
        summary = self.summary
        norm_t = self.normalized_time()
        tasks = []
        for agg in summary.values():
            tasks = list(agg["per_task"])
            break
        cols = ["model"] + [f"{t} MAE" for t in tasks] + ["overall MAE", "overall MSE", "time"]
        rows = []
        for name, agg in summary.items():
            row = [name]
            for t in tasks:
                m = agg["per_task"][t]["MAE"]
                row.append(f"{m['mean']:.4f} ({m['sd']:.2g})")
            o = agg["overall"]
            row += [f"{o['MAE']['mean']:.4f} ({o['MAE']['sd']:.2g})",
                    f"{o['MSE']['mean']:.4f} ({o['MSE']['sd']:.2g})",
                    f"{norm_t[name]:.2f}" if name in norm_t else "-"]
            rows.append(row)
        widths = [max(len(r[i]) for r in rows + [cols]) for i in range(len(cols))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
        return "\n".join(lines) + "\n"


def sweep_csv(rows):
    """CSV text with columns N0, task, MAE_mean, MAE_sd."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N0", "task", "MAE_mean", "MAE_sd"])
    for r in rows:
        w.writerow([r["N0"], r["task"], repr(r["MAE_mean"]), repr(r["MAE_sd"])])
    return buf.getvalue()
