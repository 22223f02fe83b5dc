"""Phase and coherence quality measures, stage timing and the evaluation report."""
from __future__ import annotations

import csv
import io as _io
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_same_shape


def phce(estimated, truth):
    """Mean cosine of the wrapped phase error.

    Either argument may be a phase array (radians) or a complex raster, in
    which case its angle is used.
    """
    est = np.angle(estimated) if np.iscomplexobj(estimated) else np.asarray(estimated, float)
    ref = np.angle(truth) if np.iscomplexobj(truth) else np.asarray(truth, float)
    check_same_shape(est, ref, ("estimated", "truth"))
    err = np.angle(np.exp(1j * (est.astype(np.float64) - ref)))
    return float(np.mean(np.cos(err)))


def cmse(estimated, truth):
    """MSE between coherence maps after removing each map's own mean."""
    est = np.asarray(estimated, dtype=np.float64)
    ref = np.asarray(truth, dtype=np.float64)
    check_same_shape(est, ref, ("estimated", "truth"))
    d = (est - est.mean()) - (ref - ref.mean())
    return float(np.mean(d * d))


def time_stage(fn, *args, **kwargs):
    """Run ``fn`` and return ``(seconds, result)`` using a monotonic clock."""
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    return time.perf_counter() - start, result


@dataclass
class EvalRow:
    scene: int
    method: str
    phce: float
    cmse: float
    seconds: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def add(self, scene, method, phce_value, cmse_value, seconds):
        if not math.isnan(phce_value) and not -1.0 - 1e-12 <= phce_value <= 1.0 + 1e-12:
            raise ValueError(f"phce {phce_value} outside [-1, 1]")
        if not math.isnan(cmse_value) and cmse_value < 0:
            raise ValueError(f"cmse {cmse_value} is negative")
        self.rows.append(EvalRow(scene, method, phce_value, cmse_value, seconds))

    def methods(self):
        seen = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def aggregate(self):
        """Mean phce, cmse and seconds per method (NaN entries skipped)."""
        acc = defaultdict(lambda: defaultdict(list))
        for r in self.rows:
            for key in ("phce", "cmse", "seconds"):
                v = getattr(r, key)
                if not math.isnan(v):
                    acc[r.method][key].append(v)
        return {m: {k: (float(np.mean(acc[m][k])) if acc[m][k] else math.nan)
                    for k in ("phce", "cmse", "seconds")}
                for m in self.methods()}

    def to_csv(self):
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["scene", "method", "phce", "cmse", "seconds"])
        for r in self.rows:
            writer.writerow([r.scene, r.method, _fmt(r.phce), _fmt(r.cmse), f"{r.seconds:.6f}"])
        return buf.getvalue()

    def to_table(self):
        """Metric rows by method columns."""
        agg = self.aggregate()
        methods = self.methods()
        width = max([8] + [len(m) for m in methods]) + 2
        lines = ["Metric".ljust(8) + "".join(m.rjust(width) for m in methods)]
        for key in ("phce", "cmse", "seconds"):
            cells = []
            for m in methods:
                v = agg[m][key]
                cells.append(("N/A" if math.isnan(v) else f"{v:.4f}").rjust(width))
            lines.append(key.ljust(8) + "".join(cells))
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"


def _fmt(v):
    return "nan" if math.isnan(v) else f"{v:.6f}"
