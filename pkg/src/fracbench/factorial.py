"""Replicated 2**3 factorial campaigns, effect sums of squares and measurement factors."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .controllers import ControllerParams
from .errors import ConfigurationError, FracbenchError, InvalidParameterError
from .simloop import FactorLevels, ResponseMetrics, SimConfig, metrics, simulate

EFFECTS = ("A", "B", "AB", "C", "AC", "BC", "ABC")
METRICS = ("ise", "step_std", "control_mean", "control_std")
# CSV column names for METRICS
METRIC_COLUMNS = ("ise", "step_std", "u_mean", "u_std")

# (C, B, A) in the row order of the published tables: A varies fastest
CELLS = tuple(itertools.product((0, 1), repeat=3))

# cell in which exactly the factors named by an effect are switched on
EFFECT_CELL = {
    effect: (int("C" in effect), int("B" in effect), int("A" in effect)) for effect in EFFECTS
}


class DesignError(FracbenchError):
    """A factorial cell failed; `cell` is ``(C, B, A, replicate)``."""

    def __init__(self, cell, cause):
        super().__init__(f"cell C={cell[0]} B={cell[1]} A={cell[2]} replicate={cell[3]}: {cause}")
        self.cell = cell
        self.cause = cause

    def __reduce__(self):
        # keeps the exception intact across worker processes
        return (type(self), (self.cell, str(self.cause)))


@dataclass(frozen=True)
class FactorialRow:
    levels: FactorLevels
    replicate: int
    response: ResponseMetrics

    @property
    def cell(self) -> tuple[int, int, int]:
        lv = self.levels
        return (lv.c_disturbance, lv.b_noise, lv.a_gain_uncertainty)


@dataclass
class FactorialTable:
    rows: list[FactorialRow]

    def __post_init__(self):
        counts = {}
        for row in self.rows:
            counts[row.cell] = counts.get(row.cell, 0) + 1
        if set(counts) != set(CELLS) or len(set(counts.values())) != 1:
            raise ConfigurationError("factorial table must hold all 8 cells with equal replication")

    @property
    def replicates(self) -> int:
        return len(self.rows) // 8

    def coded(self) -> np.ndarray:
        """``(n, 3)`` matrix of A, B, C coded as -1/+1."""
        return np.array([row.levels.coded for row in self.rows], dtype=float)

    def response(self, metric: str) -> np.ndarray:
        if metric not in METRICS:
            raise InvalidParameterError(f"unknown metric {metric!r}; choose from {METRICS}")
        return np.array([getattr(row.response, metric) for row in self.rows])

    def cell_means(self, metric: str) -> dict[tuple[int, int, int], float]:
        y = self.response(metric)
        out = {}
        for cell in CELLS:
            vals = [v for row, v in zip(self.rows, y) if row.cell == cell]
            out[cell] = float(np.mean(vals))
        return out

    @classmethod
    def from_cells(cls, values: dict, replicates: int = 1) -> FactorialTable:
        """Build from ``{(C, B, A): {metric: value}}``, repeating each cell."""
        rows = []
        for (c, b, a), resp in values.items():
            for r in range(replicates):
                rows.append(FactorialRow(FactorLevels(a, b, c), r, ResponseMetrics(**resp)))
        return cls(rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("C", "B", "A", "replicate") + METRIC_COLUMNS)
            for row in self.rows:
                vals = [repr(float(getattr(row.response, m))) for m in METRICS]
                writer.writerow([*row.cell, row.replicate, *vals])

    def to_dict(self) -> dict:
        return {
            "rows": [
                {"C": row.cell[0], "B": row.cell[1], "A": row.cell[2],
                 "replicate": row.replicate, **row.response.to_dict()}
                for row in self.rows
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> FactorialTable:
        rows = []
        for item in data["rows"]:
            levels = FactorLevels(item["A"], item["B"], item["C"])
            resp = ResponseMetrics(**{m: item[m] for m in METRICS})
            rows.append(FactorialRow(levels, item["replicate"], resp))
        return cls(rows)

    @classmethod
    def read_csv(cls, path) -> FactorialTable:
        rows = []
        with open(path, newline="") as fh:
            for item in csv.DictReader(fh):
                levels = FactorLevels(int(item["A"]), int(item["B"]), int(item["C"]))
                resp = ResponseMetrics(**{m: float(item[c]) for m, c in zip(METRICS, METRIC_COLUMNS)})
                rows.append(FactorialRow(levels, int(item["replicate"]), resp))
        return cls(rows)


def derived_seed(base_seed: int, levels: FactorLevels, replicate: int) -> int:
    """64-bit seed for one run: ``base_seed XOR hash(A, B, C, replicate)``."""
    tag = f"{levels.a_gain_uncertainty},{levels.b_noise},{levels.c_disturbance},{replicate}"
    digest = hashlib.blake2b(tag.encode(), digest_size=8).digest()
    return (int(base_seed) ^ int.from_bytes(digest, "little")) & (2**64 - 1)


def _run_cell(args):
    controller, config, key = args
    try:
        return metrics(simulate(controller, config))
    except Exception as exc:  # noqa: BLE001 - re-raised with the cell attached
        raise DesignError(key, exc) from exc


def run_design(controller: ControllerParams, base: SimConfig, replicates: int = 2,
               max_workers: int | None = 1) -> FactorialTable:
    """Simulate every (A, B, C) combination `replicates` times.

    Rows come out in table order (C, B, A with A fastest), replicates of a
    cell adjacent. With ``max_workers > 1`` the runs are spread over
    processes; the result does not depend on the worker count.
    """
    if replicates < 1:
        raise ConfigurationError(f"replicates must be >= 1, got {replicates}")
    jobs = []
    for c, b, a in CELLS:
        levels = FactorLevels(a, b, c)
        for r in range(replicates):
            cfg = replace(base, factors=levels, seed=derived_seed(base.seed, levels, r))
            jobs.append((controller, cfg, (c, b, a, r)))

    if max_workers and max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]
    rows = [FactorialRow(cfg.factors, key[3], res) for (_, cfg, key), res in zip(jobs, results)]
    return FactorialTable(rows)


def effect_columns(coded: np.ndarray) -> dict[str, np.ndarray]:
    """Contrast columns for the seven effects from coded (A, B, C)."""
    a, b, c = coded[:, 0], coded[:, 1], coded[:, 2]
    return {"A": a, "B": b, "AB": a * b, "C": c, "AC": a * c, "BC": b * c, "ABC": a * b * c}


@dataclass
class InfluenceEntry:
    metric: str
    percentages: dict[str, float]
    sum_squares: dict[str, float]
    degenerate: bool = False
    error_ss: float = 0.0
    error_df: int = 0
    f_values: dict[str, float | None] = field(default_factory=dict)
    p_values: dict[str, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "percentages": self.percentages,
            "sum_squares": self.sum_squares,
            "degenerate": self.degenerate,
            "error_ss": self.error_ss,
            "error_df": self.error_df,
            "f_values": self.f_values,
            "p_values": self.p_values,
        }


def influence(table: FactorialTable, metric: str) -> InfluenceEntry:
    """Share of each effect's sum of squares in the total over the seven effects.

    ``SS = contrast**2 / (8 R)`` with the contrast taken over every run. Pure
    error is left out of the denominator so the shares add to 100. F and p
    values against pure error are attached when the design is replicated.
    """
    y = table.response(metric)
    n = y.size
    cols = effect_columns(table.coded())
    ss = {name: float(np.dot(col, y) ** 2 / n) for name, col in cols.items()}
    total = sum(ss.values())
    # relative threshold: contrasts of identical responses cancel to rounding noise
    scale = float(np.dot(y, y)) or 1.0
    degenerate = total <= 1e-24 * scale
    if degenerate:
        pct = {name: 0.0 for name in EFFECTS}
    else:
        pct = {name: 100.0 * ss[name] / total for name in EFFECTS}

    means = table.cell_means(metric)
    fitted = np.array([means[row.cell] for row in table.rows])
    error_ss = float(np.sum((y - fitted) ** 2))
    error_df = n - 8
    f_vals, p_vals = {}, {}
    for name in EFFECTS:
        if error_df > 0 and error_ss > 0:
            f = ss[name] / (error_ss / error_df)
            f_vals[name] = f
            p_vals[name] = float(stats.f.sf(f, 1, error_df))
        else:
            f_vals[name] = None
            p_vals[name] = None
    return InfluenceEntry(metric, pct, {k: ss[k] for k in EFFECTS}, degenerate,
                          error_ss, error_df, f_vals, p_vals)


@dataclass
class InfluenceReport:
    entries: dict[str, InfluenceEntry]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("metric", "effect", "percentage"))
            for metric, entry in self.entries.items():
                for effect in EFFECTS:
                    writer.writerow((metric, effect, repr(float(entry.percentages[effect]))))

    def to_dict(self) -> dict:
        return {metric: entry.to_dict() for metric, entry in self.entries.items()}


def influence_report(table: FactorialTable) -> InfluenceReport:
    return InfluenceReport({metric: influence(table, metric) for metric in METRICS})


def measurement_factor(data: float, influence_pct: float) -> float:
    """Response value weighted by its influence share: ``data * pct / 100``."""
    if not 0.0 <= influence_pct <= 100.0:
        raise InvalidParameterError(f"influence must lie in [0, 100], got {influence_pct}")
    return data * influence_pct / 100.0


def mf_rows(cell_values: dict, percentages: dict) -> list[dict]:
    """Measurement factors for every (cell, effect) pair of one metric.

    `cell_values` maps ``(C, B, A)`` to the response; `percentages` maps
    effect names to influence. ``matched`` marks the cell whose active factors
    are exactly the effect's.
    """
    out = []
    for effect in EFFECTS:
        for cell in CELLS:
            data = cell_values[cell]
            out.append({
                "effect": effect,
                "C": cell[0], "B": cell[1], "A": cell[2],
                "data": data,
                "influence": percentages[effect],
                "mf": measurement_factor(data, percentages[effect]),
                "matched": int(cell == EFFECT_CELL[effect]),
            })
    return out


MF_HEADER = ("controller", "metric", "effect", "C", "B", "A", "data", "influence", "mf", "matched")


def write_mf_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MF_HEADER)
        for row in rows:
            writer.writerow([
                repr(float(row[k])) if isinstance(row[k], float) else row[k] for k in MF_HEADER
            ])


def table_mf(table: FactorialTable, report: InfluenceReport, controller: str = "") -> list[dict]:
    rows = []
    for metric in METRICS:
        for row in mf_rows(table.cell_means(metric), report.entries[metric].percentages):
            rows.append({"controller": controller, "metric": metric, **row})
    return rows


# Published cell values, rows in CELLS order; columns follow METRICS.
PUBLISHED_CELLS = {
    "FOPID": [
        (0.49, 0.13, 0.11, 0.208),
        (0.49, 0.13, 0.11, 0.208),
        (0.73, 0.15, 0.292, 0.21),
        (0.81, 0.163, 0.323, 0.29),
        (0.77, 0.161, 0.252, 0.219),
        (0.76, 0.158, 0.366, 0.293),
        (0.81, 0.163, 0.323, 0.294),
        (0.59, 0.141, 0.169, 0.263),
    ],
    "IOPID": [
        (0.867, 0.172, 0.296, 0.438),
        (0.866, 0.170, 0.720, 0.743),
        (0.536, 0.137, 0.155, 0.437),
        (0.826, 0.168, 0.337, 0.433),
        (0.867, 0.172, 0.296, 0.438),
        (0.913, 0.175, 0.667, 0.739),
        (0.913, 0.175, 0.667, 0.739),
        (0.826, 0.168, 0.337, 0.433),
    ],
    "SIMC PID": [
        (3.67, 0.352, 0.403, 0.555),
        (1.562, 0.230, 0.762, 0.620),
        (1.597, 0.232, 0.733, 0.629),
        (1.976, 0.257, 1.699, 1.148),
        (1.976, 0.257, 1.699, 1.148),
        (4.639, 0.393, 1.136, 1.041),
        (1.976, 0.257, 1.699, 1.148),
        (1.944, 0.256, 1.816, 1.173),
    ],
}

# Published influence percentages: metric -> controller -> effect -> %
PUBLISHED_INFLUENCE = {
    "ise": {
        "FOPID": (45.761, 22.089, 12.026, 10.141, 3.099, 3.572, 3.312),
        "SIMC PID": (60.561, 0.006, 8.513, 2.730, 9.419, 9.401, 9.370),
        "IOPID": (39.534, 32.512, 7.134, 17.213, 1.173, 1.320, 1.115),
    },
    "step_std": {
        "FOPID": (46.368, 18.641, 14.654, 11.215, 2.845, 3.130, 3.147),
        "SIMC PID": (62.801, 0.000, 7.547, 4.629, 8.523, 8.356, 8.143),
        "IOPID": (40.994, 29.110, 7.487, 19.482, 1.103, 0.942, 0.881),
    },
    "control_mean": {
        "FOPID": (47.567, 30.478, 0.660, 2.732, 9.099, 4.501, 4.962),
        "SIMC PID": (9.505, 83.708, 0.865, 0.000, 2.529, 1.183, 2.209),
        "IOPID": (10.329, 84.623, 0.177, 0.341, 2.238, 1.007, 1.286),
    },
    "control_std": {
        "FOPID": (1.592, 93.456, 2.084, 0.485, 0.626, 0.396, 1.362),
        "SIMC PID": (1.562, 97.416, 0.182, 0.001, 0.332, 0.103, 0.404),
        "IOPID": (0.011, 99.904, 0.013, 0.030, 0.012, 0.000, 0.029),
    },
}

CONTROLLER_ORDER = ("FOPID", "SIMC PID", "IOPID")


def published_table(controller: str) -> FactorialTable:
    """Published cell values of one controller as an unreplicated table."""
    values = {
        cell: dict(zip(METRICS, row)) for cell, row in zip(CELLS, PUBLISHED_CELLS[controller])
    }
    return FactorialTable.from_cells(values, replicates=1)


def published_influence(controller: str, metric: str) -> dict[str, float]:
    return dict(zip(EFFECTS, PUBLISHED_INFLUENCE[metric][controller]))


@dataclass
class Replay:
    """Influence recomputed from the published cells next to the published shares."""

    computed: dict[str, InfluenceReport]
    published: dict[str, dict[str, dict[str, float]]]
    mf: list[dict]

    def comparison_rows(self) -> list[dict]:
        rows = []
        for controller in CONTROLLER_ORDER:
            for metric in METRICS:
                for effect in EFFECTS:
                    ours = self.computed[controller].entries[metric].percentages[effect]
                    theirs = self.published[controller][metric][effect]
                    rows.append({
                        "controller": controller, "metric": metric, "effect": effect,
                        "computed": ours, "published": theirs, "difference": ours - theirs,
                    })
        return rows

    def to_csv(self, path) -> None:
        header = ("controller", "metric", "effect", "computed", "published", "difference")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in self.comparison_rows():
                writer.writerow([row[k] if isinstance(row[k], str) else repr(float(row[k]))
                                 for k in header])


def reproduce_paper_tables() -> Replay:
    """Run the influence analysis on the published cells and pair it with the published shares.

    Agreement is not expected: several published rows repeat verbatim under
    different factor levels. The measurement factors use the published
    shares, as the figures they feed do.
    """
    computed, published, mf = {}, {}, []
    for controller in CONTROLLER_ORDER:
        table = published_table(controller)
        computed[controller] = influence_report(table)
        published[controller] = {m: published_influence(controller, m) for m in METRICS}
        for metric in METRICS:
            cells = table.cell_means(metric)
            for row in mf_rows(cells, published[controller][metric]):
                mf.append({"controller": controller, "metric": metric, **row})
    return Replay(computed, published, mf)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True)
