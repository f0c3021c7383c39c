"""Command-line entry point: ``fracbench tune|simulate|doe|report``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .controllers import PRESET_ALIASES, ControllerParams, preset
from .errors import FracbenchError
from .factorial import (
    CONTROLLER_ORDER,
    EFFECTS,
    METRICS,
    influence_report,
    reproduce_paper_tables,
    run_design,
    table_mf,
    write_mf_csv,
)
from .plant import TransferFunction, design_plant
from .simloop import FactorLevels, SimConfig, metrics, simulate
from .tuning import Family, FrequencySpec, TuningOptions, tune

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2
DEFAULT_OUTDIR = "fracbench-out"
MANIFEST = "manifest.json"


class UsageError(Exception):
    """Bad input on the command line or in a referenced file."""


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    output_dir: str
    seed: int
    timestamp: str
    version: str
    config: dict
    outputs: list[str]

    def write(self, directory: Path) -> Path:
        path = directory / MANIFEST
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")
        return path


def _outdir(args) -> Path:
    base = args.out or os.environ.get("FRACBENCH_OUTDIR") or DEFAULT_OUTDIR
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest(args, command, config_path, outdir, config, outputs):
    RunManifest(
        command=command,
        config_path=str(config_path) if config_path else None,
        output_dir=str(outdir),
        seed=args.seed,
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        version=__version__,
        config=config,
        outputs=sorted(outputs),
    ).write(outdir)


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _controller(args) -> tuple[str, ControllerParams]:
    if args.preset and args.controller:
        raise UsageError("give either --preset or --controller, not both")
    if args.preset:
        try:
            return PRESET_ALIASES[args.preset.lower()], preset(args.preset).params
        except KeyError:
            names = ", ".join(PRESET_ALIASES)
            raise UsageError(f"unknown preset {args.preset!r}; choose from {names}") from None
    if args.controller:
        data = _read_json(args.controller)
        # tuning output nests the parameters
        if "params" in data:
            data = data["params"]
        return data.get("name") or Path(args.controller).stem, ControllerParams.from_dict(data)
    raise UsageError("a controller is required: --preset NAME or --controller FILE")


def _sim_config(args) -> SimConfig:
    config = SimConfig.from_dict(_read_json(args.config)) if args.config else SimConfig()
    overrides = {"seed": args.seed}
    if getattr(args, "mode", None):
        overrides["plant_mode"] = args.mode
    if getattr(args, "factor_a", False) or getattr(args, "factor_b", False) \
            or getattr(args, "factor_c", False):
        overrides["factors"] = FactorLevels(int(args.factor_a), int(args.factor_b), int(args.factor_c))
    return replace(config, **overrides)


def _plant(selector: str) -> TransferFunction:
    if selector == "design":
        return design_plant()
    if selector == "pure-gain":
        return TransferFunction(1.0, 0.0, 0.0, 0.0)
    return TransferFunction(**_read_json(selector))


def cmd_tune(args) -> int:
    spec = FrequencySpec.from_dict(_read_json(args.spec))
    plant = _plant(args.plant)
    result = tune(plant, spec, args.family, TuningOptions(seed=args.seed))
    outdir = _outdir(args)
    (outdir / "tuning.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    report = _margin_table(result, spec)
    (outdir / "margins.txt").write_text(report)
    _manifest(args, "tune", args.spec, outdir,
              {"spec": spec.to_dict(), "plant": plant.__dict__, "family": result.family.value},
              ["tuning.json", "margins.txt"])
    print(report, end="")
    if not result.feasible:
        print("infeasible: " + ", ".join(result.violations), file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _margin_table(result, spec: FrequencySpec) -> str:
    a = result.achieved
    p = result.params
    rows = [
        ("phase margin [deg]", spec.phase_margin, a["phase_margin"]),
        ("crossover |L| [dB]", 0.0, a["crossover_db"]),
        ("phase slope [deg/(rad/s)]", 0.0, a["phase_slope"]),
        ("|T| at noise band [dB]", spec.noise_band_level, a["t_db"]),
        ("|S| at disturbance band [dB]", spec.disturbance_level, a["s_db"]),
        ("gain margin [dB]", spec.gain_margin, a["gain_margin"]),
    ]
    lines = [
        f"family {result.family.value}  feasible {result.feasible}",
        f"k={p.k:.6g} tau_i={p.tau_i:.6g} tau_d={p.tau_d:.6g} lambda={p.lam:.6g} mu={p.mu:.6g}",
        f"{'quantity':<30}{'target':>12}{'achieved':>12}",
    ]
    lines += [f"{name:<30}{want:>12.4g}{got:>12.4g}" for name, want, got in rows]
    lines.append(f"nominal ISE {result.ise:.6g}")
    if result.violations:
        lines.append("violations: " + ", ".join(result.violations))
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    name, params = _controller(args)
    config = _sim_config(args)
    trace = simulate(params, config)
    m = metrics(trace)
    outdir = _outdir(args)
    trace.to_csv(outdir / "trace.csv")
    payload = {"controller": params.to_dict(name), "metrics": m.to_dict()}
    (outdir / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")
    _manifest(args, "simulate", args.config, outdir,
              {"sim": config.to_dict(), "controller": params.to_dict(name)},
              ["trace.csv", "metrics.json"])
    print(json.dumps(m.to_dict()))
    return EXIT_OK


def cmd_doe(args) -> int:
    outdir = _outdir(args)
    if args.replay_paper:
        replay = reproduce_paper_tables()
        replay.to_csv(outdir / "published_influence.csv")
        write_mf_csv(outdir / "published_mf.csv", replay.mf)
        _manifest(args, "doe", None, outdir, {"replay_published": True},
                  ["published_influence.csv", "published_mf.csv"])
        return EXIT_OK
    if args.replicates < 1:
        raise UsageError(f"--replicates must be >= 1, got {args.replicates}")
    name, params = _controller(args)
    config = _sim_config(args)
    table = run_design(params, config, replicates=args.replicates, max_workers=args.jobs)
    report = influence_report(table)
    outputs = ["factorial.csv", "influence.csv", "mf.csv", "influence.json"]
    table.to_csv(outdir / "factorial.csv")
    report.to_csv(outdir / "influence.csv")
    (outdir / "influence.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    write_mf_csv(outdir / "mf.csv", table_mf(table, report, name))
    _manifest(args, "doe", args.config, outdir,
              {"sim": config.to_dict(), "controller": params.to_dict(name),
               "replicates": args.replicates},
              outputs)
    return EXIT_OK


def _order_key(name: str):
    # presets first in the published order, then anything else by name
    return (CONTROLLER_ORDER.index(name), "") if name in CONTROLLER_ORDER else (len(CONTROLLER_ORDER), name)


def _gather(results: Path):
    summaries, influences = {}, {}
    for path in sorted(results.rglob("metrics.json")):
        data = _read_json(path)
        try:
            ctrl, m = data["controller"], data["metrics"]
            summaries[ctrl.get("name") or path.parent.name] = (ctrl, m)
        except (KeyError, TypeError, AttributeError):
            raise UsageError(f"{path}: not a metrics file") from None
    for path in sorted(results.rglob("influence.csv")):
        manifest = path.parent / MANIFEST
        name = path.parent.name
        if manifest.exists():
            name = _read_json(manifest).get("config", {}).get("controller", {}).get("name") or name
        try:
            with open(path, newline="") as fh:
                table = {(r["metric"], r["effect"]): float(r["percentage"]) for r in csv.DictReader(fh)}
        except (KeyError, ValueError):
            raise UsageError(f"{path}: not an influence file") from None
        influences[name] = table
    return summaries, influences


def _write_aligned(path: Path, rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    text = "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows) + "\n"
    path.write_text(text)
    return text


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def cmd_report(args) -> int:
    results = Path(args.results)
    if not results.is_dir():
        raise UsageError(f"{results} is not a directory")
    summaries, influences = _gather(results)
    if not summaries and not influences:
        raise UsageError(f"{results} holds no metrics.json or influence.csv outputs")
    outdir = Path(args.out) if args.out else results
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = []
    text = ""
    if summaries:
        header = ["controller", "k", "tau_i", "tau_d", "lambda", "mu", "ise", "control_mean"]
        rows = [header]
        for name in sorted(summaries, key=_order_key):
            ctrl, m = summaries[name]
            rows.append([name] + [f"{float(ctrl[k]):.6g}" for k in header[1:6]]
                        + [f"{float(m['ise']):.6g}", f"{float(m['control_mean']):.6g}"])
        _write_csv(outdir / "summary.csv", rows)
        text += _write_aligned(outdir / "summary.txt", rows)
        outputs += ["summary.csv", "summary.txt"]
    if influences:
        names = sorted(influences, key=_order_key)
        rows = [["metric", "effect"] + names]
        for metric in METRICS:
            for effect in EFFECTS:
                rows.append([metric, effect] + [
                    f"{influences[n].get((metric, effect), float('nan')):.3f}" for n in names
                ])
        _write_csv(outdir / "influence_matrix.csv", rows)
        text += ("\n" if text else "") + _write_aligned(outdir / "influence_matrix.txt", rows)
        outputs += ["influence_matrix.csv", "influence_matrix.txt"]
    _manifest(args, "report", None, outdir, {"results": str(results)}, outputs)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracbench", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42, help="base RNG seed (default 42)")
    common.add_argument("--out", help="output directory (default $FRACBENCH_OUTDIR or ./fracbench-out)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tune", parents=[common], help="tune a controller against a frequency spec")
    p.add_argument("spec", help="FrequencySpec JSON file")
    p.add_argument("--plant", default="design",
                   help="'design' (default), 'pure-gain' or a TransferFunction JSON file")
    p.add_argument("--family", choices=[f.value for f in Family], default="fopid")
    p.set_defaults(func=cmd_tune)

    ctrl = argparse.ArgumentParser(add_help=False)
    ctrl.add_argument("--preset", help="one of: " + ", ".join(PRESET_ALIASES))
    ctrl.add_argument("--controller", help="controller or tuning-result JSON file")
    ctrl.add_argument("--config", help="SimConfig JSON file")
    ctrl.add_argument("--mode", choices=["linear", "nonlinear"])

    p = sub.add_parser("simulate", parents=[common, ctrl], help="closed-loop step response")
    p.add_argument("--factor-a", action="store_true", help="double the plant gain")
    p.add_argument("--factor-b", action="store_true", help="add measurement noise")
    p.add_argument("--factor-c", action="store_true", help="inject the load disturbance")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("doe", parents=[common, ctrl], help="2x2x2 factorial campaign")
    p.add_argument("--replicates", type=int, default=2)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--replay-paper", action="store_true",
                   help="recompute influence from the embedded published cell tables")
    p.set_defaults(func=cmd_doe)

    p = sub.add_parser("report", parents=[common], help="summarize a results directory")
    p.add_argument("results", help="directory searched recursively for outputs")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fracbench: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FracbenchError, OSError) as exc:
        print(f"fracbench: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
