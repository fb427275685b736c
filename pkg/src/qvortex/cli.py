"""Command-line entry point: ``qvortex {simulate,tomo,bell,table1}``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .channel import CountRecord, read_counts_csv, write_counts_csv
from .experiment import (
    ConfigError,
    Scenario,
    ScenarioConfig,
    calibrate_source_noise,
    format_table1,
    table1,
    run_scenario,
)
from .hilbert import OAM2, POL1, POL2, DensityMatrix, PhysicalityError, LabelError, fidelity, partial_trace
from .nonlocality import (
    chsh_functional,
    estimate_from_counts,
    hardy_functional,
    hardy_value,
    mermin_functional,
    mermin_value,
    optimize_chsh,
)
from .tomography import TomographyError, bootstrap_sigma, generate_settings, mle_reconstruct

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class NumericalFailure(RuntimeError):
    pass


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="scenario config JSON")
    p.add_argument("--seed", type=_u64, help="overrides the config seed")
    p.add_argument("--shots-per-basis", type=float, help="expected coincidences per measurement basis")
    p.add_argument("--infinite-statistics", action="store_true", help="exact Born probabilities, no sampling")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--raw-only", action="store_true")
    g.add_argument("--corrected-only", action="store_true")


def _variant(args) -> str | None:
    if getattr(args, "raw_only", False):
        return "raw"
    if getattr(args, "corrected_only", False):
        return "corrected"
    return None


def _load_config(args, default: dict | None = None) -> ScenarioConfig:
    if args.config is not None:
        cfg = ScenarioConfig.from_json_file(args.config)
    elif default is not None:
        cfg = ScenarioConfig.from_dict(default)
    else:
        raise ConfigError("--config is required")
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.shots_per_basis is not None:
        kw["shots_per_basis"] = args.shots_per_basis
    if args.infinite_statistics:
        kw["infinite_statistics"] = True
    if _variant(args):
        kw["variants"] = _variant(args)
    return replace(cfg, **kw) if kw else cfg


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        print(text)
    else:
        out.write_text(text + "\n")


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    report = run_scenario(cfg)
    out = args.out or Path("report.json")
    counts = args.counts or out.with_suffix(".counts.csv")
    out.write_text(report.dumps() + "\n")
    write_counts_csv(report.records, counts)
    print(f"wrote {out} and {counts}", file=sys.stderr)
    if not report.converged:
        raise NumericalFailure("maximum-likelihood reconstruction did not converge")
    return EXIT_OK


def _labels_for(records: list[CountRecord], text: str | None):
    if text:
        return [s.strip() for s in text.split(",")]
    n = len(records[0].outcome)
    return {2: [POL1, POL2], 3: [POL1, POL2, OAM2]}.get(n)


def cmd_tomo(args) -> int:
    records = [r for r in read_counts_csv(args.counts) if r.basis.startswith("tomo/")]
    if not records:
        raise ConfigError(f"{args.counts} holds no tomography records")
    labels = _labels_for(records, args.labels)
    if labels is None:
        raise ConfigError("cannot infer qubit labels; pass --labels")
    tset = generate_settings(len(labels), labels=labels)
    corrected = not args.raw_only
    fit = mle_reconstruct(records, tset, corrected=corrected)
    if args.target is not None:
        target = DensityMatrix.from_json(json.loads(args.target.read_text()))
        fit.fidelity_vs_target = fidelity(fit.rho_hat, target)
        if args.bootstrap:
            _, fit.bootstrap_sigma = bootstrap_sigma(records, tset, target, args.bootstrap, args.seed or 0,
                                                     corrected=corrected, fit=fit)
    _emit(json.dumps(fit.to_json(), indent=2), args.out)
    if not fit.converged:
        raise NumericalFailure("maximum-likelihood reconstruction did not converge")
    return EXIT_OK


def _bell_from_rho(rho: DensityMatrix) -> dict:
    n = len(rho.labels)
    if any(d != 2 for d in rho.dims) or n not in (2, 3):
        raise ConfigError("bell --rho expects a 2- or 3-qubit logical density matrix")
    two = rho if n == 2 else partial_trace(rho, rho.labels[:2])
    _, s = optimize_chsh(two)
    out = {"S_max": s}
    if n == 3:
        out["M"] = mermin_value(rho)
        out["H"] = hardy_value(rho)
    return out


def _bell_from_counts(records: list[CountRecord], variant: str | None) -> dict:
    out = {}
    bases = {r.basis for r in records}
    todo = []
    chsh = sorted(b for b in bases if b.startswith("chsh/"))
    if chsh:
        n_extra = len(chsh[0]) - len("chsh/A0B0")
        todo.append(("S", chsh_functional(n_extra)))
    if any(b.startswith("mermin/") for b in bases):
        todo.append(("M", mermin_functional()))
    if any(b.startswith("hardy/") for b in bases):
        todo.append(("H", hardy_functional()))
    if not todo:
        raise ConfigError("counts hold no chsh/, mermin/ or hardy/ records")
    for name, fn in todo:
        for v in ("raw", "corrected"):
            if variant and v != variant:
                continue
            value, sigma = estimate_from_counts(records, fn, corrected=v == "corrected")
            out[f"{name}_{v}"] = value
            out[f"{name}_{v}_sigma"] = sigma
    return out


def cmd_bell(args) -> int:
    if args.rho is not None:
        try:
            rho = DensityMatrix.from_json(json.loads(args.rho.read_text()))
        except (KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read density matrix {args.rho}: {exc}") from None
        values = _bell_from_rho(rho)
    else:
        values = _bell_from_counts(read_counts_csv(args.counts), _variant(args))
    for k, v in values.items():
        print(f"{k} = {v:.7f}")
    return EXIT_OK


NOISELESS_DEFAULT = {"scenario": "SOURCE"}


def cmd_table1(args) -> int:
    cfg = _load_config(args, NOISELESS_DEFAULT)
    if args.calibrate is not None:
        cfg = replace(cfg, noise=calibrate_source_noise(args.calibrate))
        print(f"source noise fitted to F = {args.calibrate}: {cfg.noise.kind.value} p = {cfg.noise.strength:.6f}")
    rows = table1(replace(cfg, scenario=Scenario.SOURCE))
    print(format_table1(rows))
    if args.out is not None:
        args.out.write_text(json.dumps(rows, indent=2) + "\n")
    if not all(r["converged"] for r in rows):
        raise NumericalFailure("maximum-likelihood reconstruction did not converge")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qvortex", description="Hybrid polarization/OAM entanglement simulator")
    p.add_argument("--version", action="version", version=f"qvortex {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario; write report JSON and counts CSV")
    _add_run_flags(s)
    s.add_argument("--out", type=Path, help="report JSON path (default report.json)")
    s.add_argument("--counts", type=Path, help="counts CSV path (default <out>.counts.csv)")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("tomo", help="maximum-likelihood reconstruction from a counts CSV")
    t.add_argument("--counts", type=Path, required=True)
    t.add_argument("--labels", help="comma-separated qubit labels, e.g. POL2,OAM2")
    t.add_argument("--target", type=Path, help="density-matrix JSON to compute fidelity against")
    t.add_argument("--bootstrap", type=int, default=0, help="bootstrap resamples (>= 100) for the fidelity error")
    t.add_argument("--seed", type=_u64, default=0)
    t.add_argument("--raw-only", action="store_true", help="fit raw instead of accidental-corrected counts")
    t.add_argument("--out", type=Path)
    t.set_defaults(func=cmd_tomo)

    b = sub.add_parser("bell", help="CHSH / Mermin / Hardy values from a density matrix or counts")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--rho", type=Path, help="density-matrix JSON")
    src.add_argument("--counts", type=Path, help="counts CSV with chsh/, mermin/ or hardy/ records")
    g = b.add_mutually_exclusive_group()
    g.add_argument("--raw-only", action="store_true")
    g.add_argument("--corrected-only", action="store_true")
    b.set_defaults(func=cmd_bell)

    tb = sub.add_parser("table1", help="SOURCE, HYENT and INTRA side by side with published values")
    _add_run_flags(tb)
    tb.add_argument("--calibrate", type=float, metavar="F", help="fit depolarizing source noise to singlet fidelity F")
    tb.add_argument("--out", type=Path, help="also write the rows as JSON")
    tb.set_defaults(func=cmd_table1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which is also the config-error code
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, TomographyError, PhysicalityError, LabelError, OSError, ValueError) as exc:
        print(f"qvortex: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"qvortex: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
