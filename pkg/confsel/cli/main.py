# confsel/cli/main.py
# The module is the command-line front end: simulate, select, estimate, evaluate and
# oracle-check. Settings resolve as defaults < CONFSEL_* env / .env < --config file < flags,
# and every file written starts with the resolved configuration as '# key=value' lines.

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from confsel.core.errors import ConfselError, EstimationError
from confsel.core.settings import Settings, resolve_settings
from confsel.schemas.config import GridSpec, PsmConfig, SelectionConfig, SimConfig, TmleConfig
from confsel.schemas.results import SET_NAMES, format_set, parse_set
from confsel.services.dataset import RawDataset, discretize, write_header
from confsel.services.dgp import TRUE_ACE_SEED, ci_sets, simulate
from confsel.services.estimators import psm_ace, tmle_ace
from confsel.services.graphs import setting1_dag, setting2_dag
from confsel.services.targets import estimate_targets, oracle_targets
from confsel.tasks.harness import run_grid
from confsel.tasks.reporting import write_outputs
from confsel.utils.logger import logger

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so main() owns the exit code."""

    def error(self, message: str):
        raise _UsageError(f"{self.prog}: {message}")


class _UsageError(Exception):
    pass


def _csv_list(cast=str):
    def parse(text: str) -> List[Any]:
        return [cast(part.strip()) for part in text.split(",") if part.strip()]
    return parse


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, default=None, help="Flat key=value settings file.")
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors.")


def _add_selection(parser: argparse.ArgumentParser):
    parser.add_argument("--alpha", type=float, default=None, help="CI test significance level.")
    parser.add_argument("--bins", type=int, default=None, help="Quantile bins for continuous columns.")
    parser.add_argument("--max-cond-size", type=int, default=None, help="Largest conditioning set searched.")
    parser.add_argument("--variable-order", choices=["index", "max_min"], default=None)
    parser.add_argument("--score", choices=["aic", "bic", "loglik"], default=None, help="Hill-climbing score.")
    parser.add_argument("--no-guard", action="store_true", help="Disable the n < 5*df sample-size guard.")


def _add_columns(parser: argparse.ArgumentParser):
    parser.add_argument("--data", type=Path, required=True, help="Input CSV.")
    parser.add_argument("--treatment", default="T", help="Treatment column (coded 0/1).")
    parser.add_argument("--outcome", default="Y", help="Outcome column.")
    parser.add_argument(
        "--factor-cols",
        type=_csv_list(),
        default=None,
        help="Comma-separated factor columns; default: every all-integer column.",
    )


def _add_estimation(parser: argparse.ArgumentParser):
    parser.add_argument("--caliper", type=float, default=None, help="PSM caliper in propensity-score SDs.")
    parser.add_argument("--ties", choices=["average", "lowest_index"], default=None, help="PSM tie policy.")
    parser.add_argument("--truncation", type=_csv_list(float), default=None, help="TMLE propensity bounds 'low,high'.")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="confsel", description="Confounder selection by Markov-blanket learning and ACE estimation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="Write one simulated dataset.")
    _add_common(p)
    p.add_argument("--setting", type=int, choices=[1, 2], default=1)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--outcome", choices=["linear", "binary", "nonlinear"], default="linear")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--p-total", type=int, default=100, help="Number of covariates X1..Xp.")
    p.add_argument("--no-audit", action="store_true", help="Omit potential outcomes and latents.")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("select", help="Learn the six target covariate sets.")
    _add_common(p)
    _add_columns(p)
    _add_selection(p)
    p.add_argument("--method", choices=["mmpc", "mmhc"], default="mmpc")
    p.add_argument("--arms", action="store_true", help="Also report the per-arm components.")
    p.add_argument("--out", type=Path, default=None, help="Write the sets to this file.")

    p = sub.add_parser("estimate", help="Estimate the ACE adjusting for one covariate set.")
    _add_common(p)
    _add_columns(p)
    _add_estimation(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--set", dest="covariates", default=None, help="Comma-separated covariates; '' for none.")
    group.add_argument("--sets-file", type=Path, default=None, help="File written by 'select --out'.")
    p.add_argument("--set-name", choices=list(SET_NAMES), default="xty", help="Set to read from --sets-file.")
    p.add_argument("--estimator", choices=["psm", "tmle", "both"], default="both")
    p.add_argument("--out", type=Path, default=None, help="Write the estimate row(s) to this CSV.")

    p = sub.add_parser("evaluate", help="Run the replication study and write the metric tables.")
    _add_common(p)
    _add_selection(p)
    _add_estimation(p)
    p.add_argument("--settings", type=_csv_list(int), default=[1], help="Data settings, e.g. '1,2'.")
    p.add_argument("--sizes", type=_csv_list(int), default=[2000], help="Sample sizes, e.g. '1000,2000'.")
    p.add_argument("--outcomes", type=_csv_list(), default=["linear"])
    p.add_argument("--methods", type=_csv_list(), default=["mmpc", "mmhc"])
    p.add_argument("--estimators", type=_csv_list(), default=["psm", "tmle"])
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None, help="Worker processes; default all logical cores.")
    p.add_argument("--p-total", type=int, default=100)
    p.add_argument("--true-ace-mc-n", type=int, default=None)
    p.add_argument("--outdir", type=Path, default=None)

    p = sub.add_parser("oracle-check", help="Target sets from a perfect d-separation oracle on both study graphs.")
    _add_common(p)
    p.add_argument("--settings", type=_csv_list(int), default=[1, 2], help="Study graphs to check, e.g. '1,2'.")
    return parser


def _resolve(args: argparse.Namespace) -> Settings:
    truncation = getattr(args, "truncation", None)
    if truncation is not None and len(truncation) != 2:
        raise _UsageError("--truncation takes exactly two values: low,high")
    overrides: Dict[str, Any] = {
        "ALPHA": getattr(args, "alpha", None),
        "BINS": getattr(args, "bins", None),
        "MAX_COND_SIZE": getattr(args, "max_cond_size", None),
        "VARIABLE_ORDER": getattr(args, "variable_order", None),
        "SCORE": getattr(args, "score", None),
        "SAMPLE_SIZE_GUARD": False if getattr(args, "no_guard", False) else None,
        "CALIPER": getattr(args, "caliper", None),
        "MATCH_TIES": getattr(args, "ties", None),
        "TRUNCATION_LOW": truncation[0] if truncation else None,
        "TRUNCATION_HIGH": truncation[1] if truncation else None,
        "REPLICATIONS": getattr(args, "replications", None),
        "SEED": getattr(args, "seed", None),
        "WORKERS": getattr(args, "workers", None),
        "TRUE_ACE_MC_N": getattr(args, "true_ace_mc_n", None),
        "OUTPUT_DIR": getattr(args, "outdir", None),
    }
    return resolve_settings(args.config, **overrides)


def _header(args: argparse.Namespace, cfg: Settings, **extra: Any) -> Dict[str, Any]:
    header: Dict[str, Any] = {"command": args.command}
    header.update(extra)
    header.update({key.lower(): value for key, value in cfg.model_dump().items()})
    return header


def _read_data(args: argparse.Namespace) -> RawDataset:
    return RawDataset.from_csv(args.data, args.factor_cols, treatment=args.treatment, outcome=args.outcome)


def _cmd_simulate(args: argparse.Namespace, cfg: Settings) -> int:
    sim = SimConfig(
        setting=args.setting,
        n=args.n,
        outcome=args.outcome,
        seed=cfg.SEED,
        p_total=args.p_total,
        emit_potential_outcomes=not args.no_audit,
    )
    data = simulate(sim)
    data.to_csv(args.out, _header(args, cfg, **sim.model_dump(), true_ace_seed=TRUE_ACE_SEED))
    logger.success(f"Wrote {data.n} rows x {len(data.names)} columns to '{args.out}'.")
    return EXIT_OK


def _cmd_select(args: argparse.Namespace, cfg: Settings) -> int:
    raw = _read_data(args)
    selection = SelectionConfig.from_settings(args.method, cfg)
    logger.rule(f"{args.method.upper()} target-set selection")
    subsets = estimate_targets(discretize(raw, selection.bins), selection)
    text = subsets.to_text(include_arms=args.arms)
    sys.stdout.write(text)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", encoding="utf-8", newline="") as handle:
            write_header(handle, _header(args, cfg, data=args.data, method=args.method))
            handle.write(text)
        logger.success(f"Wrote target sets to '{args.out}'.")
    return EXIT_OK


def _read_sets_file(path: Path) -> Dict[str, str]:
    sets: Dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#") or "=" not in line:
            continue
        name, value = line.split("=", 1)
        sets[name.strip()] = value.strip()
    return sets


def _cmd_estimate(args: argparse.Namespace, cfg: Settings) -> int:
    raw = _read_data(args)
    if args.sets_file is not None:
        sets = _read_sets_file(args.sets_file)
        if args.set_name not in sets:
            raise _UsageError(f"'{args.sets_file}' has no '{args.set_name}' line")
        covariates, set_name = parse_set(sets[args.set_name]), args.set_name
    else:
        covariates, set_name = parse_set(args.covariates), "custom"
    unknown = covariates - set(raw.covariates)
    if unknown:
        raise _UsageError(f"unknown covariate(s): {format_set(unknown)}")
    ordered = [c for c in raw.covariates if c in covariates]

    estimators = ["psm", "tmle"] if args.estimator == "both" else [args.estimator]
    rows: List[Dict[str, Any]] = []
    for estimator in estimators:
        try:
            if estimator == "psm":
                est = psm_ace(raw, ordered, PsmConfig.from_settings(cfg))
            else:
                est = tmle_ace(raw, ordered, TmleConfig.from_settings(cfg))
        except np.linalg.LinAlgError as e:
            raise EstimationError(f"{estimator.upper()} fit failed: {e}") from e
        est = est.model_copy(update={"set_name": set_name})
        rows.append({**est.to_row(), "n_used": est.n_used, "covariates": format_set(ordered)})
        logger.display_data_as_table(
            {"beta_hat": est.beta_hat, "se": est.se, "95% CI": f"[{est.ci_low:.6g}, {est.ci_high:.6g}]",
             "units used": est.n_used, "|S|": est.cardinality},
            title=f"{estimator.upper()} estimate ({set_name})",
            to_stdout=True,
        )
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", encoding="utf-8", newline="") as handle:
            write_header(handle, _header(args, cfg, data=args.data, set=format_set(ordered)))
            pd.DataFrame(rows).to_csv(handle, index=False, float_format="%.17g", lineterminator="\n")
        logger.success(f"Wrote estimate(s) to '{args.out}'.")
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace, cfg: Settings) -> int:
    grid = GridSpec(
        data_settings=args.settings,
        sizes=args.sizes,
        outcomes=args.outcomes,
        methods=args.methods,
        estimators=args.estimators,
        replications=cfg.REPLICATIONS,
        base_seed=cfg.SEED,
        p_total=args.p_total,
        true_ace_mc_n=cfg.TRUE_ACE_MC_N,
    )
    selection = {method: SelectionConfig.from_settings(method, cfg) for method in grid.methods}
    header = _header(args, cfg, **{k: ",".join(map(str, v)) if isinstance(v, list) else v
                                   for k, v in grid.model_dump().items()})
    logger.display_data_as_table(header, title="Resolved configuration")
    logger.rule("Replications")
    records, truths = run_grid(grid, selection, PsmConfig.from_settings(cfg), TmleConfig.from_settings(cfg), cfg.WORKERS)
    metrics = write_outputs(cfg.OUTPUT_DIR, records, truths, header)
    logger.success(f"Wrote {len(metrics)} metric rows to '{cfg.OUTPUT_DIR}'.")
    return EXIT_OK


def _cmd_oracle_check(args: argparse.Namespace, cfg: Settings) -> int:
    builders = {1: setting1_dag, 2: setting2_dag}
    all_passed = True
    for setting in args.settings:
        if setting not in builders:
            raise _UsageError(f"unknown setting {setting}; choose from 1, 2")
        found = oracle_targets(builders[setting]()).sets()
        expected = ci_sets(setting)
        rows = []
        for name in SET_NAMES:
            passed = found[name] == expected[name]
            all_passed = all_passed and passed
            rows.append((name, format_set(expected[name]), format_set(found[name]), passed))
        logger.display_verdicts(rows, title=f"Setting {setting} graph: perfect-oracle target sets")
    if all_passed:
        logger.success("Every target set matches.")
        return EXIT_OK
    logger.error("Some target sets differ from the expected ones.")
    return EXIT_FAILED


COMMANDS = {
    "simulate": _cmd_simulate,
    "select": _cmd_select,
    "estimate": _cmd_estimate,
    "evaluate": _cmd_evaluate,
    "oracle-check": _cmd_oracle_check,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs one subcommand and returns its exit code."""
    debug = False
    try:
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as e:
            # --help and --version
            return int(e.code or 0)
        cfg = _resolve(args)
        debug = cfg.DEBUG
        if args.quiet:
            logger.set_level(logging.WARNING)
        return COMMANDS[args.command](args, cfg)
    except _UsageError as e:
        logger.display_error_panel("Usage error", str(e))
        return EXIT_USAGE
    except ValidationError as e:
        logger.display_error_panel("Invalid configuration", str(e))
        return EXIT_USAGE
    except ConfselError as e:
        logger.display_error_panel(type(e).__name__, str(e))
        if debug:
            logger.display_traceback()
        return e.exit_code
    except (OSError, ValueError) as e:
        logger.display_error_panel("Error", str(e))
        if debug:
            logger.display_traceback()
        return EXIT_FAILED


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
