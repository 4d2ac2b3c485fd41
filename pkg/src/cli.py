"""
psmiss command-line interface.

Subcommands:
    generate         Simulate one cohort of a scenario and write it as CSV
    simulate         Run the Monte Carlo study and write CSV and markdown reports
    estimate         Estimate the ATT log odds ratio for a CSV dataset
    verify-appendix  Print the pass/fail table of the exact identity checks

Options may also come from a TOML file given with --config; keys mirror
the long flag names. Flags override file values, which override the
built-in defaults.

Exit codes: 0 success, 1 runtime failure, 2 usage error.

Usage:
    python src/cli.py simulate --scenario 1 --preset desk --seed 7 --out results
"""

import argparse
import json
import logging
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from causal import estimate_att, estimate_att_mi, fit_propensity, truncate_scores
from config import Preset, Settings, settings as default_settings
from dgp import generate_cohort, inject_missingness
from ensemble import fit_boosted, predict_ps_boosted
from exceptions import PsMissError
from harness import ReportFormat, emit_report, merge_reports, run_scenario
from impute import MiceConfig, mice_impute
from models import (
    SCENARIOS,
    EstimationMode,
    EstimatorSpec,
    MissingHandling,
    PsMethod,
    default_estimators,
    get_scenario,
)
from oracles import verify_all
from providers import (
    CSVDatasetStore,
    load_schema,
    read_dataset_csv,
    save_schema,
    write_dataset_csv,
    write_frame_csv,
)
from stats import RngStream
from utils import configure_logging, provenance_header

logger = logging.getLogger(__name__)

MODE_CHOICES = ("ipw", "match", "both")


@dataclass(frozen=True)
class RunConfig:
    """
    Validated command-line configuration.

    Attributes:
        command: Subcommand name
        seed: Root seed
        scenarios: Scenario ids (generate uses the first)
        preset: Simulation scale preset
        n: Rows per cohort
        replications: Monte Carlo replications (preset default if None)
        n_jobs: Worker processes
        estimators: Estimator labels, or ("all",)
        mode: ipw, match or both
        out: Output file (generate, estimate) or directory (simulate)
        formats: Report formats written by simulate
        input: Input CSV for estimate
        schema: Schema JSON for estimate
        exposure: Exposure column for schema inference
        outcome: Outcome column for schema inference
        ps_method: Propensity score method for estimate
        handling: Missing-data handling for estimate
        latents: Oracle-only latent sidecar path for generate
        complete: Skip missingness injection in generate
        ks_trace: Boosting trace CSV path for estimate
        save_imputed: Directory for imputed datasets from estimate
        boosting_trees: Boosting iterations override
        eval_stride: KS evaluation stride override
        m: Number of imputations override
        n_oracle: Oracle cohort size for the true effect
        n_random: Random joints per identity check
        log_level: Logging level
        config_file: TOML file the values were merged from
    """

    command: str
    seed: int = 0
    scenarios: Tuple[str, ...] = ("1",)
    preset: Preset = Preset.DESK
    n: int = 2000
    replications: Optional[int] = None
    n_jobs: int = 1
    estimators: Tuple[str, ...] = ("all",)
    mode: str = "ipw"
    out: Optional[Path] = None
    formats: Tuple[ReportFormat, ...] = (ReportFormat.CSV, ReportFormat.MARKDOWN)
    input: Optional[Path] = None
    schema: Optional[Path] = None
    exposure: str = "A"
    outcome: str = "Y"
    ps_method: PsMethod = PsMethod.BACART
    handling: MissingHandling = MissingHandling.DIRECT
    latents: Optional[Path] = None
    complete: bool = False
    ks_trace: Optional[Path] = None
    save_imputed: Optional[Path] = None
    boosting_trees: Optional[int] = None
    eval_stride: Optional[int] = None
    m: Optional[int] = None
    n_oracle: Optional[int] = None
    n_random: int = 100
    log_level: str = "INFO"
    config_file: Optional[Path] = None

    @property
    def modes(self) -> List[EstimationMode]:
        if self.mode == "both":
            return [EstimationMode.IPW, EstimationMode.MATCH]
        return [EstimationMode(self.mode)]

    def settings(self, base: Optional[Settings] = None) -> Settings:
        """Study settings for this run."""
        base = (base or default_settings).for_preset(self.preset)
        result = base.with_overrides(
            n=self.n,
            replications=self.replications,
            n_jobs=self.n_jobs,
            boosting_trees=self.boosting_trees,
            eval_stride=self.eval_stride,
            m=self.m,
        )
        if self.n_oracle is not None:
            result = replace(result, simulation=replace(result.simulation, n_oracle=self.n_oracle))
        return result

    def estimator_specs(self) -> List[EstimatorSpec]:
        """Estimator specifications selected for simulate."""
        if self.estimators == ("all",):
            return default_estimators(self.modes)
        return [
            EstimatorSpec.parse(label, mode) for mode in self.modes for label in self.estimators
        ]

    def echo(self) -> Dict[str, Any]:
        """Configuration echo for provenance headers."""
        echo = {
            key: (value.value if hasattr(value, "value") else value)
            for key, value in asdict(self).items()
            if key != "log_level"
        }
        echo["formats"] = [f.value for f in self.formats]
        return echo


def _split_list(value: Any) -> List[str]:
    if isinstance(value, (list, tuple)):
        items = [str(v) for v in value]
    else:
        items = str(value).split(",")
    return [item.strip() for item in items if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    """Argument parser; options default to None so file values can fill them."""
    parser = argparse.ArgumentParser(
        prog="psmiss",
        description="CART propensity score estimation under missing covariate data",
    )
    parser.add_argument("--log-level", default=None, help="Logging level (default INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="TOML configuration file")
        p.add_argument("--seed", type=int, default=None, help="Root seed (default 0)")

    gen = sub.add_parser("generate", help="Generate one cohort of a scenario as CSV")
    common(gen)
    gen.add_argument("--scenario", default=None, help="Scenario id (1-8, 2L)")
    gen.add_argument("--n", type=int, default=None, help="Number of rows (default 2000)")
    gen.add_argument("--out", type=Path, default=None, help="Output CSV")
    gen.add_argument("--latents", type=Path, default=None, help="Oracle-only latent sidecar CSV")
    gen.add_argument(
        "--complete", action="store_true", default=None, help="Skip missingness injection"
    )

    sim = sub.add_parser("simulate", help="Run the Monte Carlo study")
    common(sim)
    sim.add_argument("--scenario", default=None, help="Scenario ids, comma separated")
    sim.add_argument("--reps", type=int, default=None, help="Replications R")
    sim.add_argument("--preset", default=None, help="desk or full")
    sim.add_argument(
        "--estimators",
        default=None,
        help="Comma-separated labels (baCART, CCA+bCART, MI+LRc, none:baCART) or 'all'",
    )
    sim.add_argument("--mode", default=None, help="ipw, match or both")
    sim.add_argument("--out", type=Path, default=None, help="Output directory")
    sim.add_argument("--format", default=None, help="csv, markdown or both")
    sim.add_argument("--n", type=int, default=None, help="Rows per cohort")
    sim.add_argument("--n-jobs", type=int, default=None, help="Worker processes")
    sim.add_argument("--boosting-trees", type=int, default=None, help="Boosting iterations")
    sim.add_argument("--eval-stride", type=int, default=None, help="KS evaluation stride")
    sim.add_argument("--m", type=int, default=None, help="Number of imputations")
    sim.add_argument("--n-oracle", type=int, default=None, help="Oracle size for the true ATT")

    est = sub.add_parser("estimate", help="Estimate the ATT for a CSV dataset")
    common(est)
    est.add_argument("--input", type=Path, default=None, help="Input CSV")
    est.add_argument("--schema", type=Path, default=None, help="Schema JSON")
    est.add_argument("--exposure", default=None, help="Exposure column (default A)")
    est.add_argument("--outcome", default=None, help="Outcome column (default Y)")
    est.add_argument("--ps-method", default=None, help="bacart, bcart, lrc or lrm")
    est.add_argument("--handling", default=None, help="direct, cca or mi")
    est.add_argument("--mode", default=None, help="ipw or match")
    est.add_argument("--preset", default=None, help="desk or full")
    est.add_argument("--out", type=Path, default=None, help="Output CSV (stdout if omitted)")
    est.add_argument("--ks-trace", type=Path, default=None, help="Boosting trace CSV (bcart)")
    est.add_argument("--save-imputed", type=Path, default=None, help="Directory for mi datasets")
    est.add_argument("--boosting-trees", type=int, default=None, help="Boosting iterations")
    est.add_argument("--eval-stride", type=int, default=None, help="KS evaluation stride")
    est.add_argument("--m", type=int, default=None, help="Number of imputations")

    ver = sub.add_parser("verify-appendix", help="Check the exact weighting identities")
    common(ver)
    ver.add_argument("--random", type=int, default=None, help="Random joints (default 100)")
    return parser


_FILE_KEYS = {
    "seed", "scenario", "n", "out", "latents", "complete", "reps", "preset", "estimators",
    "mode", "format", "n_jobs", "boosting_trees", "eval_stride", "m", "n_oracle", "input",
    "schema", "exposure", "outcome", "ps_method", "handling", "ks_trace", "save_imputed",
    "random", "log_level",
}


def _load_config_file(path: Path, parser: argparse.ArgumentParser) -> Dict[str, Any]:
    try:
        with open(path, "rb") as f:
            document = tomllib.load(f)
    except FileNotFoundError:
        parser.error(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        parser.error(f"invalid config file {path}: {e}")
    values = {key.replace("-", "_"): value for key, value in document.items()}
    unknown = sorted(set(values) - _FILE_KEYS)
    if unknown:
        parser.error(f"unknown keys in {path}: {', '.join(unknown)}")
    return values


def parse_args(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """
    Parse and validate command-line arguments.

    Raises:
        SystemExit: With code 2 on any usage error
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if v is not None}
    file_values = _load_config_file(args.config, parser) if args.config else {}

    def pick(key: str, default: Any = None) -> Any:
        if key in flags:
            return flags[key]
        return file_values.get(key, default)

    command = args.command
    try:
        preset = Preset(str(pick("preset", "desk")).lower())
    except ValueError:
        parser.error(f"--preset must be desk or full, got {pick('preset')!r}")

    scenarios = tuple(_split_list(pick("scenario", "1")))
    for scenario in scenarios:
        if scenario not in SCENARIOS:
            parser.error(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    if not scenarios:
        parser.error("--scenario must name at least one scenario")

    mode = str(pick("mode", "ipw")).lower()
    allowed_modes = MODE_CHOICES if command == "simulate" else MODE_CHOICES[:2]
    if mode not in allowed_modes:
        parser.error(f"--mode must be one of {', '.join(allowed_modes)}, got {mode!r}")

    fmt = str(pick("format", "both")).lower()
    if fmt == "both":
        formats: Tuple[ReportFormat, ...] = (ReportFormat.CSV, ReportFormat.MARKDOWN)
    elif fmt in ("csv", "markdown"):
        formats = (ReportFormat(fmt),)
    else:
        parser.error(f"--format must be csv, markdown or both, got {fmt!r}")

    try:
        ps_method = PsMethod.from_string(str(pick("ps_method", "bacart")))
        handling = MissingHandling(str(pick("handling", "direct")).lower())
    except ValueError as e:
        parser.error(str(e))
    if command == "estimate" and handling == MissingHandling.NONE:
        parser.error("--handling must be direct, cca or mi")
    if command == "estimate" and not ps_method.is_cart and handling == MissingHandling.DIRECT:
        parser.error(f"{ps_method.value} needs complete data; use --handling cca or mi")

    estimators = tuple(_split_list(pick("estimators", "all"))) or ("all",)
    if command == "simulate" and estimators != ("all",):
        for label in estimators:
            try:
                EstimatorSpec.parse(label, EstimationMode.IPW)
            except ValueError as e:
                parser.error(f"invalid estimator {label!r}: {e}")

    for key in ("n", "reps", "n_jobs", "boosting_trees", "eval_stride", "m", "n_oracle"):
        value = pick(key)
        if value is not None and (not isinstance(value, int) or value < 1):
            parser.error(f"--{key.replace('_', '-')} must be a positive integer, got {value!r}")
    reps = pick("reps")
    if reps is not None and reps < 2:
        parser.error("--reps must be at least 2")
    m = pick("m")
    if m is not None and m < 2:
        parser.error("--m must be at least 2")
    seed = pick("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        parser.error(f"--seed must be a non-negative integer, got {seed!r}")

    def path(key: str) -> Optional[Path]:
        value = pick(key)
        return Path(value) if value is not None else None

    config = RunConfig(
        command=command,
        seed=seed,
        scenarios=scenarios,
        preset=preset,
        n=pick("n", 2000),
        replications=reps,
        n_jobs=pick("n_jobs", 1),
        estimators=estimators,
        mode=mode,
        out=path("out"),
        formats=formats,
        input=path("input"),
        schema=path("schema"),
        exposure=str(pick("exposure", "A")),
        outcome=str(pick("outcome", "Y")),
        ps_method=ps_method,
        handling=handling,
        latents=path("latents"),
        complete=bool(pick("complete", False)),
        ks_trace=path("ks_trace"),
        save_imputed=path("save_imputed"),
        boosting_trees=pick("boosting_trees"),
        eval_stride=pick("eval_stride"),
        m=m,
        n_oracle=pick("n_oracle"),
        n_random=pick("random", 100),
        log_level=str(flags.get("log_level", file_values.get("log_level", "INFO"))).upper(),
        config_file=args.config,
    )
    if command == "estimate" and config.input is None:
        parser.error("estimate requires --input")
    if command == "generate" and config.out is None:
        parser.error("generate requires --out")
    return config


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------


def run_generate(config: RunConfig) -> int:
    """Write one cohort; the draws equal replication 0 of simulate with the same seed."""
    settings = config.settings()
    scenario = get_scenario(config.scenarios[0])
    rng = RngStream.for_replication(config.seed, 0, "replication")
    cohort = generate_cohort(settings.simulation.n, scenario, rng.substream("cohort"))
    data = (
        cohort.dataset
        if config.complete
        else inject_missingness(cohort, scenario, rng.substream("missingness"))
    )
    header = provenance_header("generate", config.seed, config.echo())
    assert config.out is not None
    write_dataset_csv(data, config.out, header)
    save_schema(data, config.out.with_name(config.out.stem + ".schema.json"))
    if config.latents is not None:
        write_frame_csv(cohort.latent_frame(), config.latents, header + ["oracle-only latents"])
    summary = data.missingness_summary()
    logger.info(
        f"Generated scenario {scenario.id}: {data.n_rows} rows, "
        f"PMP {summary['pmp']:.3f}, PIR {summary['pir']:.3f}"
    )
    return 0


def run_simulate(config: RunConfig) -> int:
    """Run every selected scenario and write the reports."""
    settings = config.settings()
    estimators = config.estimator_specs()
    reports = []
    for scenario_id in config.scenarios:
        report = run_scenario(
            get_scenario(scenario_id),
            estimators,
            replications=settings.simulation.replications,
            seed=config.seed,
            settings=settings,
            n_jobs=settings.simulation.n_jobs,
        )
        reports.append(report)
    report = merge_reports(reports)
    tool, command, seed, echo = provenance_header("simulate", config.seed, config.echo())
    report.provenance = {
        "tool": tool,
        "command": command.partition(": ")[2],
        "root_seed": seed.partition(": ")[2],
        "config": echo.partition(": ")[2],
        **report.provenance,
    }
    out = config.out or settings.simulation.output_directory
    suffixes = {ReportFormat.CSV: "csv", ReportFormat.MARKDOWN: "md"}
    for fmt in config.formats:
        emit_report(report, Path(out) / f"report.{suffixes[fmt]}", fmt)
    invalid = [f"{r.scenario}/{r.method}/{r.mode}" for r in report.rows if r.invalid]
    if invalid:
        logger.warning(f"Rows marked invalid: {', '.join(invalid)}")
    return 0


def run_estimate(config: RunConfig) -> int:
    """Estimate the ATT for one dataset; print or write a one-line CSV and diagnostics."""
    settings = config.settings()
    assert config.input is not None
    schema = load_schema(config.schema) if config.schema is not None else None
    data = read_dataset_csv(config.input, schema, config.exposure, config.outcome)
    rng = RngStream(config.seed)
    mode = EstimationMode(config.mode)
    method = config.ps_method

    if config.handling == MissingHandling.MI:
        mice = MiceConfig.default_for(data, settings.imputation)
        imputed = mice_impute(data, mice, rng.substream("imputation"))
        if config.save_imputed is not None:
            store = CSVDatasetStore(config.save_imputed)
            store.save_imputed(
                imputed.datasets,
                config.input.stem,
                {**mice.to_dict(), **imputed.provenance, "seed": config.seed},
            )
        estimate = estimate_att_mi(imputed, method, mode, rng.substream("estimate"), settings)
    else:
        analysed = data.complete_cases() if config.handling == MissingHandling.CCA else data
        ps_rng = rng.substream(f"ps/{config.handling.value}/{method.value}")
        if config.ks_trace is not None and method == PsMethod.BCART:
            model = fit_boosted(analysed, ps_rng, settings.boosting)
            scores = truncate_scores(
                predict_ps_boosted(model, analysed),
                settings.estimation.truncation,
                method,
                analysed.has_missing,
            )
            write_frame_csv(
                model.trace_frame(),
                config.ks_trace,
                provenance_header("estimate", config.seed, config.echo()),
            )
        else:
            if config.ks_trace is not None:
                logger.warning(f"--ks-trace ignored for {method.value}")
            scores = fit_propensity(analysed, method, ps_rng, settings)
        estimate = estimate_att(
            analysed, scores, mode, rng.substream("match"), settings.estimation
        )

    line = "point,se,ci_low,ci_high\n" + (
        f"{estimate.point!r},{estimate.se!r},{estimate.ci_low!r},{estimate.ci_high!r}\n"
    )
    diagnostics = json.dumps(estimate.diagnostics, sort_keys=True, default=str)
    if config.out is not None:
        header = "".join(
            f"# {h}\n" for h in provenance_header("estimate", config.seed, config.echo())
        )
        config.out.parent.mkdir(parents=True, exist_ok=True)
        config.out.write_text(header + line, encoding="utf-8")
        sys.stdout.write(diagnostics + "\n")
    else:
        sys.stdout.write(line + diagnostics + "\n")
    return 0


def run_verify(config: RunConfig) -> int:
    """Print the identity table; exit code 1 when any check fails."""
    reports = verify_all(RngStream(config.seed), n_random=config.n_random)
    for report in reports:
        frame = report.to_frame()
        failed = frame[~frame["passed"]]
        status = "PASS" if report.passed else "FAIL"
        sys.stdout.write(f"{report.title}: {status} ({len(frame)} checks)\n")
        shown = frame if len(frame) <= 30 else failed
        if not shown.empty:
            sys.stdout.write(
                shown.drop(columns=["report"]).to_string(index=False, float_format="%.12g") + "\n"
            )
    return 0 if all(r.passed for r in reports) else 1


HANDLERS = {
    "generate": run_generate,
    "simulate": run_simulate,
    "estimate": run_estimate,
    "verify-appendix": run_verify,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point.

    Returns:
        0 on success, 1 on a runtime failure; usage errors exit with 2
    """
    config = parse_args(argv)
    configure_logging(config.log_level)
    try:
        return HANDLERS[config.command](config)
    except (PsMissError, OSError) as e:
        logger.error(f"{config.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
