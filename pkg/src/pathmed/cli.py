"""Batch front-end: estimate effects from a CSV plus a YAML config, or run
the Monte Carlo study, and emit machine-readable reports.

Commands::

    pathmed estimate --config run.yaml [--jobs N]
    pathmed simulate --scenario {int|a|b|c} --n N --reps R --seed S
                     [--estimators mle,ipw_a,ipw_b,mr] [--jobs N] --out DIR

Every hard error exits nonzero after printing a single line with a
machine-parseable ``error:<code>:`` prefix. All randomness flows from the
configured seed; ``simulate`` refuses to run without one.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import yaml

from .data import ColumnRoles, Dataset, Formula, TreatmentCoding, formula, load_csv
from .errors import ConfigError, ContractError, PathmedError
from .estimators import (
    PointEstimate,
    aipw_mean,
    beta_a_from_values,
    beta_b_from_values,
    beta_mle_from_values,
    beta_mr_from_values,
    evaluate_nuisances,
    format_percent,
    percent_mediated,
    pse,
    stabilized_trio,
)
from .glm import GlmFamily, fit_on
from .inference import bootstrap_table
from .nuisance import WorkingModelSpec, assemble_nuisances
from .simulation import (
    DEFAULT_ESTIMATORS,
    KNOWN_ESTIMATORS,
    SCENARIO_IDS,
    beta_oracle,
    run_monte_carlo,
    write_replicates_csv,
    write_summary_csv,
)
from .stabilization import stabilized_substitution

ESTIMATES_HEADER = ("quantity", "estimator", "point", "se", "ci_lower",
                    "ci_upper", "min_weight", "max_weight")
BETA_KINDS = ("mle", "ipw_a", "ipw_b", "mr")
STAB_MODES = ("none", "bounded", "substitution")

_FAMILIES = {"logistic": GlmFamily.LOGISTIC, "probit": GlmFamily.PROBIT}


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    data_path: str
    roles: ColumnRoles
    coding: TreatmentCoding
    models: WorkingModelSpec
    ey_formula: Formula
    kinds: tuple[str, ...]
    stabilization: str
    positivity_floor: float
    boot_reps: int
    boot_level: float
    seed: int
    out_estimates: str


def _section(mapping, key, path):
    if key not in mapping:
        raise ConfigError(f"{path}: missing section {key!r}")
    value = mapping[key]
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: section {key!r} must be a mapping")
    return value


def _get(section, key, path, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"{path}: missing key {key!r}")
        return default
    return section[key]


def _parse_formula(section, key, path, default=None, required=True):
    text = _get(section, key, path, required=required)
    if text is None:
        return default
    try:
        return formula(str(text))
    except PathmedError as exc:
        raise ConfigError(f"{path}: models.{key}: {exc}") from exc


def _treatment_model(section, key, path):
    entry = _get(section, key, path, required=True)
    if isinstance(entry, str):
        return _parse_formula({key: entry}, key, path), GlmFamily.LOGISTIC
    if not isinstance(entry, dict):
        raise ConfigError(f"{path}: models.{key} must be a string or mapping")
    fam_name = str(entry.get("family", "logistic")).lower()
    if fam_name not in _FAMILIES:
        raise ConfigError(f"{path}: models.{key}.family must be one of "
                          f"{sorted(_FAMILIES)}, got {fam_name!r}")
    return _parse_formula(entry, "formula", path), _FAMILIES[fam_name]


def _default_ey_formula(roles: ColumnRoles) -> Formula:
    terms = ["1", "A"] + list(roles.c0) + [f"A:{name}" for name in roles.c0]
    return formula(" + ".join(terms))


def load_config(path) -> RunConfig:
    path = str(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a mapping")

    data_sec = _section(raw, "data", path)
    roles = ColumnRoles.from_mapping(_get(data_sec, "columns", path, required=True))
    coding_map = _get(data_sec, "coding", path, required=True)
    try:
        coding = TreatmentCoding(a=float(coding_map["a"]),
                                 a_prime=float(coding_map["a_prime"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: data.coding needs numeric keys "
                          f"'a' and 'a_prime'") from exc

    models_sec = _section(raw, "models", path)
    treat_c0, treat_c0_fam = _treatment_model(models_sec, "treat_c0", path)
    treat_c1c0, treat_c1c0_fam = _treatment_model(models_sec, "treat_c1_c0", path)
    treat_mc1c0, treat_mc1c0_fam = _treatment_model(models_sec, "treat_m_c1_c0", path)
    spec = WorkingModelSpec(
        b=_parse_formula(models_sec, "b", path),
        b_prime=_parse_formula(models_sec, "b_prime", path),
        b_pprime=_parse_formula(models_sec, "b_pprime", path),
        treat_c0=treat_c0,
        treat_c1_c0=treat_c1c0,
        treat_m_c1_c0=treat_mc1c0,
        treat_c0_family=treat_c0_fam,
        treat_c1_c0_family=treat_c1c0_fam,
        treat_m_c1_c0_family=treat_mc1c0_fam,
    )
    ey_formula = _parse_formula(models_sec, "ey_given_a_c0", path,
                                default=_default_ey_formula(roles),
                                required=False)

    est_sec = _section(raw, "estimators", path)
    kinds = tuple(_get(est_sec, "kinds", path, default=list(BETA_KINDS)))
    unknown = [k for k in kinds if k not in BETA_KINDS]
    if unknown:
        raise ConfigError(f"{path}: estimators.kinds contains unknown "
                          f"kind(s) {unknown}; choose from {list(BETA_KINDS)}")
    if not kinds:
        raise ConfigError(f"{path}: estimators.kinds must not be empty")
    stabilization = str(_get(est_sec, "stabilization", path, default="none"))
    if stabilization not in STAB_MODES:
        raise ConfigError(f"{path}: estimators.stabilization must be one of "
                          f"{list(STAB_MODES)}, got {stabilization!r}")
    floor = float(_get(est_sec, "positivity_floor", path, default=1e-3))

    cascade_family = str(_get(models_sec, "cascade_family", path,
                              default="linear")).lower()
    if cascade_family != "linear":
        if stabilization == "substitution":
            raise ContractError(
                f"{path}: substitution stabilization requires linear cascade "
                f"families, got {cascade_family!r}"
            )
        raise ConfigError(f"{path}: only linear cascade families are "
                          f"supported, got {cascade_family!r}")

    boot_sec = _section(raw, "bootstrap", path)
    reps = int(_get(boot_sec, "reps", path, default=0))
    level = float(_get(boot_sec, "level", path, default=0.95))
    seed = int(_get(boot_sec, "seed", path, required=True))

    out_sec = _section(raw, "output", path)
    out_estimates = str(_get(out_sec, "estimates", path, required=True))

    return RunConfig(
        data_path=str(_get(data_sec, "path", path, required=True)),
        roles=roles, coding=coding, models=spec, ey_formula=ey_formula,
        kinds=kinds, stabilization=stabilization, positivity_floor=floor,
        boot_reps=reps, boot_level=level, seed=seed,
        out_estimates=out_estimates,
    )


# ---------------------------------------------------------------------------
# Estimation pipeline (picklable for parallel bootstrap)
# ---------------------------------------------------------------------------

class EstimatePipeline:
    """Computes every requested quantity on one dataset; bootstrap
    replicates call it on resamples."""

    def __init__(self, config: RunConfig):
        self.config = config

    def point_estimates(self, data: Dataset) -> dict[str, PointEstimate]:
        cfg = self.config
        nuisances = assemble_nuisances(data, cfg.models, cfg.coding,
                                       cfg.positivity_floor)
        bounded = cfg.stabilization in ("bounded", "substitution")
        values = evaluate_nuisances(data, nuisances,
                                    "bounded" if bounded else None)
        if bounded:
            f_a_c0, c1_ratio, m_ratio = stabilized_trio(data, nuisances)
        else:
            f_a_c0 = nuisances.f_a_c0
            c1_ratio, m_ratio = nuisances.c1_ratio, nuisances.m_ratio

        out: dict[str, PointEstimate] = {}
        for kind in cfg.kinds:
            if kind == "mle":
                out["beta_mle"] = beta_mle_from_values(data, values)
            elif kind == "ipw_a":
                out["beta_ipw_a"] = beta_a_from_values(data, values)
            elif kind == "ipw_b":
                out["beta_ipw_b"] = beta_b_from_values(data, values)
            elif kind == "mr" and cfg.stabilization == "substitution":
                out["beta_mr"] = stabilized_substitution(
                    data, cfg.models.b, cfg.models.b_prime,
                    cfg.models.b_pprime, f_a_c0, c1_ratio, m_ratio,
                    cfg.coding, positivity_floor=cfg.positivity_floor,
                )
            else:
                out["beta_mr"] = beta_mr_from_values(data, values)

        ey_model = fit_on(data, cfg.ey_formula, data.y, GlmFamily.LINEAR)
        common = dict(outcome_model=ey_model, propensity=f_a_c0,
                      coding=cfg.coding,
                      positivity_floor=cfg.positivity_floor)
        out["ey_a"] = aipw_mean(data, cfg.coding.a, **common)
        out["ey_aprime"] = aipw_mean(data, cfg.coding.a_prime, **common)

        ref_kind = "mr" if "mr" in cfg.kinds else cfg.kinds[0]
        out["pse"] = pse(out[f"beta_{ref_kind}"], out["ey_aprime"])
        total = out["ey_a"].value - out["ey_aprime"].value
        out["total_effect"] = PointEstimate(
            value=total, estimator_kind="pse", n=data.n,
            diagnostics={"ey_a": out["ey_a"].value,
                         "ey_aprime": out["ey_aprime"].value},
        )
        out["percent_mediated"] = PointEstimate(
            value=percent_mediated(out["pse"].value, total),
            estimator_kind="percent_mediated", n=data.n,
        )
        return out

    def __call__(self, data: Dataset) -> dict[str, float]:
        return {key: est.value for key, est in self.point_estimates(data).items()}


def _estimate_rows(config: RunConfig, points: dict[str, PointEstimate],
                   boot) -> list[list[str]]:
    ref_kind = "mr" if "mr" in config.kinds else config.kinds[0]
    layout = [(f"beta_{kind}", "beta", kind) for kind in config.kinds]
    layout += [
        ("ey_aprime", "ey_aprime", "aipw"),
        ("ey_a", "ey_a", "aipw"),
        ("pse", "pse", ref_kind),
        ("total_effect", "total_effect", "aipw"),
        ("percent_mediated", "percent_mediated", ref_kind),
    ]
    rows = []
    for key, quantity, estimator in layout:
        est = points[key]
        if boot is not None:
            result = boot[key]
            se, lo, hi = (repr(result.se), repr(result.ci_lower),
                          repr(result.ci_upper))
        else:
            se = lo = hi = ""
        diag = est.diagnostics
        rows.append([
            quantity, estimator, repr(est.value), se, lo, hi,
            repr(diag["min_weight"]) if "min_weight" in diag else "",
            repr(diag["max_weight"]) if "max_weight" in diag else "",
        ])
    return rows


def cmd_estimate(config: RunConfig, jobs: int = 1) -> int:
    data = load_csv(config.data_path, config.roles, config.coding)
    pipeline = EstimatePipeline(config)
    points = pipeline.point_estimates(data)
    boot = None
    if config.boot_reps > 0:
        boot = bootstrap_table(data, pipeline, config.boot_reps,
                               seed=config.seed, level=config.boot_level,
                               jobs=jobs)

    out_path = Path(config.out_estimates)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ESTIMATES_HEADER)
        writer.writerows(_estimate_rows(config, points, boot))

    ref_kind = "mr" if "mr" in config.kinds else config.kinds[0]
    print(f"n={data.n} rows from {config.data_path}")
    for kind in config.kinds:
        print(f"beta[{kind}] = {points[f'beta_{kind}'].value:.6f}")
    print(f"E[Y(a')] = {points['ey_aprime'].value:.6f}  "
          f"E[Y(a)] = {points['ey_a'].value:.6f}")
    print(f"path-specific effect ({ref_kind}) = {points['pse'].value:.6f}  "
          f"total effect = {points['total_effect'].value:.6f}  "
          f"percent mediated = {format_percent(points['percent_mediated'].value)}")
    print(f"wrote {out_path}")
    return 0


# ---------------------------------------------------------------------------
# Simulation command
# ---------------------------------------------------------------------------

def cmd_simulate(
    scenario: str,
    n: int,
    reps: int,
    seed: int,
    out_dir,
    estimators=DEFAULT_ESTIMATORS,
    jobs: int = 1,
    stabilization: str | None = "bounded",
) -> int:
    report = run_monte_carlo(scenario, n, reps, seed, estimators=estimators,
                             stabilization=stabilization, jobs=jobs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_replicates_csv(report, out / "replicates.csv")
    write_summary_csv(report, out / "summary.csv")
    oracle = report.oracle
    with open(out / "oracle.json", "w", encoding="utf-8") as fh:
        json.dump({
            "beta0": oracle.value,
            "mc_beta0": oracle.mc_value,
            "mc_se": oracle.mc_se,
            "draws": oracle.draws,
            "method": oracle.method,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")

    for row in report.summary_rows():
        print(f"{row['scenario']:>4} {row['estimator']:>6}: "
              f"mean={row['mean']:.4f} bias={row['bias']:+.4f} "
              f"sd={row['sd']:.4f}")
    print(f"beta0 = {report.beta0:.6f}; wrote {out}/replicates.csv, "
          f"{out}/summary.csv, {out}/oracle.json")
    if report.unstable:
        print(f"error:instability: {len(report.failures)} of {reps} "
              f"replicates failed", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathmed",
        description="Semiparametric path-specific effect estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate effects from a CSV + config")
    est.add_argument("--config", required=True, help="YAML run configuration")
    est.add_argument("--jobs", type=int, default=1,
                     help="parallel bootstrap workers")

    sim = sub.add_parser("simulate", help="run the Monte Carlo study")
    sim.add_argument("--scenario", required=True, choices=SCENARIO_IDS)
    sim.add_argument("--n", type=int, required=True, help="sample size per replicate")
    sim.add_argument("--reps", type=int, required=True, help="number of replicates")
    sim.add_argument("--seed", type=int, required=True,
                     help="master seed (all randomness derives from it)")
    sim.add_argument("--estimators", default=",".join(DEFAULT_ESTIMATORS),
                     help=f"comma list from {{{','.join(KNOWN_ESTIMATORS)}}}")
    sim.add_argument("--stabilization", default="bounded",
                     choices=("none", "bounded"))
    sim.add_argument("--jobs", type=int, default=1, help="parallel replicate workers")
    sim.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "estimate":
            return cmd_estimate(load_config(args.config), jobs=args.jobs)
        estimators = tuple(e.strip() for e in args.estimators.split(",") if e.strip())
        stabilization = None if args.stabilization == "none" else args.stabilization
        return cmd_simulate(args.scenario, args.n, args.reps, args.seed,
                            args.out, estimators=estimators, jobs=args.jobs,
                            stabilization=stabilization)
    except PathmedError as exc:
        print(f"error:{exc.code}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
