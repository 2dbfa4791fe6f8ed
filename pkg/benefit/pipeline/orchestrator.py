"""
Targeting Pipeline Orchestrator.
Main pipeline: Load/Simulate → Cross-fit nuisances → DR-Learner CPB → Evaluate → Report.

Subcommands:
  simulate     draw a scenario cohort and its oracle sidecar
  fit          cross-fit nuisances, pseudo-outcomes and CPB scores
  value        constrained value at one budget
  qini         value over a budget grid, rearranged curve and AUPBC
  aupbc        AUPBC only
  sensitivity  value bands over a list of confounding levels
  restricted   value (and AUPBC) of rules that see only a covariate subset
"""

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from benefit.pipeline.cpb import CpbModel, PseudoOutcomes, dr_learn_cpb, pseudo_outcomes
from benefit.pipeline.dataset import Cohort, CohortSchema, FoldAssignment, load_csv, make_folds
from benefit.pipeline.errors import ArgumentError, CpbError
from benefit.pipeline.nuisance import NuisanceFits, crossfit_nuisances
from benefit.pipeline.policy import (
    TIE_POLICIES, aupbc, budget_for_peak_fraction, default_grid, estimate_value,
    gap_to_unconstrained, margin_diagnostic, qini_curve,
)
from benefit.pipeline.restricted import (
    MODES, restricted_aupbc, restricted_scores_both, restricted_scores_contact_only, restricted_value,
)
from benefit.pipeline.sensitivity import ESTIMATORS, breakdown_gamma, sensitivity_curve
from benefit.pipeline.simulation import SCENARIOS, ScenarioSpec, generate, oracle
from benefit.pipeline.validators import is_budget
from benefit.services.learners import parse_learner_spec
from benefit.utils.paths import ArtifactPaths
from config.settings import ANALYSIS_CONFIG, DEFAULT_THREADS, SCHEMA_VERSION, SIMULATION_CONFIG

logger = logging.getLogger("CpbOrchestrator")

SUBCOMMANDS = ("simulate", "fit", "value", "qini", "aupbc", "sensitivity", "restricted")
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


@dataclass
class RunConfig:
    subcommand: str
    input: Optional[str] = None
    out: Optional[str] = None
    nuisances: Optional[str] = None
    covariates: Optional[str] = None
    treatment: str = "a"
    outcome: str = "y"
    propensity: str = ANALYSIS_CONFIG["default_learner"]
    outcome_learner: str = ANALYSIS_CONFIG["default_learner"]
    cpb_learner: str = ANALYSIS_CONFIG["default_learner"]
    tau_learner: Optional[str] = None
    folds: int = ANALYSIS_CONFIG["folds"]
    epsilon: float = ANALYSIS_CONFIG["epsilon"]
    delta: float = 0.5
    grid_points: int = ANALYSIS_CONFIG["grid_points"]
    alpha: float = ANALYSIS_CONFIG["alpha"]
    gamma: List[float] = field(default_factory=lambda: [0.0])
    exposure: str = "one_step"
    w: Optional[str] = None
    mode: str = "contact_only"
    ties: str = "under"
    swap: bool = ANALYSIS_CONFIG["swap_second_stage"]
    seed: Optional[int] = None
    threads: int = DEFAULT_THREADS
    scenario: str = "S1"
    n: int = 1000
    noise_sd: float = SIMULATION_CONFIG["noise_sd"]
    strength: float = SIMULATION_CONFIG["confounding_strength"]
    treatment_strength: float = SIMULATION_CONFIG["treatment_strength"]
    oracle_draws: int = SIMULATION_CONFIG["oracle_draws"]

    def validate(self):
        """Range checks; every failure is an ArgumentError (exit code 2)."""
        if self.subcommand not in SUBCOMMANDS:
            raise ArgumentError(f"Unknown subcommand: '{self.subcommand}'. Available: {', '.join(SUBCOMMANDS)}")
        if self.subcommand == "simulate":
            if self.seed is None:
                raise ArgumentError("simulate requires --seed")
            if self.n < 1:
                raise ArgumentError(f"--n must be >= 1, got {self.n}")
            if self.oracle_draws < 2:
                raise ArgumentError(f"--oracle-draws must be >= 2, got {self.oracle_draws}")
        elif not self.input:
            raise ArgumentError(f"{self.subcommand} requires --input")
        if self.folds < 2:
            raise ArgumentError(f"--folds must be >= 2, got {self.folds}")
        if not 0.0 < self.epsilon < 0.5:
            raise ArgumentError(f"--epsilon must lie in (0, 0.5), got {self.epsilon}")
        if not is_budget(self.delta):
            raise ArgumentError(f"--delta must lie in [0, 1], got {self.delta}")
        if self.grid_points < 2:
            raise ArgumentError(f"--grid-points must be >= 2, got {self.grid_points}")
        if not 0.0 < self.alpha < 1.0:
            raise ArgumentError(f"--alpha must lie in (0, 1), got {self.alpha}")
        if any(not math.isfinite(g) or g < 0 for g in self.gamma):
            raise ArgumentError(f"--gamma values must be >= 0, got {self.gamma}")
        if self.threads < 1:
            raise ArgumentError(f"--threads must be >= 1, got {self.threads}")
        if self.subcommand == "restricted" and self.w is None:
            raise ArgumentError("restricted requires --w (comma-separated covariate names, '' for none)")
        for spec in (self.propensity, self.outcome_learner, self.cpb_learner, self.tau_learner):
            if spec is not None:
                parse_learner_spec(spec)
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_json(payload: dict) -> str:
    return json.dumps(_clean(payload), sort_keys=True, indent=2)


class CpbPipeline:
    """
    Orchestrates one CLI invocation.

    Phases:
    1. Cohort (load CSV or simulate)
    2. Nuisances (cross-fit, or reload a `fit` export)
    3. Pseudo-outcomes and DR-Learner scores
    4. Subcommand-specific evaluation
    5. Emit JSON root plus CSV sidecars
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.paths = ArtifactPaths(config.out)
        if config.subcommand == "simulate" and not self.paths.enabled:
            # the cohort always lands on disk; JSON still goes to stdout
            self.paths = ArtifactPaths.for_simulation(config.scenario, config.n, self.seed)
        self.cohort: Optional[Cohort] = None
        self.folds: Optional[FoldAssignment] = None
        self.fits: Optional[NuisanceFits] = None
        self.phi: Optional[PseudoOutcomes] = None
        self.model: Optional[CpbModel] = None

    @property
    def seed(self) -> int:
        return 0 if self.config.seed is None else int(self.config.seed)

    # ---- Phase 1 ----

    def load_cohort(self) -> Cohort:
        cfg = self.config
        schema = CohortSchema.from_names(cfg.covariates, cfg.treatment, cfg.outcome)
        self.cohort = load_csv(cfg.input, schema)
        return self.cohort

    # ---- Phase 2 ----

    def fit_nuisances(self) -> NuisanceFits:
        cfg = self.config
        if cfg.nuisances:
            fits = NuisanceFits.from_csv(cfg.nuisances, cfg.epsilon)
            if fits.n != self.cohort.n:
                raise ArgumentError(f"Nuisance file has {fits.n} rows, cohort has {self.cohort.n}", module="nuisance")
            if fits.fold_of_unit is not None:
                labels = np.asarray(fits.fold_of_unit)
                self.folds = FoldAssignment(int(labels.max()) + 1, labels, self.seed)
            else:
                self.folds = make_folds(self.cohort.n, cfg.folds, self.seed)
                fits = NuisanceFits(fits.pi_hat, fits.mu0_hat, fits.mu1_hat, fits.epsilon,
                                    fold_of_unit=self.folds.assignment)
            logger.info(f"📁 Reusing nuisances from {cfg.nuisances}")
        else:
            self.folds = make_folds(self.cohort.n, cfg.folds, self.seed)
            fits = crossfit_nuisances(self.cohort, self.folds, cfg.propensity, cfg.outcome_learner,
                                      cfg.epsilon, n_jobs=cfg.threads)
        self.fits = fits
        return fits

    # ---- Phase 3 ----

    def learn_scores(self) -> CpbModel:
        self.phi = pseudo_outcomes(self.cohort, self.fits)
        self.model = dr_learn_cpb(self.cohort, self.fits, spec=self.config.cpb_learner, phi=self.phi,
                                  folds=self.folds, swap=self.config.swap)
        return self.model

    def prepare(self):
        self.load_cohort()
        self.fit_nuisances()
        self.learn_scores()

    # ---- Phase 4: subcommands ----

    def simulate(self) -> dict:
        cfg = self.config
        spec = ScenarioSpec(cfg.scenario, cfg.n, self.seed, cfg.noise_sd, cfg.strength, cfg.treatment_strength)
        sim = generate(spec, n_jobs=cfg.threads)
        self.paths.ensure_dirs()
        sim.cohort.to_csv(self.paths.csv_file)
        truth = oracle(spec, grid=default_grid(cfg.grid_points), draws=cfg.oracle_draws, n_jobs=cfg.threads)
        with open(self.paths.oracle_file, "w", encoding="utf-8") as f:
            f.write(dump_json({"schema_version": SCHEMA_VERSION, **truth.to_dict()}))
        logger.info(f"📁 Oracle written: {self.paths.oracle_file}")
        return {
            "scenario": spec.id,
            "n": spec.n,
            "seed": spec.seed,
            "rows": sim.cohort.n,
            "csv": self.paths.csv_file,
            "oracle": self.paths.oracle_file,
            "treated_fraction": float(sim.cohort.treatment.mean()),
        }

    def fit(self) -> dict:
        self.prepare()
        fits, phi, scores = self.fits, self.phi.values, self.model.scores
        if self.paths.enabled:
            self.paths.ensure_dirs()
            fits.to_csv(self.paths.nuisances_file)
            frame = fits.to_frame()
            frame["phi"] = phi
            frame["cpb_score"] = scores
            frame.to_csv(self.paths.csv_file, index=False)
        return {
            "n": self.cohort.n,
            "folds": self.folds.k,
            "covariates": list(self.cohort.columns),
            "learners": {"propensity": str(parse_learner_spec(self.config.propensity)),
                         "outcome": str(parse_learner_spec(self.config.outcome_learner)),
                         "cpb": str(self.model.spec)},
            "expected_benefit": float(phi.mean()),
            "mean_score": float(scores.mean()),
            "treat_fraction": float(fits.h_star.mean()),
            "pi_range": [float(fits.pi_hat.min()), float(fits.pi_hat.max())],
            "nuisances": self.paths.nuisances_file if self.paths.enabled else None,
        }

    def value(self) -> dict:
        self.prepare()
        cfg = self.config
        ev = estimate_value(self.cohort, self.phi, self.model, cfg.delta, cfg.alpha, cfg.ties)
        full = estimate_value(self.cohort, self.phi, self.model, 1.0, cfg.alpha, cfg.ties)
        out = ev.to_dict()
        out["gap"] = gap_to_unconstrained(ev, full)
        out["margin"] = margin_diagnostic(self.fits.tau_hat, self.model.scores, ev.q_hat)
        if self.paths.enabled:
            self.paths.ensure_dirs()
            pd.DataFrame({"unit": np.arange(self.cohort.n), "cpb_score": self.model.scores,
                          "phi": self.phi.values, "contact": ev.contact,
                          "h_star": self.fits.h_star}).to_csv(self.paths.csv_file, index=False)
        return out

    def qini(self) -> dict:
        self.prepare()
        cfg = self.config
        report = qini_curve(self.cohort, self.phi, self.model, default_grid(cfg.grid_points), cfg.alpha, cfg.ties)
        out = report.to_dict()
        fraction = SIMULATION_CONFIG["peak_fraction"]
        out["peak_fraction"] = fraction
        out["peak_budget"] = budget_for_peak_fraction(report.delta_grid, report.v_raw, fraction)
        if self.paths.enabled:
            self.paths.ensure_dirs()
            report.to_frame().to_csv(self.paths.qini_file, index=False)
            logger.info(f"📁 Qini curve written: {self.paths.qini_file}")
        return out

    def aupbc(self) -> dict:
        self.prepare()
        cfg = self.config
        return aupbc(self.cohort, self.phi, self.model, default_grid(cfg.grid_points), cfg.alpha, cfg.ties).to_dict()

    def sensitivity(self) -> dict:
        self.prepare()
        cfg = self.config
        ev = estimate_value(self.cohort, self.phi, self.model, cfg.delta, cfg.alpha, cfg.ties)
        bands = sensitivity_curve(self.cohort, self.phi, ev, self.fits, cfg.gamma, cfg.alpha, cfg.exposure)
        baseline = float(self.cohort.outcome.mean())
        return {
            "delta": cfg.delta,
            "value": ev.value,
            "bands": [b.to_dict() for b in bands],
            "breakdown_gamma_vs_status_quo": breakdown_gamma(bands[0], baseline) if bands else None,
        }

    def restricted(self) -> dict:
        self.prepare()
        cfg = self.config
        if cfg.mode == "both":
            scores = restricted_scores_both(self.fits, self.cohort, cfg.w, cfg.cpb_learner, self.folds,
                                            cfg.swap, tau_spec=cfg.tau_learner)
        else:
            scores = restricted_scores_contact_only(self.fits, self.cohort, self.phi, cfg.w, cfg.cpb_learner,
                                                    self.folds, cfg.swap)
        ev = restricted_value(self.cohort, scores, cfg.delta, cfg.alpha, cfg.ties)
        full = estimate_value(self.cohort, self.phi, self.model, cfg.delta, cfg.alpha, cfg.ties)
        out = {
            "mode": scores.mode,
            "w": list(scores.view.selected),
            "value": ev.to_dict(),
            "unrestricted_value": full.to_dict(),
        }
        if scores.mode == "contact_only":
            grid = default_grid(cfg.grid_points)
            out["aupbc"] = restricted_aupbc(self.cohort, scores, grid=grid, alpha=cfg.alpha, ties=cfg.ties).to_dict()
            out["unrestricted_aupbc"] = aupbc(self.cohort, self.phi, self.model, grid, cfg.alpha, cfg.ties).to_dict()
        if self.paths.enabled:
            self.paths.ensure_dirs()
            pd.DataFrame({"unit": np.arange(self.cohort.n), "restricted_score": scores.scores,
                          "policy": scores.policy, "contact": ev.contact}).to_csv(self.paths.csv_file, index=False)
        return out

    # ---- Phase 5 ----

    def run(self) -> str:
        cfg = self.config
        logger.info(f"🚀 {cfg.subcommand} (seed={self.seed}, threads={cfg.threads})")
        result = getattr(self, cfg.subcommand)()
        text = dump_json({
            "schema_version": SCHEMA_VERSION,
            "subcommand": cfg.subcommand,
            "config": cfg.to_dict(),
            "result": result,
        })
        if cfg.out:
            self.paths.ensure_dirs()
            with open(self.paths.json_file, "w", encoding="utf-8") as f:
                f.write(text + "\n")
            logger.info(f"📁 JSON written: {self.paths.json_file}")
        return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", type=str, help="Cohort CSV (header first, numeric cells)")
    common.add_argument("--out", type=str,
                        help="Output stem; JSON goes to {stem}.json instead of stdout "
                             "(simulate defaults to {CPB_OUTPUT_DIR}/{scenario}_n{n}_seed{seed})")
    common.add_argument("--nuisances", type=str, help="Reuse a fit export ({stem}.nuisances.csv)")
    common.add_argument("--covariates", type=str, help="Comma-separated covariate columns (default: all others)")
    common.add_argument("--treatment", type=str, default="a")
    common.add_argument("--outcome", type=str, default="y")
    common.add_argument("--propensity", type=str, default=ANALYSIS_CONFIG["default_learner"],
                        help="Propensity learner spec or preset")
    common.add_argument("--outcome-learner", type=str, default=ANALYSIS_CONFIG["default_learner"])
    common.add_argument("--cpb-learner", type=str, default=ANALYSIS_CONFIG["default_learner"])
    common.add_argument("--tau-learner", type=str, default=None, help="Learner for E(tau|W) (restricted, mode both)")
    common.add_argument("--folds", type=int, default=ANALYSIS_CONFIG["folds"])
    common.add_argument("--epsilon", type=float, default=ANALYSIS_CONFIG["epsilon"])
    common.add_argument("--delta", type=float, default=0.5)
    common.add_argument("--grid-points", type=int, default=ANALYSIS_CONFIG["grid_points"])
    common.add_argument("--alpha", type=float, default=ANALYSIS_CONFIG["alpha"])
    common.add_argument("--gamma", type=float, nargs="+", default=[0.0])
    common.add_argument("--exposure", choices=ESTIMATORS, default="one_step")
    common.add_argument("--w", type=str, default=None, help="Covariates visible to the restricted rule")
    common.add_argument("--mode", choices=MODES, default="contact_only")
    common.add_argument("--ties", choices=TIE_POLICIES, default="under")
    common.add_argument("--no-swap", dest="swap", action="store_false", help="Use only the first fold's model")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=DEFAULT_THREADS, help="Worker cap (env CPB_THREADS)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="cpb", description="Budget-constrained targeting by conditional potential benefit")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "simulate":
            p.add_argument("--scenario", choices=SCENARIOS, default="S1")
            p.add_argument("--n", type=int, default=1000)
            p.add_argument("--noise-sd", type=float, default=SIMULATION_CONFIG["noise_sd"])
            p.add_argument("--strength", type=float, default=SIMULATION_CONFIG["confounding_strength"])
            p.add_argument("--treatment-strength", type=float, default=SIMULATION_CONFIG["treatment_strength"])
            p.add_argument("--oracle-draws", type=int, default=SIMULATION_CONFIG["oracle_draws"])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    fields = RunConfig.__dataclass_fields__
    values = {k: v for k, v in vars(args).items() if k in fields}
    return RunConfig(**values).validate()


def run(argv=None) -> int:
    """Exit codes: 0 success, 2 argument errors, 1 data or numeric errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)

    try:
        config = config_from_args(args)
        text = CpbPipeline(config).run()
    except ArgumentError as e:
        logger.error(f"❌ [{e.module}] {e}")
        parser.print_usage(sys.stderr)
        return 2
    except CpbError as e:
        detail = ""
        if getattr(e, "fold", None) is not None:
            detail = f" (fold {e.fold})"
        elif getattr(e, "row", None) is not None:
            detail = f" (row {e.row})"
        logger.error(f"❌ [{e.module}] {e}{detail}")
        return 1

    if not config.out:
        sys.stdout.write(text + "\n")
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
