"""
Commands of the transmission solver CLI.
Each command reads a validated RunConfig, writes its artifacts and returns an exit code.
"""

import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

from artifacts import emit, render_json
from config import RunConfig
from diagnostics import (
    flux_jump_residual,
    identity_check,
    kappa_family_study,
    poincare_check,
    refinement_study,
    stability_study,
    trace_gradient,
    transformed_identity_check,
)
from errors import ConfigError
from geometry import AdmissibilityClass, Profile, build_domain_summary, classify, profile_norms
from mesh import MeshTable
from profiles import builtin_profile, load_profile_csv
from solver import FieldTable, run_solve

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INADMISSIBLE = 2


@dataclass(frozen=True)
class RunContext:
    """Per-invocation settings coming from the command line."""

    out_dir: Path
    threads: int = 1


def load_profile(run_config: RunConfig, nx: int | None = None) -> Profile:
    """Build the configured profile; nx overrides the configured grid for builtins."""
    section = run_config.profile
    if section.csv is not None:
        if nx is not None and nx != section.nx:
            raise ConfigError("a CSV profile has a fixed grid and cannot be resampled")
        return load_profile_csv(section.csv, run_config.params)
    return builtin_profile(section.builtin, run_config.params, section.nx if nx is None else nx)


def _solve_configured(run_config: RunConfig, profile: Profile, timing: bool = False):
    return run_solve(
        profile,
        run_config.solver,
        run_config.mesh.n1,
        run_config.mesh.n2,
        eps_sign=run_config.tolerances.eps_sign,
        eps_touch=run_config.tolerances.eps_touch,
        timing=timing,
    )


def admissible(run_config: RunConfig, context: RunContext) -> int:
    """
    Classify the configured profile.

    Prints the admissibility record and writes it with the profile norms.

    Returns:
        0 if the profile is admissible, 2 otherwise
    """
    profile = load_profile(run_config)
    record = classify(profile, eps_sign=run_config.tolerances.eps_sign, eps_touch=run_config.tolerances.eps_touch)
    sys.stdout.write(render_json(record))

    norms = profile_norms(profile)
    summary = build_domain_summary(profile)
    emit(
        {
            "admissibility": record,
            "norms": norms._asdict(),
            "domain": summary._asdict(),
            "profile_digest": profile.digest,
        },
        context.out_dir / "admissibility.json",
    )
    return EXIT_OK if record.admissible else EXIT_INADMISSIBLE


def solve(run_config: RunConfig, context: RunContext) -> int:
    """Solve once and write field.csv, mesh.csv and report.json."""
    profile = load_profile(run_config)
    result = _solve_configured(run_config, profile, timing=run_config.output.timing)
    emit(FieldTable(result.chi, result.h, result.psi), context.out_dir / "field.csv")
    emit(MeshTable(result.mesh), context.out_dir / "mesh.csv")
    emit(result.report, context.out_dir / "report.json")
    return EXIT_OK


def verify(run_config: RunConfig, context: RunContext) -> int:
    """
    Solve and run the pointwise diagnostics; write verify.json with pass/fail flags.

    Failing checks are reported in the document, not through the exit code.
    """
    profile = load_profile(run_config)
    result = _solve_configured(run_config, profile)
    report = result.report
    tol = run_config.solver.cg_tol

    flux_l2, flux_linf = flux_jump_residual(result.psi)
    poincare_lhs, poincare_bound = poincare_check(result.chi)
    top = trace_gradient(result.psi, where="top")
    interface = trace_gradient(result.psi, where="interface_upper")

    checks = {
        "minimality": {
            "energy_psi": report.energy_psi,
            "energy_h": report.energy_h,
            "passed": report.energy_psi <= report.energy_h + 10.0 * tol * report.energy_h,
        },
        "poincare": {
            "lhs": poincare_lhs,
            "bound": poincare_bound,
            "passed": poincare_lhs <= poincare_bound,
        },
        "flux_jump": {
            "l2": flux_l2,
            "linf": flux_linf,
            "passed": math.isfinite(flux_l2) and math.isfinite(flux_linf),
        },
        "traces": {
            "top_l2": top.norm_l2,
            "top_l4": top.norm_l4,
            "interface_l2": interface.norm_l2,
            "interface_l4": interface.norm_l4,
            "passed": all(math.isfinite(v) for v in (top.norm_l2, top.norm_l4, interface.norm_l2, interface.norm_l4)),
        },
    }

    if result.admissibility.classification == AdmissibilityClass.INTERIOR_S:
        identity = identity_check(result.chi)
        transformed = transformed_identity_check(result.chi)
        limit = run_config.study.identity_tol
        checks["identity"] = {**identity.model_dump(), "passed": identity.relative_residual <= limit}
        checks["transformed_identity"] = {
            **transformed.model_dump(),
            "passed": transformed.relative_residual <= limit,
        }
    else:
        reason = "identity needs a profile without contact"
        checks["identity"] = {"skipped": True, "reason": reason, "passed": True}
        checks["transformed_identity"] = {"skipped": True, "reason": reason, "passed": True}

    passed = all(entry["passed"] for entry in checks.values())
    emit(
        {"passed": passed, "checks": checks, "report": report, "admissibility": result.admissibility},
        context.out_dir / "verify.json",
    )
    logger.info(f"Verification {'passed' if passed else 'FAILED'}")
    return EXIT_OK


def refine_study(run_config: RunConfig, context: RunContext) -> int:
    """Mesh-refinement study over study.levels; writes refine.csv and refine_orders.json."""
    if run_config.profile.csv is not None:
        raise ConfigError("refine-study needs a builtin profile that can be sampled on every level")
    table = refinement_study(
        lambda nx: load_profile(run_config, nx),
        run_config.study.levels,
        run_config.solver,
        threads=context.threads,
        eps_sign=run_config.tolerances.eps_sign,
        eps_touch=run_config.tolerances.eps_touch,
    )
    emit(table, context.out_dir / "refine.csv")
    emit({"orders": table.orders(), "levels": table.column("nx")}, context.out_dir / "refine_orders.json")
    return EXIT_OK


def stability_study_command(run_config: RunConfig, context: RunContext) -> int:
    """Profile-perturbation study; writes stability.csv and stability_summary.json."""
    base = load_profile(run_config)
    direction = builtin_profile(run_config.study.perturbation, run_config.params, base.nx)
    table = stability_study(
        base,
        direction,
        run_config.study.schedule,
        run_config.solver,
        run_config.mesh.n1,
        run_config.mesh.n2,
        threads=context.threads,
        eps_sign=run_config.tolerances.eps_sign,
        eps_touch=run_config.tolerances.eps_touch,
    )
    emit(table, context.out_dir / "stability.csv")
    emit(table.summary(), context.out_dir / "stability_summary.json")
    return EXIT_OK


def kappa_study(run_config: RunConfig, context: RunContext) -> int:
    """H2-surrogate study over study.family and study.levels; writes kappa.csv and kappa_summary.json."""
    table = kappa_family_study(
        run_config.study.family,
        run_config.params,
        run_config.study.levels,
        run_config.solver,
        run_config.study.kappa,
        threads=context.threads,
        eps_sign=run_config.tolerances.eps_sign,
        eps_touch=run_config.tolerances.eps_touch,
    )
    emit(table, context.out_dir / "kappa.csv")
    emit(table.summary(), context.out_dir / "kappa_summary.json")
    return EXIT_OK


class Command(NamedTuple):
    name: str
    func: Callable[[RunConfig, RunContext], int]
    description: str


# Command registry
commands = [
    Command(
        name="admissible",
        func=admissible,
        description="Classify the profile and print the admissibility record; exit 2 if inadmissible.",
    ),
    Command(
        name="solve",
        func=solve,
        description="Solve for psi and write the field, mesh and report artifacts.",
    ),
    Command(
        name="verify",
        func=verify,
        description="Solve and check minimality, Poincare, flux, identity and trace diagnostics.",
    ),
    Command(
        name="refine-study",
        func=refine_study,
        description="Run the mesh schedule and fit convergence orders.",
    ),
    Command(
        name="stability-study",
        func=stability_study_command,
        description="Solve on base + w/n and tabulate H1, energy and trace gaps.",
    ),
    Command(
        name="kappa-study",
        func=kappa_study,
        description="Tabulate H2 surrogates over a profile family and mesh levels.",
    ),
]

COMMANDS = {command.name: command for command in commands}
