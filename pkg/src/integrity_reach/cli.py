"""Command-line entry point: ``integrity-reach analyze|design|simulate``."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .attack import MODES, simulate, synthesize_worst_attack
from .calibration import alpha_chi2
from .errors import IntegrityReachError, ValidationError
from .io import emit_report, parse_model
from .model import AttackScenario, is_perfectly_attackable, solve_steady_state_filter, structural_report
from .policy import EnforcementPolicy, design_periodic_policy, evaluate_policy
from .reachability import _resolve_budget, error_curve, theta_matrix

CONDITION_WARNING = 1e10

ENV_PREFIX = "INTEGRITY_REACH_"
DEFAULT_HORIZON = 200

# flag name -> converter; each may also come from INTEGRITY_REACH_<NAME>
_OVERRIDABLE = {
    "model": str,
    "policy": str,
    "horizon": int,
    "gamma": float,
    "epsilon": float,
    "threshold": float,
    "runs": int,
    "seed": int,
    "format": str,
    "out": str,
    "max_period": int,
    "target_step": int,
    "mode": str,
}


def parse_policy(text):
    """Parse ``none``, ``f:L`` or ``f:L:t0``."""
    text = text.strip().lower()
    if text in ("none", "0"):
        return EnforcementPolicy.none()
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ValidationError(f"policy must look like f:L or f:L:t0, got {text!r}")
    try:
        values = [int(v) for v in parts]
    except ValueError as exc:
        raise ValidationError(f"policy fields must be integers: {text!r}") from exc
    return EnforcementPolicy.periodic(*values)


def _apply_env(args, environ):
    for name, convert in _OVERRIDABLE.items():
        if getattr(args, name, None) is not None:
            continue
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is None or raw == "":
            continue
        try:
            setattr(args, name, convert(raw))
        except ValueError as exc:
            raise ValidationError(f"{ENV_PREFIX}{name.upper()}={raw!r} is not a valid {convert.__name__}") from exc
    return args


def _context(args):
    if args.model is None:
        raise ValidationError("--model is required (a JSON file or builtin:<name>)")
    bundle = parse_model(args.model)
    model = bundle.model
    scenario = bundle.scenario
    if args.epsilon is not None or args.gamma is not None:
        scenario = AttackScenario(
            scenario.compromised,
            scenario.epsilon if args.epsilon is None else args.epsilon,
            scenario.gamma if args.gamma is None else args.gamma,
        )
    scenario.check_against(model)
    policy = bundle.policy if args.policy is None else parse_policy(args.policy)
    threshold = bundle.safe_threshold if args.threshold is None else args.threshold
    filt = solve_steady_state_filter(model)
    return bundle, model, filt, scenario, policy, threshold


def _structural_section(model, filt, scenario):
    comp = None if len(scenario.compromised) == model.p else scenario.compromised
    report = structural_report(model, comp)
    verdict = is_perfectly_attackable(model, filt, scenario)
    return {
        "psi": report.psi,
        "q_un": report.q_un,
        "f_required": report.f_required,
        "unstable_eigenvalues": [complex(ch.eigenvalue) if np.iscomplex(ch.eigenvalue) else float(np.real(ch.eigenvalue))
                                 for ch in report.unstable_eigenstructure],
        "perfectly_attackable": bool(verdict.attackable),
        "witness": None if verdict.witness is None else np.real_if_close(verdict.witness).tolist(),
    }


def _calibration_section(model, bundle, scenario):
    det = bundle.detector
    section = {
        "kind": det.kind,
        "beta": det.beta,
        "threshold_h": det.threshold_h,
        "dof": det.dof,
        "budget": det.budget,
        "epsilon": scenario.epsilon,
    }
    if det.kind == "sprt":
        section["stealth_radius_step1"] = float(_resolve_budget(det, scenario).radius(1))
    else:
        section["stealth_radius"] = alpha_chi2(scenario.epsilon, det.dof, det.threshold_h / det.coefficients[-1]).alpha
    return section


def cmd_analyze(args):
    bundle, model, filt, scenario, policy, threshold = _context(args)
    horizon = args.horizon or DEFAULT_HORIZON
    base = error_curve(filt, None, scenario, bundle.detector, horizon)
    report = {
        "command": "analyze",
        "model": bundle.name,
        "structural": _structural_section(model, filt, scenario),
        "calibration": _calibration_section(model, bundle, scenario),
        "filter": {
            "Sigma": np.array(filt.Sigma),
            "K": np.array(filt.K),
            "Q": np.array(filt.Q),
            "spectral_radius": filt.spectral_radius(),
        },
        "horizon": horizon,
        "gamma": scenario.gamma,
    }
    columns = ["k", "bound_no_enforcement"]
    rows = [[pt.k, pt.bound] for pt in base]
    if policy is not None and policy.kind != "none":
        curve = error_curve(filt, policy, scenario, bundle.detector, horizon)
        columns.append("bound_policy")
        for row, pt in zip(rows, curve):
            row.append(pt.bound)
        report["policy"] = policy.describe()
        if threshold is not None:
            verdict = evaluate_policy(model, filt, bundle.detector, scenario, policy, threshold)
            report["verdict"] = verdict.to_dict()
    report["warnings"] = _warnings(bundle, filt, scenario, policy, horizon)
    report["table"] = {"columns": columns, "rows": rows}
    return report


def _warnings(bundle, filt, scenario, policy, horizon):
    notes = []
    if bundle.notes:
        notes.append(bundle.notes)
    if bundle.detector.kind == "sprt" and bundle.detector.budget == "stationary":
        notes.append("stationary stealth budget: the SPRT radius is held at its one-step value")
    pattern = (policy or EnforcementPolicy.none()).support_pattern(scenario.compromised, horizon)
    last = pattern.anchor(horizon)
    cond = float(np.linalg.cond(theta_matrix(filt, pattern, last)))
    if cond > CONDITION_WARNING:
        notes.append(f"stealthiness Gram matrix at step {last} has condition number {cond:.3e}")
    return notes


def cmd_design(args):
    bundle, model, filt, scenario, _, threshold = _context(args)
    if threshold is None:
        raise ValidationError("design needs a safe threshold (--threshold or safe_threshold in the model file)")
    kwargs = {"max_period": args.max_period} if args.max_period else {}
    result = design_periodic_policy(model, filt, bundle.detector, scenario, threshold, **kwargs)
    rows = [[v.policy.L if v.policy.kind == "global" else 0, v.status, v.sup_error, v.fixpoint_horizon]
            for v in result.history]
    return {
        "command": "design",
        "model": bundle.name,
        "threshold": threshold,
        "f": result.f,
        "L_star": result.period,
        "policy": result.policy.describe(),
        "verdict": result.verdict.to_dict(),
        "table": {"columns": ["L", "status", "sup_error", "fixpoint_horizon"], "rows": rows},
    }


def cmd_simulate(args):
    bundle, model, filt, scenario, policy, _ = _context(args)
    policy = policy or EnforcementPolicy.none()
    if bundle.detector.kind != "sprt":
        raise ValidationError("simulate synthesizes attacks against SPRT budgets only")
    target = args.target_step or (policy.L if policy.kind == "global" and not policy.continuous else 10)
    pattern = policy.support_pattern(scenario.compromised, target)
    budget = _resolve_budget(bundle.detector, scenario)
    attack = synthesize_worst_attack(filt, pattern, budget, target)
    runs = args.runs or 2000
    seed = 0 if args.seed is None else args.seed
    steps = max(attack.anchor, target)
    mode = args.mode or "aware"
    clean = simulate(model, filt, bundle.detector, None, "aware", runs, steps, seed)
    attacked = simulate(model, filt, bundle.detector, attack, mode, runs, steps, seed, policy=policy)
    rows = []
    for k in range(steps):
        s_a, s_c = attacked.summary, clean.summary
        rows.append([
            k + 1,
            s_c.alarm_rate[k],
            s_c.alarm_rate[k] - 3 * s_c.alarm_stderr[k],
            s_c.alarm_rate[k] + 3 * s_c.alarm_stderr[k],
            s_a.alarm_rate[k],
            s_a.alarm_rate[k] - 3 * s_a.alarm_stderr[k],
            s_a.alarm_rate[k] + 3 * s_a.alarm_stderr[k],
            float(np.linalg.norm(attacked.deterministic_error[k + 1])),
        ])
    return {
        "command": "simulate",
        "model": bundle.name,
        "policy": policy.describe(),
        "mode": mode,
        "runs": runs,
        "seed": seed,
        "target_step": target,
        "epsilon": scenario.epsilon,
        "predicted_error": attack.achieved_error,
        "expected_max_alarm_increase": scenario.epsilon,
        "table": {
            "columns": ["k", "alarm_rate_clean", "clean_lo", "clean_hi",
                        "alarm_rate_attacked", "attacked_lo", "attacked_hi", "error_shift"],
            "rows": rows,
        },
    }


def build_parser():
    parser = argparse.ArgumentParser(
        prog="integrity-reach",
        description="Reachable estimation error under stealthy sensor attacks and intermittent integrity enforcement.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model JSON file or builtin:<vehicle|cacc>")
    common.add_argument("--policy", help="enforcement policy f:L[:t0] or 'none'")
    common.add_argument("--epsilon", type=float, help="stealthiness slack")
    common.add_argument("--gamma", type=float, help="confidence scaling of the noise term")
    common.add_argument("--threshold", type=float, help="safe estimation-error threshold")
    common.add_argument("--format", choices=("json", "csv"), help="report format (default json)")
    common.add_argument("--out", help="write the report here instead of stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="structural facts and reachable-error curves")
    p.add_argument("--horizon", type=int, help=f"steps of the error curve (default {DEFAULT_HORIZON})")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("design", parents=[common], help="largest safe enforcement period")
    p.add_argument("--max-period", dest="max_period", type=int, help="upper bound on the period search")
    p.set_defaults(handler=cmd_design)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo alarm rates under the worst attack")
    p.add_argument("--runs", type=int, help="Monte Carlo runs (default 2000)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--target-step", dest="target_step", type=int, help="step whose error the attack maximizes")
    p.add_argument("--mode", choices=MODES, help="attacker knows the policy (aware) or not (unaware)")
    p.set_defaults(handler=cmd_simulate)
    return parser


def main(argv=None, environ=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_env(args, os.environ if environ is None else environ)
        report = args.handler(args)
        text = emit_report(report, args.format or "json", args.out)
    except IntegrityReachError as exc:
        print(f"integrity-reach: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, ArithmeticError) as exc:
        code = ValidationError.exit_code if isinstance(exc, ValueError) else 3
        print(f"integrity-reach: error: {exc}", file=sys.stderr)
        return code
    if args.out is None or args.out == "-":
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
