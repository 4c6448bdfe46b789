"""Command-line entry point: ``pomirl {gen,forward,irl,simulate,eval}``.

Every subcommand is deterministic given its arguments and ``--seed``. Errors are
reported as a single line ``error: <class>: <detail>`` on stderr with exit code
2 (usage), 3 (validation) or 4 (solver failure). Set ``POMIRL_LOG`` to a logging
level name (e.g. INFO, DEBUG) for progress output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import envs
from .flow import Policy
from .irl import IrlAbort, IrlParams, read_demos
from .lp import BACKENDS
from .memory import Fsc
from .model import FeatureBasis, ModelError, Pomdp, parse_model, serialize_model
from .pipeline import forward, learn, make_problem, true_value
from .scp import ScpAbort, ScpParams, write_iteration_log
from .sim import evaluate, simulate
from .spec import SpecError, SpecFormula

EXIT_USAGE, EXIT_VALIDATION, EXIT_SOLVER = 2, 3, 4


class CliError(Exception):
    def __init__(self, kind: str, detail: str, code: int = EXIT_VALIDATION):
        super().__init__(detail)
        self.kind, self.detail, self.code = kind, detail, code


# ---------------------------------------------------------------------------
# file helpers


def load_model(path) -> tuple[Pomdp, FeatureBasis | None, dict]:
    path = Path(path)
    if not path.is_file():
        raise CliError("model-not-found", str(path))
    text = path.read_text()
    try:
        p, features = parse_model(text)
    except ModelError as exc:
        raise CliError("model-invalid", str(exc)) from None
    doc = json.loads(text)
    return p, features, {k: doc[k] for k in ("spec", "theta_true") if k in doc}


def policy_to_dict(p: Pomdp, policy: Policy | Fsc) -> dict:
    if isinstance(policy, Fsc):
        return {"kind": "fsc", **policy.to_dict()}
    return {
        "kind": "memoryless",
        "observations": list(p.observations),
        "actions": list(p.actions),
        "sigma": policy.sigma.tolist(),
    }


def load_policy(path, p: Pomdp) -> Policy | Fsc:
    path = Path(path)
    if not path.is_file():
        raise CliError("policy-not-found", str(path))
    try:
        doc = json.loads(path.read_text())
        pol = Fsc.from_dict(doc) if doc.get("kind") == "fsc" else Policy(np.asarray(doc["sigma"], float))
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError("policy-invalid", str(exc)) from None
    shape = pol.eta.shape[1:] if isinstance(pol, Fsc) else pol.sigma.shape
    if tuple(shape) != (p.n_observations, p.n_actions):
        raise CliError("policy-invalid", f"policy shape {tuple(shape)} does not match the model")
    return pol


def _theta(args, features: FeatureBasis, extra: dict) -> np.ndarray:
    if getattr(args, "theta", None):
        try:
            th = np.array([float(x) for x in args.theta.split(",")])
        except ValueError:
            raise CliError("theta-invalid", args.theta) from None
    elif "theta_true" in extra:
        th = np.asarray(extra["theta_true"], float)
    else:
        raise CliError("theta-missing", "pass --theta or use a model file that records theta_true")
    if th.shape != (features.d,):
        raise CliError("theta-invalid", f"expected {features.d} weights, got {th.size}")
    return th


def _formula(args, extra: dict) -> SpecFormula | None:
    text = getattr(args, "spec", None)
    lam = getattr(args, "lam", None)
    if text is None and getattr(args, "default_spec", False) and "spec" in extra:
        text, lam = extra["spec"]["formula"], extra["spec"]["lambda"] if lam is None else lam
    if text is None:
        return None
    try:
        return SpecFormula.parse(text, 0.9 if lam is None else lam)
    except SpecError as exc:
        raise CliError("spec-invalid", str(exc)) from None


def _features(features: FeatureBasis | None) -> FeatureBasis:
    if features is None:
        raise CliError("features-missing", "model file has no feature basis")
    return features


def _scp_params(args) -> ScpParams:
    try:
        return ScpParams(
            beta=args.beta, beta_sp=args.beta_sp, rho_init=args.rho, rho0=args.rho0, rho_lim=args.rho_lim,
            max_iters=args.max_iters, gamma=args.gamma, backend=args.backend,
        )
    except ValueError as exc:
        raise CliError("params-invalid", str(exc)) from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    try:
        bench = envs.generate(envs.BenchSpec(args.family, n=args.n, r=args.r, slip=args.slip, seed=args.seed))
    except ValueError as exc:
        raise CliError("bench-invalid", str(exc)) from None
    spec = {"formula": str(bench.spec), "lambda": bench.spec.lam}
    Path(args.out).write_text(
        serialize_model(bench.model, bench.features, spec=spec, theta_true=bench.theta_true.theta.tolist())
    )
    print(f"wrote {args.out}: {bench.name} states={bench.model.n_states} observations={bench.model.n_observations}")
    return 0


def cmd_forward(args) -> int:
    p, features, extra = load_model(args.model)
    features = _features(features)
    theta = _theta(args, features, extra)
    try:
        problem = make_problem(p, features, args.memory, _formula(args, extra))
    except SpecError as exc:
        raise CliError("spec-invalid", str(exc)) from None
    try:
        policy, res = forward(problem, theta, _scp_params(args))
    except ScpAbort as exc:
        if args.log:
            write_iteration_log(exc.partial.log, args.log)
        raise CliError("solver-failure", str(exc), EXIT_SOLVER) from None
    Path(args.out).write_text(json.dumps(policy_to_dict(p, policy)))
    if args.log:
        write_iteration_log(res.log, args.log)
    mass = res.spec_visitation.target_mass if res.spec_visitation is not None else float("nan")
    value = true_value(p, policy, theta, features, args.horizon)
    print(f"cost={res.cost:.6f} status={res.status} iterations={len(res.log)} spec_mass={mass:.6f} value={value:.6f}")
    return 0


def cmd_irl(args) -> int:
    p, features, extra = load_model(args.model)
    features = _features(features)
    dpath = Path(args.demos)
    if not dpath.is_file():
        raise CliError("demos-not-found", str(dpath))
    try:
        demos = read_demos(dpath.read_text(), p)
    except (ValueError, KeyError) as exc:
        raise CliError("demos-invalid", str(exc)) from None
    try:
        problem = make_problem(p, features, args.memory, _formula(args, extra))
    except SpecError as exc:
        raise CliError("spec-invalid", str(exc)) from None
    try:
        params = IrlParams(
            step_size=args.step, outer_iters=args.iters, normalize=args.normalize_step, scp=_scp_params(args)
        )
    except ValueError as exc:
        raise CliError("params-invalid", str(exc)) from None
    try:
        policy, res = learn(problem, demos, params)
    except IrlAbort as exc:
        if args.history:
            exc.partial.write_history(args.history)
        raise CliError("solver-failure", str(exc), EXIT_SOLVER) from None
    Path(args.theta_out).write_text(json.dumps({"theta": res.theta.tolist(), "names": list(features.names)}))
    Path(args.out).write_text(json.dumps(policy_to_dict(p, policy)))
    if args.history:
        res.write_history(args.history)
    print(f"iterations={len(res.history)} feature_gap={res.history[-1]['feature_gap']:.6g} theta={res.theta.tolist()}")
    return 0


def cmd_simulate(args) -> int:
    p, _, _ = load_model(args.model)
    policy = load_policy(args.policy, p)
    trajs = simulate(p, policy, args.horizon, args.episodes, args.seed)
    Path(args.out).write_text("".join(t.to_json(args.with_states) + "\n" for t in trajs))
    print(f"wrote {len(trajs)} trajectories to {args.out}")
    return 0


def cmd_eval(args) -> int:
    p, features, extra = load_model(args.model)
    features = _features(features)
    policy = load_policy(args.policy, p)
    theta = _theta(args, features, extra)
    formula = _formula(args, extra)
    rep = evaluate(p, policy, theta, features, formula, args.horizon, args.episodes, args.seed)
    if args.out:
        rep.to_csv(args.out)
    sat = "nan" if rep.satisfaction is None else f"{rep.satisfaction:.6f}"
    print(f"mean={rep.final:.6f} stderr={rep.stderr[-1]:.6f} satisfaction={sat}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _solver_flags(sp):
    d = ScpParams()
    sp.add_argument("--beta", type=float, default=d.beta, help="slack penalty")
    sp.add_argument("--beta-sp", type=float, default=d.beta_sp, help="spec violation penalty")
    sp.add_argument("--rho", type=float, default=d.rho_init, help="initial trust region (> 1)")
    sp.add_argument("--rho0", type=float, default=d.rho0, help="trust-region expand/contract factor")
    sp.add_argument("--rho-lim", type=float, default=d.rho_lim, help="stop once rho - 1 falls below this")
    sp.add_argument("--max-iters", type=int, default=d.max_iters)
    sp.add_argument("--gamma", type=float, default=None, help="override the model's discount")
    sp.add_argument("--backend", default=d.backend, choices=sorted(BACKENDS), help="LP solver")


def _spec_flags(sp):
    sp.add_argument("--spec", help="'F goal', 'G !bad' or '!bad U goal'")
    sp.add_argument("--lambda", dest="lam", type=float, default=None, help="satisfaction threshold (default 0.9)")
    sp.add_argument("--default-spec", action="store_true", help="use the spec recorded in the model file")


def _theta_flags(sp):
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--theta", help="comma-separated reward weights")
    g.add_argument("--theta-true", action="store_true", help="use the weights recorded in the model file (default)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pomirl", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a benchmark model")
    g.add_argument("--family", required=True, choices=sorted(envs.GENERATORS))
    g.add_argument("--n", type=int, default=5)
    g.add_argument("--r", type=int, default=2)
    g.add_argument("--slip", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("forward", help="solve the forward problem for given weights")
    f.add_argument("--model", required=True)
    _theta_flags(f)
    _spec_flags(f)
    f.add_argument("--memory", type=int, default=1)
    f.add_argument("--out", default="policy.json")
    f.add_argument("--log", help="iteration CSV path")
    f.add_argument("--horizon", type=int, default=100, help="horizon of the reported value")
    _solver_flags(f)
    f.set_defaults(func=cmd_forward)

    i = sub.add_parser("irl", help="learn reward weights and a policy from demonstrations")
    i.add_argument("--model", required=True)
    i.add_argument("--demos", required=True, help="JSON-lines demonstrations")
    _spec_flags(i)
    i.add_argument("--memory", type=int, default=1)
    i.add_argument("--iters", type=int, default=30)
    i.add_argument("--step", type=float, default=1.0, help="base step size eta0 in eta0 / sqrt(k)")
    i.add_argument("--normalize-step", action="store_true", help="divide each step by max(1, |gradient|_inf)")
    i.add_argument("--theta-out", default="theta.json")
    i.add_argument("--out", default="policy.json")
    i.add_argument("--history", help="history CSV path")
    _solver_flags(i)
    i.set_defaults(func=cmd_irl)

    s = sub.add_parser("simulate", help="sample trajectories as JSON lines")
    s.add_argument("--model", required=True)
    s.add_argument("--policy", required=True)
    s.add_argument("--episodes", type=int, default=10)
    s.add_argument("--horizon", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--with-states", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("eval", help="Monte-Carlo evaluation under the true weights")
    e.add_argument("--model", required=True)
    e.add_argument("--policy", required=True)
    _theta_flags(e)
    _spec_flags(e)
    e.add_argument("--episodes", type=int, default=200)
    e.add_argument("--horizon", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="report CSV path")
    e.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("POMIRL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc.detail}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: io-error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
