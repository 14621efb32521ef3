"""Command line front-end: ``dp-lsvi {run,sweep-epsilon,validate-instance,accountant}``.

Every flag may also be given in a ``--config`` file of ``key = value`` lines
(keys are flag names with or without the leading dashes); flags given on the
command line win over the file.
"""
from __future__ import annotations

import argparse
import sys

from . import bench
from . import dp_mechanisms as dpm
from .linear_mdp import load_spec, validate_spec


def _csv_list(cast):
    def parse(text):
        items = [t.strip() for t in str(text).split(",") if t.strip()]
        if not items:
            raise argparse.ArgumentTypeError("empty list")
        return [cast(t) for t in items]
    return parse


def _algo(text):
    return bench.AlgorithmEntry(text, epsilon=1.0).mode  # validates the name


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config_file(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (p.strip() for p in line.split("=", 1))
            out[key.lstrip("-").replace("-", "_")] = value
    return out


def _instance_flags(p):
    p.add_argument("--instance", choices=("tabular", "lowrank"), default="tabular")
    p.add_argument("--states", type=int, default=3)
    p.add_argument("--actions", type=int, default=4)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--features", type=int, default=None, help="feature dimension for lowrank")
    p.add_argument("--instance-seed", type=int, default=0)


def _run_flags(p):
    _instance_flags(p)
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--algo", type=_csv_list(_algo), default=["pp"],
                   help="comma-separated list of dp, pp, ucb")
    _privacy_flags(p)
    p.add_argument("--radius-mult", type=float, default=None)
    p.add_argument("--lambda", dest="lambda_", type=float, default=None)
    p.add_argument("--variance-scale", type=float, default=None)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--noise-reuse", choices=("fresh", "once"), default="fresh")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="results")
    p.add_argument("--plot", action="store_true")


def _privacy_flags(p):
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta-prime", type=float, default=1e-3)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--c1", type=float, default=1.0)
    p.add_argument("--c2", type=float, default=1.0)


def build_parser():
    parser = argparse.ArgumentParser(prog="dp-lsvi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a seeded suite and write CSV / plot artifacts")
    _run_flags(run)
    sweep = sub.add_parser("sweep-epsilon", help="paired-seed sweep over privacy budgets")
    _run_flags(sweep)
    sweep.add_argument("--epsilons", type=_csv_list(float), default=[0.2, 1.0, 5.0, 1e6])

    val = sub.add_parser("validate-instance", help="check an instance for linear-MDP violations")
    _instance_flags(val)
    val.add_argument("--file", default=None, help="instance in the text format")

    acc = sub.add_parser("accountant", help="print the privacy accounting for a run")
    _instance_flags(acc)
    _privacy_flags(acc)
    acc.add_argument("--episodes", type=int, default=2000)
    acc.add_argument("--delta", type=float, default=0.05)
    acc.add_argument("--noise-reuse", choices=("fresh", "once"), default="fresh")

    for p in (run, sweep, val, acc):
        p.add_argument("--config", default=None, help="flat key = value file of flag defaults")
    return parser, {"run": run, "sweep-epsilon": sweep, "validate-instance": val, "accountant": acc}


def _apply_config(subparser, path):
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in read_config_file(path).items():
        dest = "lambda_" if key == "lambda" else key
        action = actions.get(dest)
        if action is None or dest in ("help", "config"):
            raise SystemExit(f"{path}: unknown key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = _bool(value)
        elif action.type is not None:
            defaults[dest] = action.type(value)
        else:
            defaults[dest] = value
        if action.choices is not None and defaults[dest] not in action.choices:
            raise SystemExit(f"{path}: {key} must be one of {sorted(action.choices)}")
    subparser.set_defaults(**defaults)


def parse_args(argv=None):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        _apply_config(subs[args.command], args.config)
        args = parser.parse_args(argv)
    return args


def _instance(args):
    return bench.InstanceSpec(args.instance, args.states, args.actions, args.horizon,
                              args.features, args.instance_seed)


def _experiment(args, algorithms):
    return bench.ExperimentConfig(instance=_instance(args), K=args.episodes, algorithms=algorithms,
                                  num_seeds=args.seeds, master_seed=args.master_seed,
                                  out_dir=args.out, plot=args.plot, delta=args.delta, c1=args.c1,
                                  c2=args.c2, noise_reuse=args.noise_reuse, n_jobs=args.jobs)


def _entry(args, mode):
    private = mode == "dp_lsvi_ucb_pp"
    return bench.AlgorithmEntry(mode, epsilon=args.epsilon if private and args.rho is None else None,
                                rho=args.rho if private else None, delta_prime=args.delta_prime,
                                radius_multiplier=args.radius_mult, lambda_tilde=args.lambda_,
                                variance_scale=args.variance_scale)


def _summary(result):
    for agg in result.aggregates:
        tag = " (partial)" if agg.partial else ""
        print(f"{agg.label}: final mean cumulative regret {agg.final_mean:.4f} "
              f"+- {agg.final_sem:.4f} (sem, n={agg.n[-1]}){tag}")


def main(argv=None):
    args = parse_args(argv)
    if args.command == "run":
        result = bench.run_suite(_experiment(args, [_entry(args, m) for m in args.algo]))
        _summary(result)
        print(f"wrote {args.out}")
        return 0
    if args.command == "sweep-epsilon":
        template = _entry(args, "dp_lsvi_ucb_pp")
        result = bench.sweep_epsilon(_experiment(args, [template]), args.epsilons)
        _summary(result)
        print(f"wrote {args.out}")
        return 0
    if args.command == "validate-instance":
        spec = load_spec(args.file) if args.file else _instance(args).build()
        violations = validate_spec(spec)
        for v in violations:
            print(v)
        print(f"{len(violations)} violation(s)")
        return 1 if violations else 0
    if args.command == "accountant":
        rho = args.rho if args.rho is not None else dpm.dp_to_zcdp(args.epsilon, args.delta_prime)
        spec = _instance(args).build()
        cal = dpm.NoiseCalibration(rho, spec.H, args.episodes, spec.d, args.delta, args.c1, args.c2)
        print(dpm.accountant_report(cal, args.delta_prime, args.noise_reuse))
        return 0
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
