"""Command-line interface: ``mdptest {test,select,simulate,experiment,fqi,fqe}``.

Exit codes: 0 success, 2 usage or config error, 3 data or I/O error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import __version__
from . import config as cfgmod
from .envs import ChainSpec, simulate_chain, simulate_glucose, simulate_tiger
from .experiments import ENVS, Generator, cv_value, rejection_rates, value_difference
from .markov_test import SCHEMA_VERSION, run_test
from .policy import ConstantPolicy, UniformPolicy, fqe, fqi, forest_factory, rows_to_csv, state_value
from .selection import select_order
from .trajectory import DataError, Dataset, append_reward_to_state, lag_embed, load_dataset, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class NumericError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing


def _int_list(text: str) -> list[int]:
    """``"1,4"`` or ``"1-10"`` (inclusive range) or a mix of both."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat TOML config file; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write output here instead of stdout")
    p.add_argument("--threads", type=int, help="worker processes (default: available cores)")


def _data_args(p: argparse.ArgumentParser, positional: bool = True) -> None:
    if positional:
        p.add_argument("data", help="trajectory CSV (traj_id,t,s_1..s_p,action,reward)")
    p.add_argument("--n-actions", type=int, dest="n_actions")
    p.add_argument("--state-dim", type=int, dest="state_dim")
    p.add_argument("--horizon", type=int, help="truncate trajectories to this horizon")
    p.add_argument(
        "--append-reward-to-state",
        action="store_const",
        const=True,
        dest="append_reward_to_state",
        help="append the previous reward to each state",
    )


def _test_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float)
    p.add_argument("--B", type=int, dest="B", help="number of frequency pairs")
    p.add_argument("--Q", type=int, dest="Q", help="largest lag")
    p.add_argument("--folds", type=int, dest="L", help="cross-fitting folds")
    p.add_argument("--n-draws", type=int, dest="n_draws", help="bootstrap draws")
    p.add_argument("--alpha-half", action="store_const", const=True, dest="alpha_half",
                   help="use the upper alpha/2 bootstrap quantile")
    p.add_argument("--no-normalize", action="store_const", const=False, dest="normalize")
    p.add_argument("--trees", type=int, dest="n_trees")
    p.add_argument("--max-depth", type=int, dest="max_depth")
    p.add_argument("--min-leaf", type=int, dest="min_leaf_size")
    p.add_argument("--mtry", type=int)


def _rl_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma", type=float)
    p.add_argument("--n-iters", type=int, dest="n_iters")
    p.add_argument("--fqi-trees", type=int, dest="fqi_trees")
    p.add_argument("--fqe-trees", type=int, dest="fqe_trees")


def _env_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="chain specification (JSON)")
    p.add_argument("--listen-accuracy", type=float, dest="listen_accuracy")
    p.add_argument("--augment-hidden", action="store_true", dest="augment_hidden")
    p.add_argument("--order", type=int, help="glucose lag order")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdptest", description="Test the Markov assumption and select the MDP order.")
    parser.add_argument("--version", action="version", version=f"mdptest {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="run the Markov-assumption test on a dataset")
    _data_args(p)
    _test_args(p)
    p.add_argument("--level", type=int, default=1, help="lag-embedding level to test (default 1)")
    _common(p)

    p = sub.add_parser("select", help="select the order (or flag a POMDP)")
    _data_args(p)
    _test_args(p)
    p.add_argument("--K", type=int, dest="K", help="largest embedding level")
    _common(p)

    p = sub.add_parser("simulate", help="generate trajectories as CSV")
    p.add_argument("env", choices=("tiger", "glucose", "chain"))
    p.add_argument("--N", type=int, default=10, dest="N")
    p.add_argument("--T", type=int, dest="T")
    _env_args(p)
    _common(p)

    p = sub.add_parser("experiment", help="Monte Carlo experiments")
    p.add_argument("kind", choices=("rejection-rates", "value-difference", "cv-value"))
    p.add_argument("data", nargs="?", help="dataset for cv-value (default: simulate glucose data)")
    p.add_argument("--env", choices=ENVS, default="chain")
    p.add_argument("--N", type=int, dest="N")
    p.add_argument("--T", type=int, dest="T")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--levels", type=_int_list, default=[1], help="embedding levels, e.g. 1,4")
    p.add_argument("--alphas", type=_float_list, help="levels to report, e.g. 0.05,0.1")
    p.add_argument("--ks", type=_int_list, default=list(range(1, 11)), help="orders, e.g. 1-10")
    p.add_argument("--K", type=int, dest="K")
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--progress", action="store_true", help="report progress on stderr")
    _data_args(p, positional=False)
    _test_args(p)
    _rl_args(p)
    _env_args(p)
    _common(p)

    p = sub.add_parser("fqi", help="fitted Q-iteration on a dataset")
    _data_args(p)
    _rl_args(p)
    p.add_argument("--level", type=int, default=1, help="treat the data as an order-LEVEL MDP")
    p.add_argument("--actions-out", help="write the greedy action for every embedded row as CSV")
    _common(p)

    p = sub.add_parser("fqe", help="fitted Q-evaluation of a policy on a dataset")
    _data_args(p)
    _rl_args(p)
    p.add_argument("--level", type=int, default=1)
    p.add_argument(
        "--policy",
        default="uniform",
        help="'uniform', 'constant:A', or 'fqi:TRAIN.csv' (greedy FQI policy learned on TRAIN.csv)",
    )
    _common(p)
    return parser


# ---------------------------------------------------------------------------
# helpers


_RUN_KEYS = {
    "seed", "threads", "n_actions", "state_dim", "horizon", "append_reward_to_state", "alpha", "B", "Q", "L",
    "n_draws", "alpha_half", "normalize", "n_trees", "max_depth", "min_leaf_size", "mtry", "K", "gamma",
    "n_iters", "fqi_trees", "fqe_trees",
}


def _settings(args) -> cfgmod.Settings:
    s = cfgmod.load(args.config) if getattr(args, "config", None) else cfgmod.Settings()
    over = {k: getattr(args, k) for k in _RUN_KEYS if getattr(args, k, None) is not None}
    try:
        s = s.with_overrides(**over)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    tiger = dict(s.tiger or {})
    if getattr(args, "listen_accuracy", None) is not None:
        tiger["listen_accuracy"] = args.listen_accuracy
    if getattr(args, "augment_hidden", False):
        tiger["augment_hidden"] = True
    glucose = dict(s.glucose or {})
    if getattr(args, "order", None) is not None:
        glucose["order"] = args.order
    return replace(s, tiger=tiger or None, glucose=glucose or None)


def _load(path: str, run: cfgmod.RunConfig) -> Dataset:
    if run.n_actions < 1:
        raise UsageError("the number of actions is required (--n-actions or n_actions in the config)")
    d = load_dataset(path, run.n_actions, run.state_dim or None, run.horizon or None)
    if run.append_reward_to_state:
        d = append_reward_to_state(d)
    return d


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def _threads(run: cfgmod.RunConfig) -> int:
    return run.threads if run.threads > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# commands


def cmd_test(args) -> int:
    s = _settings(args)
    d = _load(args.data, s.run)
    res = run_test(lag_embed(d, args.level), s.run.test_config())
    if not np.isfinite(res.statistic) or not np.isfinite(res.critical_value):
        raise NumericError("non-finite test statistic or critical value")
    out = res.to_dict()
    out["level"] = args.level
    out["n"] = d.n
    out["T"] = d.horizon
    out["run_config"] = s.to_dict()
    _emit(_json(out), args.out)
    return EXIT_OK


def cmd_select(args) -> int:
    s = _settings(args)
    d = _load(args.data, s.run)
    res = select_order(d, s.run.K, s.run.alpha, s.run.test_config())
    out = res.to_dict()
    out["seed"] = s.run.seed
    out["run_config"] = s.to_dict()
    _emit(_json(out), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    s = _settings(args)
    seed = s.run.seed
    if args.env == "tiger":
        cfg = s.tiger_config()
        if args.T is not None:
            cfg = replace(cfg, horizon=args.T)
        d = simulate_tiger(cfg, args.N, seed)
    elif args.env == "glucose":
        d = simulate_glucose(s.glucose_config(), args.N, args.T, seed)
    else:
        if not args.spec:
            raise UsageError("simulate chain needs --spec")
        d = simulate_chain(ChainSpec.from_json(args.spec), args.N, 100 if args.T is None else args.T, seed)
    if args.out:
        write_dataset(d, args.out)
    else:
        write_dataset(d, sys.stdout)
    return EXIT_OK


def _generator(args, s: cfgmod.Settings) -> Generator:
    chain = ChainSpec.from_json(args.spec) if args.spec else None
    return Generator(args.env, chain=chain, tiger=s.tiger_config(), glucose=s.glucose_config())


def cmd_experiment(args) -> int:
    s = _settings(args)
    run = s.run
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    if args.kind == "rejection-rates":
        gen = _generator(args, s)
        N = args.N if args.N is not None else 25
        progress = (lambda i: print(f"replication {i}/{args.reps}", file=sys.stderr)) if args.progress else None
        report = rejection_rates(
            gen, N, args.T, args.reps, run.test_config(), args.levels, args.alphas, run.seed,
            n_jobs=1 if progress else _threads(run), progress=progress,
        )
        report["run_config"] = s.to_dict()
        if args.format == "csv":
            lines = ["k,alpha,rate,mce,n_reps"] + [
                f"{c['k']},{c['alpha']!r},{c['rate']!r},{c['mce']!r},{c['n_reps']}" for c in report["cells"]
            ]
            _emit("\n".join(lines) + "\n", args.out)
        else:
            _emit(_json(report), args.out)
        return EXIT_OK

    gcfg = s.glucose_config()
    if args.kind == "value-difference":
        N = args.N if args.N is not None else 10
        report = value_difference(
            gcfg, N, args.T, args.reps, args.ks, run.K, run.alpha if args.alpha is not None else 0.01,
            run.test_config(), run.rl_settings(), run.seed,
        )
    else:
        if args.data:
            d = _load(args.data, run)
        else:
            d = simulate_glucose(gcfg, args.N if args.N is not None else 6, args.T, run.seed)
        report = cv_value(d, gcfg, args.ks, args.n_train, run.rl_settings(), run.seed)
    report["run_config"] = s.to_dict()
    if args.format == "csv":
        from .policy import ValueRow

        _emit(rows_to_csv([ValueRow(**r) for r in report["rows"]]), args.out)
    else:
        _emit(_json(report), args.out)
    return EXIT_OK


def _embedded(args, run) -> Dataset:
    return lag_embed(_load(args.data, run), args.level)


def cmd_fqi(args) -> int:
    s = _settings(args)
    run = s.run
    d = _embedded(args, run)
    rl = run.rl_settings()
    pol = fqi(d, rl.gamma, rl.n_iters, rl.fqi_regressor(), run.seed, rl.tol, embed_level=args.level)
    S = d.states.reshape(-1, d.state_dim)
    q = pol.q.values(S)
    greedy = q.argmax(axis=1)
    if not np.all(np.isfinite(q.max(axis=1))):
        raise NumericError("non-finite Q-values")
    if args.actions_out:
        with open(args.actions_out, "w", encoding="utf-8") as fh:
            fh.write("traj_id,t,action\n")
            g = greedy.reshape(d.n, d.horizon + 1)
            for j in range(d.n):
                for t in range(d.horizon + 1):
                    fh.write(f"{d.ids[j]},{t},{int(g[j, t])}\n")
    out = {
        "schema_version": SCHEMA_VERSION,
        "level": args.level,
        "iterations": pol.q.iterations,
        "n_transitions": int(d.n * d.horizon),
        "action_counts": np.bincount(greedy, minlength=d.n_actions).tolist(),
        "mean_max_q": float(q.max(axis=1).mean()),
        "seed": run.seed,
        "run_config": s.to_dict(),
    }
    _emit(_json(out), args.out)
    return EXIT_OK


def _policy(spec: str, args, run, n_actions: int):
    if spec == "uniform":
        return UniformPolicy(n_actions, args.level)
    if spec.startswith("constant:"):
        a = int(spec.split(":", 1)[1])
        if not 0 <= a < n_actions:
            raise UsageError(f"constant action {a} outside 0..{n_actions - 1}")
        return ConstantPolicy(a, n_actions, args.level)
    if spec.startswith("fqi:"):
        train = lag_embed(_load(spec.split(":", 1)[1], run), args.level)
        rl = run.rl_settings()
        return fqi(train, rl.gamma, rl.n_iters, rl.fqi_regressor(), run.seed, rl.tol, embed_level=args.level)
    raise UsageError(f"unknown policy {spec!r}")


def cmd_fqe(args) -> int:
    s = _settings(args)
    run = s.run
    d = _embedded(args, run)
    pol = _policy(args.policy, args, run, d.n_actions)
    rl = run.rl_settings()
    q = fqe(d, pol, rl.gamma, rl.n_iters, rl.fqe_regressor(), run.seed, rl.tol)
    v0 = state_value(q, pol, d.states[:, 0])
    v_all = state_value(q, pol, d.states.reshape(-1, d.state_dim))
    if not (np.all(np.isfinite(v0)) and np.all(np.isfinite(v_all))):
        raise NumericError("non-finite value estimates")
    out = {
        "schema_version": SCHEMA_VERSION,
        "level": args.level,
        "policy": args.policy,
        "iterations": q.iterations,
        "value_initial": float(v0.mean()),
        "value_all_states": float(v_all.mean()),
        "seed": run.seed,
        "run_config": s.to_dict(),
    }
    _emit(_json(out), args.out)
    return EXIT_OK


COMMANDS = {
    "test": cmd_test,
    "select": cmd_select,
    "simulate": cmd_simulate,
    "experiment": cmd_experiment,
    "fqi": cmd_fqi,
    "fqe": cmd_fqe,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    warnings.simplefilter("default")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"mdptest: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"mdptest: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError, KeyError) as exc:
        print(f"mdptest: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
