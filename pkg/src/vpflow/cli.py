"""Command-line entry point.

Subcommands cover the full pipeline: gen-mdp, gen-data, solve-oracle,
train-v, train-pi, sweep, and plot. Repeated invocations with identical
flags and seeds produce byte-identical output files.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import data as data_mod
from . import generators, harness, oracle, plearn, vlearn
from .mdp import (
    ValueFn,
    load_mdp,
    load_occupancy,
    load_policy,
    occupancy_of_policy,
    save_mdp,
    save_occupancy,
    save_policy,
)


def _report_dict(report: oracle.SolveReport) -> dict:
    return {
        "converged": bool(report.converged),
        "degenerate": bool(report.degenerate),
        "final_gradient_norm": float(report.final_gradient_norm),
        "tolerance_used": float(report.tolerance_used),
        "iterations": int(report.iterations),
    }


def _write_json(doc: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _behavior_from_arg(mdp, value: str):
    if value.endswith(".json"):
        return load_policy(value)
    return harness.make_behavior(mdp, value)


def cmd_gen_mdp(args) -> int:
    if args.kind == "gridworld":
        mdp = generators.gridworld(args.w, args.h, args.gamma)
    elif args.kind == "noisy-gridworld":
        mdp = generators.gridworld(args.w, args.h, args.gamma, p_slip=args.p_slip)
    elif args.kind == "random-chain":
        mdp = generators.random_chain(args.n, args.gamma, seed=args.seed)
    else:
        raise ValueError(f"unknown kind {args.kind!r}")
    save_mdp(mdp, args.out)
    print(f"wrote {args.out} ({mdp.n_states} states, {mdp.n_actions} actions, {mdp.n_goals} goals)")
    return 0


def cmd_gen_data(args) -> int:
    mdp = load_mdp(args.mdp)
    behavior = _behavior_from_arg(mdp, args.behavior)
    dataset, init, mu = data_mod.generate_dataset(mdp, behavior, args.n, args.n0, args.seed)
    data_mod.save_jsonl(dataset, args.out + ".d.jsonl")
    data_mod.save_init_jsonl(init, args.out + ".d0.jsonl")
    save_occupancy(mu, args.out + ".mu.json")
    _write_json(
        {
            "mdp": args.mdp,
            "gamma": mdp.discount,
            "n_states": mdp.n_states,
            "n_actions": mdp.n_actions,
            "n_goals": mdp.n_goals,
            "v_max": mdp.v_max,
            "seed": args.seed,
        },
        args.out + ".meta.json",
    )
    print(f"wrote {args.out}.d.jsonl ({dataset.n} records), {args.out}.d0.jsonl ({init.n0})")
    return 0


def cmd_solve_oracle(args) -> int:
    mdp = load_mdp(args.mdp)
    if args.mu is not None:
        mu = load_occupancy(args.mu)
    else:
        mu = occupancy_of_policy(mdp, _behavior_from_arg(mdp, args.behavior))
    solution, report = oracle.solve_regularized_primal(mdp, mu, args.alpha)
    oracle.save_solution(solution, args.out)
    print(
        f"wrote {args.out}: primal {solution.primal_value!r}, "
        f"gap {solution.duality_gap!r}, converged={report.converged}"
    )
    return 0


def cmd_train_v(args) -> int:
    dataset = data_mod.load_jsonl(args.data + ".d.jsonl")
    init = data_mod.load_init_jsonl(args.data + ".d0.jsonl")
    meta = _read_json(args.data + ".meta.json")
    gamma = float(meta["gamma"])
    S, G = int(meta["n_states"]), int(meta["n_goals"])
    v_max = float(meta["v_max"])
    if args.value_class == "tabular":
        vclass = vlearn.tabular_value_class(S, G, v_max)
    elif args.value_class.startswith("linear:"):
        feats = _read_json(args.value_class.split(":", 1)[1])
        phi = np.asarray(feats["phi"], dtype=np.float64).reshape(S, G, int(feats["k"]))
        vclass = vlearn.linear_value_class(phi, v_max)
    else:
        raise ValueError(f"unknown value class {args.value_class!r}")
    if args.dynamics == "stoch":
        model = vlearn.fit_transition_mle(dataset, S, int(meta["n_actions"]))
        v, u, report = vlearn.fit_v_stochastic(dataset, init, args.alpha, vclass, model, gamma)
    else:
        v, u, report = vlearn.fit_v_deterministic(dataset, init, args.alpha, vclass, gamma)
    _write_json(
        {
            "alpha": args.alpha,
            "dynamics": args.dynamics,
            "gamma": gamma,
            "seed": args.seed,
            "n_states": S,
            "n_goals": G,
            "v_max": v_max,
            "v": v.v.ravel().tolist(),
            "u_records": u.tolist(),
            "report": _report_dict(report),
        },
        args.out,
    )
    print(f"wrote {args.out}: converged={report.converged}, grad={report.final_gradient_norm!r}")
    return 0


def cmd_train_pi(args) -> int:
    dataset = data_mod.load_jsonl(args.data + ".d.jsonl")
    meta = _read_json(args.data + ".meta.json")
    vdoc = _read_json(args.u)
    u = np.asarray(vdoc["u_records"], dtype=np.float64)
    S, G, A = int(meta["n_states"]), int(meta["n_goals"]), int(meta["n_actions"])
    pclass = plearn.PolicyClass(S, G, A, epsilon_floor=args.epsilon)
    policy, report = plearn.fit_policy(dataset, u, args.alpha, pclass)
    doc = policy.to_dict()
    doc["alpha"] = args.alpha
    doc["epsilon_floor"] = args.epsilon
    doc["report"] = _report_dict(report)
    _write_json(doc, args.out)
    print(f"wrote {args.out}: converged={report.converged}, degenerate={report.degenerate}")
    return 0


def cmd_sweep(args) -> int:
    config = harness.parse_config(args.config)
    rows = harness.run_sweep(config)
    print(f"{len(rows)} rows -> {config.out_dir}/results.csv")
    return 0


def cmd_plot(args) -> int:
    rows = harness.read_csv(args.csv)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(harness.emit_plotdata(rows))
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpflow")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-mdp", help="write a synthetic MDP instance")
    p.add_argument("--kind", required=True, choices=["gridworld", "noisy-gridworld", "random-chain"])
    p.add_argument("--w", type=int, default=4)
    p.add_argument("--h", type=int, default=4)
    p.add_argument("--n", type=int, default=5, help="chain length for random-chain")
    p.add_argument("--p-slip", type=float, default=0.1, dest="p_slip")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_mdp)

    p = sub.add_parser("gen-data", help="sample an offline dataset from a behavior policy")
    p.add_argument("--mdp", required=True)
    p.add_argument("--behavior", default="eps-greedy:0.3", help="policy JSON path or spec string")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--n0", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("solve-oracle", help="solve the regularized program exactly")
    p.add_argument("--mdp", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--behavior", default="eps-greedy:0.3", help="policy JSON path or spec string")
    p.add_argument("--mu", default=None, help="behavior occupancy JSON (overrides --behavior)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve_oracle)

    p = sub.add_parser("train-v", help="fit a value function on a dataset prefix")
    p.add_argument("--data", required=True, help="dataset prefix from gen-data")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--dynamics", choices=["det", "stoch"], default="det")
    p.add_argument(
        "--class",
        dest="value_class",
        default="tabular",
        help="'tabular' or 'linear:<features-json>'",
    )
    p.add_argument("--seed", type=int, default=0, help="reserved for stochastic optimizers")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_v)

    p = sub.add_parser("train-pi", help="fit a policy from shifted advantages")
    p.add_argument("--data", required=True, help="dataset prefix from gen-data")
    p.add_argument("--u", required=True, help="train-v output JSON")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--epsilon", type=float, default=plearn.DEFAULT_EPSILON_FLOOR)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_pi)

    p = sub.add_parser("sweep", help="run a full alpha/N/seed sweep from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="regenerate curves.tsv from a results.csv")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
