"""End-to-end experiment runner: value learning then policy learning per
cell, alpha/N sweeps with seed replication, oracle caching, and CSV/TSV
emission.

Every (alpha, N, seed) cell owns an RNG stream derived from its seed and its
grid indices, so cells are independent and the whole sweep is reproducible
byte for byte. Wall-clock timings are tracked per row but kept out of the
emitted files to preserve that reproducibility.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import oracle as oracle_mod
from .data import exhaustive_dataset, generate_dataset, split_dataset
from .generators import mixture_policy, shortest_path_behavior, uniform_policy
from .mdp import (
    GoalMdp,
    OccupancyMeasure,
    Policy,
    exact_optimal_policy,
    j_value,
    load_mdp,
    occupancy_of_policy,
)
from .plearn import PolicyClass, expected_tv, fit_policy
from .vlearn import (
    fit_transition_mle,
    fit_v_deterministic,
    fit_v_stochastic,
    tabular_value_class,
    u_records,
    u_records_model,
)

__all__ = [
    "CellSpec",
    "DEFAULT_ALPHA_GRID",
    "ExperimentConfig",
    "ResultRow",
    "SweepContext",
    "emit_plotdata",
    "make_behavior",
    "parse_config",
    "read_csv",
    "run_cell",
    "run_sweep",
    "write_csv",
]

DEFAULT_ALPHA_GRID = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0)

CSV_COLUMNS = (
    "alpha",
    "n",
    "seed",
    "j_opt",
    "j_reg_opt",
    "j_hat",
    "subopt_vs_opt",
    "subopt_vs_reg",
    "c_star_alpha",
    "tv_to_reg_opt",
    "duality_gap",
    "converged",
)


@dataclass
class ExperimentConfig:
    """Sweep definition; the initial-pair dataset size always equals n."""

    mdp_file: str
    alpha_grid: tuple = DEFAULT_ALPHA_GRID
    n_grid: tuple = (1000,)
    seeds: tuple = (0,)
    dynamics_mode: str = "det"
    epsilon_floor: float = 1e-3
    split: bool = True
    behavior: str = "eps-greedy:0.3"
    population: bool = False
    out_dir: str = "."
    n0_policy: str = "equal-to-n"

    def __post_init__(self):
        if len(self.alpha_grid) == 0 or len(self.n_grid) == 0:
            raise ValueError("alpha and n grids must be non-empty")
        if self.dynamics_mode not in ("det", "stoch"):
            raise ValueError("dynamics_mode must be 'det' or 'stoch'")
        if self.n0_policy != "equal-to-n":
            raise ValueError("only the equal-to-n initial-dataset policy is supported")


@dataclass(frozen=True)
class CellSpec:
    """One resolved sweep cell plus its position in the grids."""

    alpha: float
    n: int
    seed: int
    alpha_idx: int
    n_idx: int


@dataclass
class ResultRow:
    alpha: float
    n: int
    seed: int
    j_opt: float
    j_reg_opt: float
    j_hat: float
    subopt_vs_opt: float
    subopt_vs_reg: float
    c_star_alpha: float
    tv_to_reg_opt: float
    duality_gap: float
    converged: bool
    wall_ms: float = 0.0


@dataclass
class SweepContext:
    """Shared, read-only inputs of a sweep: instance, behavior, baselines,
    and the per-alpha oracle solutions (disk-cached)."""

    mdp: GoalMdp
    behavior: Policy
    mu: OccupancyMeasure
    j_opt: float
    dynamics_mode: str = "det"
    epsilon_floor: float = 1e-3
    split: bool = True
    population: bool = False
    cache_dir: str | None = None
    _solutions: dict = field(default_factory=dict)

    def oracle_solution(self, alpha: float) -> oracle_mod.RegularizedSolution:
        if alpha in self._solutions:
            return self._solutions[alpha]
        path = None
        if self.cache_dir is not None:
            os.makedirs(self.cache_dir, exist_ok=True)
            path = os.path.join(self.cache_dir, f"alpha-{alpha!r}.json")
            if os.path.exists(path):
                solution = oracle_mod.load_solution(path)
                self._solutions[alpha] = solution
                return solution
        solution, _ = oracle_mod.solve_regularized_primal(self.mdp, self.mu, alpha)
        if path is not None:
            oracle_mod.save_solution(solution, path)
        self._solutions[alpha] = solution
        return solution


def make_behavior(mdp: GoalMdp, spec: str) -> Policy:
    """Behavior policy from a config string: 'eps-greedy:<e>' or 'uniform'."""
    if spec == "uniform":
        return uniform_policy(mdp)
    if spec.startswith("eps-greedy:"):
        return shortest_path_behavior(mdp, epsilon=float(spec.split(":", 1)[1]))
    if spec.startswith("mixture:"):
        probs = [float(x) for x in spec.split(":", 1)[1].split(",")]
        return mixture_policy(mdp, probs)
    raise ValueError(f"unknown behavior spec {spec!r}")


def build_context(config: ExperimentConfig) -> SweepContext:
    mdp = load_mdp(config.mdp_file)
    behavior = make_behavior(mdp, config.behavior)
    mu = occupancy_of_policy(mdp, behavior)
    _, j_opt = exact_optimal_policy(mdp)
    return SweepContext(
        mdp=mdp,
        behavior=behavior,
        mu=mu,
        j_opt=j_opt,
        dynamics_mode=config.dynamics_mode,
        epsilon_floor=config.epsilon_floor,
        split=config.split,
        population=config.population,
        cache_dir=os.path.join(config.out_dir, "oracle-cache"),
    )


def run_cell(ctx: SweepContext, cell: CellSpec) -> ResultRow:
    """Generate, (split,) fit values, fit a policy, evaluate against the
    cached oracle solution; fully deterministic given the cell."""
    t0 = time.perf_counter()
    mdp = ctx.mdp
    gamma = mdp.discount
    S, A, G = mdp.n_states, mdp.n_actions, mdp.n_goals
    solution = ctx.oracle_solution(cell.alpha)

    stream = np.random.SeedSequence(entropy=cell.seed, spawn_key=(cell.alpha_idx, cell.n_idx))
    gen_seed, split_seed = (int(x) for x in stream.generate_state(2, dtype=np.uint64))

    if ctx.population:
        # exhaustive enumeration replaces sampling; split would break it
        dataset, init = exhaustive_dataset(mdp, ctx.mu, scale=cell.n, scale0=cell.n)
        d_v = d_pi = dataset
    else:
        dataset, init, _ = generate_dataset(mdp, ctx.behavior, cell.n, cell.n, gen_seed)
        if ctx.split:
            d_v, d_pi = split_dataset(dataset, split_seed)
        else:
            d_v = d_pi = dataset

    vclass = tabular_value_class(S, G, mdp.v_max)
    if ctx.dynamics_mode == "stoch":
        model = fit_transition_mle(d_v, S, A)
        v_hat, _, v_report = fit_v_stochastic(d_v, init, cell.alpha, vclass, model, gamma)
        u_pi = u_records_model(d_pi, v_hat, cell.alpha, gamma, model)
    else:
        v_hat, _, v_report = fit_v_deterministic(d_v, init, cell.alpha, vclass, gamma)
        u_pi = u_records(d_pi, v_hat, cell.alpha, gamma)

    pclass = PolicyClass(S, G, A, epsilon_floor=ctx.epsilon_floor)
    pi_hat, pi_report = fit_policy(d_pi, u_pi, cell.alpha, pclass)

    j_hat = j_value(mdp, pi_hat)
    j_reg = j_value(mdp, solution.pi_star_alpha)
    tv = expected_tv(solution.pi_star_alpha, pi_hat, solution.d_star_alpha, mdp.goal_dist)
    wall_ms = (time.perf_counter() - t0) * 1000.0
    return ResultRow(
        alpha=cell.alpha,
        n=cell.n,
        seed=cell.seed,
        j_opt=ctx.j_opt,
        j_reg_opt=j_reg,
        j_hat=j_hat,
        subopt_vs_opt=ctx.j_opt - j_hat,
        subopt_vs_reg=j_reg - j_hat,
        c_star_alpha=solution.c_star_alpha,
        tv_to_reg_opt=tv,
        duality_gap=solution.duality_gap,
        converged=bool(v_report.converged and pi_report.converged),
        wall_ms=wall_ms,
    )


def run_sweep(config: ExperimentConfig, verbose: bool = True) -> list[ResultRow]:
    """Full grid x seeds; writes results.csv and curves.tsv under out_dir."""
    if len(config.seeds) == 0:
        raise ValueError("seeds list must be non-empty")
    ctx = build_context(config)
    rows = []
    for ai, alpha in enumerate(config.alpha_grid):
        for ni, n in enumerate(config.n_grid):
            for seed in config.seeds:
                cell = CellSpec(alpha=alpha, n=int(n), seed=int(seed), alpha_idx=ai, n_idx=ni)
                rows.append(run_cell(ctx, cell))
    rows.sort(key=lambda row: (row.alpha, row.n, row.seed))
    os.makedirs(config.out_dir, exist_ok=True)
    write_csv(rows, os.path.join(config.out_dir, "results.csv"))
    with open(os.path.join(config.out_dir, "curves.tsv"), "w", encoding="utf-8") as fh:
        fh.write(emit_plotdata(rows))
    if verbose:
        print(summary_block(rows))
    return rows


def summary_block(rows: list[ResultRow]) -> str:
    """Per-(alpha, n) medians of the suboptimality, for the console."""
    lines = ["alpha      n        median_subopt  iqr_subopt"]
    for alpha, n in sorted({(row.alpha, row.n) for row in rows}):
        vals = np.array([r.subopt_vs_opt for r in rows if r.alpha == alpha and r.n == n])
        q25, q75 = np.percentile(vals, [25, 75])
        lines.append(f"{alpha:<10g} {n:<8d} {np.median(vals):<14.6g} {q75 - q25:.6g}")
    return "\n".join(lines)


def emit_plotdata(rows: list[ResultRow]) -> str:
    """One curve per alpha over N: median and IQR of the suboptimality.

    Tab-separated with a header; rows sorted by (alpha, n). Regenerating
    from the same rows is byte-identical.
    """
    if len(rows) == 0:
        raise ValueError("no rows to plot")
    out = ["alpha\tn\tmedian_subopt_vs_opt\tiqr_subopt_vs_opt"]
    for alpha, n in sorted({(row.alpha, row.n) for row in rows}):
        vals = np.array([r.subopt_vs_opt for r in rows if r.alpha == alpha and r.n == n])
        q25, q75 = np.percentile(vals, [25, 75])
        out.append(f"{alpha!r}\t{n}\t{np.median(vals)!r}\t{q75 - q25!r}")
    return "\n".join(out) + "\n"


def write_csv(rows: list[ResultRow], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in CSV_COLUMNS:
                val = getattr(row, col)
                if isinstance(val, bool):
                    cells.append("true" if val else "false")
                elif isinstance(val, float):
                    cells.append(repr(val))
                else:
                    cells.append(str(val))
            fh.write(",".join(cells) + "\n")


def read_csv(path: str) -> list[ResultRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header in {path}")
        for line in fh:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            rec = dict(zip(CSV_COLUMNS, parts))
            rows.append(
                ResultRow(
                    alpha=float(rec["alpha"]),
                    n=int(rec["n"]),
                    seed=int(rec["seed"]),
                    j_opt=float(rec["j_opt"]),
                    j_reg_opt=float(rec["j_reg_opt"]),
                    j_hat=float(rec["j_hat"]),
                    subopt_vs_opt=float(rec["subopt_vs_opt"]),
                    subopt_vs_reg=float(rec["subopt_vs_reg"]),
                    c_star_alpha=float(rec["c_star_alpha"]),
                    tv_to_reg_opt=float(rec["tv_to_reg_opt"]),
                    duality_gap=float(rec["duality_gap"]),
                    converged=rec["converged"] == "true",
                )
            )
    return rows


def parse_config(path: str) -> ExperimentConfig:
    """Flat key = value file; '#' starts a comment.

    Keys: mdp, alphas, ns, seeds, dynamics, epsilon_floor, split, behavior,
    population, out. Lists are comma-separated. Missing keys keep defaults
    (alphas defaults to the standard grid).
    """
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {raw.rstrip()}")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key] = val
    if "mdp" not in values:
        raise ValueError("config must set 'mdp'")
    config = ExperimentConfig(mdp_file=values["mdp"])
    if "alphas" in values:
        config = replace(config, alpha_grid=tuple(float(x) for x in values["alphas"].split(",")))
    if "ns" in values:
        config = replace(config, n_grid=tuple(int(x) for x in values["ns"].split(",")))
    if "seeds" in values:
        config = replace(config, seeds=tuple(int(x) for x in values["seeds"].split(",")))
    if "dynamics" in values:
        config = replace(config, dynamics_mode=values["dynamics"])
    if "epsilon_floor" in values:
        config = replace(config, epsilon_floor=float(values["epsilon_floor"]))
    if "split" in values:
        config = replace(config, split=values["split"].lower() in ("1", "true", "yes"))
    if "behavior" in values:
        config = replace(config, behavior=values["behavior"])
    if "population" in values:
        config = replace(config, population=values["population"].lower() in ("1", "true", "yes"))
    if "out" in values:
        config = replace(config, out_dir=values["out"])
    return config
