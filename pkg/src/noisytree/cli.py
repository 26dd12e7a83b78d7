"""Command-line experiment harness.

Subcommands: gen-model, sample, recover, chowliu, sweep, identifiability.
Runs are driven by a TOML config; every output directory gets stamped with
the resolved config and the current git-describe string.  Exit codes:
0 success, 2 config error, 3 recovery failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import evalkit, metric, model, oracle, recovery, sampler
from .model import AlgoParams, NoiseSpec, Tree, TreeModel
from .quadtest import min_residual, quad_coefficients, quadratic_error
from .recovery import RecoveryError


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    """Resolved experiment configuration for one sweep."""

    name: str
    seed: int
    trials: int
    sample_sizes: tuple[int, ...]
    shapes: tuple[str, ...]
    family: str
    n: int
    k: int
    adjacent_distance: float
    distance_interpretation: str
    deltas: tuple[float, ...]
    offset: int
    noise_rule: str
    q_max: float
    p_min_mode: str | float
    d_min_mode: str | float
    d_max_mode: str | float
    t_0: float | None
    neighborhood_scale: float
    exact_pmf: bool
    threads: int
    algorithms: tuple[str, ...] = ("ours", "chowliu")


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def edge_distance(cfg_value: float, interpretation: str) -> float:
    """Resolve the ambiguous adjacent-distance setting.

    "exp" reads the configured number v as a distance of exp(-v); "raw"
    reads it as the distance itself.
    """
    if interpretation == "exp":
        return math.exp(-cfg_value)
    if interpretation == "raw":
        return float(cfg_value)
    raise ConfigError(f"unknown distance_interpretation {interpretation!r}")


def load_config(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad config: {exc}")


def parse_sweep_config(doc: dict, seed_override: int | None, threads: int | None) -> SweepConfig:
    try:
        exp = doc.get("experiment", {})
        mod = doc["model"]
        noise = doc.get("noise", {})
        algo = doc.get("algo", {})
        trials = int(exp.get("trials", 1))
        if trials < 1:
            raise ConfigError("trial count must be >= 1")
        sizes = tuple(int(x) for x in _as_list(exp.get("sample_sizes", [1000])))
        if not sizes:
            raise ConfigError("sample_sizes must be nonempty")
        deltas = tuple(float(x) for x in _as_list(mod.get("delta", [0.0])))
        shapes = tuple(str(s) for s in _as_list(mod.get("shape", "chain")))
        if not shapes or not deltas:
            raise ConfigError("model grids must be nonempty")
        family = str(mod.get("family", "perturbed"))
        if family not in ("symmetric", "perturbed"):
            raise ConfigError(f"unknown model family {family!r}")
        for s in shapes:
            if s not in ("chain", "star", "random"):
                raise ConfigError(f"unknown tree shape {s!r}")
        rule = str(noise.get("rule", "uniform"))
        if rule not in ("uniform", "alternate"):
            raise ConfigError(f"unknown noise rule {rule!r}")
        t_0 = algo.get("t_0", 0.0)
        return SweepConfig(
            name=str(exp.get("name", "sweep")),
            seed=int(seed_override if seed_override is not None else exp.get("seed", 0)),
            trials=trials,
            sample_sizes=sizes,
            shapes=shapes,
            family=family,
            n=int(mod.get("n", 7)),
            k=int(mod.get("k", 4)),
            adjacent_distance=float(mod.get("adjacent_distance", 0.7)),
            distance_interpretation=str(mod.get("distance_interpretation", "exp")),
            deltas=deltas,
            offset=int(mod.get("offset", 1)),
            noise_rule=rule,
            q_max=float(noise.get("q_max", 0.2)),
            p_min_mode=algo.get("p_min", "uniform"),
            d_min_mode=algo.get("d_min", "true"),
            d_max_mode=algo.get("d_max", "estimate"),
            t_0=float(t_0) if t_0 else None,
            neighborhood_scale=float(algo.get("neighborhood_scale", 1.0)),
            exact_pmf=bool(algo.get("exact_pmf", False)),
            threads=int(threads if threads is not None else exp.get("threads", 1)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config: {exc}")


def build_tree(shape: str, n: int, seed: int) -> Tree:
    if shape == "chain":
        return model.chain_tree(n)
    if shape == "star":
        return model.star_tree(n)
    if shape == "random":
        return model.random_tree(n, np.random.default_rng(seed))
    raise ConfigError(f"unknown tree shape {shape!r}")


def build_family_model(cfg: SweepConfig, shape: str, delta: float) -> TreeModel:
    tree = build_tree(shape, cfg.n, cfg.seed)
    d_edge = edge_distance(cfg.adjacent_distance, cfg.distance_interpretation)
    alpha = math.exp(-d_edge / (cfg.k - 1))
    if cfg.family == "symmetric" or delta == 0.0:
        return model.build_symmetric_model(tree, cfg.k, alpha)
    return model.build_perturbed_symmetric_model(tree, cfg.k, alpha, delta, cfg.offset)


def true_edge_distances(m: TreeModel) -> list[float]:
    out = []
    margs = oracle.all_marginals(m)
    for (p, c), mat in m.edge_conditionals.items():
        joint = mat @ np.diag(margs[p])
        out.append(metric.info_distance(joint, joint.sum(axis=1), joint.sum(axis=0)))
    return out


def draw_noise(rule: str, q_max: float, n: int, rng: np.random.Generator) -> NoiseSpec:
    if q_max == 0.0:
        return NoiseSpec.zero(n)
    if rule == "uniform":
        return NoiseSpec(tuple(rng.uniform(0.0, q_max, n)), q_max)
    if rule == "alternate":
        return NoiseSpec(tuple(q_max if i % 2 == 1 else 0.0 for i in range(n)), q_max)
    raise ConfigError(f"unknown noise rule {rule!r}")


def resolve_params(
    cfg: SweepConfig, m: TreeModel, pmfs: oracle.PairwisePmfSet
) -> AlgoParams:
    """Fill in AlgoParams from config modes ("true" / "estimate" / numeric)."""
    p_min = 1.0 / cfg.k if cfg.p_min_mode == "uniform" else float(cfg.p_min_mode)
    edge_d = true_edge_distances(m)
    d_min = min(edge_d) if cfg.d_min_mode == "true" else float(cfg.d_min_mode)
    if cfg.d_max_mode == "true":
        d_max = max(edge_d)
    elif cfg.d_max_mode == "estimate":
        eta = metric.eta_max(cfg.k, cfg.q_max, p_min)
        dist = metric.distance_table(pmfs)
        d_max = metric.estimate_bounds(dist, eta, cfg.q_max, pmfs.marginals()).d_max_upper
    else:
        d_max = float(cfg.d_max_mode)
    if not math.isfinite(d_max) or d_max <= d_min:
        d_max = d_min * (1.0 + 1e-9) + 1e-12
    return AlgoParams(
        d_min=d_min,
        d_max=d_max,
        q_max=cfg.q_max,
        p_min=p_min,
        t_0=cfg.t_0,
        seed=cfg.seed,
        neighborhood_scale=cfg.neighborhood_scale,
    )


def family_truth_flags(cfg: SweepConfig, m: TreeModel, delta: float) -> set[int]:
    """Candidate-parent flags implied by the closed-form families.

    Symmetric models (or any model with k <= 3) leave every cluster member
    swappable; perturbed models with k >= 4 pin the true parents.
    """
    lc = evalkit.leaf_clusters(m.tree)
    fully_swappable = delta == 0.0 or cfg.family == "symmetric" or cfg.k <= 3
    if fully_swappable:
        flagged: set[int] = set()
        for cluster in lc.clusters:
            flagged |= cluster
        return flagged
    return {lc.hubs[c] for c in lc.clusters}


@dataclass(frozen=True)
class TrialResult:
    setting: str
    N: int
    trial: int
    algorithm: str
    exact: bool
    eq_class: bool
    in_t_sub: bool
    failed: bool
    wall_ms: float


def run_trial(
    cfg: SweepConfig,
    setting: str,
    shape: str,
    delta: float,
    N: int,
    setting_idx: int,
    size_idx: int,
    trial: int,
) -> list[TrialResult]:
    m = build_family_model(cfg, shape, delta)
    truth_flags = family_truth_flags(cfg, m, delta)
    seq = np.random.SeedSequence([cfg.seed, setting_idx, size_idx, trial])
    rng = np.random.default_rng(seq)
    sample_seed = int(seq.generate_state(1, dtype=np.uint64)[0])
    noise = draw_noise(cfg.noise_rule, cfg.q_max, cfg.n, rng)
    if cfg.exact_pmf:
        pmfs = oracle.exact_pairwise_set(m, noise)
    else:
        clean = sampler.sample_clean(m, N, sample_seed)
        noisy = sampler.apply_noise(clean, noise, sample_seed, cfg.k)
        pmfs = sampler.empirical_pairwise(noisy, cfg.k)
    results = []
    outputs: dict[str, Tree | None] = {}
    walls: dict[str, float] = {}
    failed: dict[str, bool] = {}
    for algorithm in cfg.algorithms:
        t0 = time.perf_counter()
        try:
            if algorithm == "ours":
                params = resolve_params(cfg, m, pmfs)
                outputs[algorithm] = recovery.find_tree(pmfs, params).tree()
            elif algorithm == "chowliu":
                outputs[algorithm] = evalkit.chow_liu(pmfs)
            else:
                raise ConfigError(f"unknown algorithm {algorithm!r}")
            failed[algorithm] = False
        except (RecoveryError, np.linalg.LinAlgError):
            outputs[algorithm] = None
            failed[algorithm] = True
        walls[algorithm] = (time.perf_counter() - t0) * 1000.0
    for algorithm in cfg.algorithms:
        got = outputs[algorithm]
        if got is None:
            score = evalkit.TrialScore(exact=False, eq_class=False, in_t_sub=False)
        else:
            score = evalkit.score_trial(m.tree, truth_flags, {algorithm: got})[algorithm]
        results.append(
            TrialResult(
                setting=setting,
                N=N,
                trial=trial,
                algorithm=algorithm,
                exact=score.exact,
                eq_class=score.eq_class,
                in_t_sub=score.in_t_sub,
                failed=failed[algorithm],
                wall_ms=walls[algorithm],
            )
        )
    return results


def _trial_star(args) -> list[TrialResult]:
    return run_trial(*args)


def run_sweep(cfg: SweepConfig) -> tuple[list[dict], list[TrialResult]]:
    """All trials of a sweep; aggregate rows are sorted deterministically."""
    settings = []
    for shape in cfg.shapes:
        for delta in cfg.deltas:
            settings.append((shape, delta, f"{shape}|delta={delta:g}"))
    tasks = []
    for s_idx, (shape, delta, name) in enumerate(settings):
        for n_idx, N in enumerate(cfg.sample_sizes):
            for trial in range(cfg.trials):
                tasks.append((cfg, name, shape, delta, N, s_idx, n_idx, trial))
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            nested = list(pool.map(_trial_star, tasks, chunksize=8))
    else:
        nested = [run_trial(*t) for t in tasks]
    trials = [r for batch in nested for r in batch]
    trials.sort(key=lambda r: (r.setting, r.N, r.algorithm, r.trial))
    agg: dict[tuple, list[TrialResult]] = {}
    for r in trials:
        agg.setdefault((r.setting, r.N, r.algorithm), []).append(r)
    rows = []
    for (setting, N, algorithm), group in sorted(agg.items()):
        rows.append(
            {
                "setting": setting,
                "N": N,
                "fraction_exact": sum(r.exact for r in group) / len(group),
                "fraction_eq_class": sum(r.eq_class for r in group) / len(group),
                "algorithm": algorithm,
                "failures": sum(r.failed for r in group),
            }
        )
    return rows, trials


def write_sweep_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["setting", "N", "fraction_exact", "fraction_eq_class", "algorithm", "failures"]
        )
        for row in rows:
            writer.writerow(
                [
                    row["setting"],
                    row["N"],
                    repr(row["fraction_exact"]),
                    repr(row["fraction_eq_class"]),
                    row["algorithm"],
                    row["failures"],
                ]
            )


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def stamp_run(outdir: Path, doc: dict, seed: int) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    lines = [f"# git: {git_describe()}", f"# resolved seed: {seed}"]
    lines += _toml_lines(doc)
    (outdir / "resolved_config.toml").write_text("\n".join(lines) + "\n")


def _toml_lines(doc: dict, prefix: str = "") -> list[str]:
    lines = []
    scalars = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in doc.items() if isinstance(v, dict)}
    for key, val in scalars.items():
        lines.append(f"{key} = {_toml_value(val)}")
    for key, val in tables.items():
        name = f"{prefix}{key}"
        lines.append(f"[{name}]")
        lines += _toml_lines(val, prefix=f"{name}.")
    return lines


def _toml_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, str):
        return f'"{val}"'
    if isinstance(val, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in val) + "]"
    return repr(val)


# ---------------------------------------------------------------- commands


def cmd_gen_model(args) -> int:
    doc = load_config(args.config)
    cfg = parse_sweep_config(doc, args.seed, None)
    delta = cfg.deltas[0]
    m = build_family_model(cfg, cfg.shapes[0], delta)
    model.save_model(m, args.out)
    print(f"model written to {args.out}")
    return 0


def cmd_sample(args) -> int:
    doc = load_config(args.config)
    cfg = parse_sweep_config(doc, args.seed, None)
    m = model.load_model(args.model)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    noise = draw_noise(cfg.noise_rule, cfg.q_max, m.n, rng)
    clean = sampler.sample_clean(m, args.n_samples, cfg.seed)
    noisy = sampler.apply_noise(clean, noise, cfg.seed, m.k)
    sampler.save_samples(noisy, m.k, args.out)
    print(f"{args.n_samples} noisy samples written to {args.out}")
    return 0


def _pmfs_from_args(args, cfg: SweepConfig):
    truth = model.load_model(args.model) if args.model else None
    if args.exact_pmf:
        if truth is None:
            raise ConfigError("--exact-pmf requires --model")
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
        noise = draw_noise(cfg.noise_rule, cfg.q_max, truth.n, rng)
        return truth, oracle.exact_pairwise_set(truth, noise)
    if not args.samples:
        raise ConfigError("need --samples unless --exact-pmf is given")
    samples, k = sampler.load_samples(args.samples)
    return truth, sampler.empirical_pairwise(samples, k)


def cmd_recover(args) -> int:
    doc = load_config(args.config)
    cfg = parse_sweep_config(doc, args.seed, None)
    truth, pmfs = _pmfs_from_args(args, cfg)
    if truth is not None:
        params = resolve_params(cfg, truth, pmfs)
    else:
        p_min = 1.0 / cfg.k if cfg.p_min_mode == "uniform" else float(cfg.p_min_mode)
        eta = metric.eta_max(pmfs.k, cfg.q_max, p_min)
        dist = metric.distance_table(pmfs)
        bounds = metric.estimate_bounds(dist, eta, cfg.q_max, pmfs.marginals())
        if not math.isfinite(bounds.d_max_upper):
            worst = max(
                ((i, j) for i in range(pmfs.n) for j in range(i + 1, pmfs.n)),
                key=lambda pair: dist.at(*pair) if math.isfinite(dist.at(*pair)) else math.inf,
            )
            raise RecoveryError(worst, "no finite distance estimates")
        d_min = (
            float(cfg.d_min_mode)
            if cfg.d_min_mode != "true"
            else max((bounds.d_min_lower or 0.0), 1e-3)
        )
        if not math.isfinite(d_min):
            d_min = 1e-3
        params = AlgoParams(
            d_min=d_min,
            d_max=max(bounds.d_max_upper, d_min * 1.001),
            q_max=cfg.q_max,
            p_min=p_min,
            t_0=cfg.t_0,
            neighborhood_scale=cfg.neighborhood_scale,
        )
    structure = recovery.find_tree(pmfs, params)
    if params.t_0 is not None:
        structure = recovery.expand_equivalence_class(structure, pmfs, params)
    outdir = Path(args.out)
    stamp_run(outdir, doc, cfg.seed)
    recovery.save_structure(structure, outdir / "structure.json")
    recovery.save_edge_list(structure, outdir / "edges.txt")
    if truth is not None:
        score = evalkit.score_trial(
            truth.tree, structure.flagged_nodes(), {"ours": structure.tree()}
        )["ours"]
        with open(outdir / "metrics.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["algorithm", "exact", "eq_class", "in_t_sub"])
            writer.writerow(["ours", score.exact, score.eq_class, score.in_t_sub])
        print(f"exact={score.exact} eq_class={score.eq_class}")
    print(f"structure written to {outdir}")
    return 0


def cmd_chowliu(args) -> int:
    doc = load_config(args.config)
    cfg = parse_sweep_config(doc, args.seed, None)
    truth, pmfs = _pmfs_from_args(args, cfg)
    tree = evalkit.chow_liu(pmfs)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    structure = recovery.RecoveredStructure(edges=tree.edges, parents=frozenset())
    recovery.save_edge_list(structure, outdir / "chowliu_edges.txt")
    if truth is not None:
        score = evalkit.score_trial(truth.tree, set(), {"chowliu": tree})["chowliu"]
        print(f"exact={score.exact} eq_class={score.eq_class}")
    print(f"edges written to {outdir}")
    return 0


def cmd_sweep(args) -> int:
    doc = load_config(args.config)
    cfg = parse_sweep_config(doc, args.seed, args.threads)
    outdir = Path(args.out)
    stamp_run(outdir, doc, cfg.seed)
    rows, trials = run_sweep(cfg)
    write_sweep_csv(rows, outdir / "sweep.csv")
    evalkit.append_trial_rows(
        outdir / "trials.csv",
        [
            (r.trial, r.algorithm, r.N, r.exact, r.eq_class, r.in_t_sub, round(r.wall_ms, 3))
            for r in trials
        ],
    )
    print(f"sweep results written to {outdir}")
    return 0


def cmd_identifiability(args) -> int:
    doc = load_config(args.config)
    ident = doc.get("identifiability", {})
    seed = args.seed if args.seed is not None else int(doc.get("experiment", {}).get("seed", 0))
    ks = [int(v) for v in _as_list(ident.get("k", [3, 4]))]
    alphas = [float(v) for v in _as_list(ident.get("alpha", [0.7]))]
    deltas = [float(v) for v in _as_list(ident.get("delta", [0.0, 0.04]))]
    qs = [float(v) for v in _as_list(ident.get("q", [0.0, 0.2]))]
    q_range = float(ident.get("q_range", 1.0))
    tol = float(ident.get("feasible_tol", 1e-8))
    grid = int(ident.get("grid", 1000))
    outdir = Path(args.out)
    stamp_run(outdir, doc, seed)
    rows = []
    for k in ks:
        for alpha in alphas:
            for delta in deltas:
                for q in qs:
                    tree = model.chain_tree(3)
                    try:
                        if delta == 0.0:
                            m = model.build_symmetric_model(tree, k, alpha)
                        else:
                            m = model.build_perturbed_symmetric_model(tree, k, alpha, delta)
                    except model.ModelError:
                        continue
                    noise = NoiseSpec((q, q, q), max(q, 1e-12) if q else 0.0)
                    pmfs = oracle.exact_pairwise_set(m, noise)
                    for role, center in (("leaf", 0), ("middle", 1)):
                        triplet = (0, 1, 2)
                        result = quadratic_error(pmfs, triplet, center, q_max=q_range)
                        outer = [v for v in triplet if v != center]
                        mq = quad_coefficients(pmfs, (outer[0], center, outer[1]))
                        _, best = min_residual(mq, q_range, grid)
                        rows.append(
                            [k, alpha, delta, q, role, repr(result.mean_root), repr(best), best < tol]
                        )
    with open(outdir / "identifiability.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "alpha", "delta", "q", "center_role", "mean_root", "residual", "feasible"])
        writer.writerows(rows)
    print(f"identifiability map written to {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisytree")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("gen-model", help="write a model file from the config")
    common(p)
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("sample", help="draw noisy samples from a model file")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--n-samples", type=int, required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("recover", help="run the recovery pipeline")
    common(p)
    p.add_argument("--model", default=None)
    p.add_argument("--samples", default=None)
    p.add_argument("--exact-pmf", action="store_true")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("chowliu", help="run the Chow-Liu baseline")
    common(p)
    p.add_argument("--model", default=None)
    p.add_argument("--samples", default=None)
    p.add_argument("--exact-pmf", action="store_true")
    p.set_defaults(func=cmd_chowliu)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep over the config grids")
    common(p)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("identifiability", help="center-test phase map over a parameter grid")
    common(p)
    p.set_defaults(func=cmd_identifiability)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RecoveryError as exc:
        print(f"recovery failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
