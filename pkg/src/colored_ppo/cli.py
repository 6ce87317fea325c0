"""Command line entry point: training runs, sweeps, noise diagnostics, analysis.

Exit codes: 0 on success, 2 for usage or configuration errors, 1 for
runtime failures (including sweeps where some cells failed).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import evalstats, noise
from .envs import ENVIRONMENTS, dump_trajectory, make_env
from .neuralnet import load_checkpoint, save_checkpoint
from .ppo import ObservationNormalizer, PpoConfig, TrainingAborted, train

OUTPUT_ENV_VAR = "COLORED_PPO_OUTPUT"
DESK_BETAS = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0)
DESK_N_ENVS = (1, 2, 4, 8, 16, 32)
PERFORMANCE_COLUMNS = ["env", "beta", "n_envs", "seed", "n_steps", "performance", "final_return"]
REQUIRED_COLUMNS = ["env", "beta", "n_envs", "seed", "performance"]


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 2."""


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV_VAR, "runs"))


def fmt(x) -> str:
    """Locale-free number formatting that round-trips exactly."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows, comments=()) -> None:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def parse_list(text, kind=float) -> list:
    try:
        out = [kind(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse list {text!r}: {exc}") from None
    if not out:
        raise UsageError(f"empty list {text!r}")
    return out


# ---------------------------------------------------------------- config

def _field_types() -> dict:
    return {f.name: f.default for f in fields(PpoConfig)}


def coerce_field(name: str, text: str):
    """Parse a config value using the type of the field's default."""
    defaults = _field_types()
    if name not in defaults:
        raise UsageError(f"unknown config field {name!r}")
    default = defaults[name]
    text = str(text).strip()
    try:
        if name == "clip_range_vf":
            return None if text.lower() in ("", "none") else float(text)
        if name == "hidden_sizes":
            return tuple(int(h) for h in text.strip("()[] ").split(",") if h.strip())
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            value = float(text)
            if value != int(value):
                raise ValueError(f"not an integer: {text!r}")
            return int(value)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise UsageError(f"invalid value for {name}: {exc}") from None


def build_config(values: dict) -> PpoConfig:
    try:
        return PpoConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def config_to_ini(section: str, env: str | None, config: PpoConfig | None, extra=None) -> str:
    cp = configparser.ConfigParser()
    cp[section] = {}
    if env is not None:
        cp[section]["env"] = env
    for k, v in (extra or {}).items():
        cp[section][k] = str(v)
    if config is not None:
        for k, v in config.to_dict().items():
            if k == "hidden_sizes":
                v = ",".join(str(h) for h in v)
            cp[section][k] = "none" if v is None else fmt(v)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def read_ini(path, section: str) -> dict:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise UsageError(f"cannot read config file {path}")
    if section not in cp:
        raise UsageError(f"config file {path} has no [{section}] section")
    return dict(cp[section])


# Command-line flag -> PpoConfig field.
TRAIN_FLAGS = {
    "beta": "noise_beta",
    "n_envs": "n_envs",
    "n_steps": "n_steps",
    "total_timesteps": "total_timesteps",
    "seed": "seed",
    "learning_rate": "learning_rate",
    "n_epochs": "n_epochs",
    "minibatch_size": "minibatch_size",
    "eval_interval": "eval_interval",
    "n_eval_episodes": "n_eval_episodes",
    "eval_mode": "eval_mode",
    "dtype": "dtype",
}


def _add_ppo_flags(p, with_grid=False):
    p.add_argument("--config", help="INI file whose section provides defaults")
    if not with_grid:
        p.add_argument("--env", help="environment name")
        p.add_argument("--beta", type=float, help="noise color exponent")
        p.add_argument("--n-envs", type=int)
        p.add_argument("--seed", type=int)
    p.add_argument("--n-steps", type=int)
    p.add_argument("--total-timesteps", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--n-epochs", type=int)
    p.add_argument("--minibatch-size", type=int)
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--n-eval-episodes", type=int)
    p.add_argument("--eval-mode", choices=["deterministic_mean", "stochastic"])
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--iid-noise", action="store_true", default=None,
                   help="sample i.i.d. Gaussian noise directly instead of the bank")
    p.add_argument("--set", action="append", default=[], metavar="FIELD=VALUE",
                   help="override any training config field")


def collect_values(args, section: str) -> tuple[dict, dict]:
    """Merge config file, flags and ``--set`` overrides into PpoConfig kwargs.

    Returns ``(ppo_values, other_values)`` where the latter holds non-PpoConfig
    keys from the file (env, grid lists).
    """
    names = set(PpoConfig.field_names())
    values, other = {}, {}
    if getattr(args, "config", None):
        for k, v in read_ini(args.config, section).items():
            if k in names:
                values[k] = coerce_field(k, v)
            else:
                other[k] = v
    for flag, name in TRAIN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    if getattr(args, "iid_noise", None):
        values["iid_noise"] = True
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise UsageError(f"--set expects FIELD=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = coerce_field(k.strip(), v)
    return values, other


def check_env(name) -> str:
    if name is None:
        raise UsageError("an environment is required (--env)")
    if name not in ENVIRONMENTS:
        raise UsageError(f"invalid env {name!r}; choose from {sorted(ENVIRONMENTS)}")
    return name


# ---------------------------------------------------------------- train

def run_training(config: PpoConfig, env: str, run_dir, plot: bool = False) -> evalstats.PerformanceRecord:
    """Train once and write the run directory; returns the performance record."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(config_to_ini("train", env, config))
    result = train(config, env, log_path=run_dir / "log.jsonl")
    curve = result.eval_curve
    write_csv(run_dir / "eval.csv", ["global_step", "episode_index", "return"], curve.rows())
    meta = {"env": env, "config": config.to_dict()}
    if result.obs_normalizer is not None:
        meta["obs_normalizer"] = result.obs_normalizer.state_dict()
    save_checkpoint(result.policy, run_dir / "checkpoint.json", meta)
    record = evalstats.PerformanceRecord(
        env=env, beta=config.noise_beta, n_envs=config.n_envs, seed=config.seed,
        performance=evalstats.performance(curve), final_return=float(curve.mean_returns[-1]),
        n_steps=config.n_steps, variant="iid" if config.iid_noise else "colored")
    if plot:
        from . import plotting
        plotting.learning_curve(curve.steps, curve.mean_returns, run_dir / "eval.png",
                                title=f"{env}, beta={config.noise_beta:g}")
    return record


def cmd_train(args) -> int:
    values, other = collect_values(args, "train")
    env = check_env(args.env or other.get("env"))
    config = build_config(values)
    run_dir = Path(args.out) if args.out else output_root() / "train" / (
        f"{env}__beta{config.noise_beta:g}__n{config.n_envs}__seed{config.seed}")
    record = run_training(config, env, run_dir, plot=args.plot)
    print(f"{run_dir}: performance {record.performance:.4f}, final return {record.final_return:.4f}")
    return 0


# ---------------------------------------------------------------- sweep

def cell_name(env, beta, n_envs, n_steps, seed) -> str:
    return f"{env}__beta{beta:g}__n{n_envs}__steps{n_steps}__seed{seed}"


def _run_cell(job):
    """Worker task: one grid cell. Never raises; failures become a FAILED marker."""
    env, values, cell_dir = job
    cell_dir = Path(cell_dir)
    try:
        config = PpoConfig(**values)
        record = run_training(config, env, cell_dir)
        row = {k: getattr(record, k) for k in PERFORMANCE_COLUMNS}
        (cell_dir / "FAILED").unlink(missing_ok=True)
        (cell_dir / "DONE").write_text(json.dumps(row, sort_keys=True) + "\n")
        return cell_dir.name, row, None
    except Exception:
        cell_dir.mkdir(parents=True, exist_ok=True)
        msg = traceback.format_exc()
        (cell_dir / "FAILED").write_text(msg)
        return cell_dir.name, None, msg.strip().splitlines()[-1]


def cmd_sweep(args) -> int:
    values, other = collect_values(args, "sweep")
    envs = parse_list(args.envs or other.get("envs") or "", str)
    for e in envs:
        check_env(e)
    betas = parse_list(args.betas or other.get("betas") or ",".join(map(str, DESK_BETAS)))
    n_envs_list = parse_list(args.n_envs_list or other.get("n_envs_list")
                             or ",".join(map(str, DESK_N_ENVS)), int)
    seeds = parse_list(args.seeds or other.get("seeds") or "0,1,2", int)
    update_size = args.update_size or (int(other["update_size"]) if "update_size" in other else None)
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")

    out = Path(args.out) if args.out else output_root() / "sweep"
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    extra = {"envs": ",".join(envs), "betas": ",".join(f"{b:g}" for b in betas),
             "n_envs_list": ",".join(map(str, n_envs_list)), "seeds": ",".join(map(str, seeds))}
    if update_size:
        extra["update_size"] = update_size

    jobs, rows = [], {}
    for env in envs:
        for n in n_envs_list:
            cell_values = dict(values, n_envs=n)
            if update_size:
                if update_size % n:
                    raise UsageError(f"update_size {update_size} is not divisible by n_envs {n}")
                cell_values["n_steps"] = update_size // n
            for beta in betas:
                for seed in seeds:
                    v = dict(cell_values, noise_beta=beta, seed=seed)
                    config = build_config(v)
                    name = cell_name(env, beta, n, config.n_steps, seed)
                    done = cells_dir / name / "DONE"
                    if done.exists():
                        rows[name] = json.loads(done.read_text())
                    else:
                        jobs.append((env, config.to_dict(), str(cells_dir / name)))
    (out / "config.ini").write_text(config_to_ini("sweep", None, build_config(values), extra))

    print(f"{len(rows)} cell(s) already done, running {len(jobs)}")
    failures = []
    if args.workers == 1:
        results = map(_run_cell, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=args.workers)
        results = pool.map(_run_cell, jobs)
    for name, row, err in results:
        if row is None:
            failures.append(name)
            print(f"FAILED {name}: {err}", file=sys.stderr)
        else:
            rows[name] = row
            print(f"done {name}: performance {row['performance']:.4f}")
    if args.workers > 1:
        pool.shutdown()

    ordered = sorted(rows.values(), key=lambda r: (r["env"], r["beta"], r["n_envs"], r["n_steps"],
                                                   r["seed"]))
    write_csv(out / "performance.csv", PERFORMANCE_COLUMNS,
              [[r[c] for c in PERFORMANCE_COLUMNS] for r in ordered])
    print(f"wrote {out / 'performance.csv'} ({len(ordered)} rows)")
    if failures:
        print(f"{len(failures)} cell(s) failed; rerun to retry them", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------- noise

def _noise_out(args, default_name) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        path = output_root() / "noise" / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _check_beta(b):
    try:
        return noise.NoiseColor(b).beta
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_noise_psd(args) -> int:
    beta = _check_beta(args.beta)
    if args.n < 2 or args.reps < 2:
        raise UsageError("--n and --reps must be >= 2")
    rng = np.random.default_rng(args.seed)
    seqs = noise.generate_colored_noise(args.n, beta, rng, size=args.reps)
    est = noise.estimate_psd(seqs)
    try:
        slope = noise.fit_psd_slope(est, args.f_min, args.f_max)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    path = _noise_out(args, f"psd_beta{beta:g}.csv")
    write_csv(path, ["frequency", "power"], zip(est.frequencies, est.power),
              comments=[f"fitted_slope={slope!r}", f"beta={beta!r}"])
    if args.plot:
        from . import plotting
        plotting.psd(est.frequencies, est.power, beta, slope, path.with_suffix(".png"))
    print(f"fitted slope {slope:.4f} (beta {beta:g}) -> {path}")
    return 0


def cmd_noise_walk(args) -> int:
    betas = [_check_beta(b) for b in (args.beta or [0.0, 1.0, 2.0])]
    if args.len < 2:
        raise UsageError("--len must be >= 2")
    ss = np.random.SeedSequence(args.seed)
    walks = {}
    for beta, child in zip(betas, ss.spawn(len(betas))):
        eps = noise.generate_colored_noise(args.len, beta, np.random.default_rng(child), size=2)
        walks[beta] = noise.integrate_random_walk(eps[0], eps[1])
    path = _noise_out(args, "walk.csv")
    rows = [(b, t, xy[t, 0], xy[t, 1]) for b, xy in walks.items() for t in range(len(xy))]
    write_csv(path, ["beta", "t", "x", "y"], rows)
    if args.plot:
        from . import plotting
        plotting.random_walks(walks, path.with_suffix(".png"))
    print(f"{len(walks)} walk(s) of length {args.len} -> {path}")
    return 0


def cmd_noise_bias(args) -> int:
    betas = [_check_beta(b) for b in parse_list(args.betas)]
    if args.reps < 100:
        raise UsageError("--reps must be >= 100")
    ss = np.random.SeedSequence(args.seed)
    rows = []
    for beta, child in zip(betas, ss.spawn(len(betas))):
        st = noise.bias_statistics(beta, args.len, args.reps, np.random.default_rng(child),
                                   n_pooled=args.n_pooled)
        rows.append((beta, st.std_of_bias, st.standard_error, args.reps, args.len, args.n_pooled))
    path = _noise_out(args, "bias.csv")
    write_csv(path, ["beta", "std_of_bias", "standard_error", "n_sequences", "sequence_length",
                     "n_pooled"], rows)
    if args.plot:
        from . import plotting
        plotting.bias_spread([r[0] for r in rows], [r[1] for r in rows], path.with_suffix(".png"))
    for r in rows:
        print(f"beta {r[0]:g}: std of bias {r[1]:.5f}")
    return 0


# ---------------------------------------------------------------- analyze

def read_performance_table(path) -> list:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise UsageError(f"cannot read performance table: {exc}") from None
    with fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        header = reader.fieldnames or []
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise UsageError(f"schema error: performance table lacks column {col!r}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(evalstats.PerformanceRecord(
                    env=row["env"], beta=float(row["beta"]), n_envs=int(row["n_envs"]),
                    seed=int(row["seed"]), performance=float(row["performance"]),
                    final_return=float(row.get("final_return") or "nan"),
                    n_steps=int(row.get("n_steps") or 2048)))
            except ValueError as exc:
                raise UsageError(f"schema error on line {lineno}: {exc}") from None
    if not records:
        raise UsageError("performance table has no rows")
    return records


def _standardize_or_raw(records):
    """Per-env z-scores; an env with no spread contributes zeros, with a warning."""
    good, flat = [], []
    for env in sorted({r.env for r in records}):
        group = [r for r in records if r.env == env]
        try:
            good.append(evalstats.standardize(group))
        except evalstats.DegenerateGroupError as exc:
            print(f"warning: {exc}; its standardized scores are set to 0", file=sys.stderr)
            flat.extend(dataclasses.replace(r, performance=0.0) for r in group)
    out = [r for sw in good for r in sw.records] + flat
    params = {k: v for sw in good for k, v in sw.standardized.items()}
    return evalstats.SweepResult(out, list(records), params)


def cmd_analyze(args) -> int:
    records = read_performance_table(args.table)
    out = Path(args.out) if args.out else Path(args.table).parent / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    ss = np.random.SeedSequence(args.analysis_seed)
    boot_ss, bias_ss = ss.spawn(2)
    fixed = [float(b) for b in parse_list(args.fixed_betas)]

    # Table 1 compares colors at one environment count.
    counts = sorted({r.n_envs for r in records})
    table_n = args.table_n_envs if args.table_n_envs is not None else (4 if 4 in counts else counts[0])
    if table_n not in counts:
        raise UsageError(f"--table-n-envs {table_n} not in table (have {counts})")
    subset = [r for r in records if r.n_envs == table_n]
    raw = evalstats.SweepResult(subset, subset, {})
    table = evalstats.best_beta_table(raw, fixed_betas=fixed, alpha=args.alpha)
    header = ["env", "beta_star", *[f"mark_{b:g}" for b in fixed], *[f"p_{b:g}" for b in fixed]]
    write_csv(out / "table1.csv", header, [[r.as_csv_row(fixed)[h] for h in header] for r in table])

    sweep = _standardize_or_raw(records)
    cells = {}
    for r in sweep.records:
        cells.setdefault((r.n_envs, float(r.beta)), []).append(r.performance)
    groups = sorted({g for g, _ in cells})
    betas = sorted({b for _, b in cells})
    rank_rows, best_cells = [], {}
    rank_grid = np.full((len(betas), len(groups)), np.nan)
    for j, g in enumerate(groups):
        means = {b: float(np.mean(cells[(g, b)])) for b in betas if (g, b) in cells}
        order = sorted(means, key=lambda b: (-means[b], b))
        for b in betas:
            if b in means:
                rk = order.index(b) + 1
                rank_grid[betas.index(b), j] = rk
                rank_rows.append((g, b, len(cells[(g, b)]), means[b], rk))
            else:
                rank_rows.append((g, b, 0, "nan", "missing"))
        best_cells[g] = order[0]
    write_csv(out / "ranks.csv", ["n_envs", "beta", "n_seeds", "mean_standardized", "rank"], rank_rows)

    # Bias spread of single-environment noise sequences, measured per beta.
    bias_betas = sorted(set(betas) | set(fixed))
    sigma = {}
    for beta, child in zip(bias_betas, bias_ss.spawn(len(bias_betas))):
        sigma[beta] = noise.bias_statistics(beta, args.bias_length, args.bias_reps,
                                            np.random.default_rng(child)).std_of_bias
    sigma_star = (args.sigma_star if args.sigma_star is not None
                  else evalstats.estimate_sigma_star(sigma, best_cells))
    pred = evalstats.predicted_best_beta(sigma, groups, betas, sigma_star)
    e_rows = []
    for i, b in enumerate(pred.betas):
        for j, n in enumerate(pred.n_envs):
            e_rows.append((b, n, sigma[b], sigma[b] / np.sqrt(n), pred.errors[i, j],
                           int(pred.ranks[i, j]), int(pred.best_beta[j] == b), best_cells[n]))
    write_csv(out / "e_matrix.csv", ["beta", "n_envs", "sigma_beta", "projected_sigma", "error",
                                     "predicted_rank", "predicted_best", "empirical_best_beta"],
              e_rows, comments=[f"sigma_star={sigma_star!r}"])

    ci_rows = []
    keyed = {}
    for r in sweep.records:
        keyed.setdefault((r.env, float(r.beta), r.n_envs), []).append(r.performance)
        keyed.setdefault(("all", float(r.beta), r.n_envs), []).append(r.performance)
    keys = sorted(keyed, key=lambda k: (k[0] == "all", k))
    for key, child in zip(keys, boot_ss.spawn(len(keys))):
        vals = np.asarray(keyed[key])
        if len(vals) < 10:
            lo = hi = "nan"
            status = "insufficient"
        else:
            lo, hi = evalstats.bootstrap_ci_bca(vals, n_resamples=args.n_resamples,
                                                rng=np.random.default_rng(child))
            status = "ok"
        ci_rows.append((*key, len(vals), float(vals.mean()), lo, hi, status))
    write_csv(out / "ci_summary.csv", ["env", "beta", "n_envs", "n_seeds", "mean_standardized",
                                       "ci_low", "ci_high", "status"], ci_rows)
    if args.plot:
        from . import plotting
        plotting.rank_grid(betas, groups, rank_grid, out / "ranks.png", title="empirical rank")
        plotting.rank_grid(pred.betas, pred.n_envs, pred.ranks, out / "e_matrix.png",
                           title="predicted rank")
    print(f"analysis of {len(records)} record(s) -> {out}")
    return 0


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    try:
        policy, meta = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    env = check_env(args.env or meta.get("env"))
    spec = make_env(env).spec
    if (spec.obs_dim, spec.action_dim) != (policy.obs_dim, policy.action_dim):
        raise UsageError(f"checkpoint shapes do not match environment {env!r}")
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    obs_norm = None
    if "obs_normalizer" in meta:
        obs_norm = ObservationNormalizer.from_state(meta["obs_normalizer"])
    traj = [] if args.dump else None
    returns = evalstats.evaluate_policy(policy, env, args.episodes, mode=args.mode, seed=args.seed,
                                        obs_transform=obs_norm, trajectory=traj)
    if args.dump:
        dump_trajectory(args.dump, traj)
    if args.out:
        write_csv(args.out, ["episode_index", "return"], enumerate(returns))
    print(f"mean return {returns.mean():.4f} over {args.episodes} episode(s)")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="colored-ppo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="single training run")
    _add_ppo_flags(p)
    p.add_argument("--out", help="run directory (default under the output root)")
    p.add_argument("--plot", action="store_true", help="also render PNG figures")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="grid of training runs, resumable")
    _add_ppo_flags(p, with_grid=True)
    p.add_argument("--envs", help="comma-separated environment names")
    p.add_argument("--betas", help="comma-separated noise colors")
    p.add_argument("--n-envs-list", help="comma-separated environment counts")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--update-size", type=int,
                   help="fix n_envs * n_steps; n_steps is derived per cell")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="sweep directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("noise", help="noise diagnostics")
    nsub = p.add_subparsers(dest="noise_command", required=True)
    q = nsub.add_parser("psd", help="average periodogram and fitted slope")
    q.add_argument("--beta", type=float, default=1.0)
    q.add_argument("--n", type=int, default=512)
    q.add_argument("--reps", type=int, default=4096)
    q.add_argument("--f-min", type=float, default=None)
    q.add_argument("--f-max", type=float, default=0.25)
    q.set_defaults(func=cmd_noise_psd)
    q = nsub.add_parser("walk", help="2-D random walks driven by noise")
    q.add_argument("--beta", type=float, action="append", help="repeat for several colors")
    q.add_argument("--len", type=int, default=1000)
    q.set_defaults(func=cmd_noise_walk)
    q = nsub.add_parser("bias", help="spread of sequence means per color")
    q.add_argument("--betas", default="0,0.5,1")
    q.add_argument("--reps", type=int, default=10000)
    q.add_argument("--len", type=int, default=1000)
    q.add_argument("--n-pooled", type=int, default=1)
    q.set_defaults(func=cmd_noise_bias)
    for q in nsub.choices.values():
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--out", help="output CSV path")
        q.add_argument("--plot", action="store_true")

    p = sub.add_parser("analyze", help="tables from a performance CSV")
    p.add_argument("table", help="performance CSV written by sweep")
    p.add_argument("--out", help="output directory (default: <table dir>/analysis)")
    p.add_argument("--analysis-seed", type=int, default=0)
    p.add_argument("--fixed-betas", default="0.5,0,1")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--table-n-envs", type=int, default=None,
                   help="environment count used for table1 (default 4 if present, else smallest)")
    p.add_argument("--n-resamples", type=int, default=10000)
    p.add_argument("--bias-length", type=int, default=1000,
                   help="noise sequence length for the bias table (episode length)")
    p.add_argument("--bias-reps", type=int, default=2000)
    p.add_argument("--sigma-star", type=float, default=None,
                   help="target bias std; estimated from the empirical best cells if omitted")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--env", help="override the environment stored in the checkpoint")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--mode", choices=["deterministic_mean", "stochastic"], default="deterministic_mean")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump", help="write a trajectory CSV")
    p.add_argument("--out", help="write per-episode returns CSV")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingAborted, evalstats.MissingDataError, RuntimeError, OSError, ValueError) as exc:
        print(f"{parser.prog}: runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
