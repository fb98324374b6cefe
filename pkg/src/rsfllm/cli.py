"""Scenario orchestration: config parsing, experiment runs, metric emission.

``run`` executes (scenario, seed) jobs and writes one CSV row per
(round, client) plus a JSON summary; ``bench`` measures optimizer wall-time
scaling over the resource grid; ``verify`` runs a compact property battery.

CSV schema (exact order, 6 significant digits, ``-inf`` literal for the
ideal baseline MSE)::

    round,client,scenario,seed,mse_db,sum_rate_nats,accuracy,loss,
    bound,empirical_divergence,r_out_1,r_out_2
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import adversary, bounds, channel, harness, optimizer, phy
from .config import ConfigError, ScenarioConfig, parse_config

CSV_COLUMNS = ("round", "client", "scenario", "seed", "mse_db",
               "sum_rate_nats", "accuracy", "loss", "bound",
               "empirical_divergence", "r_out_1", "r_out_2")

SUMMARY_METRICS = ("mse_db", "sum_rate_nats", "sum_rate_bits", "accuracy",
                   "loss", "bound", "empirical_divergence")


@dataclass
class RunManifest:
    """One orchestration request: scenarios x seeds on a single config."""

    config: ScenarioConfig
    scenarios: list
    seeds: list
    output_dir: str
    emit_formats: tuple = ("csv", "json")
    workers: int = 1
    corruption_mode: str = "analytic"

    def __post_init__(self):
        if not self.scenarios:
            raise ValueError("manifest needs at least one scenario")
        if not self.seeds:
            raise ValueError("manifest needs at least one seed")
        for s in self.scenarios:
            if s not in harness.SCENARIOS:
                raise ValueError(f"unknown scenario {s!r}; "
                                 f"choose from {harness.SCENARIOS}")


def _fmt(value) -> str:
    """6-significant-digit formatting; non-finite values as literals."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    x = float(value)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return f"{x:.6g}"


def _scenario_rows(config: ScenarioConfig, scenario: str, seed: int,
                   corruption_mode: str) -> list:
    cfg = replace(config, seed=seed)
    history = harness.run_scenario(cfg, scenario, seed,
                                   corruption_mode=corruption_mode)
    rows = []
    for m in history:
        for q in range(cfg.Q):
            rows.append((m.round, q, scenario, seed,
                         m.per_client_mse_db[q], m.sum_rate, m.accuracy,
                         m.per_client_loss[q], m.per_client_bound[q],
                         m.per_client_empirical[q],
                         m.per_client_r_out_1[q], m.per_client_r_out_2[q]))
    return rows


def _run_job(args):
    config, scenario, seed, mode = args
    return scenario, seed, _scenario_rows(config, scenario, seed, mode)


def _json_safe(x: float):
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return x


def _summarize(rows: list) -> dict:
    by_scenario: dict = {}
    for row in rows:
        by_scenario.setdefault(row[2], []).append(row)
    summary = {}
    for scenario, group in by_scenario.items():
        entry = {}
        values = {
            "mse_db": [r[4] for r in group],
            "sum_rate_nats": [r[5] for r in group],
            "sum_rate_bits": [r[5] / math.log(2) for r in group],
            "accuracy": [r[6] for r in group],
            "loss": [r[7] for r in group],
            "bound": [r[8] for r in group],
            "empirical_divergence": [r[9] for r in group],
        }
        for metric in SUMMARY_METRICS:
            arr = np.asarray(values[metric], dtype=float)
            entry[metric] = {"mean": _json_safe(float(np.mean(arr))),
                             "std": _json_safe(float(np.std(arr)))}
        summary[scenario] = entry
    return summary


def run(manifest: RunManifest) -> int:
    """Execute the manifest; returns a process exit status."""
    os.makedirs(manifest.output_dir, exist_ok=True)
    jobs = [(manifest.config, scenario, seed, manifest.corruption_mode)
            for scenario in manifest.scenarios for seed in manifest.seeds]

    results = {}
    try:
        if manifest.workers > 1:
            with ProcessPoolExecutor(max_workers=manifest.workers) as pool:
                for scenario, seed, rows in pool.map(_run_job, jobs):
                    results[(scenario, seed)] = rows
        else:
            for job in jobs:
                scenario, seed, rows = _run_job(job)
                results[(scenario, seed)] = rows
    except Exception as exc:  # flush whatever completed, then fail
        _emit(manifest, results)
        print(f"error: {exc}", file=sys.stderr)
        return 1

    _emit(manifest, results)
    return 0


def _emit(manifest: RunManifest, results: dict) -> None:
    ordered_rows = []
    for scenario in manifest.scenarios:
        for seed in manifest.seeds:
            ordered_rows.extend(results.get((scenario, seed), []))

    if "csv" in manifest.emit_formats:
        path = os.path.join(manifest.output_dir, "metrics.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in ordered_rows:
                writer.writerow([_fmt(x) for x in row])
    if "json" in manifest.emit_formats:
        path = os.path.join(manifest.output_dir, "summary.json")
        with open(path, "w") as fh:
            json.dump(_summarize(ordered_rows), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# bench

def bench(config: ScenarioConfig, grid_sizes=(64, 128, 256, 512),
          k_symbols: int = 4, output_dir: str | None = None) -> list:
    """Measure optimizer wall-time across resource-grid sizes.

    Antenna counts stay fixed at the config's values; the per-resource-
    element cost must stay within a factor 2 of flat (linear total scaling).
    Returns the timing rows and raises on a scaling violation.
    """
    rows = []
    for nk in grid_sizes:
        cfg = replace(config, N=nk // k_symbols, K=k_symbols, B_q=None,
                      L_H=min(config.L_H, 16), L_G=min(config.L_G, 16))
        rng = np.random.default_rng(cfg.seed)
        chans = channel.realize_channels(
            cfg, channel.sample_doas(cfg, rng), rng)
        surrogate = optimizer.surrogate_covariance(
            np.array([cfg.theta_J]), cfg.eta, cfg.sigma2, cfg.N_R)
        best = math.inf
        iterations = 0
        for _ in range(3):
            start = time.perf_counter()
            _, report = optimizer.optimize(chans, cfg, surrogate)
            best = min(best, time.perf_counter() - start)
            iterations = report.iterations
        rows.append((nk, cfg.N, cfg.K, best, iterations))

    per_re = [t / nk for nk, _, _, t, _ in rows]
    spread = max(per_re) / min(per_re)
    print("nk,n,k,seconds,iterations")
    for row in rows:
        print(",".join(_fmt(x) for x in row))
    print(f"# per-RE cost spread {spread:.3f} (must be <= 2)")

    if output_dir is not None:
        os.makedirs(output_dir, exist_ok=True)
        with open(os.path.join(output_dir, "bench.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("nk", "n", "k", "seconds", "iterations"))
            for row in rows:
                writer.writerow([_fmt(x) for x in row])
    if spread > 2.0:
        raise RuntimeError(
            f"optimizer wall-time deviates from linear scaling: {spread:.2f}x")
    return rows


# ---------------------------------------------------------------------------
# verify

def _verify_config(config: ScenarioConfig) -> ScenarioConfig:
    """Shrink a config to desk scale for the quick property battery."""
    return replace(config, N=8, K=2, B_q=None, N_T=4, N_R=6, N_J=8,
                   L_H=6, L_G=6)


def verify(config: ScenarioConfig) -> int:
    """Run the invariant battery; prints one PASS/FAIL line per property."""
    cfg = _verify_config(config)
    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    rng = np.random.default_rng(cfg.seed)
    chans = channel.realize_channels(cfg, channel.sample_doas(cfg, rng), rng)

    # MMSE filter turns the symbol error into exp(-rate) exactly
    ok = True
    for _ in range(20):
        h = rng.standard_normal((cfg.N_R, cfg.N_T)) \
            + 1j * rng.standard_normal((cfg.N_R, cfg.N_T))
        x = rng.standard_normal((cfg.N_R, cfg.N_R)) \
            + 1j * rng.standard_normal((cfg.N_R, cfg.N_R))
        x = x @ x.conj().T + cfg.sigma2 * np.eye(cfg.N_R)
        w = rng.standard_normal(cfg.N_T) + 1j * rng.standard_normal(cfg.N_T)
        w /= np.linalg.norm(w)
        p = float(rng.uniform(0.1, 2.0))
        b = math.sqrt(p) * w
        v = phy.mmse_filter(h, b, x)
        mu = phy.symbol_error(h, b, v, x)
        rate = math.log1p(p * phy.sinr(w, h, x))
        ok &= abs(mu - math.exp(-rate)) <= 1e-9 * mu
    check("mmse symbol error equals exp(-rate)", ok)

    # scheduled MSE respects the Jensen floor
    surrogate = optimizer.surrogate_covariance(np.array([]), 0.0, cfg.sigma2,
                                               cfg.N_R)
    alloc, report = optimizer.optimize(chans, cfg, surrogate)
    cov = np.broadcast_to(surrogate.C_tilde, (cfg.N, cfg.K, cfg.N_R, cfg.N_R))
    link = phy.link_report(alloc, chans, cov)
    ok = bool(np.all(link.mse_per_user
                     >= link.r_q * np.exp(-link.rate_per_user / link.r_q)
                     - 1e-9))
    check("per-user MSE >= Jensen outage floor", ok)

    traj = np.array(report.rate_trajectory)
    ok = bool(np.all(np.diff(traj) >= -1e-6 * np.abs(traj[:-1])))
    check("optimizer trajectory nondecreasing", ok)

    try:
        alloc.validate(cfg)
        check("allocation satisfies scheduling constraints", True)
    except phy.AllocationError:
        check("allocation satisfies scheduling constraints", False)

    ok = True
    for _ in range(20):
        lam = rng.uniform(0.05, 5.0, size=rng.integers(1, 9))
        total = float(rng.uniform(0.1, 3.0))
        powers = optimizer.waterfill(lam, total)
        ok &= abs(powers.sum() - total) <= 1e-9 * total
        active = powers > 0
        if np.any(active):
            level = powers[active] + 1.0 / lam[active]
            ok &= float(level.max() - level.min()) <= 1e-9
            if np.any(~active):
                ok &= bool(np.all(1.0 / lam[~active] >= level.max() - 1e-9))
    check("water-filling satisfies KKT conditions", ok)

    strategy, _ = adversary.worst_case(chans, alloc, cfg.P_J)
    try:
        strategy.validate(cfg.P_J)
        adversary.barrage(cfg).validate(cfg.P_J)
        check("jamming covariances Hermitian/PSD within budget", True)
    except ValueError:
        check("jamming covariances Hermitian/PSD within budget", False)

    rate_none = phy.sum_rate(alloc, chans, phy.composite_noise_grid(
        chans, adversary.no_jamming(cfg), cfg.sigma2))[0]
    rate_barrage = phy.sum_rate(alloc, chans, phy.composite_noise_grid(
        chans, adversary.barrage(cfg), cfg.sigma2))[0]
    rate_worst = phy.sum_rate(alloc, chans, phy.composite_noise_grid(
        chans, strategy, cfg.sigma2))[0]
    check("jammer dominance rate(worst) <= rate(barrage) <= rate(none)",
          rate_worst <= rate_barrage + 1e-9 and rate_barrage <= rate_none + 1e-9)

    ok = True
    for _ in range(100):
        gamma = float(rng.uniform(0, 3))
        delta = float(rng.uniform(0.1, 3))
        eps = float(rng.uniform(0.01, 3))
        profile = bounds.SmoothnessProfile.from_coefficients(
            np.ones(4), np.ones(4))
        rep = bounds.outage_rates(profile, 4, gamma, delta, eps)
        ok &= abs(delta * rep.y_root ** 2 + gamma * rep.y_root - eps) <= 1e-12
    check("outage quadratic root residual <= 1e-12", ok)

    rng_a = np.random.default_rng(cfg.seed)
    rng_b = np.random.default_rng(cfg.seed)
    same = np.array_equal(
        channel.realize_channels(cfg, channel.sample_doas(cfg, rng_a), rng_a).H,
        channel.realize_channels(cfg, channel.sample_doas(cfg, rng_b), rng_b).H)
    check("channel realizations reproducible under fixed seed", same)

    print(f"{'OK' if failures == 0 else 'FAILED'}: "
          f"{failures} failing properties")
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# entry point

def _load_config(path: str | None) -> ScenarioConfig:
    if path is None:
        config = ScenarioConfig()
    else:
        config = parse_config(path)
    env_seed = os.environ.get("RSFLLM_SEED")
    if env_seed is not None:
        config = replace(config, seed=int(env_seed))
    return config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rsfllm",
        description="Jamming-resilient split-learning uplink simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute scenarios and emit metrics")
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--scenario", default="baseline,gaussian,"
                       "no_protection,protection",
                       help="comma-separated scenario list")
    p_run.add_argument("--seeds", default=None,
                       help="comma-separated seed list")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--mode", default="analytic",
                       choices=("analytic", "per_re", "simulated"))
    p_run.add_argument("--format", default="csv,json")

    p_bench = sub.add_parser("bench", help="optimizer scaling benchmark")
    p_bench.add_argument("--config", default=None)
    p_bench.add_argument("--out", default=None)

    p_verify = sub.add_parser("verify", help="run the property battery")
    p_verify.add_argument("--config", default=None)

    args = parser.parse_args(argv)

    try:
        config = _load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "run":
        seeds = ([int(s) for s in args.seeds.split(",")]
                 if args.seeds else [config.seed])
        manifest = RunManifest(
            config=config,
            scenarios=[s.strip() for s in args.scenario.split(",") if s.strip()],
            seeds=seeds,
            output_dir=args.out,
            emit_formats=tuple(args.format.split(",")),
            workers=args.workers,
            corruption_mode=args.mode)
        return run(manifest)
    if args.command == "bench":
        bench(config, output_dir=args.out)
        return 0
    if args.command == "verify":
        return verify(config)
    return 2


if __name__ == "__main__":
    sys.exit(main())
