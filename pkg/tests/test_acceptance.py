"""Exit criteria 1-9.

Each test records one PASS/FAIL line (printed in the terminal summary) and
then asserts.  The long protocols (5-8) cache per-run results under
``.acceptance_cache/`` keyed by the package source and the protocol
parameters, so a rerun after an interruption resumes where it stopped.
"""
import glob
import hashlib
import json
import os
import time

import numpy as np
import pytest
from scipy.stats import binomtest

from conftest import record
from resdob.cli import main as cli_main
from resdob.config import RunConfig
from resdob.env import preset
from resdob.harness import (
    dob_constant_error,
    evaluate,
    gradcheck,
    qp_check,
    random_policy_rollout,
    residual_probe,
    train,
)

pytestmark = pytest.mark.acceptance

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CACHE = os.environ.get("RESDOB_ACCEPTANCE_CACHE", os.path.join(ROOT, ".acceptance_cache"))

FILTERED = ("cbf", "dob_cbf", "res_cbf", "res_dob_cbf")
ALL_MODES = ("none",) + FILTERED

# pinned protocol constants
GRAD_TOL, GRAD_SECONDS = 1e-5, 10.0
QP_INSTANCES, QP_SECONDS, PROJ_TOL = 100, 30.0, 1e-10
DOB_TOL, DOB_T = 0.05, (0.04, 0.02, 0.01)
RES_UPDATES, RES_RATIO = 10_000, 0.20
SAFE_STEPS, SAFE_SEEDS, DEEP = 10_000, 10, -1e-3
LADDER_SHARE, LADDER_MIN_SEEDS = 0.01, 8
CURVE_SEEDS, CURVE_ITERS, FINAL_WINDOW, SIGN_P, COST_BAND, MODE_SECONDS = 5, 150, 10, 0.1, 0.5, 600.0
ARENA_ITERS, ARENA_TRIPS, ARENA_EPISODES, DOMINANCE, DOMINANCE_FLOOR, COMMUTE_TOL = 150, 20, 50, 5.0, 0.05, 0.05


def _source_hash():
    h = hashlib.sha256()
    for path in sorted(glob.glob(os.path.join(ROOT, "src", "resdob", "*.py"))
                       + glob.glob(os.path.join(ROOT, "src", "resdob", "*.pyx"))):
        with open(path, "rb") as fh:
            h.update(os.path.basename(path).encode() + fh.read())
    return h.hexdigest()[:16]


SOURCE = _source_hash()


def cached(name, params, compute):
    """``compute()`` once per (source, name, params); the JSON result lives in CACHE."""
    key = hashlib.sha256(json.dumps([SOURCE, name, params], sort_keys=True).encode()).hexdigest()[:20]
    path = os.path.join(CACHE, f"{name}-{key}.json")
    if os.path.exists(path):
        with open(path) as fh:
            return json.load(fh)
    result = compute()
    os.makedirs(CACHE, exist_ok=True)
    with open(path + ".tmp", "w") as fh:
        json.dump(result, fh)
    os.replace(path + ".tmp", path)
    return result


# 1 -------------------------------------------------------------------------

def test_criterion_1_gradcheck():
    start = time.perf_counter()
    result = gradcheck(n_nets=50, seed=0)
    wall = time.perf_counter() - start
    ok = result["worst_relative_error"] <= GRAD_TOL and wall < GRAD_SECONDS
    record(1, ok, f"worst rel err {result['worst_relative_error']:.2e} (<= {GRAD_TOL:g}) over 50 nets, "
                  f"{wall:.1f} s (< {GRAD_SECONDS:g} s)")
    assert ok


# 2 -------------------------------------------------------------------------

def test_criterion_2_qp_oracle():
    start = time.perf_counter()
    result = qp_check(n=QP_INSTANCES, seed=0, grid=401)
    wall = time.perf_counter() - start
    ok = result["failures"] == 0 and result["projection_error"] <= PROJ_TOL and wall < QP_SECONDS
    record(2, ok, f"{result['failures']} failures / {QP_INSTANCES}, worst gap {result['worst_objective_gap']:.1e}, "
                  f"worst residual {result['worst_residual']:.1e} (>= -1e-8), projection err "
                  f"{result['projection_error']:.1e} (<= {PROJ_TOL:g}), {wall:.1f} s (< {QP_SECONDS:g} s)")
    assert ok


# 3 -------------------------------------------------------------------------

def test_criterion_3_dob_convergence():
    errors = {T: dob_constant_error(T, a=10.0) for T in DOB_T}
    converged = errors[0.02] <= DOB_TOL
    monotone = errors[0.04] > errors[0.02] > errors[0.01]
    ok = converged and monotone
    record(3, ok, f"error after 1 s at T=0.02: {errors[0.02]:.2%} (<= {DOB_TOL:.0%}: {converged}); "
                  f"T=0.04/0.02/0.01: {errors[0.04]:.2%} / {errors[0.02]:.2%} / {errors[0.01]:.2%} "
                  f"strictly decreasing: {monotone}")
    assert ok


# 4 -------------------------------------------------------------------------

def test_criterion_4_residual_learning():
    result = residual_probe("point", factor=1.5, updates=RES_UPDATES, seed=0)
    ok = result["ratio"] <= RES_RATIO
    record(4, ok, f"held-out one-step error nominal {result['nominal_error']:.3e}, nominal+residual "
                  f"{result['residual_error']:.3e}, ratio {result['ratio']:.4f} (<= {RES_RATIO:g})")
    assert ok


# 5 and 6 ---------------------------------------------------------------------

def _rollout(variant, seed):
    params = {"task": "goal2", "variant": variant, "seed": seed, "steps": SAFE_STEPS}
    return cached("rollout", params, lambda: random_policy_rollout(preset("goal2"), variant, seed, steps=SAFE_STEPS))


def test_criterion_5_oracle_forward_invariance():
    rows = [_rollout("oracle", s) for s in range(SAFE_SEEDS)]
    deep = [r["deep_violations"] for r in rows]
    ok = sum(deep) == 0
    worst = min(r["min_h"] for r in rows)
    record(5, ok, f"steps with h_min < {DEEP:g} per seed {deep} (need all 0), worst h_min {worst:.4f}")
    assert ok


def test_criterion_6_robustness_ladder():
    good = 0
    cells = []
    for s in range(SAFE_SEEDS):
        n, d, r = (_rollout(v, s)["violations"] for v in ("nominal", "dob", "res_dob"))
        ordered = n >= d >= r and r <= LADDER_SHARE * SAFE_STEPS
        good += ordered
        cells.append(f"{n}/{d}/{r}{'' if ordered else '*'}")
    ok = good >= LADDER_MIN_SEEDS
    record(6, ok, f"nominal/dob/res_dob violations per seed [{' '.join(cells)}] (* = ordering broken); "
                  f"ordered on {good}/{SAFE_SEEDS} seeds (need >= {LADDER_MIN_SEEDS})")
    assert ok


# 7 -------------------------------------------------------------------------

def _curve_run(mode, seed):
    def compute():
        cfg = RunConfig().with_overrides(run={"seed": seed, "filter_mode": mode, "iterations": CURVE_ITERS,
                                              "out": os.path.join(CACHE, "curves", f"{mode}-{seed}")})
        start = time.perf_counter()
        log, _ = train(cfg)
        wall = time.perf_counter() - start
        tail = log.records[-FINAL_WINDOW:]
        return {"final_reward": float(np.mean([r["mean_episode_reward"] for r in tail])),
                "final_cost": float(np.mean([r["mean_episode_cost"] for r in tail])),
                "wall_time": wall, "target_cost": cfg.rl.target_cost}

    return cached("curve", {"mode": mode, "seed": seed, "iterations": CURVE_ITERS, "window": FINAL_WINDOW},
                  compute)


def test_criterion_7_training_curves():
    runs = {m: [_curve_run(m, s) for s in range(CURVE_SEEDS)] for m in ALL_MODES}
    cost = {m: float(np.mean([r["final_cost"] for r in runs[m]])) for m in ALL_MODES}
    reward = {m: [r["final_reward"] for r in runs[m]] for m in ALL_MODES}
    wall = {m: sum(r["wall_time"] for r in runs[m]) for m in ALL_MODES}
    target = runs["none"][0]["target_cost"]

    a = all(cost["none"] > cost[m] for m in FILTERED)
    p_vals = {}
    for other in ("dob_cbf", "res_cbf"):
        wins = sum(x >= y for x, y in zip(reward["res_dob_cbf"], reward[other]))
        p_vals[other] = (wins, binomtest(wins, CURVE_SEEDS, 0.5, alternative="greater").pvalue)
    b = all(p <= SIGN_P for _, p in p_vals.values())
    lo, hi = target * (1 - COST_BAND), target * (1 + COST_BAND)
    c = all(lo <= cost[m] <= hi for m in FILTERED)
    t = all(w <= MODE_SECONDS for w in wall.values())
    ok = a and b and c and t
    record(7, ok,
           "final cost " + ", ".join(f"{m} {cost[m]:.2f}" for m in ALL_MODES)
           + f"; (a) none highest: {a}; (b) res_dob wins vs dob {p_vals['dob_cbf'][0]}/{CURVE_SEEDS} "
             f"p={p_vals['dob_cbf'][1]:.3f}, vs res {p_vals['res_cbf'][0]}/{CURVE_SEEDS} "
             f"p={p_vals['res_cbf'][1]:.3f} (<= {SIGN_P:g}): {b}; (c) filtered costs in [{lo:g}, {hi:g}]: {c}; "
             f"max wall per mode {max(wall.values()):.0f} s (<= {MODE_SECONDS:g}): {t}")
    assert ok


# 8 -------------------------------------------------------------------------

def _arena_run(mode):
    def compute():
        cfg = RunConfig().with_overrides(run={"seed": 0, "filter_mode": mode, "iterations": ARENA_ITERS,
                                              "out": os.path.join(CACHE, "arena", mode)},
                                         task={"preset": "arena"})
        train(cfg)
        return evaluate(os.path.join(cfg.run.out, "checkpoint.json"), cfg, ARENA_EPISODES, trips=ARENA_TRIPS)

    return cached("arena", {"mode": mode, "iterations": ARENA_ITERS, "trips": ARENA_TRIPS,
                            "episodes": ARENA_EPISODES}, compute)


def test_criterion_8_arena_ordering():
    res = {m: _arena_run(m) for m in ALL_MODES}
    vpt = {m: res[m]["violations_per_trip"] for m in ALL_MODES}
    commute = {m: res[m]["mean_commute_time"] for m in ALL_MODES if res[m]["trips"] > 0}
    dominance = vpt["none"] >= DOMINANCE * max(vpt["res_cbf"], DOMINANCE_FLOOR)
    ordering = vpt["res_dob_cbf"] <= vpt["res_cbf"]
    best = min(commute.values()) if commute else float("nan")
    fast = "res_dob_cbf" in commute and commute["res_dob_cbf"] <= (1 + COMMUTE_TOL) * best
    ok = dominance and ordering and fast
    record(8, ok,
           "violations/trip " + ", ".join(f"{m} {vpt[m]:.2f}" for m in ALL_MODES)
           + "; trips " + ", ".join(f"{m} {res[m]['trips']}" for m in ALL_MODES)
           + "; commute s " + ", ".join(f"{m} {v:.2f}" for m, v in commute.items())
           + f"; none >= {DOMINANCE:g}x res_cbf: {dominance}; res_dob <= res_cbf: {ordering}; "
             f"res_dob commute within {COMMUTE_TOL:.0%} of best: {fast}")
    assert ok


# 9 -------------------------------------------------------------------------

def test_criterion_9_determinism(tmp_path):
    same = []
    for mode in ("none", "res_dob_cbf"):
        outs = []
        for rep in ("a", "b"):
            out = str(tmp_path / f"{mode}-{rep}")
            assert cli_main(["train", "--mode", mode, "--seed", "3", "--iterations", "3", "--out", out]) == 0
            with open(os.path.join(out, "runlog.jsonl"), "rb") as fh:
                outs.append(fh.read())
        same.append(outs[0] == outs[1] and len(outs[0]) > 0)
    ok = all(same)
    record(9, ok, f"repeated train runs byte-identical: none {same[0]}, res_dob_cbf {same[1]}")
    assert ok
