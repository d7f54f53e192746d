"""Acceptance suite: one test per criterion, printing a pass/fail line each.

Criteria 1-7 are exact property gates. Criteria 8 and 9 are scaled
statistical checks on full training runs; 9 is soft (it xfails rather
than failing the gate) but must always leave its comparison artifacts on
disk for inspection. Long-run outputs land in ./acceptance-runs (or
$UAVX_ACCEPTANCE_OUT); set UAVX_ACCEPTANCE_REUSE=1 to reuse finished runs
while iterating.
"""

import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from uavx.cli import main as cli_main
from uavx.explore import ConvergenceParams, GuidanceConfig, VisitedSet, convergence_action, guidance_action
from uavx.gmm import (
    VARIANCE_FLOOR,
    GaussianMixture,
    fit,
    log_density,
    penalized_log_likelihood,
)
from uavx.memory import ReplayMemory, Transition
from uavx.perception import RewardParams, reward
from uavx.qpolicy import (
    OptimizerConfig,
    PolicyPair,
    build_dueling_network,
    maybe_sync,
    q_values_batch,
    td_target,
    train_batch,
)
from uavx.tensor_nn import forward, init_network, mse_loss, backward
from uavx.trainer import read_blocks_csv
from uavx.worldsim import BBox
from tests.test_explore import domain_predicting, tight_mixture_at, obs
from tests.test_qpolicy import constant_pair
from tests.test_tensor_nn import finite_difference_grads, relative_error

ACCEPT_OUT = Path(os.environ.get("UAVX_ACCEPTANCE_OUT", "acceptance-runs"))
REUSE = os.environ.get("UAVX_ACCEPTANCE_REUSE", "") not in ("", "0")


def report(number: int, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, f"criterion {number}: {detail}"


# ---------------------------------------------------------------------------
# 1. gradient fidelity


def test_criterion_1_gradient_fidelity():
    matrix = [
        ([3, 2], None),
        ([5, 4], ["identity"]),
        ([4, 6, 2], None),
        ([4, 6, 5, 3], None),
        ([2, 8, 8, 1], ["relu", "relu", "identity"]),
        ([6, 3, 6], ["identity", "identity"]),
    ]
    started = time.time()
    worst = 0.0
    rng = np.random.default_rng(0)
    for seed, (dims, acts) in enumerate(matrix):
        net = init_network(dims, activations=acts, seed=seed)
        x = rng.normal(size=(4, dims[0])) + 0.05
        target = rng.normal(size=(4, dims[-1]))

        def loss_fn(pred):
            return mse_loss(pred, target)[0]

        pred = forward(net, x)
        _, dpred = mse_loss(pred, target)
        analytic = [a for pair in backward(net, x, dpred) for a in pair]
        numeric = finite_difference_grads(net, x, loss_fn)
        for a, n in zip(analytic, numeric):
            worst = max(worst, relative_error(a, n))
    elapsed = time.time() - started
    report(
        1,
        worst < 1e-6 and elapsed < 60.0,
        f"gradient fidelity (max rel err {worst:.2e}, {elapsed:.1f}s over {len(matrix)} configs)",
    )


# ---------------------------------------------------------------------------
# 2. reward exactness


def test_criterion_2_reward_exactness():
    rng = np.random.default_rng(2024)
    params_pool = [RewardParams(dt=d, lam=l, rho=r)
                   for d, l, r in rng.uniform(0.05, 2.0, size=(20, 3))]
    collision_ok = all(
        reward(rng.uniform(0, 2), rng.uniform(0, math.pi), None, (32, 32), True, p) == -10.0
        for p in params_pool
    )
    worst = 0.0
    for _ in range(1000):
        p = params_pool[int(rng.integers(len(params_pool)))]
        v = float(rng.choice([0.6, 1.2]))
        psi = float(rng.choice([0.0, math.pi / 12, math.pi / 2]))
        if rng.random() < 0.2:
            box = None
        else:
            x0, y0 = rng.uniform(0, 28, size=2)
            box = BBox(x0, y0, x0 + rng.uniform(0.5, 32 - x0), y0 + rng.uniform(0.5, 32 - y0))
        got = reward(v, psi, box, (32, 32), False, p)
        if box is None:
            bd = bp = 0.0
        else:
            bd = abs((box.x_min + box.x_max) / 2 - 16.0) / 16.0
            bp = min(1.0, (box.y_max - box.y_min) / 32.0)
        expect = v * math.cos(psi) * p.dt + p.lam * bd - p.rho * bp
        worst = max(worst, abs(got - expect))
    report(
        2,
        collision_ok and worst < 1e-12,
        f"reward exactness (collision -10 exact, max formula error {worst:.2e} over 1000 draws)",
    )


# ---------------------------------------------------------------------------
# 3. GMM correctness


def test_criterion_3_gmm_correctness():
    rng = np.random.default_rng(33)
    monotone = True
    for fixture in range(20):
        n = int(rng.integers(20, 50))
        d = int(rng.integers(2, 6))
        m = int(rng.integers(1, 4))
        pts = rng.normal(scale=2.0, size=(n, d))
        pseudo = float(rng.choice([0.0, 1.0]))
        prev = None
        for iters in range(7):
            g = fit(pts, m=m, iterations=iters, pseudocount=pseudo, seed=fixture)
            ll = penalized_log_likelihood(g, pts, pseudo)
            if prev is not None and ll < prev - 1e-9:
                monotone = False
            prev = ll

    pts = rng.normal(size=(30, 4)) * [1.0, 0.5, 2.0, 1.5]
    g1 = fit(pts, m=1, iterations=5, seed=0)
    closed_form = (
        np.allclose(g1.means[0], pts.mean(axis=0), atol=1e-12)
        and np.allclose(g1.covariances[0], np.maximum(pts.var(axis=0), VARIANCE_FLOOR), atol=1e-12)
        and g1.weights.tolist() == [1.0]
    )

    g2 = GaussianMixture(
        weights=np.array([0.4, 0.6]),
        means=rng.normal(size=(2, 3)),
        covariances=rng.uniform(0.3, 1.5, size=(2, 3)),
    )
    density_err = 0.0
    for x in rng.normal(scale=1.5, size=(40, 3)):
        direct = 0.0
        for k in range(2):
            quad = np.sum((x - g2.means[k]) ** 2 / g2.covariances[k])
            norm = (2 * math.pi) ** (-1.5) / math.sqrt(np.prod(g2.covariances[k]))
            direct += g2.weights[k] * norm * math.exp(-0.5 * quad)
        density_err = max(density_err, abs(log_density(g2, x) - math.log(direct)))

    g3 = GaussianMixture(np.array([1.0]), np.zeros((1, 16)), np.ones((1, 16)))
    at_mean = abs(log_density(g3, np.zeros(16)) - (-8.0 * math.log(2 * math.pi))) < 1e-12

    report(
        3,
        monotone and closed_form and density_err < 1e-12 and at_mean,
        f"GMM correctness (monotone={monotone}, closed-form={closed_form}, "
        f"density err {density_err:.2e}, standard-normal-at-mean={at_mean})",
    )


# ---------------------------------------------------------------------------
# 4. replay distributions


def test_criterion_4_replay_distributions():
    mem = ReplayMemory(capacity=3)
    for i in range(3):
        state = np.full((2, 2), float(i))
        mem.push(Transition(state, 0, float(i), state, False))
    mem.update_priorities([0, 1, 2], [9.0, 5.0, 1.0])
    rng = np.random.default_rng(41)
    counts = np.zeros(3)
    draws = 100_000
    for _ in range(draws):
        batch, _ = mem.sample_rank_prioritized(1, 1.0, rng)
        counts[int(batch[0].reward)] += 1
    rank_err = np.max(np.abs(counts / draws - np.array([6 / 11, 3 / 11, 2 / 11])))

    mem0 = ReplayMemory(capacity=20)
    for i in range(20):
        state = np.full((2, 2), float(i))
        mem0.push(Transition(state, 0, float(i), state, False))
    mem0.update_priorities(np.arange(20), np.linspace(5, 1, 20))
    counts0 = np.zeros(20)
    for _ in range(draws):
        batch, _ = mem0.sample_rank_prioritized(1, 0.0, rng)
        counts0[int(batch[0].reward)] += 1
    p_uniform = stats.chisquare(counts0).pvalue

    big = ReplayMemory()  # default capacity
    for i in range(5001):
        state = np.zeros((1, 1))
        big.push(Transition(state, 0, float(i), state, False))
    rewards = {t.reward for t in big.transitions()}
    fifo_ok = len(big) == 5000 and 0.0 not in rewards and 1.0 in rewards

    report(
        4,
        rank_err < 0.01 and p_uniform > 0.01 and fifo_ok,
        f"replay distributions (rank err {rank_err:.4f}, alpha=0 chi2 p={p_uniform:.3f}, "
        f"capacity-5000 FIFO={fifo_ok})",
    )


# ---------------------------------------------------------------------------
# 5. selection contracts


def test_criterion_5_selection_contracts():
    # guidance: every action in turn made the low-density prediction
    center = np.full(16, 0.5)
    mixture = tight_mixture_at(center)
    guidance_ok = True
    for novel in range(10):
        domain = domain_predicting(center, far_actions=[novel])
        got = guidance_action(
            constant_pair(np.zeros(10)), obs(0.5), domain, ReplayMemory(4),
            VisitedSet(), GuidanceConfig(), np.random.default_rng(novel), mixture=mixture,
        )
        guidance_ok &= got == novel

    # convergence: exhaustive over all converged/unconverged action subsets
    from tests.test_explore import stub_pair_with_errors

    convergence_ok = True
    params = ConvergenceParams(tau=100, zeta=1.0)
    for mask in range(1, 2**10):
        errors = np.array([4.0 if mask & (1 << a) else 0.0 for a in range(10)])
        pair = stub_pair_with_errors(errors)
        action = convergence_action(pair, np.zeros(4), params, 0, np.random.default_rng(mask))
        convergence_ok &= bool(errors[action] >= params.zeta)
    report(
        5,
        guidance_ok and convergence_ok,
        f"selection contracts (guidance argmin over 10 positions={guidance_ok}, "
        f"convergence over 1023 subsets={convergence_ok})",
    )


# ---------------------------------------------------------------------------
# 6. architecture identities


def test_criterion_6_architecture_identities():
    worst_mean = 0.0
    for seed in range(3):
        net = build_dueling_network(input_dim=16, hidden=(10, 6), seed=seed)
        states = np.random.default_rng(seed).uniform(0, 1, size=(30, 16))
        q = q_values_batch(net, list(states))
        feats = forward(net.trunk, states)
        v = forward(net.value_head, feats)
        worst_mean = max(worst_mean, float(np.max(np.abs((q - v).mean(axis=1)))))

    pair = constant_pair(np.arange(10.0))
    terminal_ok = all(
        td_target(Transition(np.zeros(4), 0, r, np.zeros(4), True), pair) == r
        for r in (-10.0, 0.0, 0.37, 1e-9)
    )

    live = PolicyPair(
        build_dueling_network(16, hidden=(8,), seed=5),
        sync_interval=10,
        opt_config=OptimizerConfig(algo="sgd", lr=0.05),
    )
    rng = np.random.default_rng(9)
    for _ in range(5):
        batch = [
            Transition(rng.uniform(0, 1, 16), int(rng.integers(10)), float(rng.normal()),
                       rng.uniform(0, 1, 16), True)
        ]
        train_batch(live, batch)
    maybe_sync(live, 20)
    states = rng.uniform(0, 1, size=(100, 16))
    gap = float(
        np.max(
            np.abs(
                q_values_batch(live.online, list(states)) - q_values_batch(live.target, list(states))
            )
        )
    )
    report(
        6,
        worst_mean < 1e-12 and terminal_ok and gap == 0.0,
        f"architecture identities (aggregation mean {worst_mean:.2e}, terminal exact={terminal_ok}, "
        f"post-sync gap {gap})",
    )


# ---------------------------------------------------------------------------
# 7. end-to-end determinism


def test_criterion_7_determinism(tmp_path):
    started = time.time()
    digests = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        code = cli_main(
            ["train", "--config", "simple", "--seed", "0", "--episodes", "50",
             "--out", str(out), "--quiet"]
        )
        assert code == 0
        digests.append((out / "episodes.csv").read_bytes())
    elapsed = time.time() - started
    report(
        7,
        digests[0] == digests[1] and elapsed < 300.0,
        f"end-to-end determinism (byte-identical episodes.csv, {elapsed:.0f}s for two 50-episode runs)",
    )


# ---------------------------------------------------------------------------
# 8 and 9: statistical analogs on full runs


def run_training(config: str, strategy: str, seed: int, out_dir: Path) -> float:
    """Train via the CLI in a subprocess; returns wall seconds (0 if reused)."""
    blocks = out_dir / "blocks.csv"
    if REUSE and blocks.is_file() and len(read_blocks_csv(blocks)) == 3:
        return 0.0
    started = time.time()
    env = {**os.environ, "OMP_NUM_THREADS": "1", "OPENBLAS_NUM_THREADS": "1"}
    result = subprocess.run(
        [sys.executable, "-m", "uavx.cli", "train", "--config", config,
         "--strategy", strategy, "--seed", str(seed), "--episodes", "300",
         "--out", str(out_dir), "--quiet"],
        capture_output=True,
        text=True,
        env=env,
    )
    if result.returncode != 0:
        raise RuntimeError(f"training run failed: {result.stderr[-2000:]}")
    return time.time() - started


def run_batch(jobs, max_workers=2):
    """jobs: list of (config, strategy, seed, out_dir); two at a time."""
    from concurrent.futures import ThreadPoolExecutor

    walls = {}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {pool.submit(run_training, *job): job for job in jobs}
        for future, job in futures.items():
            walls[job[3]] = future.result()
    return walls


def test_criterion_8_learning_smoke():
    ACCEPT_OUT.mkdir(parents=True, exist_ok=True)
    jobs = [("corridor", "epsilon_greedy", seed, ACCEPT_OUT / f"corridor-eps-s{seed}")
            for seed in (0, 1, 2)]
    walls = run_batch(jobs)
    improved = 0
    details = []
    runtime_ok = True
    for _, _, seed, out_dir in jobs:
        blocks = read_blocks_csv(out_dir / "blocks.csv")
        first, final = blocks[0].mean_steps, blocks[-1].mean_steps
        ok = final >= 1.5 * first
        improved += ok
        details.append(f"seed {seed}: {first:.1f} -> {final:.1f} steps ({'ok' if ok else 'miss'})")
        runtime_ok &= walls[out_dir] <= 1800.0
    report(
        8,
        improved >= 2 and runtime_ok,
        f"learning smoke test ({improved}/3 seeds grew >=50%; {'; '.join(details)})",
    )


def test_criterion_9_strategy_comparison():
    ACCEPT_OUT.mkdir(parents=True, exist_ok=True)
    jobs = []
    for strategy, short in (("epsilon_greedy", "eps"), ("guidance", "guid")):
        for seed in (0, 1, 2):
            jobs.append(("complex", strategy, seed, ACCEPT_OUT / f"complex-{short}-s{seed}"))
    run_batch(jobs)

    # always produce the comparison artifacts, pass or fail
    compare_dir = ACCEPT_OUT / "complex-comparison"
    code = cli_main(
        ["compare", *[str(job[3]) for job in jobs], "--out", str(compare_dir), "--svg"]
    )
    assert code == 0
    assert (compare_dir / "comparison.csv").is_file()
    assert (compare_dir / "mean_reward.svg").is_file()

    wins = 0
    details = []
    for seed in (0, 1, 2):
        eps_blocks = read_blocks_csv(ACCEPT_OUT / f"complex-eps-s{seed}" / "blocks.csv")
        guid_blocks = read_blocks_csv(ACCEPT_OUT / f"complex-guid-s{seed}" / "blocks.csv")
        eps_final = eps_blocks[-1].mean_reward
        guid_final = guid_blocks[-1].mean_reward
        ok = guid_final >= 1.2 * eps_final
        wins += ok
        details.append(
            f"seed {seed}: guidance {guid_final:.2f} vs eps-greedy {eps_final:.2f} ({'ok' if ok else 'miss'})"
        )
    ok = wins >= 2
    print(f"[{'PASS' if ok else 'FAIL'}] criterion 9: strategy comparison "
          f"({wins}/3 seeds at >=1.2x; {'; '.join(details)}; artifacts in {compare_dir})")
    if not ok:
        pytest.xfail(
            "soft criterion: guidance did not reach 1.2x epsilon-greedy final-block reward "
            f"in 2 of 3 seeds ({'; '.join(details)}); comparison artifacts left in {compare_dir}"
        )
