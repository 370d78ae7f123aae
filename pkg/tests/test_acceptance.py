"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are
repeated in the "acceptance criteria" section of the terminal summary.
"""

import itertools
import time

import numpy as np
import pytest

from eet.config import Config
from eet.hashing import (
    CodeProblem,
    CodeState,
    initial_state,
    iterate,
    objective,
    sign,
    update_binary,
    update_codes_relaxed,
    update_projection,
    update_rotation,
)
from eet import io
from eet.linalg import Rng
from eet.losses import HeadBatch, HeadParams, LossWeights, RegionMask, apply_mask, drg_mask, hamming_from_cosine, head_gradients
from eet.pipeline import format_map, run_pipeline
from eet.profile import profile
from eet.pruning import ImportanceMap, PruneSchedule, kept_count, prune
from eet.retrieval import evaluate
from eet.tokens import TokenSequence
from eet.vit import encode
from oracles import finite_difference_grad, naive_map, relative_error, sort_oracle

PIPELINE_SETTINGS = {
    "model.profile": "tiny-32",
    "synth.classes": 10,
    "synth.per_class": 20,
    "synth.queries_per_class": 5,
    "hash.bits": 16,
    "fit.steps": 2000,
    "fit.lr": 0.01,
}


def random_orthogonal(k, rng):
    q, r = np.linalg.qr(rng.normal((k, k)))
    return q * np.sign(np.diag(r))


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    config = Config(dict(PIPELINE_SETTINGS))
    out = tmp_path_factory.mktemp("pipeline_a")
    t0 = time.perf_counter()
    result = run_pipeline(config, out)
    return config, result, time.perf_counter() - t0


def test_criterion_01_token_trace(acceptance, small_cfg, small_weights):
    t0 = time.perf_counter()
    image = Rng(1).uniform((224, 224, 3)) * 2 - 1
    res = encode(image, small_weights, small_cfg, PruneSchedule.default())
    elapsed = time.perf_counter() - t0
    ok = res.stage_patches == [196, 98, 49, 12] and elapsed < 1.0
    detail = f"patch counts {'->'.join(map(str, res.stage_patches))} in {elapsed:.2f}s"
    assert acceptance(1, "token-count trace", ok, detail), detail


def test_criterion_02_flops_and_latency(acceptance, small_cfg):
    t0 = time.perf_counter()
    report = profile(small_cfg, PruneSchedule.default(), runs=100, seed=0)
    elapsed = time.perf_counter() - t0
    flops_ok = 0.65 <= report.flops_ratio <= 0.80
    latency_ok = report.latency_ratio <= 0.75
    ok = flops_ok and latency_ok and elapsed < 120
    detail = (
        f"analytic FLOPs ratio {report.flops_ratio:.4f} (need [0.65, 0.80]: {'ok' if flops_ok else 'out of range'}), "
        f"GFLOPs {report.gflops_full:.3f} -> {report.gflops_pruned:.3f}; "
        f"wall-clock ratio {report.latency_ratio:.4f} (need <= 0.75: {'ok' if latency_ok else 'too slow'}), "
        f"median {1e3 * report.latency_full:.1f} ms -> {1e3 * report.latency_pruned:.1f} ms; {elapsed:.0f}s"
    )
    assert acceptance(2, "FLOPs and latency ratios", ok, detail), detail


def test_criterion_03_hamming_cosine_identity(acceptance):
    t0 = time.perf_counter()
    codes = np.array(list(itertools.product([-1.0, 1.0], repeat=8)))
    mismatches = 0
    pairs = 0
    for a in codes:
        exact = np.sum(a != codes, axis=1)
        for b, d in zip(codes, exact):
            pairs += 1
            if hamming_from_cosine(a, b) != d:
                mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = pairs == 65536 and mismatches == 0 and elapsed < 5
    detail = f"{pairs} pairs, {mismatches} mismatches, {elapsed:.2f}s"
    assert acceptance(3, "Hamming-cosine identity", ok, detail), detail


def test_criterion_04_alternating_optimizer(acceptance):
    t0 = time.perf_counter()
    worst_rise, worst_orth, procrustes_losses = -np.inf, 0.0, 0
    for seed in range(50):
        rng = Rng(1000 + seed)
        k = 8 if seed % 2 == 0 else 16
        c = 2 + rng.integers(19)
        n = c + rng.integers(201 - c)
        labels = rng.integers(c, n)
        labels[:c] = np.arange(c)
        problem = CodeProblem.from_labels(labels, c, k=k)
        state = initial_state(problem, seed, init="class" if seed % 4 < 2 else "normal")
        prev = objective(state, problem)
        last = prev
        for it in range(1, problem.max_iters + 1):
            iterate(state, problem, it)
            for _, _, value in state.step_trace[-4:]:
                worst_rise = max(worst_rise, value - prev)
                prev = value
            worst_orth = max(worst_orth, np.linalg.norm(state.r.T @ state.r - np.eye(k)))
            if abs(last - prev) < problem.tol * (1.0 + prev):
                break
            last = prev
        m = state.b @ state.v.T
        best = np.trace(update_rotation(state).T @ m)
        if any(np.trace(random_orthogonal(k, rng).T @ m) > best + 1e-9 for _ in range(100)):
            procrustes_losses += 1
    elapsed = time.perf_counter() - t0
    ok = worst_rise <= 1e-9 and worst_orth < 1e-8 and procrustes_losses == 0 and elapsed < 120
    detail = (
        f"largest sub-step rise {worst_rise:.2e}, max |R^T R - I|_F {worst_orth:.2e}, "
        f"instances where a random rotation won: {procrustes_losses}/50; {elapsed:.0f}s"
    )
    assert acceptance(4, "alternating optimizer", ok, detail), detail


def test_criterion_05_closed_form_stationarity(acceptance):
    t0 = time.perf_counter()
    decreases = 0
    for seed in range(10):
        rng = Rng(2000 + seed)
        c, k, n = 3 + seed % 4, 8, 30 + 5 * seed
        labels = rng.integers(c, n)
        labels[:c] = np.arange(c)
        problem = CodeProblem.from_labels(labels, c, k=k, alpha=0.5 + 0.25 * seed)
        state = CodeState(
            p=rng.normal((c, k)), v=rng.normal((k, n)), r=random_orthogonal(k, rng), b=sign(rng.normal((k, n)))
        )
        for attr, update in (("p", update_projection), ("v", update_codes_relaxed)):
            setattr(state, attr, update(state, problem))
            base = objective(state, problem)
            for _ in range(20):
                trial = state.copy()
                setattr(trial, attr, getattr(state, attr) + 1e-4 * rng.normal(getattr(state, attr).shape))
                if objective(trial, problem) < base:
                    decreases += 1
    # B update against all 2^6 sign patterns at k=2, n=3
    b_failures = 0
    for seed in range(20):
        rng = Rng(3000 + seed)
        problem = CodeProblem.from_labels([0, 1, 0], 2, k=2)
        state = CodeState(p=rng.normal((2, 2)), v=rng.normal((2, 3)), r=random_orthogonal(2, rng), b=np.ones((2, 3)))
        state.b = update_binary(state)
        best = objective(state, problem)
        for bits in itertools.product([-1.0, 1.0], repeat=6):
            trial = state.copy()
            trial.b = np.array(bits).reshape(2, 3)
            if objective(trial, problem) < best - 1e-12:
                b_failures += 1
    elapsed = time.perf_counter() - t0
    ok = decreases == 0 and b_failures == 0 and elapsed < 30
    detail = (
        f"{decreases} objective decreases over 400 perturbations of P and V; "
        f"{b_failures} better B patterns in 20 exhaustive checks; {elapsed:.1f}s"
    )
    assert acceptance(5, "closed-form stationarity", ok, detail), detail


def test_criterion_06_synthetic_retrieval(acceptance, pipeline_run):
    config, result, elapsed = pipeline_run
    queries = io.read_codes(result.paths["query_codes"])
    db = io.read_codes(result.paths["db_codes"])
    ours = evaluate(queries, db).map
    oracle = naive_map(queries, db)
    gap = abs(ours - oracle)
    ok = result.map >= 0.95 and gap <= 1e-12 and db.n == 200 and db.k == 16 and elapsed < 300
    detail = (
        f"mAP {result.map:.4f} over {queries.n} queries and {db.n} database codes (need >= 0.95); "
        f"naive-oracle gap {gap:.1e}; pipeline {elapsed:.0f}s"
    )
    assert acceptance(6, "synthetic end-to-end retrieval", ok, detail), detail


def test_criterion_07_gradient_checks(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    w = LossWeights(beta=0.1, sigma=1.0)
    for seed in range(10):
        rng = Rng(4000 + seed)
        n, d, c, k = 4 + seed, 6, 3 + seed % 3, 4 + seed % 5
        params = HeadParams(
            rng.normal((d, c), scale=0.5), rng.normal(c, scale=0.1), rng.normal((c, k), scale=0.5), rng.normal(k, scale=0.1)
        )
        batch = HeadBatch(
            features=rng.normal((n, d)),
            labels=rng.integers(c, n),
            targets=sign(rng.normal((n, k))),
            teacher=sign(rng.normal((n, k))),
            masked_features=rng.normal((n, d)),
        )
        _, grad = head_gradients(params, batch, w)
        fd = finite_difference_grad(params, batch, w)
        for name in HeadParams.NAMES:
            worst = max(worst, relative_error(getattr(grad, name), getattr(fd, name)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 30
    detail = f"worst relative error {worst:.2e} over 10 batches x 4 parameter tensors; {elapsed:.1f}s"
    assert acceptance(7, "gradient checks", ok, detail), detail


def test_criterion_08_pruning_correctness(acceptance):
    t0 = time.perf_counter()
    rng = Rng(5000)
    oracle_mismatch, scale_mismatch, tied_maps = 0, 0, 0
    for _ in range(1000):
        n = 1 + rng.integers(200)
        levels = 1 + rng.integers(10)
        values = rng.integers(levels, n) / levels + (0.0 if rng.uniform() < 0.5 else 1e-3 * rng.uniform(n))
        tied_maps += len(np.unique(values)) < n
        ratio = 0.02 + 0.98 * rng.uniform()
        seq = TokenSequence(tokens=np.zeros((n + 1, 1)), alive=np.arange(n + 1))
        survivors = prune(seq, ImportanceMap(values), ratio).alive[1:] - 1
        if survivors.tolist() != sort_oracle(values.tolist(), kept_count(n, ratio)):
            oracle_mismatch += 1
        scale = 10.0 ** (6 * rng.uniform() - 3)
        scaled = prune(seq, ImportanceMap(values * scale), ratio).alive[1:] - 1
        if not np.array_equal(scaled, survivors):
            scale_mismatch += 1
    elapsed = time.perf_counter() - t0
    ok = oracle_mismatch == 0 and scale_mismatch == 0 and elapsed < 10
    detail = (
        f"{oracle_mismatch} oracle mismatches, {scale_mismatch} rescaling mismatches over 1000 maps "
        f"({tied_maps} with ties); {elapsed:.1f}s"
    )
    assert acceptance(8, "pruning correctness", ok, detail), detail


def test_criterion_09_mask_geometry(acceptance):
    t0 = time.perf_counter()
    rng = Rng(6000)
    failures = 0
    for _ in range(100):
        p = int((4, 8, 16)[rng.integers(3)])
        grid = 1 + rng.integers(14)
        n = grid * grid
        k = rng.integers(n + 1)
        image = 0.1 + rng.uniform((grid * p, grid * p, 3))
        mask = drg_mask(rng.uniform(n), k, p)
        out = apply_mask(image, mask)
        zeroed = out == 0
        for ch in range(3):
            failures += int(zeroed[:, :, ch].sum() != k * p * p)
        expected = np.zeros(zeroed.shape[:2], dtype=bool)
        for t in np.flatnonzero(mask.mask == 0):
            row, col = divmod(int(t), grid)
            expected[row * p : (row + 1) * p, col * p : (col + 1) * p] = True
        failures += int(not np.array_equal(zeroed.all(axis=2), expected))
        failures += int(not np.array_equal(out[~expected], image[~expected]))
    image = Rng(6001).uniform((64, 64, 3))
    untouched = apply_mask(image, drg_mask(Rng(6002).uniform(16), 0, 16))
    identical = untouched.tobytes() == image.tobytes()
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and identical and elapsed < 10
    detail = f"{failures} geometry failures over 100 cases; K=0 bit-identical: {identical}; {elapsed:.1f}s"
    assert acceptance(9, "region mask geometry", ok, detail), detail


def test_criterion_10_determinism(acceptance, pipeline_run, tmp_path):
    config, first, _ = pipeline_run
    t0 = time.perf_counter()
    second = run_pipeline(config, tmp_path)
    elapsed = time.perf_counter() - t0
    same_db = first.paths["db_codes"].read_bytes() == second.paths["db_codes"].read_bytes()
    same_query = first.paths["query_codes"].read_bytes() == second.paths["query_codes"].read_bytes()
    same_map = format_map(first.map) == format_map(second.map) and first.map == second.map
    ok = same_db and same_query and same_map and elapsed < 300
    detail = (
        f"database EETB identical: {same_db}, query EETB identical: {same_query}, "
        f"mAP {format_map(first.map)} vs {format_map(second.map)}; rerun {elapsed:.0f}s"
    )
    assert acceptance(10, "determinism", ok, detail), detail
