"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict that is printed in the
terminal summary, then asserts it.
"""

import json
import math
import time

import numpy as np
import pytest

from cubetop import cli, cubical, imagio, oracle, stats, summaries, synth
from cubetop.detect import Detector


def off_diag(diagram, dim):
    return [p for p in diagram.as_tuples(dim) if p[0] != p[1]]


def test_oracle_equivalence(acceptance_record):
    cubical.warmup()
    rng = np.random.default_rng(20240601)
    mismatches = euler_failures = 0
    start = time.perf_counter()
    for _ in range(1000):
        h, w = rng.integers(1, 9, size=2)
        frame = rng.integers(0, 10, size=(h, w))
        pd0, pd1 = cubical.compute_pd0(frame), cubical.compute_pd1(frame)
        ref = oracle.reduce(frame)
        if off_diag(pd0, 0) != ref.as_tuples(0) or off_diag(pd1, 1) != ref.as_tuples(1):
            mismatches += 1
        cx = oracle.CubeComplex(frame)
        for t in range(10):
            chi = sum((-1) ** d for d, v in zip(cx.dims, cx.values) if v <= t)
            if pd0.betti(t, 0) - pd1.betti(t, 1) != chi:
                euler_failures += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and euler_failures == 0 and elapsed < 30
    acceptance_record(1, ok, f"mismatches={mismatches} euler_failures={euler_failures} time={elapsed:.1f}s")
    assert ok


def test_connectivity_semantics(acceptance_record):
    rng = np.random.default_rng(7)
    bad0 = bad1 = 0
    for _ in range(500):
        h, w = rng.integers(1, 13, size=2)
        frame = (rng.random((h, w)) < rng.uniform(0.2, 0.8)).astype(np.int64)
        b0, b1 = oracle.betti_at(frame, 0)
        bad0 += cubical.compute_pd0(frame).betti(0, 0) != b0
        bad1 += cubical.compute_pd1(frame).betti(0, 1) != b1
    ok = bad0 == 0 and bad1 == 0
    acceptance_record(2, ok, f"dim0_mismatches={bad0} dim1_mismatches={bad1} over 500 frames")
    assert ok


def _alps_integral(v):
    """Exact integral of ln U over the breakpoints of the survival step function."""
    v = np.sort(v)
    K = len(v)
    edges = np.concatenate([[0.0], v])
    widths = np.diff(edges)
    alive = K - np.arange(K)
    return float(np.sum(widths * np.log(alive)))


def test_alps_identity(acceptance_record):
    rng = np.random.default_rng(3)
    worst_int = worst_top = 0.0
    for _ in range(200):
        K = int(rng.integers(1, 51))
        v = rng.exponential(2.0, K)
        worst_int = max(worst_int, abs(summaries.alps(v) - _alps_integral(v)))
        bumped = np.sort(v)
        bumped[-1] += rng.uniform(0.1, 100.0)
        worst_top = max(worst_top, abs(summaries.alps(bumped) - summaries.alps(v)))
    ok = worst_int <= 1e-9 and worst_top <= 1e-12
    acceptance_record(3, ok, f"max|closed-integral|={worst_int:.2e} max|top-bump change|={worst_top:.2e}")
    assert ok


def test_entropy_bounds(acceptance_record):
    rng = np.random.default_rng(4)
    bounds = uniform = scale = 0
    for _ in range(500):
        K = int(rng.integers(1, 60))
        v = rng.exponential(1.0, K)
        h = summaries.persistent_entropy(v)
        bounds += not (-math.log(K) - 1e-12 <= h <= 1e-12)
        uniform += abs(summaries.persistent_entropy(np.full(K, rng.uniform(0.1, 9))) + math.log(K)) > 1e-12
        c = rng.uniform(0.01, 100)
        scale += abs(summaries.persistent_entropy(c * v) - h) > 1e-12
    ok = bounds == uniform == scale == 0
    acceptance_record(4, ok, f"bound_violations={bounds} uniform_misses={uniform} scale_misses={scale}")
    assert ok


def test_monte_carlo_halfwidth(acceptance_record):
    q = stats.ci_halfwidth(0.05, 9999)
    ok = f"{q:.3g}" == "0.0137"
    acceptance_record(5, ok, f"q(0.05, 9999)={q:.6f}")
    assert ok


def test_pvalue_validity(acceptance_record):
    """Super-uniformity of gof p-values with the observation drawn from the null.

    Every trial needs one observed and 199 null statistics, all i.i.d. from the
    null. They are taken as a random subset of a large pool of independently
    simulated pipeline outputs, with indices chosen independently of the
    values, so within a trial they are exactly i.i.d.
    """
    start = time.perf_counter()
    trials, n = 2000, 199
    det = Detector(imagio.RegionSpec(), sigma=2.0, eta=1.0)
    model = stats.NullModel("poisson", lam=3.0, m=10, seed=99)
    pool = stats.null_statistics(model, det, ["count", "alps"], 50_000, (32, 32))
    rng = np.random.default_rng(5)
    u = np.round(np.arange(1, 21) * 0.01, 2)
    worst = -1.0
    detail = []
    for col, name in enumerate(["count", "alps"]):
        pvals = np.empty(trials)
        for i in range(trials):
            pick = pool[rng.choice(len(pool), n + 1, replace=False), col]
            pvals[i] = stats.mc_pvalue(pick[0], pick[1:]).p_value
        excess = np.array([(pvals <= x).mean() - x for x in u])
        worst = max(worst, float(excess.max()))
        detail.append(f"{name}: max excess {excess.max():+.4f}")
    elapsed = time.perf_counter() - start
    ok = worst <= 0.015 and elapsed < 120
    acceptance_record(6, ok, "; ".join(detail) + f"; time={elapsed:.1f}s")
    assert ok


def test_fdr_control(acceptance_record):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    alpha, reps, n_null, n_alt, pool_size = 0.05, 500, 150, 50, 2000
    fdp = np.empty(reps)
    power = np.empty(reps)
    for r in range(reps):
        pool = rng.standard_normal(pool_size)
        observed = np.concatenate([rng.standard_normal(n_null), rng.standard_normal(n_alt) + 4.0])
        report = stats.multi_test_from_statistics(observed, pool, alpha)
        rej = report.rejected
        false = int(rej[:n_null].sum())
        fdp[r] = false / max(int(rej.sum()), 1)
        power[r] = rej[n_null:].mean()
    fdr = float(fdp.mean())
    elapsed = time.perf_counter() - start
    ok = fdr <= 0.07 and elapsed < 300
    acceptance_record(7, ok, f"FDR={fdr:.4f} mean_power={power.mean():.3f} time={elapsed:.1f}s")
    assert ok


RECOVERY_SIGMAS = [1.0, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 6.0]


def test_noise_recovery(acceptance_record):
    # 25 dark peaks, depths 20 to 40 counts on a 100-count background
    amplitudes = np.linspace(0.2, 0.4, 25)[np.random.default_rng(1).permutation(25)]
    spec = synth.GroundTruthSpec.lattice(5, 5, spacing=16, margin=16, amplitudes=amplitudes, dose=100.0)
    region = imagio.RegionSpec(polygon=spec.bounding_polygon(8))
    seeds = list(range(10))
    passing = []
    lines = []
    for sigma in RECOVERY_SIGMAS:
        det = Detector(region, sigma, 0.0, "max_finite_death")
        reference, rows = synth.recovery(spec, det, seeds)
        exact = sum(r.count == 25 for r in rows)
        dh = max(r.hausdorff for r in rows)
        rho = float(np.mean([r.correlation for r in rows]))
        good = len(reference) == 25 and exact >= 9 and dh <= 3 and rho >= 0.8
        if good:
            passing.append(sigma)
        lines.append(f"s={sigma:g}:{exact}/10,dH={dh:.2f},rho={rho:.2f}")
    idx = [RECOVERY_SIGMAS.index(s) for s in passing]
    contiguous = bool(idx) and idx == list(range(idx[0], idx[0] + len(idx)))
    ok = contiguous and len(passing) >= 2
    acceptance_record(8, ok, f"passing sigma={passing} | " + " ".join(lines))
    assert ok


def test_dkw_arithmetic(acceptance_record):
    small = stats.dkw_pvalue(0.00329, 1e5)
    pooled = stats.dkw_pvalue(0.00329, 1.124e8)
    ok_small = abs(small - 0.2294) <= 1e-4
    ok_pooled = pooled < 1e-300
    ok = ok_small and ok_pooled
    acceptance_record(
        9,
        ok,
        f"p(n=1e5)={small:.6f} (target 0.2294+-0.0001: {'ok' if ok_small else 'off by %.1e' % abs(small - 0.2294)}); "
        f"p(n=1.124e8)={pooled:.3e}",
    )
    assert ok


def test_determinism(tmp_path, acceptance_record):
    frames = np.random.default_rng(10).poisson(3, (60, 32, 32))
    path = tmp_path / "stack"
    imagio.save_stack(imagio.ImageStack.from_frames(frames), path, "raw_u16")
    base = {
        "stack": {"path": str(path), "format": "raw_u16"},
        "vacuum": {"rect": [0, 0, 32, 32]},
        "statistic": "alps",
        "n": 199,
    }
    outputs = {}
    for command, name in (("gof", "gof_report.json"), ("multitest", "multitest.csv")):
        cfg = tmp_path / f"{command}.json"
        cfg.write_text(json.dumps(base))
        blobs = []
        for run, threads in enumerate([1, 1, 4]):
            out = tmp_path / f"{command}_{run}"
            assert cli.main([command, "--config", str(cfg), "--out", str(out), "--seed", "42", "--threads", str(threads)]) == 0
            blobs.append((out / name).read_bytes())
        outputs[command] = len(set(blobs)) == 1
    ok = all(outputs.values())
    acceptance_record(10, ok, " ".join(f"{k}_identical={v}" for k, v in outputs.items()))
    assert ok


@pytest.mark.slow
def test_performance(tmp_path, acceptance_record):
    cubical.warmup()
    frame = np.random.default_rng(11).integers(0, 65536, (1024, 1024)).astype(np.uint16)
    cubical.compute_pd(frame)
    start = time.perf_counter()
    cubical.compute_pd0(frame)
    cubical.compute_pd1(frame)
    pd_time = time.perf_counter() - start

    path = tmp_path / "big"
    frames = np.random.default_rng(12).poisson(0.3, (1124, 256, 256)).astype(np.uint16)
    imagio.save_stack(imagio.ImageStack(frames), path, "raw_u16")
    del frames
    cfg = tmp_path / "summarize.json"
    cfg.write_text(
        json.dumps(
            {"stack": {"path": str(path), "format": "raw_u16"}, "sigma": 2.0, "statistics": ["entropy", "alps"]}
        )
    )
    start = time.perf_counter()
    code = cli.main(["summarize", "--config", str(cfg), "--out", str(tmp_path / "out"), "--threads", "8"])
    summarize_time = time.perf_counter() - start
    rows = len((tmp_path / "out" / "timeseries.csv").read_text().splitlines()) - 1
    ok = pd_time < 1.0 and code == 0 and summarize_time < 60 and rows == 2 * (1124 - 9)
    acceptance_record(11, ok, f"pd_1024={pd_time:.3f}s summarize={summarize_time:.1f}s rows={rows}")
    assert ok
