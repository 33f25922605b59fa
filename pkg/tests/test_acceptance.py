"""Acceptance gate: every headline claim, one test per criterion.

Criteria 1, 2 and 7 share one session-scoped sweep of full-length runs
(5 seeds x both modes at experiment defaults), so this module is slow by
design: expect roughly twenty minutes of training on one core. Everything
else is seconds. Each test prints a single PASS/FAIL line with the measured
numbers next to the thresholds it asserts.
"""

import hashlib
import math
import time

import numpy as np
import pytest

from factorcycle.autodiff import Tensor, grad_check
from factorcycle.config import build_config, parse_config
from factorcycle.data import generate
from factorcycle.evaluation import mismatch_probe, pearson_abs
from factorcycle.losses import (
    HistoryBuffer,
    LossWeights,
    cycle1,
    cycle2,
    gan_disc_loss,
    gan_gen_loss,
    recon_loss,
)
from factorcycle.nets import init_params
from factorcycle.training import AdamState, Trainer, adam_step, run_experiment

SEEDS = (0, 1, 2, 3, 4)


def _dataset_for(cfg):
    return generate(cfg.spec, n=cfg.pool_n, m=cfg.pool_m, e=cfg.holdout,
                    seed=cfg.dataset_seed())


def _digest(tensors) -> str:
    h = hashlib.sha256()
    for t in tensors:
        h.update(t.data.tobytes())
    return h.hexdigest()


def _report(criterion: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")


@pytest.fixture(scope="session")
def sweep():
    """Full-length runs at experiment defaults: (mode, seed) -> stats."""
    out = {}
    for mode in ("uncooperative", "cooperative"):
        for seed in SEEDS:
            cfg = build_config({"mode": mode, "seed": seed})
            ds = _dataset_for(cfg)
            t0 = time.perf_counter()
            res = run_experiment(cfg.train, ds)
            wall = time.perf_counter() - t0
            assert not res.diverged, f"{mode} seed {seed}: {res.note}"

            recon = res.history.recon_series(cfg.train.weights)
            steps = np.asarray(res.history.steps)
            early = float(recon[(steps >= 100) & (steps <= 600)].mean())
            late = float(recon[steps > cfg.train.total_steps - 1000].mean())
            probe = mismatch_probe(res.gen, ds, n=2048,
                                   rng=np.random.default_rng(1234 + seed))
            out[(mode, seed)] = {
                "rho": res.final_rho,
                "early_recon": early,
                "late_recon": late,
                "probe_c_error": probe.mean_c_error,
                "wall": wall,
            }
    return out


def test_criterion_1_correlation_reproduction(sweep):
    unco = [sweep[("uncooperative", s)]["rho"] for s in SEEDS]
    coop = [sweep[("cooperative", s)]["rho"] for s in SEEDS]
    med_u = float(np.median(unco))
    med_c = float(np.median(coop))
    wins = sum(u > c for u, c in zip(unco, coop))
    walls = [sweep[k]["wall"] for k in sweep]
    ok = med_u >= 0.98 and med_c <= 0.85 and wins >= 4 and max(walls) <= 900
    _report(
        "criterion 1 (correlation medians over 5 seeds)",
        ok,
        f"uncooperative median |rho| {med_u:.4f} (need >= 0.98, per seed "
        f"{[f'{u:.3f}' for u in unco]}), cooperative median {med_c:.4f} "
        f"(need <= 0.85, per seed {[f'{c:.3f}' for c in coop]}), "
        f"uncooperative wins {wins}/5 (need >= 4), slowest run "
        f"{max(walls) / 60:.1f} min (cap 15)",
    )
    assert med_u >= 0.98
    assert med_c <= 0.85
    assert wins >= 4
    assert max(walls) <= 900


def test_criterion_2_reconstruction_descent(sweep):
    drops = {}
    for key, stats in sweep.items():
        drops[key] = 1.0 - stats["late_recon"] / stats["early_recon"]
    worst = min(drops.values())
    ok = worst >= 0.90
    worst_key = min(drops, key=drops.get)
    _report(
        "criterion 2 (weighted reconstruction falls >= 90% in both modes)",
        ok,
        f"worst descent {worst:.3f} at {worst_key}; all "
        f"{sorted((k, round(v, 3)) for k, v in drops.items())}",
    )
    assert ok


def test_criterion_3_gradient_check():
    rng = np.random.default_rng(0)
    w = LossWeights()
    worst = 0.0
    checked = 0
    for rep in range(100):
        gen, disc = init_params(1, 1, rng, hidden=4)
        for t in gen.all_tensors() + disc.all_tensors():
            t.data[...] = rng.normal(0.0, 0.5, size=t.data.shape)
        v = rng.normal(0.0, 1.5, size=(8, 2))
        c = rng.normal(0.0, 1.5, size=(8, 1))
        r = rng.normal(0.0, 1.5, size=(8, 1))
        params = gen.all_tensors() + disc.all_tensors()
        fn = (lambda: cycle1(gen, disc, w, Tensor(v)).total) if rep % 2 == 0 \
            else (lambda: cycle2(gen, disc, w, Tensor(c), Tensor(r)).total)
        report = grad_check(fn, params, tol=1e-4)
        worst = max(worst, report.max_rel_err)
        checked += 1
        assert report.passed, f"rep {rep}: {report.max_rel_err:.3e}"
    ok = worst < 1e-4
    _report(
        "criterion 3 (finite-difference gradient check)",
        ok,
        f"{checked} random parameterizations across both cycle losses, "
        f"max relative error {worst:.3e} (need < 1e-4)",
    )
    assert ok


def test_criterion_4_adam_oracle():
    # scalar reference with explicit bias correction, written independently
    # of the vectorized implementation
    def oracle(thetas, grads, lrs, beta1=0.5, beta2=0.999, eps=1e-8):
        theta = thetas
        m = v = 0.0
        for t, (g, lr) in enumerate(zip(grads, lrs), start=1):
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            theta -= lr * (m / (1 - beta1**t)) / (
                math.sqrt(v / (1 - beta2**t)) + eps)
        return theta

    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        theta0 = float(rng.normal())
        n = int(rng.integers(1, 30))
        grads = rng.normal(size=n)
        lrs = rng.uniform(1e-5, 1e-2, size=n)
        p = Tensor(np.array([theta0]))
        state = AdamState([p])
        for g, lr in zip(grads, lrs):
            adam_step(state, [p], [np.array([g])], float(lr))
        expect = oracle(theta0, grads, lrs)
        worst = max(worst, abs(float(p.data[0]) - expect))
    ok = worst < 1e-12
    _report(
        "criterion 4 (Adam vs scalar oracle)",
        ok,
        f"1000 random update sequences, max abs deviation {worst:.3e} "
        f"(need < 1e-12)",
    )
    assert ok


def test_criterion_5_freeze_invariants():
    cfg = build_config({
        "total_steps": 200, "batch": 32, "pool_n": 500, "pool_m": 500,
        "holdout": 64, "eval_every": 50,
    })
    tr = Trainer(cfg.train, _dataset_for(cfg))
    frozen_ok = {"phase1": 0, "phase2": 0, "adversary": 0}

    orig_d = tr.phase_disentangler_update
    orig_e = tr.phase_entangler_update
    orig_a = tr.phase_adversary_update

    def wrapped_d(v, lr):
        before = _digest(tr.gen.entangler_tensors() + tr.disc.all_tensors())
        out = orig_d(v, lr)
        after = _digest(tr.gen.entangler_tensors() + tr.disc.all_tensors())
        assert before == after, "phase 1 touched the entangler or critics"
        frozen_ok["phase1"] += 1
        return out

    def wrapped_e(c, r, lr):
        before = _digest(tr.gen.disentangler_tensors() + tr.disc.all_tensors())
        out = orig_e(c, r, lr)
        after = _digest(tr.gen.disentangler_tensors() + tr.disc.all_tensors())
        assert before == after, "phase 2 touched the disentangler or critics"
        frozen_ok["phase2"] += 1
        return out

    def wrapped_a(c_real, v_real, c_fake, v_fake, lr):
        gens = tr.gen.disentangler_tensors() + tr.gen.entangler_tensors()
        before = _digest(gens)
        out = orig_a(c_real, v_real, c_fake, v_fake, lr)
        assert _digest(gens) == before, "critic phase touched a generator"
        frozen_ok["adversary"] += 1
        return out

    tr.phase_disentangler_update = wrapped_d
    tr.phase_entangler_update = wrapped_e
    tr.phase_adversary_update = wrapped_a
    for _ in range(200):
        tr.step()
    ok = all(n == 200 for n in frozen_ok.values())
    _report(
        "criterion 5 (parameter freezes, sha256 per phase)",
        ok,
        f"200 uncooperative steps, per-phase bit-exact freeze checks "
        f"passed: {frozen_ok}",
    )
    assert ok


def test_criterion_6_forward_mode_independence():
    worst = 0.0
    for seed in range(5):
        du = build_config({"seed": seed, "mode": "uncooperative",
                           "pool_n": 500, "pool_m": 500, "holdout": 64,
                           "batch": 32})
        dc = build_config({"seed": seed, "mode": "cooperative",
                           "pool_n": 500, "pool_m": 500, "holdout": 64,
                           "batch": 32})
        ds = _dataset_for(du)
        tr_u = Trainer(du.train, ds)
        tr_c = Trainer(dc.train, ds)
        v, c, r = tr_u.sample_step_batches()
        w = du.train.weights
        for fn in (
            lambda g, d: cycle1(g, d, w, Tensor(v)).total.item(),
            lambda g, d: cycle2(g, d, w, Tensor(c), Tensor(r)).total.item(),
        ):
            worst = max(worst, abs(fn(tr_u.gen, tr_u.disc)
                                   - fn(tr_c.gen, tr_c.disc)))
    ok = worst == 0.0
    _report(
        "criterion 6 (forward losses identical across modes)",
        ok,
        f"5 seeds x both cycle totals at identical params/batches, max abs "
        f"difference {worst} (need exact)",
    )
    assert ok


def test_criterion_7_mismatch_probe_direction(sweep):
    pairs = [
        (sweep[("cooperative", s)]["probe_c_error"],
         sweep[("uncooperative", s)]["probe_c_error"])
        for s in SEEDS
    ]
    wins = sum(coop > unco for coop, unco in pairs)
    ok = wins >= 4
    _report(
        "criterion 7 (cooperative hides content: probe error larger)",
        ok,
        f"cooperative > uncooperative on {wins}/5 matched seeds (need >= 4); "
        f"pairs (coop, unco) "
        f"{[(round(a, 4), round(b, 4)) for a, b in pairs]}",
    )
    assert ok


def test_criterion_8_metrics_determinism(tmp_path):
    from factorcycle.cli import main

    args = ["run", "--quiet", "--no-plot",
            "--set", "total_steps=300", "--set", "batch=32",
            "--set", "pool_n=500", "--set", "pool_m=500",
            "--set", "holdout=64", "--set", "eval_every=100",
            "--seed", "13"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    ok = a == b
    _report(
        "criterion 8 (identical config+seed -> byte-identical metrics.csv)",
        ok,
        f"two 300-step runs, {len(a)} bytes each, equal: {ok}",
    )
    assert ok


def test_criterion_9_unit_invariants():
    rng = np.random.default_rng(21)

    # pearson_abs affine invariance at 1e-12
    worst = 0.0
    for _ in range(200):
        x = rng.normal(size=128)
        y = rng.normal(size=128) + 0.3 * x
        a = float(rng.uniform(-20, 20)) or 1.0
        b = float(rng.uniform(-50, 50))
        worst = max(worst, abs(pearson_abs(a * x + b, y) - pearson_abs(x, y)))
    assert worst < 1e-12

    # pinned loss formula values
    l1 = recon_loss(Tensor(np.array([[1.0, 2.0]])),
                    Tensor(np.array([[2.0, 4.0]]))).item()
    assert l1 == 1.5
    g = gan_gen_loss(Tensor(np.array([[0.0], [1.0]]))).item()
    assert g == 0.5  # mean of (0-1)^2 and (1-1)^2
    d = gan_disc_loss(Tensor(np.array([[1.0]])), Tensor(np.array([[1.0]]))).item()
    assert d == 1.0  # perfect reals, fully fooled on fakes

    # buffer capacity invariant over 10,000 randomized insertions
    buf = HistoryBuffer(np.random.default_rng(3), capacity=50)
    inserted = 0
    for _ in range(10000):
        batch = rng.normal(size=(int(rng.integers(1, 4)), 2))
        out = buf.draw(batch)
        inserted += batch.shape[0]
        assert out.shape == batch.shape
        assert len(buf) == min(inserted, 50)
    assert len(buf) == 50

    _report(
        "criterion 9 (metric/loss/buffer unit invariants)",
        True,
        f"affine invariance max dev {worst:.3e} (< 1e-12), L1 example 1.5, "
        f"LSGAN examples exact, buffer capacity held over 10,000 insertions",
    )
