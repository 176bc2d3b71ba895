"""End-to-end acceptance criteria 1-10.

Each test records one PASS/FAIL line (shown in the pytest terminal summary)
and asserts the criterion at its stated tolerance.
"""
import contextlib
import hashlib
import math
import time

import numpy as np
import pytest

from helpers import ACCEPTANCE, offset_pair, random_spd
from macyclegan import checks, cli, gan, metrics, phantom, spd
from macyclegan.field import TensorField, read_tfv, tfv_bytes, tfv_from_bytes
from macyclegan.nn import checkpoint_bytes, checkpoint_from_bytes, load_checkpoint

pytestmark = pytest.mark.slow


@contextlib.contextmanager
def criterion(n, title):
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        ACCEPTANCE[n] = ("FAIL", title, f"{type(exc).__name__}: {str(exc).splitlines()[0][:160]}")
        raise
    ACCEPTANCE[n] = ("PASS", title, ", ".join(f"{k}={v}" for k, v in detail.items()))


def timed(fn, *args):
    fn(*args)  # warm-up: JIT compilation is not part of the budget
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def fmt(x):
    return f"{x:.4g}"


@pytest.fixture(scope="module")
def default_phantom():
    return phantom.generate()


@pytest.fixture(scope="module")
def holdout_phantom():
    return phantom.generate(phantom.PhantomSpec(seed=1001))


# -- 1-3: manifold operations -------------------------------------------------------------

def test_criterion_01_manifold_closure():
    with criterion(1, "exp_id closure on 1e4 symmetric matrices in [-3, 3]") as d:
        s = np.random.default_rng(1).uniform(-3.0, 3.0, (10_000, 6))
        lam, secs = timed(lambda: spd.min_eigenvalue(spd.exp_id(s)))
        d.update(min_eig=fmt(lam.min()), spd_fraction=float((lam > 0).mean()), seconds=fmt(secs))
        assert (lam > 0).all()
        assert secs < 1.0


def test_criterion_02_log_exp_round_trip():
    with criterion(2, "log/exp round trip on 1e4 SPD matrices, condition <= 1e4") as d:
        p = random_spd(np.random.default_rng(2), 10_000, cond=1e4)
        back, secs = timed(lambda: spd.exp_id(spd.log_id(p)))
        rel = (np.abs(back - p).max(axis=-1) / np.abs(p).max(axis=-1)).max()
        d.update(worst_rel=fmt(rel), seconds=fmt(secs))
        assert rel <= 1e-8
        assert secs < 1.0


def test_criterion_03_metric_axioms():
    with criterion(3, "Log-Euclidean metric axioms on 1e4 triples") as d:
        rng = np.random.default_rng(3)
        a, b, c = (random_spd(rng, 10_000, cond=1e3) for _ in range(3))
        dab, dba = spd.le_dist(a, b), spd.le_dist(b, a)
        dac, dbc = spd.le_dist(a, c), spd.le_dist(b, c)
        daa = spd.le_dist(a, a)
        slack = (dac - dab - dbc).max()
        d.update(symmetric=bool(np.array_equal(dab, dba)), max_self=fmt(daa.max()), triangle_excess=fmt(slack))
        assert np.array_equal(dab, dba)
        assert daa.max() <= 1e-10
        assert slack <= 1e-9


# -- 4: gradients ----------------------------------------------------------------------------

def test_criterion_04_gradient_checks():
    with criterion(4, "finite-difference checks, every primitive plus the composite objective") as d:
        t0 = time.perf_counter()
        results = checks.run_all(tol=1e-4, n_coords=200)
        secs = time.perf_counter() - t0
        print(checks.format_table(results))
        worst = max(results, key=lambda r: r.worst_rel_error)
        d.update(ops=len(results), worst=f"{worst.name}:{fmt(worst.worst_rel_error)}",
                 min_coords=min(r.n_coords for r in results), seconds=fmt(secs))
        assert all(r.passed for r in results), [r.name for r in results if not r.passed]
        assert min(r.n_coords for r in results) >= 200
        assert "composite_objective" in {r.name for r in results}
        assert secs < 120.0


# -- 5: manifold guarantee ---------------------------------------------------------------------

def test_criterion_05_manifold_guarantee(default_phantom):
    with criterion(5, "untrained MA G_Y is SPD everywhere; untrained PLAIN leaves the manifold") as d:
        ma_cfg = gan.TrainConfig()
        ma = gan.synthesize_hr(gan.build_models(ma_cfg).gy, default_phantom.x_hr, ma_cfg)
        # both pipelines as initialized: no data has been seen, so no
        # normalizer has been fitted and the heads emit raw components
        plain_cfg = gan.TrainConfig(mode="PLAIN_CYCLEGAN")
        plain = gan.synthesize_hr(gan.build_models(plain_cfg).gy, default_phantom.x_hr, plain_cfg)
        ma_min = spd.min_eigenvalue(ma.data)
        n_bad = int((spd.min_eigenvalue(plain.data) <= 0).sum())
        d.update(dims=ma.dims, ma_min_eig=fmt(ma_min.min()), plain_nonpositive_voxels=n_bad)
        assert ma.dims == (48, 48, 48)
        assert (ma_min > 0).all()
        assert n_bad >= 1


# -- 6-7: training -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def gan_run(default_phantom):
    cfg = gan.TrainConfig(mode="MA_CYCLEGAN", patch=16, steps=200, seed=7)
    models = gan.build_models(cfg)
    sampler = gan.PatchSampler(default_phantom.x_hr, default_phantom.y_lr, cfg.patch, cfg.factor)
    t0 = time.perf_counter()
    error = None
    try:
        trainer = gan.run_training(models, sampler, cfg)
    except Exception as exc:  # reported by the criterion, not swallowed
        trainer, error = None, exc
    return trainer, error, time.perf_counter() - t0


def test_criterion_06_training_progress(gan_run):
    with criterion(6, "200 MA_CYCLEGAN steps halve total and forward-cycle losses") as d:
        trainer, error, secs = gan_run
        assert error is None, error
        first, last = trainer.history[0], trainer.history[-1]
        d.update(total=f"{fmt(first.total)}->{fmt(last.total)}",
                 cyc_forward=f"{fmt(first.cyc_forward)}->{fmt(last.cyc_forward)}",
                 steps=trainer.step_count, seconds=fmt(secs))
        assert trainer.step_count == 200
        assert last.total <= 0.5 * first.total
        assert last.cyc_forward <= 0.5 * first.cyc_forward
        assert secs < 20 * 60


def test_criterion_07_phantom_evaluation(default_phantom, holdout_phantom):
    with criterion(7, "pretraining + 200 steps beat the untrained generator on a held-out phantom") as d:
        cfg = gan.TrainConfig(pretrain_steps=500, steps=200, seed=7)
        models = gan.build_models(cfg)
        base = metrics.evaluate(gan.synthesize_hr(models.gy, holdout_phantom.x_hr, cfg), holdout_phantom.y_hr)
        sampler = gan.PatchSampler(default_phantom.x_hr, default_phantom.y_lr, cfg.patch, cfg.factor)
        gan.run_training(models, sampler, cfg)
        rep = metrics.evaluate(gan.synthesize_hr(models.gy, holdout_phantom.x_hr, cfg), holdout_phantom.y_hr)
        c0, c1 = base.cosine_by_threshold[0.2][0], rep.cosine_by_threshold[0.2][0]
        d.update(fa_mse=f"{fmt(base.fa_mse)}->{fmt(rep.fa_mse)}", cos_0_2=f"{fmt(c0)}->{fmt(c1)}")
        assert rep.fa_mse <= 0.5 * base.fa_mse
        assert c1 >= c0 + 0.15
        # regression values frozen from the first verified run
        assert rep.fa_mse <= 0.0055 * 1.5
        assert c1 >= 0.97 - 0.05


# -- 8: ablation ------------------------------------------------------------------------------------

def test_criterion_08_ablation_ordering(tmp_path, capsys):
    with criterion(8, "ablation over 3 seeds: MA_CYCLEGAN median FA MSE <= PLAIN_CYCLEGAN") as d:
        code = cli.main(["ablate", "--out", str(tmp_path / "ablate")])
        table = (tmp_path / "ablate" / "ablation.txt").read_text()
        with capsys.disabled():
            print("\n" + table)
        med = cli.parse_ablation(table)
        ma, plain = med["MA_CYCLEGAN"]["fa_mse"], med["PLAIN_CYCLEGAN"]["fa_mse"]
        d.update(ma_cyclegan=fmt(ma), plain_cyclegan=fmt(plain), ma_gan=fmt(med["MA_GAN"]["fa_mse"]))
        assert code == 0
        assert "FAILED" not in table
        assert ma <= plain


# -- 9: metric oracles --------------------------------------------------------------------------------

def test_criterion_09_metric_oracles():
    with criterion(9, "FA, cosine and volume-metric oracles") as d:
        fa = metrics.fractional_anisotropy(np.array([2.0, 1.0, 1.0, 0.0, 0.0, 0.0]))
        gen, gt = offset_pair((6, 6, 6))
        cos = metrics.evaluate(gen, gt).cosine_by_threshold
        rng = np.random.default_rng(9)
        a = TensorField(random_spd(rng, 120, cond=50).reshape(4, 5, 6, 6))
        b = TensorField(random_spd(rng, 120, cond=50).reshape(4, 5, 6, 6))
        mask = rng.uniform(size=(4, 5, 6)) > 0.25
        rep = metrics.evaluate(a, b, mask=mask)
        idx = [i for i in np.ndindex(4, 5, 6) if mask[i]]
        fa_loop = np.mean([(metrics.fractional_anisotropy(a.data[i]) - metrics.fractional_anisotropy(b.data[i])) ** 2
                           for i in idx])
        le_loop = np.mean([spd.le_dist(a.data[i], b.data[i]) for i in idx])
        cos_err = 0.0
        for th in metrics.THRESHOLDS:
            sel = [i for i in idx if metrics.fractional_anisotropy(b.data[i]) >= th]
            loop = np.mean([abs(float(metrics.principal_direction(a.data[i], warn=False)
                                      @ metrics.principal_direction(b.data[i], warn=False))) for i in sel])
            cos_err = max(cos_err, abs(loop - rep.cosine_by_threshold[th][0]))
            assert rep.cosine_by_threshold[th][1] == len(sel)
        loop_err = max(abs(fa_loop - rep.fa_mse), abs(le_loop - rep.mean_log_distance), cos_err)
        d.update(fa_err=fmt(abs(fa - 1 / math.sqrt(6))),
                 cos30_err=fmt(max(abs(cos[t][0] - math.cos(math.radians(30))) for t in metrics.THRESHOLDS)),
                 loop_err=fmt(loop_err))
        assert abs(fa - 1 / math.sqrt(6)) <= 1e-12
        for th in metrics.THRESHOLDS:
            assert abs(cos[th][0] - math.cos(math.radians(30))) <= 1e-6
        assert loop_err <= 1e-12


# -- 10: determinism and formats ---------------------------------------------------------------------

def _pipeline(root):
    data, run = root / "data", root / "run"
    assert cli.main(["phantom", "--out", str(data)]) == 0
    cfg = root / "cfg.txt"
    cfg.write_text("[train]\nsteps = 10\n")
    assert cli.main(["train", str(data), "--config", str(cfg), "--out", str(run)]) == 0
    assert cli.main(["synthesize", str(run / "checkpoint.mack"), str(data / "x_hr.tfv"), str(root / "gen.tfv")]) == 0
    files = [data / "x_hr.tfv", data / "y_hr.tfv", data / "y_lr.tfv", run / "checkpoint.mack",
             run / "train.log", root / "gen.tfv"]
    return {f.name: hashlib.sha256(f.read_bytes()).hexdigest() for f in files}


def test_criterion_10_determinism_and_formats(tmp_path):
    with criterion(10, "byte-identical phantom/train/synthesize reruns; bit-exact TFV and MACK") as d:
        first = _pipeline(tmp_path / "a")
        second = _pipeline(tmp_path / "b")
        gen = read_tfv(tmp_path / "a" / "gen.tfv")
        tfv_ok = tfv_bytes(tfv_from_bytes(tfv_bytes(gen))) == (tmp_path / "a" / "gen.tfv").read_bytes()
        ck = load_checkpoint(tmp_path / "a" / "run" / "checkpoint.mack")
        mack_ok = checkpoint_bytes(checkpoint_from_bytes(checkpoint_bytes(ck))) == \
            (tmp_path / "a" / "run" / "checkpoint.mack").read_bytes()
        d.update(artifacts=len(first), identical=first == second, tfv=tfv_ok, mack=mack_ok)
        assert first == second
        assert tfv_ok and mack_ok
