import numpy as np
import pytest

from macyclegan import gan, metrics, phantom, spd
from macyclegan.errors import ConfigError, DomainError, NonFiniteLoss, ShapeError
from macyclegan.field import Domain, ScalarField
from macyclegan.nn import Tensor
from macyclegan.nn import functional as F


def small_cfg(**kw):
    base = dict(patch=8, depth=2, base_channels=4, critic_width=4, critic_stages=2, critic_blocks=1,
                batch=2, steps=3, steps_per_epoch=2)
    base.update(kw)
    return gan.TrainConfig(**base)


@pytest.fixture(scope="module")
def ph():
    return phantom.generate()


@pytest.fixture(scope="module")
def sampler(ph):
    return gan.PatchSampler(ph.x_hr, ph.y_lr, 8, 2)


def batch(sampler, seed=0, n=2, paired=False):
    rng = np.random.default_rng(seed)
    return sampler.paired(rng, n) if paired else sampler.unpaired(rng, n)


def params_copy(params):
    return [p.data.copy() for p in params]


def same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


# -- config ----------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        gan.TrainConfig(lambda_cyc_x=-1.0)
    with pytest.raises(ConfigError):
        gan.TrainConfig(patch=12, depth=3)
    with pytest.raises(ConfigError):
        gan.TrainConfig(clip=0.0)
    cfg = gan.TrainConfig()
    assert (cfg.lambda_cyc_x, cfg.lambda_cyc_y, cfg.clip, cfg.n_critic, cfg.lr) == (3.0, 1.0, 0.01, 5, 1e-4)


# -- generators --------------------------------------------------------------------

def test_gy_output_is_symmetrized_raw(rng):
    m = gan.build_models(small_cfg())
    x = rng.uniform(size=(2, 1, 8, 8, 8))
    raw = m.gy.raw9(Tensor(x)).data
    out = gan.gy_forward(m.gy, x).data
    mat = np.moveaxis(raw, 1, -1).reshape(2, 8, 8, 8, 3, 3)
    want = spd.from_matrix((mat + np.swapaxes(mat, -1, -2)) / 2)
    assert np.abs(np.moveaxis(out, 1, -1) - want).max() <= 1e-15


def test_gy_exp_is_spd_for_random_weights(rng):
    for seed in range(3):
        m = gan.build_models(small_cfg(seed=seed))
        for p in m.gy.parameters():
            p.data = p.data * 5.0  # push the head into saturation
        out = gan.gy_forward(m.gy, rng.uniform(size=(2, 1, 8, 8, 8))).data
        assert (spd.min_eigenvalue(spd.exp_id(np.moveaxis(out, 1, -1))) > 0).all()


def test_zero_heads(rng):
    m = gan.build_models(small_cfg(), zero_heads=True)
    t = gan.gy_forward(m.gy, rng.uniform(size=(1, 1, 8, 8, 8))).data
    assert np.all(t == 0.0)
    assert np.array_equal(spd.exp_id(np.moveaxis(t, 1, -1)[0, 0, 0, 0]), spd.identity())
    s = gan.gx_forward(m.gx, rng.standard_normal((1, 6, 8, 8, 8))).data
    assert np.all(s == 0.5)


def test_gx_range_and_domain(rng):
    m = gan.build_models(small_cfg())
    out = gan.gx_forward(m.gx, rng.standard_normal((2, 6, 8, 8, 8)) * 10).data
    assert out.min() >= 0.0 and out.max() <= 1.0
    with pytest.raises(DomainError):
        gan.gx_forward(m.gx, np.zeros((1, 6, 8, 8, 8)), Domain.MANIFOLD)
    with pytest.raises(ShapeError):
        gan.gy_forward(m.gy, np.zeros((1, 2, 8, 8, 8)))


def test_forward_is_deterministic(rng):
    x = rng.standard_normal((1, 6, 8, 8, 8))
    a = gan.gx_forward(gan.build_models(small_cfg()).gx, x).data
    b = gan.gx_forward(gan.build_models(small_cfg()).gx, x).data
    assert a.tobytes() == b.tobytes()


def test_critic_output_is_unbounded_linear():
    m = gan.build_models(small_cfg())
    m.dx.out.bias.data[:] = 123.0
    score = m.dx(Tensor(np.zeros((2, 1, 8, 8, 8)))).data
    assert score.shape == (2,) and score.max() > 100


# -- losses ------------------------------------------------------------------------

class Probe:
    """Critic whose score is the (optionally channel-restricted) mean value."""

    def __init__(self, channel=None, channels=6):
        self.channel, self.channels = channel, channels

    def __call__(self, t):
        if self.channel is None:
            return t
        w = np.zeros((1, self.channels, 1, 1, 1))
        w[0, self.channel] = self.channels
        return F.mul(t, w)


def test_loss_gan_x_constant_and_probe(sampler):
    cfg = small_cfg()
    m = gan.build_models(cfg)
    bx, by = batch(sampler)
    for p in m.dx.parameters():
        p.data[...] = 0.0
    assert gan.loss_gan_x(m.gx, m.dx, by, bx, cfg).item() == 0.0
    got = gan.loss_gan_x(m.gx, Probe(), by, bx, cfg).item()
    up = gan.upsample_tangent(gan.tangent_batch(by, cfg.mode), 2)
    want = bx.mean() - m.gx(Tensor(up)).data.mean()
    assert got == pytest.approx(want, abs=1e-14)


def test_loss_gan_x_real_equals_fake(sampler):
    cfg = small_cfg()
    m = gan.build_models(cfg)
    _, by = batch(sampler)
    up = gan.upsample_tangent(gan.tangent_batch(by, cfg.mode), 2)
    bx = m.gx(Tensor(up)).data
    assert gan.loss_gan_x(m.gx, Probe(), by, bx, cfg).item() == 0.0


def test_loss_gan_y_constant_and_probe(sampler):
    cfg = small_cfg()
    m = gan.build_models(cfg)
    bx, by = batch(sampler)
    for p in m.dy.parameters():
        p.data[...] = 0.0
    assert gan.loss_gan_y(m.gy, m.dy, bx, by, cfg).item() == 0.0
    got = gan.loss_gan_y(m.gy, Probe(channel=0), bx, by, cfg).item()
    real = gan.tangent_batch(by, cfg.mode)[:, 0].mean()
    fake = F.resample_linear(m.gy(Tensor(bx)), 0.5).data[:, 0].mean()
    assert got == pytest.approx(real - fake, abs=1e-13)


def test_loss_gan_y_matching_batch_is_zero(sampler):
    cfg = small_cfg()
    m = gan.build_models(cfg)
    bx, _ = batch(sampler)
    fake = F.resample_linear(m.gy(Tensor(bx)), 0.5).data
    by = np.moveaxis(spd.exp_id(np.moveaxis(fake, 1, -1)), -1, 1)
    assert gan.loss_gan_y(m.gy, Probe(), bx, by, cfg).item() == pytest.approx(0.0, abs=1e-12)


def test_loss_cycle_oracles(sampler):
    cfg = small_cfg()
    m = gan.build_models(cfg)
    bx, by = batch(sampler)
    fwd, bwd = gan.loss_cycle(m.gy, m.gx, bx, by, cfg)
    rec_x = m.gx(m.gy(Tensor(bx))).data
    up = gan.upsample_tangent(gan.tangent_batch(by, cfg.mode), 2)
    rec_y = m.gy(m.gx(Tensor(up))).data
    brute_f = sum(abs(a - b) for a, b in zip(rec_x.ravel(), bx.ravel())) / bx.size
    brute_b = sum(abs(a - b) for a, b in zip(rec_y.ravel(), up.ravel())) / up.size
    assert fwd.item() == pytest.approx(brute_f, abs=1e-12)
    assert bwd.item() == pytest.approx(brute_b, abs=1e-12)
    z = gan.build_models(cfg, zero_heads=True)
    f0, _ = gan.loss_cycle(z.gy, z.gx, np.full_like(bx, 0.5), by, cfg)
    assert f0.item() == 0.0
    with pytest.raises(ShapeError):
        gan.loss_cycle(m.gy, m.gx, bx[:, :, :4, :4, :4], by, cfg)


# -- training ----------------------------------------------------------------------

def test_zero_lambdas_leave_parameters(sampler):
    cfg = small_cfg(lambda_cyc_x=0.0, lambda_cyc_y=0.0, lambda_gan_x=0.0, lambda_gan_y=0.0)
    m = gan.build_models(cfg)
    gens, crits = params_copy(m.generators()), params_copy(m.critics())
    trainer = gan.Trainer(m, cfg)
    for s in range(2):
        trainer.train_step(*batch(sampler, s))
    assert same(gens, params_copy(m.generators()))
    # critics start clipped, so clipping is a no-op as well
    assert same(crits, params_copy(m.critics()))


def test_clip_postcondition_and_breakdown(sampler):
    cfg = small_cfg(clip=0.005)
    m = gan.build_models(cfg)
    trainer = gan.Trainer(m, cfg)
    for s in range(2):
        parts = trainer.train_step(*batch(sampler, s))
        assert max(np.abs(p.data).max() for p in m.critics()) <= cfg.clip
        total = parts.gan_y * cfg.lambda_gan_y + parts.gan_x * cfg.lambda_gan_x
        total = total + parts.cyc_forward * cfg.lambda_cyc_x
        total = total + parts.cyc_backward * cfg.lambda_cyc_y
        assert parts.total == total
        assert parts.cyc_forward >= 0 and parts.cyc_backward >= 0


def test_ma_gan_drops_cycle_and_gx(sampler):
    cfg = small_cfg(mode="MA_GAN")
    m = gan.build_models(cfg)
    gx_before, gy_before = params_copy(m.gx.parameters()), params_copy(m.gy.parameters())
    parts = gan.train_step(m, *batch(sampler), cfg)
    assert parts.cyc_forward == parts.cyc_backward == parts.gan_x == parts.critic_x == 0.0
    assert same(gx_before, params_copy(m.gx.parameters()))
    assert not same(gy_before, params_copy(m.gy.parameters()))


def test_plain_mode_uses_raw_components(sampler):
    _, by = batch(sampler)
    assert np.array_equal(gan.tangent_batch(by, "PLAIN_CYCLEGAN"), by)
    logged = gan.tangent_batch(by, "MA_CYCLEGAN")
    assert np.allclose(np.moveaxis(logged, 1, -1), spd.log_id(np.moveaxis(by, 1, -1)), atol=0)


def test_non_finite_loss_aborts(sampler):
    cfg = small_cfg()
    m = gan.build_models(cfg)
    bx, by = batch(sampler)
    bx = bx.copy()
    bx[0, 0, 0, 0, 0] = np.nan
    with pytest.raises(NonFiniteLoss) as info:
        gan.train_step(m, bx, by, cfg)
    assert "critic_y" in str(info.value)


def test_training_runs_are_bit_identical(sampler):
    cfg = small_cfg()
    runs = []
    for _ in range(2):
        m = gan.build_models(cfg)
        gan.run_training(m, sampler, cfg)
        runs.append(m.state_arrays())
    assert all(runs[0][k].tobytes() == runs[1][k].tobytes() for k in runs[0])


def test_resume_matches_uninterrupted_run(sampler):
    cfg = small_cfg(steps=4)
    full = gan.build_models(cfg)
    gan.run_training(full, sampler, cfg)
    part = gan.build_models(cfg)
    t = gan.run_training(part, sampler, small_cfg(steps=2))
    saved_models, saved_opt = part.state_arrays(), t.optimizer_arrays()
    resumed = gan.build_models(cfg)
    resumed.load_arrays(saved_models)
    t2 = gan.Trainer(resumed, cfg)
    t2.load_optimizer_arrays(saved_opt)
    gan.run_training(resumed, sampler, cfg, trainer=t2)
    a, b = full.state_arrays(), resumed.state_arrays()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_log_line_format(sampler):
    import io
    cfg = small_cfg(steps=1)
    log = io.StringIO()
    gan.run_training(gan.build_models(cfg), sampler, cfg, log=log)
    fields = log.getvalue().split()
    assert len(fields) == len(gan.LOG_HEADER.split())
    assert fields[:3] == ["1", "MA_CYCLEGAN", "7"]


# -- pretraining -------------------------------------------------------------------

def test_pretrain_zero_epochs(sampler):
    m = gan.build_models(small_cfg())
    before = params_copy(m.generators())
    assert gan.pretrain_paired(m.gy, m.gx, [batch(sampler, paired=True)], epochs=0) == []
    assert same(before, params_copy(m.generators()))


def test_pretrain_overfits_one_pair(sampler):
    m = gan.build_models(small_cfg())
    pair = batch(sampler, 3, n=1, paired=True)
    losses = gan.pretrain_paired(m.gy, m.gx, [pair] * 500, 1, lr=1e-3)
    for i in range(2):
        assert losses[-1][i] <= 0.05 * losses[0][i]


def test_pretrain_improves_held_out_pair(ph):
    cfg = small_cfg()
    train = gan.PatchSampler(ph.x_hr, ph.y_lr, 8, 2)
    ho = phantom.generate(phantom.PhantomSpec(seed=1001))
    val = gan.PatchSampler(ho.x_hr, ho.y_lr, 8, 2).paired(np.random.default_rng(5), 4)

    def val_loss(m):
        up = gan.upsample_tangent(gan.tangent_batch(val[1], cfg.mode), 2)
        return F.l1_mean(m.gy(Tensor(val[0])), Tensor(up)).item()

    m = gan.build_models(cfg)
    before = val_loss(m)
    batches = [train.paired(np.random.default_rng([0, n]), 2) for n in range(60)]
    gan.pretrain_paired(m.gy, m.gx, batches, 1, lr=1e-3)
    assert val_loss(m) <= before


# -- synthesis -----------------------------------------------------------------------

def test_synthesize_zero_head_is_identity(ph):
    cfg = small_cfg()
    m = gan.build_models(cfg, zero_heads=True)
    out = gan.synthesize_hr(m.gy, ph.x_hr, cfg)
    assert out.domain is Domain.MANIFOLD and out.dims == ph.x_hr.dims
    assert np.all(out.data == spd.identity())
    assert np.all(metrics.fractional_anisotropy(out.data) == 0.0)


def test_synthesize_is_spd_and_deterministic(ph):
    cfg = small_cfg()
    m = gan.build_models(cfg)
    a = gan.synthesize_hr(m.gy, ph.x_hr, cfg)
    b = gan.synthesize_hr(m.gy, ph.x_hr, cfg)
    assert (spd.min_eigenvalue(a.data) > 0).all()
    assert a.data.tobytes() == b.data.tobytes()
    assert a.metadata["mode"] == "MA_CYCLEGAN"


def test_synthesize_single_patch_equivalence(rng):
    cfg = small_cfg()
    m = gan.build_models(cfg)
    x = ScalarField(rng.uniform(0.5, 1.0, (8, 8, 8)))
    out = gan.synthesize_hr(m.gy, x, cfg)
    direct = spd.exp_id(np.moveaxis(m.gy(Tensor(x.data[None, None])).data[0], 0, -1))
    assert np.array_equal(out.data, direct)
    assert out.metadata["uncovered_voxels"] == 0


def test_synthesize_pads_awkward_dims(rng):
    cfg = small_cfg()
    m = gan.build_models(cfg)
    x = ScalarField(rng.uniform(0.5, 1.0, (11, 6, 13)))
    out = gan.synthesize_hr(m.gy, x, cfg)
    assert out.dims == (11, 6, 13)
    assert (spd.min_eigenvalue(out.data) > 0).all()
    assert gan.padded_dims((11, 6, 13), 8, 4) == (12, 8, 16)


def test_synthesize_background_falls_back_to_identity():
    cfg = small_cfg()
    m = gan.build_models(cfg)
    out = gan.synthesize_hr(m.gy, ScalarField(np.zeros((16, 16, 16))), cfg)
    assert out.metadata["uncovered_voxels"] == 16 ** 3
    assert np.all(out.data == spd.identity())


def test_plain_mode_can_leave_the_manifold(ph):
    cfg = small_cfg(mode="PLAIN_CYCLEGAN")
    m = gan.build_models(cfg)
    out = gan.synthesize_hr(m.gy, ph.x_hr, cfg)
    assert out.domain is Domain.TANGENT
    assert (spd.min_eigenvalue(out.data) <= 0).any()
