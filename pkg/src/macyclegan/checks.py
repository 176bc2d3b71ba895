"""Finite-difference self-check of every differentiable primitive and of the
full generator / critic objective on a small architecture."""
import numpy as np

from . import gan
from .nn import functional as F
from .nn.autograd import Tensor
from .nn.gradcheck import gradcheck

N_COORDS = 200


def _away_from(x, points, margin):
    """Push entries of ``x`` at least ``margin`` away from each kink in ``points``."""
    x = x.copy()
    for p in points:
        close = np.abs(x - p) < margin
        x[close] = p + np.where(x[close] >= p, margin, -margin)
    return x


def primitive_cases(rng):
    """``(name, loss_fn, tensors)`` triples, one per primitive."""
    def T(*shape, kinks=(), margin=1e-2):
        return Tensor(_away_from(rng.standard_normal(shape), kinks, margin))

    cases = []

    a, b = T(4, 6, 10), T(1, 6, 10)
    wa = rng.standard_normal((4, 6, 10))
    cases.append(("add", lambda: F.sum(F.mul(F.add(a, b), wa)), [a, b]))
    c, d = T(4, 6, 10), T(4, 6, 10)
    wc = rng.standard_normal((4, 6, 10))
    cases.append(("sub", lambda: F.sum(F.mul(F.sub(c, d), wc)), [c, d]))
    e, f = T(4, 6, 10), T(4, 1, 10)
    we = rng.standard_normal((4, 6, 10))
    cases.append(("mul", lambda: F.sum(F.mul(F.mul(e, f), we)), [e, f]))
    g = T(5, 8, 6)
    wg = rng.standard_normal((5, 6))
    cases.append(("sum", lambda: F.sum(F.mul(F.sum(g, axis=1), wg)), [g]))
    h = T(5, 8, 6)
    wh = rng.standard_normal((8, 6))
    cases.append(("mean", lambda: F.sum(F.mul(F.mean(h, axis=0), wh)), [h]))
    i = T(240, kinks=(0.0,))
    wi = rng.standard_normal(240)
    cases.append(("abs", lambda: F.sum(F.mul(F.abs(i), wi)), [i]))
    j = T(4, 60)
    wj = rng.standard_normal((12, 20))
    cases.append(("reshape", lambda: F.sum(F.mul(F.reshape(j, (12, 20)), wj)), [j]))
    k1, k2 = T(2, 3, 4, 4, 4), T(2, 2, 4, 4, 4)
    wk = rng.standard_normal((2, 5, 4, 4, 4))
    cases.append(("concat", lambda: F.sum(F.mul(F.concat([k1, k2], axis=1), wk)), [k1, k2]))
    m1, m2 = T(12, 20), T(20, 15)
    wm = rng.standard_normal((12, 15))
    cases.append(("matmul", lambda: F.sum(F.mul(F.matmul(m1, m2), wm)), [m1, m2]))
    n = T(250, kinks=(0.0,))
    wn = rng.standard_normal(250)
    cases.append(("leaky_relu", lambda: F.sum(F.mul(F.leaky_relu(n), wn)), [n]))
    o = T(250)
    wo = rng.standard_normal(250)
    cases.append(("sigmoid", lambda: F.sum(F.mul(F.sigmoid(o), wo)), [o]))
    p = T(250, kinks=(-1.0, 1.0))
    wp = rng.standard_normal(250)
    cases.append(("hard_tanh", lambda: F.sum(F.mul(F.hard_tanh(p), wp)), [p]))

    x1, w1, b1 = T(2, 2, 6, 6, 6), T(3, 2, 3, 3, 3), T(3)
    wx1 = rng.standard_normal((2, 3, 6, 6, 6))
    cases.append(("conv3d", lambda: F.sum(F.mul(F.conv3d(x1, w1, b1, 1, 1), wx1)), [x1, w1, b1]))
    x2, w2, b2 = T(2, 2, 8, 8, 8), T(3, 2, 3, 3, 3), T(3)
    wx2 = rng.standard_normal((2, 3, 4, 4, 4))
    cases.append(("conv3d_stride2", lambda: F.sum(F.mul(F.conv3d(x2, w2, b2, 2, 1), wx2)), [x2, w2, b2]))
    x3, w3 = T(2, 4, 5, 5, 5), T(3, 4, 1, 1, 1)
    wx3 = rng.standard_normal((2, 3, 5, 5, 5))
    cases.append(("conv3d_1x1", lambda: F.sum(F.mul(F.conv3d(x3, w3, None, 1, 0), wx3)), [x3, w3]))
    q = T(2, 2, 6, 6, 6)
    wq = rng.standard_normal((2, 2, 3, 3, 3))
    cases.append(("downsample_avg2", lambda: F.sum(F.mul(F.downsample_avg2(q), wq)), [q]))
    r = T(2, 3, 4, 4, 4)
    wr = rng.standard_normal((2, 3, 8, 8, 8))
    cases.append(("upsample_nearest2", lambda: F.sum(F.mul(F.upsample_nearest2(r), wr)), [r]))
    s = T(2, 2, 4, 4, 4)
    ws = rng.standard_normal((2, 2, 8, 8, 8))
    cases.append(("resample_linear_up", lambda: F.sum(F.mul(F.resample_linear(s, 2.0), ws)), [s]))
    s2 = T(2, 2, 8, 8, 8)
    ws2 = rng.standard_normal((2, 2, 4, 4, 4))
    cases.append(("resample_linear_down", lambda: F.sum(F.mul(F.resample_linear(s2, 0.5), ws2)), [s2]))
    t = T(2, 9, 3, 3, 3)
    wt = rng.standard_normal((2, 6, 3, 3, 3))
    cases.append(("symmetrize9", lambda: F.sum(F.mul(F.symmetrize9(t), wt)), [t]))
    # shift one argument so no element difference sits near the |.| kink
    u1 = T(2, 3, 6, 6, 6)
    u2 = Tensor(u1.data + _away_from(rng.standard_normal(u1.shape), (0.0,), 1e-2))
    cases.append(("l1_mean", lambda: F.l1_mean(u1, u2), [u1, u2]))
    return cases


def composite_case(seed=0, mode=gan.Mode.MA_CYCLEGAN):
    """Full objective on a 2-level generator / critic pair at 8^3 HR patches.

    Returns ``(loss_fn, parameter_tensors)``; the objective is the sum of the
    two weighted Wasserstein terms and the two weighted cycle terms.
    """
    cfg = gan.TrainConfig(mode=mode, patch=8, factor=2, depth=2, base_channels=4, critic_width=4,
                          critic_stages=2, critic_blocks=1, batch=2, seed=seed)
    models = gan.build_models(cfg)
    rng = np.random.default_rng([seed, 99])
    # widen the critics beyond the clip box so their gradients are not tiny
    for p in models.critics():
        p.data[...] = rng.uniform(-0.3, 0.3, p.data.shape)
    x = rng.uniform(0.2, 0.9, (2, 1, 8, 8, 8))
    a = rng.standard_normal((2, 4, 4, 4, 3, 3)) * 0.3
    y = np.stack([(a @ np.swapaxes(a, -1, -2) + np.eye(3))[..., i, j]
                  for i, j in ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))], axis=1)

    def loss_fn():
        wx = gan.loss_gan_x(models.gx, models.dx, y, x, cfg)
        wy = gan.loss_gan_y(models.gy, models.dy, x, y, cfg)
        fwd, bwd = gan.loss_cycle(models.gy, models.gx, x, y, cfg)
        total = F.add(F.mul(wx, cfg.lambda_gan_x), F.mul(wy, cfg.lambda_gan_y))
        total = F.add(total, F.mul(fwd, cfg.lambda_cyc_x))
        return F.add(total, F.mul(bwd, cfg.lambda_cyc_y))

    params = models.generators() + models.critics()
    return loss_fn, params


def run_all(tol=1e-4, n_coords=N_COORDS, seed=0, include_composite=True):
    """Run every check; returns a list of ``CheckResult``."""
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, tensors in primitive_cases(rng):
        results.append(gradcheck(name, fn, tensors, n_coords=n_coords, tol=tol,
                                 rng=np.random.default_rng([seed, len(results)])))
    if include_composite:
        fn, params = composite_case(seed)
        results.append(gradcheck("composite_objective", fn, params, n_coords=n_coords, tol=tol,
                                 rng=np.random.default_rng([seed, 1000])))
    return results


def format_table(results):
    lines = [f"{'op':<24} {'worst_rel_err':>14} {'coords':>7} {'kinked':>7}  status"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.name:<24} {r.worst_rel_error:>14.3e} {r.n_coords:>7} {r.n_nonsmooth:>7}  {status}")
    return "\n".join(lines)
