"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each row reports the best-of-N wall time per call for both backends and the
speedup. Outputs of the two backends are also compared for bit equality.
"""
import argparse
import time

import numpy as np

from macyclegan import _accel, gan, spd
from macyclegan.nn import kernels


def best_of(fn, repeat):
    fn()  # warm-up (includes JIT compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def with_backend(name, fn):
    saved = _accel.USE_NUMBA
    _accel.USE_NUMBA = name == "numba"
    try:
        return fn()
    finally:
        _accel.USE_NUMBA = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-train", action="store_true", help="skip the full training-step row")
    args = ap.parse_args()
    if not _accel.USE_NUMBA:
        print("numba unavailable or disabled; nothing to compare")
        return

    rng = np.random.default_rng(0)
    a = rng.uniform(-3, 3, (100_000, 6))
    xp = rng.standard_normal((4, 8, 18, 18, 18))
    cols = kernels.im2col(xp, 3, 1, "numpy")

    cases = [
        ("eig_sym3 (1e5 tensors)", lambda b: spd.eig_sym3(a, backend=b)),
        ("im2col (4x8x18^3, k3)", lambda b: kernels.im2col(xp, 3, 1, b)),
        ("col2im (4x8x18^3, k3)", lambda b: kernels.col2im(cols, xp.shape, 3, 1, b)),
    ]
    print(f"{'kernel':<28} {'numba [s]':>10} {'numpy [s]':>10} {'speedup':>8}  identical")
    for name, fn in cases:
        out_nb, out_np = fn("numba"), fn("numpy")
        pairs = zip(out_nb, out_np) if isinstance(out_nb, tuple) else [(out_nb, out_np)]
        same = all(np.array_equal(x, y) for x, y in pairs)
        t_nb = best_of(lambda: fn("numba"), args.repeat)
        t_np = best_of(lambda: fn("numpy"), args.repeat)
        print(f"{name:<28} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.2f}  {same}")

    if args.skip_train:
        return
    from macyclegan import phantom
    ph = phantom.generate()
    cfg = gan.TrainConfig()
    sampler = gan.PatchSampler(ph.x_hr, ph.y_lr, cfg.patch, cfg.factor)
    bx, by = sampler.unpaired(np.random.default_rng(0), cfg.batch)

    def step(b):
        def run():
            models = gan.build_models(cfg)
            trainer = gan.Trainer(models, cfg)
            t0 = time.perf_counter()
            trainer.train_step(bx, by)
            return time.perf_counter() - t0, models.state_arrays()
        return with_backend(b, run)

    step("numba")
    step("numpy")
    t_nb, s_nb = min((step("numba") for _ in range(2)), key=lambda r: r[0])
    t_np, s_np = min((step("numpy") for _ in range(2)), key=lambda r: r[0])
    same = all(np.array_equal(s_nb[k], s_np[k]) for k in s_nb)
    print(f"{'train_step (default config)':<28} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.2f}  {same}")


if __name__ == "__main__":
    main()
