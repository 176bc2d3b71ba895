"""Command-line entry point: ``macg <verb> [options]``.

Exit codes: 0 ok, 2 config, 3 I/O, 4 numeric, 5 checkpoint, 6 shape,
7 gradient check.
"""
import argparse
import os
import statistics
import sys
import warnings

import numpy as np

from . import _accel, checks, gan, metrics, phantom, spd
from .config import Config, reference
from .errors import (ConfigError, FormatError, MacgError, NonFinite, NonFiniteLoss, NotClampablePD,
                     Overflow, ShapeError)
from .field import Domain, ScalarField, TensorField, foreground_mask, read_tfv, write_tfv
from .nn import functional as F
from .nn.checkpoint import load_checkpoint, save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_CHECKPOINT, EXIT_SHAPE, EXIT_GRADCHECK = 0, 2, 3, 4, 5, 6, 7

CHECKPOINT = "checkpoint.mack"
CONFIG_ECHO = "config.txt"
TRAIN_LOG = "train.log"
MODES = list(gan.Mode)
_ARCH_KEYS = ("depth", "base_channels", "critic_width", "critic_stages", "critic_blocks", "patch", "factor")


class CliExit(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def _say(msg):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# helpers


def _load_config(args):
    cfg = Config.load(args.config) if args.config else Config()
    cfg.validate()
    return cfg


def _need_out(args):
    if not args.out:
        raise CliExit(EXIT_IO, f"{args.verb}: --out DIR is required")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _read(path, kind=None):
    try:
        vol = read_tfv(path)
    except FileNotFoundError:
        raise CliExit(EXIT_IO, f"no such file: {path}") from None
    if kind is not None and not isinstance(vol, kind):
        raise CliExit(EXIT_IO, f"{path}: expected a {kind.__name__}")
    return vol


def _model_arrays(models, trainer=None, pretrained=False):
    cfg = models.cfg
    arrays = dict(models.state_arrays())
    arch = [float(getattr(cfg, k)) for k in _ARCH_KEYS] + [float(MODES.index(cfg.mode))]
    arrays["meta.arch"] = np.array(arch)
    arrays["meta.pretrained"] = np.array([1.0 if pretrained else 0.0])
    if trainer is not None:
        arrays.update(trainer.optimizer_arrays())
    return arrays


def _models_from_checkpoint(path, cfg=None):
    try:
        arrays = load_checkpoint(path)
    except FileNotFoundError:
        raise CliExit(EXIT_IO, f"no such checkpoint: {path}") from None
    except FormatError as exc:
        raise CliExit(EXIT_CHECKPOINT, f"{path}: {exc}") from None
    if not any(k.startswith("gy.") for k in arrays):
        raise CliExit(EXIT_CHECKPOINT, f"{path}: checkpoint has no G_Y parameters")
    if "meta.arch" not in arrays:
        raise CliExit(EXIT_CHECKPOINT, f"{path}: checkpoint lacks architecture metadata")
    arch = arrays["meta.arch"]
    kw = {k: int(v) for k, v in zip(_ARCH_KEYS, arch)}
    kw["mode"] = MODES[int(arch[len(_ARCH_KEYS)])]
    tc = cfg.to_dict() if cfg is not None else {}
    tc.update(kw)
    tcfg = gan.TrainConfig(**tc)
    models = gan.build_models(tcfg)
    try:
        models.load_arrays(arrays)
    except (KeyError, ValueError) as exc:
        raise CliExit(EXIT_CHECKPOINT, f"{path}: parameters do not match the architecture: {exc}") from None
    return models, arrays


def _eval_view(f, label):
    """Metric-ready manifold field; tangent-tagged raw tensors are projected."""
    if f.domain is Domain.TANGENT:
        _say(f"warning: {label} is tagged Tangent (non-manifold output); projecting onto SPD for evaluation")
        return TensorField(spd.project_spd(f.data), f.spacing, Domain.MANIFOLD, f.metadata)
    return f


def _pgm(path, img, vmax):
    img = np.asarray(img, dtype=np.float64)
    scaled = np.clip(np.rint(255.0 * np.nan_to_num(img) / vmax if vmax > 0 else 0 * img), 0, 255).astype(int)
    rows = [" ".join(str(v) for v in row) for row in scaled]
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P2\n# value = gray / 255 * {vmax:.17g}\n{img.shape[1]} {img.shape[0]}\n255\n")
        fh.write("\n".join(rows) + "\n")


def dump_slices(out_dir, gen, gt, absolute=True):
    """Mid-slices along each axis of the FA, squared FA error, Log-Euclidean
    distance and cosine maps, as plain (ASCII) PGM files."""
    os.makedirs(out_dir, exist_ok=True)
    fa_gen = metrics.fractional_anisotropy(gen.data)
    fa_gt = metrics.fractional_anisotropy(gt.data)
    _, cos = metrics.cosine_similarity_map(gen, gt, absolute=absolute)
    maps = {
        "fa_gen": (fa_gen, 1.0),
        "fa_gt": (fa_gt, 1.0),
        "fa_sqerr": ((fa_gen - fa_gt) ** 2, None),
        "log_dist": (metrics.le_distance_map(gen, gt), None),
        "cos": (np.abs(cos), 1.0),
    }
    written = []
    for name, (vol, vmax) in maps.items():
        vmax = float(np.max(vol)) if vmax is None else vmax
        for axis, tag in enumerate("xyz"):
            img = np.take(vol, vol.shape[axis] // 2, axis=axis)
            path = os.path.join(out_dir, f"{name}_{tag}.pgm")
            _pgm(path, img, vmax)
            written.append(path)
    return written


# ---------------------------------------------------------------------------
# verbs


def cmd_phantom(args, cfg):
    out = _need_out(args)
    if args.seed is not None:
        cfg.set("data", "seed", args.seed)
    ph = phantom.generate(cfg.phantom_spec())
    write_tfv(os.path.join(out, "x_hr.tfv"), ph.x_hr)
    write_tfv(os.path.join(out, "y_hr.tfv"), ph.y_hr)
    write_tfv(os.path.join(out, "y_lr.tfv"), ph.y_lr)
    with open(os.path.join(out, "spec.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.dumps())
    print(f"wrote phantom {tuple(ph.x_hr.dims)} to {out}")
    return EXIT_OK


def cmd_train(args, cfg):
    out = _need_out(args)
    if args.seed is not None:
        cfg.set("train", "seed", args.seed)
    tcfg = cfg.train_config()
    x = _read(os.path.join(args.data, "x_hr.tfv"), ScalarField)
    y = _read(os.path.join(args.data, "y_lr.tfv"), TensorField)
    ckpt = os.path.join(out, CHECKPOINT)
    log_path = os.path.join(out, TRAIN_LOG)
    resuming = args.resume and os.path.exists(ckpt)
    pretrained = False
    if resuming:
        models, arrays = _models_from_checkpoint(ckpt, tcfg)
        if models.cfg.mode is not tcfg.mode:
            raise CliExit(EXIT_CHECKPOINT, f"checkpoint mode {models.cfg.mode.value} != config mode {tcfg.mode.value}")
        pretrained = bool(arrays.get("meta.pretrained", [0])[0])
        log = open(log_path, "a", encoding="utf-8")
        trainer = gan.Trainer(models, tcfg, log)
        trainer.load_optimizer_arrays(arrays)
    else:
        models = gan.build_models(tcfg)
        models.set_normalizer(gan.fit_normalizer(tcfg, y))
        log = open(log_path, "w", encoding="utf-8")
        log.write(gan.LOG_HEADER)
        trainer = gan.Trainer(models, tcfg, log)
    with open(os.path.join(out, CONFIG_ECHO), "w", encoding="utf-8") as fh:
        fh.write(cfg.dumps())
    sampler = gan.PatchSampler(x, y, tcfg.patch, tcfg.factor, tcfg.foreground_threshold)
    run_cfg = gan.TrainConfig(**{**tcfg.to_dict(), "pretrain_steps": 0}) if pretrained else tcfg
    try:
        gan.run_training(models, sampler, run_cfg, trainer=trainer)
    finally:
        log.close()
        save_checkpoint(ckpt, _model_arrays(models, trainer, pretrained or tcfg.pretrain_steps > 0))
    print(f"trained {tcfg.mode.value} for {trainer.step_count} steps; checkpoint {ckpt}")
    return EXIT_OK


def cmd_synthesize(args, cfg):
    models, _ = _models_from_checkpoint(args.checkpoint, cfg.train_config())
    x = _read(args.input, ScalarField)
    stride = cfg.get("eval", "synth_stride") or None
    out = gan.synthesize_hr(models.gy, x, models.cfg, stride=stride)
    if out.domain is Domain.TANGENT:
        _say(f"warning: {models.cfg.mode.value} output is not guaranteed SPD; "
             "writing a Tangent-tagged file instead of Manifold")
    write_tfv(args.output, out)
    lam_min = float(spd.min_eigenvalue(out.data).min())
    n_bad = int((spd.min_eigenvalue(out.data) <= 0).sum())
    print(f"min_eigenvalue={lam_min:.17g} nonpositive_voxels={n_bad} "
          f"uncovered_voxels={out.metadata['uncovered_voxels']} domain={out.domain.name}")
    return EXIT_OK


def cmd_evaluate(args, cfg):
    gen = _read(args.gen, TensorField)
    gt = _read(args.gt, TensorField)
    if tuple(gen.dims) != tuple(gt.dims):
        raise CliExit(EXIT_SHAPE, f"dims differ: {tuple(gen.dims)} vs {tuple(gt.dims)}")
    gen, gt = _eval_view(gen, args.gen), _eval_view(gt, args.gt)
    mask = None
    if args.mask:
        structural = _read(args.mask, ScalarField)
        mask = foreground_mask(structural, max(cfg.get("eval", "mask_threshold"), 0.0))
    report = metrics.evaluate(gen, gt, mask=mask, absolute=cfg.get("eval", "absolute_cosine"))
    text = report.to_text()
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    if args.check:
        with open(args.report, encoding="utf-8") as fh:
            again = metrics.EvalReport.from_text(fh.read())
        if again.as_dict() != report.as_dict():
            raise CliExit(EXIT_IO, "report re-read does not match the computed values")
        print("check: report round trip ok")
    slices = args.slices or args.out
    if slices:
        paths = dump_slices(slices, gen, gt, cfg.get("eval", "absolute_cosine"))
        print(f"wrote {len(paths)} slice images to {slices}")
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    if args.corrupt:
        F.CORRUPTED.add(args.corrupt)
    try:
        results = checks.run_all(tol=args.tol, n_coords=args.coords,
                                 seed=0 if args.seed is None else args.seed)
    finally:
        F.CORRUPTED.discard(args.corrupt)
    print(checks.format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        _say("gradient check failed for: " + ", ".join(failed))
        return EXIT_GRADCHECK
    return EXIT_OK


ABLATION_COLUMNS = metrics.EvalReport.KEYS


def _ablation_arm(mode, seed, cfg, train_ph, eval_ph):
    tcfg = cfg.train_config(mode=mode, seed=seed, steps=cfg.get("eval", "ablate_steps"),
                            pretrain_steps=cfg.get("eval", "ablate_pretrain_steps"))
    models = gan.build_models(tcfg)
    models.set_normalizer(gan.fit_normalizer(tcfg, train_ph.y_lr))
    sampler = gan.PatchSampler(train_ph.x_hr, train_ph.y_lr, tcfg.patch, tcfg.factor, tcfg.foreground_threshold)
    gan.run_training(models, sampler, tcfg)
    stride = cfg.get("eval", "synth_stride") or None
    gen = gan.synthesize_hr(models.gy, eval_ph.x_hr, tcfg, stride=stride)
    return metrics.evaluate(_eval_view(gen, mode.value) if gen.domain is Domain.TANGENT else gen,
                            eval_ph.y_hr, absolute=cfg.get("eval", "absolute_cosine"))


def format_ablation(rows):
    """``rows``: list of ``(mode, seed, report_dict | None)``."""
    head = f"{'mode':<16} {'seed':>6} " + " ".join(f"{c:>12}" for c in ABLATION_COLUMNS)
    lines = [head]

    def fmt(v, col):
        return f"{int(v):>12d}" if col.startswith("n_") else f"{v:>12.6f}"

    for mode, seed, rep in rows:
        if rep is None:
            lines.append(f"{mode:<16} {seed:>6} " + " ".join(f"{'FAILED':>12}" for _ in ABLATION_COLUMNS))
        else:
            lines.append(f"{mode:<16} {seed:>6} " + " ".join(fmt(rep[c], c) for c in ABLATION_COLUMNS))
    for mode in dict.fromkeys(m for m, _, _ in rows):
        ok = [r for m, _, r in rows if m == mode and r is not None]
        if not ok:
            lines.append(f"{mode:<16} {'median':>6} " + " ".join(f"{'FAILED':>12}" for _ in ABLATION_COLUMNS))
            continue
        med = {c: statistics.median(r[c] for r in ok) for c in ABLATION_COLUMNS}
        lines.append(f"{mode:<16} {'median':>6} " + " ".join(fmt(med[c], c) for c in ABLATION_COLUMNS))
    return "\n".join(lines) + "\n"


def parse_ablation(text):
    """Inverse of :func:`format_ablation` for the median rows: ``{mode: {col: value}}``."""
    lines = text.strip().splitlines()
    cols = lines[0].split()[2:]
    out = {}
    for line in lines[1:]:
        parts = line.split()
        if parts[1] == "median" and parts[2] != "FAILED":
            out[parts[0]] = dict(zip(cols, map(float, parts[2:])))
    return out


def cmd_ablate(args, cfg):
    out = _need_out(args)
    seeds = (args.seed,) if args.seed is not None else cfg.get("eval", "ablate_seeds")
    train_ph = phantom.generate(cfg.phantom_spec())
    eval_ph = phantom.generate(cfg.phantom_spec(seed=cfg.get("data", "holdout_seed")))
    rows = []
    report_dir = os.path.join(out, "reports")
    os.makedirs(report_dir, exist_ok=True)
    for mode in (gan.Mode.MA_GAN, gan.Mode.PLAIN_CYCLEGAN, gan.Mode.MA_CYCLEGAN):
        for seed in seeds:
            try:
                rep = _ablation_arm(mode, seed, cfg, train_ph, eval_ph)
            except (MacgError, FloatingPointError, ValueError) as exc:
                _say(f"arm {mode.value} seed {seed} FAILED: {exc}")
                rows.append((mode.value, seed, None))
                continue
            with open(os.path.join(report_dir, f"{mode.value}_{seed}.txt"), "w", encoding="utf-8") as fh:
                fh.write(rep.to_text())
            rows.append((mode.value, seed, rep.as_dict()))
            _say(f"arm {mode.value} seed {seed}: fa_mse={rep.fa_mse:.6f}")
    table = format_ablation(rows)
    with open(os.path.join(out, "ablation.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    with open(os.path.join(out, CONFIG_ECHO), "w", encoding="utf-8") as fh:
        fh.write(cfg.dumps())
    print(table, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value configuration file")
    common.add_argument("--seed", type=int, metavar="N", help="override the verb's seed")
    common.add_argument("--threads", type=int, metavar="N", help="numba worker threads")
    common.add_argument("--out", metavar="DIR", help="output directory")

    epilog = "configuration keys and defaults:\n\n" + reference()
    p = argparse.ArgumentParser(prog="macg", description="Manifold-aware tensor synthesis toolkit",
                                formatter_class=argparse.RawDescriptionHelpFormatter, epilog=epilog,
                                parents=[common])
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, help_):
        return sub.add_parser(name, help=help_, parents=[common], epilog=epilog,
                              formatter_class=argparse.RawDescriptionHelpFormatter)

    verb("phantom", "generate x_hr / y_hr / y_lr phantom volumes")
    t = verb("train", "train a model on phantom-format data")
    t.add_argument("data", help="directory holding x_hr.tfv and y_lr.tfv")
    t.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.mack")
    s = verb("synthesize", "synthesize an HR tensor volume from a structural volume")
    s.add_argument("checkpoint")
    s.add_argument("input", help="structural volume (TFV)")
    s.add_argument("output", help="tensor volume to write (TFV)")
    e = verb("evaluate", "compare a generated tensor volume with ground truth")
    e.add_argument("gen")
    e.add_argument("gt")
    e.add_argument("report")
    e.add_argument("--check", action="store_true", help="re-read the written report and compare")
    e.add_argument("--slices", metavar="DIR", help="write PGM mid-slices here (defaults to --out)")
    e.add_argument("--mask", metavar="TFV", help="structural volume whose foreground restricts the metrics")
    g = verb("gradcheck", "finite-difference check of every differentiable op")
    g.add_argument("--tol", type=float, default=1e-4, help="relative error tolerance")
    g.add_argument("--coords", type=int, default=checks.N_COORDS, help="coordinates sampled per op")
    g.add_argument("--corrupt", help=argparse.SUPPRESS)
    verb("ablate", "train and evaluate all modes over several seeds")
    return p


COMMANDS = {
    "phantom": cmd_phantom,
    "train": cmd_train,
    "synthesize": cmd_synthesize,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads and _accel.USE_NUMBA:
        import numba
        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    try:
        cfg = _load_config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", metrics.DegenerateWarning)
            return COMMANDS[args.verb](args, cfg)
    except CliExit as exc:
        _say(f"error: {exc}")
        return exc.code
    except ConfigError as exc:
        _say(f"config error: {exc}")
        return EXIT_CONFIG
    except NonFiniteLoss as exc:
        _say(f"numeric error: {exc}")
        return EXIT_NUMERIC
    except (NonFinite, Overflow, NotClampablePD) as exc:
        _say(f"numeric error: {exc}")
        return EXIT_NUMERIC
    except ShapeError as exc:
        _say(f"shape error: {exc}")
        return EXIT_SHAPE
    except (OSError, FormatError) as exc:
        _say(f"I/O error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
