"""``key = value`` configuration documents with ``[data]``, ``[model]``,
``[train]`` and ``[eval]`` sections.

Values are typed by a fixed schema; unknown sections or keys are errors that
carry the offending line and column. Bundle geometry is addressed as
``bundle<i>.<field>`` inside ``[data]``.
"""
import re
from dataclasses import fields

from .errors import ConfigError, InfeasibleFA
from .gan import Mode, TrainConfig
from .phantom import Bundle, PhantomSpec, default_bundles, solve_axisym_eigs

_TRAIN_DEFAULTS = {f.name: f.default for f in fields(TrainConfig)}


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, Mode):
        return v.value
    return str(v)


def _parse_bool(s):
    low = s.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _tuple_of(conv, n=None):
    def parse(s):
        parts = [p.strip() for p in s.split(",") if p.strip()]
        if n is not None and len(parts) == 1:
            parts = parts * n
        if n is not None and len(parts) != n:
            raise ValueError(f"expected {n} comma-separated values, got {len(parts)}")
        return tuple(conv(p) for p in parts)
    return parse


def _choice(*options):
    def parse(s):
        if s not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return s
    return parse


# section -> key -> (parser, default, help)
SCHEMA = {
    "data": {
        "dims": (_tuple_of(int, 3), (48, 48, 48), "phantom grid size (voxels)"),
        "seed": (int, 0, "phantom noise seed"),
        "spacing": (_tuple_of(float, 3), (1.0, 1.0, 1.0), "voxel spacing (mm)"),
        "background_md": (float, 1.0, "mean diffusivity of isotropic background tensors"),
        "background_intensity": (float, 0.3, "structural intensity outside bundles"),
        "bundle_intensity": (float, 0.8, "structural intensity inside bundles"),
        "noise_sigma": (float, 0.02, "additive Gaussian noise on the structural image"),
        "lr_factor": (int, 2, "HR / LR resolution ratio"),
        "bundles": (_choice("default", "none"), "default", "starting bundle list"),
        "holdout_seed": (int, 1001, "seed of the held-out evaluation phantom"),
    },
    "model": {
        "depth": (int, _TRAIN_DEFAULTS["depth"], "generator downsampling levels"),
        "base_channels": (int, _TRAIN_DEFAULTS["base_channels"], "generator width at full resolution"),
        "critic_width": (int, _TRAIN_DEFAULTS["critic_width"], "critic stem width"),
        "critic_stages": (int, _TRAIN_DEFAULTS["critic_stages"], "critic resolution stages"),
        "critic_blocks": (int, _TRAIN_DEFAULTS["critic_blocks"], "residual blocks per critic stage"),
        "patch": (int, _TRAIN_DEFAULTS["patch"], "HR patch edge (voxels)"),
        "factor": (int, _TRAIN_DEFAULTS["factor"], "resampling factor between HR and LR"),
        "normalize": (_choice("default", "identity", "auto"), "default",
                      "tensor output scaling: identity, auto (data min/max) or default per mode"),
    },
    "train": {
        "mode": (_choice(*(m.value for m in Mode)), Mode.MA_CYCLEGAN.value, "model variant"),
        "lambda_cyc_x": (float, 3.0, "forward cycle weight"),
        "lambda_cyc_y": (float, 1.0, "backward cycle weight"),
        "lambda_gan_x": (float, 1.0, "structural adversarial weight"),
        "lambda_gan_y": (float, 1.0, "tensor adversarial weight"),
        "clip": (float, 0.01, "critic weight clipping bound"),
        "n_critic": (int, 5, "critic updates per generator update"),
        "batch": (int, 4, "patches per batch"),
        "steps": (int, 200, "adversarial training steps"),
        "steps_per_epoch": (int, 50, "steps between plateau checks"),
        "lr": (float, 1e-4, "Adam learning rate"),
        "pretrain_steps": (int, 0, "paired pretraining steps before adversarial training"),
        "pretrain_lr": (float, 1e-3, "Adam learning rate during paired pretraining"),
        "plateau_patience": (int, 3, "epochs without improvement before decay"),
        "plateau_factor": (float, 0.5, "learning-rate decay factor"),
        "plateau_min_delta": (float, 1e-4, "minimum improvement that resets patience"),
        "foreground_threshold": (float, 0.1, "structural intensity threshold for patch centers"),
        "seed": (int, 7, "initialization and batch sampling seed"),
    },
    "eval": {
        "absolute_cosine": (_parse_bool, True, "use |cos| between principal directions"),
        "mask_threshold": (float, -1.0, "evaluate where gt structural > threshold; negative = all voxels"),
        "synth_stride": (int, 0, "synthesis patch stride; 0 = patch / 2"),
        "ablate_seeds": (_tuple_of(int), (1, 2, 3), "seeds for the ablation sweep"),
        "ablate_steps": (int, 20, "adversarial steps per ablation arm"),
        "ablate_pretrain_steps": (int, 150, "paired pretraining steps per ablation arm"),
    },
}

BUNDLE_FIELDS = {
    "kind": _choice("line", "arc"),
    "radius": float,
    "fa": float,
    "md": float,
    "point": _tuple_of(float, 3),
    "direction": _tuple_of(float, 3),
    "center": _tuple_of(float, 3),
    "u": _tuple_of(float, 3),
    "v": _tuple_of(float, 3),
    "arc_radius": float,
    "angles": _tuple_of(float, 2),
}

_BUNDLE_KEY = re.compile(r"^bundle(\d+)\.(\w+)$")
_SECTION = re.compile(r"^\[\s*(\w+)\s*\]$")


class Config:
    """Parsed configuration; ``values[section][key]`` holds typed values.

    Only keys present in the source text are stored in ``explicit``; defaults
    fill in the rest.
    """

    def __init__(self, explicit=None):
        self.explicit = {s: dict(v) for s, v in (explicit or {}).items()}
        self.positions = {}

    @classmethod
    def parse(cls, text):
        cfg = cls()
        section = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].rstrip()
            if not line.strip():
                continue
            col = len(line) - len(line.lstrip()) + 1
            stripped = line.strip()
            m = _SECTION.match(stripped)
            if m:
                section = m.group(1)
                if section not in SCHEMA:
                    raise ConfigError(f"unknown section [{section}]", key=section, line=lineno, column=col)
                continue
            if "=" not in stripped:
                raise ConfigError(f"expected 'key = value', got {stripped!r}", line=lineno, column=col)
            if section is None:
                raise ConfigError("key outside of any [section]", line=lineno, column=col)
            key, value = (p.strip() for p in stripped.split("=", 1))
            vcol = raw.index("=") + 2 + (len(raw.split("=", 1)[1]) - len(raw.split("=", 1)[1].lstrip()))
            full = f"{section}.{key}"
            parser = cls._parser_for(section, key)
            if parser is None:
                raise ConfigError(f"unknown key {full!r}", key=full, line=lineno, column=col)
            try:
                parsed = parser(value)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {full!r}: {exc}", key=full, line=lineno, column=vcol) from None
            cfg.explicit.setdefault(section, {})[key] = parsed
            cfg.positions[full] = (lineno, vcol)
        cfg.validate()
        return cfg

    @staticmethod
    def _parser_for(section, key):
        if key in SCHEMA[section]:
            return SCHEMA[section][key][0]
        if section == "data":
            m = _BUNDLE_KEY.match(key)
            if m and m.group(2) in BUNDLE_FIELDS:
                return BUNDLE_FIELDS[m.group(2)]
        return None

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def get(self, section, key):
        if key in self.explicit.get(section, {}):
            return self.explicit[section][key]
        return SCHEMA[section][key][1]

    def set(self, section, key, value):
        if self._parser_for(section, key) is None:
            raise ConfigError(f"unknown key {section}.{key!r}", key=f"{section}.{key}")
        self.explicit.setdefault(section, {})[key] = value

    def _error(self, msg, full):
        line, col = self.positions.get(full, (None, None))
        return ConfigError(msg, key=full, line=line, column=col)

    def validate(self):
        try:
            self.phantom_spec()
        except InfeasibleFA as exc:
            bad = next((k for k in self.positions if k.endswith(".fa") or k.endswith(".md")), "data")
            for full in self.positions:
                m = _BUNDLE_KEY.match(full.split(".", 1)[1]) if full.startswith("data.") else None
                if m and m.group(2) in ("fa", "md"):
                    b = self.explicit["data"][full.split(".", 1)[1]]
                    if (m.group(2) == "fa" and not 0 <= b < 1) or (m.group(2) == "md" and b <= 0):
                        bad = full
                        break
            raise self._error(f"{bad}: {exc}", bad) from None
        except ValueError as exc:
            raise self._error(str(exc), "data") from None
        try:
            self.train_config()
        except ConfigError as exc:
            full = next((k for k in self.positions if k.endswith("." + (exc.key or "?"))), exc.key)
            raise self._error(str(exc).split(" (line")[0], full) from None

    # -- typed views ---------------------------------------------------------

    def bundles(self):
        base = default_bundles(self.get("data", "dims")) if self.get("data", "bundles") == "default" else []
        overrides = {}
        for key, value in self.explicit.get("data", {}).items():
            m = _BUNDLE_KEY.match(key)
            if m:
                overrides.setdefault(int(m.group(1)), {})[m.group(2)] = value
        for idx in sorted(overrides):
            while len(base) <= idx:
                base.append(Bundle())
            for name, value in overrides[idx].items():
                setattr(base[idx], name, value)
        return base

    def phantom_spec(self, seed=None):
        spec = PhantomSpec(
            dims=self.get("data", "dims"),
            seed=self.get("data", "seed") if seed is None else seed,
            bundles=self.bundles(),
            background_md=self.get("data", "background_md"),
            background_intensity=self.get("data", "background_intensity"),
            bundle_intensity=self.get("data", "bundle_intensity"),
            noise_sigma=self.get("data", "noise_sigma"),
            spacing=self.get("data", "spacing"),
            lr_factor=self.get("data", "lr_factor"),
        )
        for b in spec.bundles:
            solve_axisym_eigs(b.fa, b.md)
        spec.validate()
        return spec

    def train_config(self, **overrides):
        kw = {}
        for section in ("model", "train"):
            for key in SCHEMA[section]:
                kw[key] = self.get(section, key)
        kw.update(overrides)
        return TrainConfig(**kw)

    # -- serialization -------------------------------------------------------

    def dumps(self, include_defaults=True):
        out = []
        for section, keys in SCHEMA.items():
            out.append(f"[{section}]")
            for key in keys:
                if include_defaults or key in self.explicit.get(section, {}):
                    out.append(f"{key} = {_fmt(self.get(section, key))}")
            if section == "data":
                for key in sorted(k for k in self.explicit.get("data", {}) if _BUNDLE_KEY.match(k)):
                    out.append(f"{key} = {_fmt(self.explicit['data'][key])}")
            out.append("")
        return "\n".join(out)

    def values(self):
        d = {s: {k: self.get(s, k) for k in SCHEMA[s]} for s in SCHEMA}
        for key, value in self.explicit.get("data", {}).items():
            if _BUNDLE_KEY.match(key):
                d["data"][key] = value
        return d

    def __eq__(self, other):
        return isinstance(other, Config) and self.values() == other.values()


def reference():
    """Every key with its default, grouped by section."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, default, help_) in keys.items():
            lines.append(f"  {key} = {_fmt(default)}    # {help_}")
        if section == "data":
            lines.append("  bundle<i>.<field> = ...    # override bundle i; fields: " + ", ".join(BUNDLE_FIELDS))
    return "\n".join(lines) + "\n"

