"""Scenario files: strict INI parsing and scenario construction.

A scenario file has up to six sections.  Every key is optional except
``scenario.mode``, ``scenario.dynamics``, ``scenario.M`` and ``scenario.N``;
all others have the defaults listed in ``DEFAULTS``.  Unknown sections or
keys are rejected with ``ConfigError`` naming ``section.key``.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import LtiModel, gramian, random_controllable_pair, unicycle
from .engine import Scenario
from .errors import BadCovariance, ConfigError, GramianIllConditioned, NotControllable
from .measures import load_measure, sample_target_from_mixture

REQUIRED = {("scenario", "mode"), ("scenario", "dynamics"), ("scenario", "M"), ("scenario", "N")}

# Default target: three Gaussian modes on the default 300 x 300 domain.
DEFAULT_MIXTURE = """
75 210 360 0 360 0.3
210 210 540 180 270 0.3
150 75 720 0 225 0.4"""

DEFAULTS = {
    "scenario": {
        "mode": None, "dynamics": None, "M": None, "N": None,
        "H": "50", "L": "20", "r_c": "20", "gamma": "0", "seed": "0",
        "staleness": "none", "drop_prob": "0", "controller": "one_step", "order": "ascending",
        "w2_every_step": "false",
    },
    "domain": {"bounds": "0 0 300 300"},
    "initial": {"kind": "concentrated", "box": "0 0 30 30", "path": "", "heading": "random"},
    "target": {"kind": "mixture", "components": DEFAULT_MIXTURE, "path": ""},
    "model": {
        "model_seed": "0", "spectral_radius": "0.97", "A": "", "B": "",
        "dt": "0.1", "lookahead": "auto", "r_weight": "1e-2",
    },
    "output": {"dir": "out", "snapshots": "true", "dumps": "false"},
}


@dataclass
class ScenarioConfig:
    """Validated scenario with every default materialized."""

    mode: str
    dynamics: str
    M: int
    N: int
    H: int = 50
    L: int = 20
    r_c: float = 20.0
    gamma: float = 0.0
    seed: int = 0
    staleness: int | None = None
    drop_prob: float = 0.0
    controller: str = "one_step"
    order: str = "ascending"
    w2_every_step: bool = False
    bounds: tuple = (0.0, 0.0, 300.0, 300.0)
    initial_kind: str = "concentrated"
    initial_box: tuple = (0.0, 0.0, 30.0, 30.0)
    initial_path: str = ""
    heading: str = "random"
    target_kind: str = "mixture"
    components: list = field(default_factory=list)
    target_path: str = ""
    model_seed: int = 0
    spectral_radius: float = 0.97
    A: tuple = ()
    B: tuple = ()
    dt: float = 0.1
    lookahead: float = float("nan")
    r_weight: float = 1e-2
    out_dir: str = "out"
    snapshots: bool = True
    dumps: bool = False
    base_dir: str = "."

    def to_ini(self) -> str:
        """Render back to a scenario file that parses to an equal config."""
        def nums(v):
            return " ".join(repr(float(x)) for x in v)

        comps = "".join("\n    " + nums(c) for c in self.components)
        sections = {
            "scenario": {
                "mode": self.mode, "dynamics": self.dynamics, "M": self.M, "N": self.N,
                "H": self.H, "L": self.L, "r_c": repr(self.r_c), "gamma": repr(self.gamma),
                "seed": self.seed, "staleness": "none" if self.staleness is None else self.staleness,
                "drop_prob": repr(self.drop_prob), "controller": self.controller, "order": self.order,
                "w2_every_step": str(self.w2_every_step).lower(),
            },
            "domain": {"bounds": nums(self.bounds)},
            "initial": {"kind": self.initial_kind, "box": nums(self.initial_box),
                        "path": self.initial_path, "heading": self.heading},
            "target": {"kind": self.target_kind, "components": comps, "path": self.target_path},
            "model": {"model_seed": self.model_seed, "spectral_radius": repr(self.spectral_radius),
                      "A": nums(self.A), "B": nums(self.B), "dt": repr(self.dt),
                      "lookahead": repr(self.lookahead), "r_weight": repr(self.r_weight)},
            "output": {"dir": self.out_dir, "snapshots": str(self.snapshots).lower(),
                       "dumps": str(self.dumps).lower()},
        }
        lines = []
        for sec, kv in sections.items():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in kv.items())
            lines.append("")
        return "\n".join(lines)

    def as_dict(self):
        d = dict(self.__dict__)
        d.pop("base_dir")
        d["components"] = [list(c) for c in self.components]
        for k in ("bounds", "initial_box", "A", "B"):
            d[k] = list(d[k])
        return d


# ------------------------------------------------------------------ parsing


def _reader():
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    return cp


def _num(key, text, kind=float):
    try:
        v = kind(text)
    except ValueError:
        raise ConfigError(key, f"expected {kind.__name__}, got {text!r}") from None
    if kind is float and not math.isfinite(v):
        raise ConfigError(key, "must be finite")
    return v


def _vec(key, text, length=None, optional=False):
    vals = tuple(_num(key, p) for p in text.split())
    if length is not None and len(vals) != length and not (optional and not vals):
        raise ConfigError(key, f"expected {length} numbers, got {len(vals)}")
    return vals


def _bool(key, text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {text!r}")


def _choice(key, text, options):
    if text not in options:
        raise ConfigError(key, f"must be one of {', '.join(options)}, got {text!r}")
    return text


def _mixture(key, text):
    comps = []
    for line in text.strip().splitlines():
        line = line.strip()
        if not line:
            continue
        vals = _vec(key, line)
        if len(vals) != 6:
            raise ConfigError(key, "each component needs 'mx my cxx cxy cyy weight'")
        comps.append(vals)
    if not comps:
        raise ConfigError(key, "no mixture components")
    total = math.fsum(c[5] for c in comps)
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(key, f"component weights sum to {total!r}, not 1")
    return comps


def parse_config_text(text, base_dir=".") -> ScenarioConfig:
    cp = _reader()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc).splitlines()[0]) from None
    raw = {}
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(sec, "unknown section")
        for key, value in cp.items(sec):
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"{sec}.{key}", "unknown key")
            raw[(sec, key)] = value.strip()
    for sec, key in sorted(REQUIRED):
        if not raw.get((sec, key)):
            raise ConfigError(f"{sec}.{key}", "required")

    def get(sec, key):
        return raw.get((sec, key), DEFAULTS[sec][key])

    s = "scenario"
    mode = _choice("scenario.mode", get(s, "mode"), ("centralized", "decentralized"))
    dynamics = _choice("scenario.dynamics", get(s, "dynamics"), ("lti", "unicycle"))
    M = _num("scenario.M", get(s, "M"), int)
    N = _num("scenario.N", get(s, "N"), int)
    H = _num("scenario.H", get(s, "H"), int)
    L = _num("scenario.L", get(s, "L"), int)
    r_c = _num("scenario.r_c", get(s, "r_c"))
    gamma = _num("scenario.gamma", get(s, "gamma"))
    seed = _num("scenario.seed", get(s, "seed"), int)
    st = get(s, "staleness")
    staleness = None if st.lower() == "none" else _num("scenario.staleness", st, int)
    drop = _num("scenario.drop_prob", get(s, "drop_prob"))
    controller = _choice("scenario.controller", get(s, "controller"), ("one_step", "horizon"))
    order = _choice("scenario.order", get(s, "order"), ("ascending", "shuffle"))
    w2_every = _bool("scenario.w2_every_step", get(s, "w2_every_step"))

    if M < 1:
        raise ConfigError("scenario.M", "need at least one agent")
    if N < 1:
        raise ConfigError("scenario.N", "need at least one target sample")
    if H < 1:
        raise ConfigError("scenario.H", "horizon must be positive")
    if dynamics == "lti" and H < 2:
        raise ConfigError("scenario.H", "horizon must be at least the state dimension (2)")
    if L < 0:
        raise ConfigError("scenario.L", "cycle count must be non-negative")
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError("scenario.gamma", "gamma out of range [0, 1]")
    if r_c <= 0:
        raise ConfigError("scenario.r_c", "communication range must be positive")
    if staleness is not None and staleness < 0:
        raise ConfigError("scenario.staleness", "must be non-negative or 'none'")
    if not 0.0 <= drop < 1.0:
        raise ConfigError("scenario.drop_prob", "must lie in [0, 1)")
    if controller == "horizon" and dynamics == "lti":
        raise ConfigError("scenario.controller", "the horizon solver applies to unicycle dynamics")

    bounds = _vec("domain.bounds", get("domain", "bounds"), 4)
    if not (bounds[2] > bounds[0] and bounds[3] > bounds[1]):
        raise ConfigError("domain.bounds", "expected 'xmin ymin xmax ymax' with positive extent")

    kind = _choice("initial.kind", get("initial", "kind"), ("concentrated", "uniform", "file"))
    box = _vec("initial.box", get("initial", "box"), 4)
    if not (box[2] > box[0] and box[3] > box[1]):
        raise ConfigError("initial.box", "expected 'xmin ymin xmax ymax' with positive extent")
    ipath = get("initial", "path")
    if kind == "file" and not ipath:
        raise ConfigError("initial.path", "required when kind = file")
    heading = get("initial", "heading")
    if heading != "random":
        _num("initial.heading", heading)

    tkind = _choice("target.kind", get("target", "kind"), ("mixture", "file"))
    comps = _mixture("target.components", get("target", "components")) if tkind == "mixture" else []
    tpath = get("target", "path")
    if tkind == "file" and not tpath:
        raise ConfigError("target.path", "required when kind = file")

    m = "model"
    A = _vec("model.A", get(m, "A"), 4, optional=True)
    B = _vec("model.B", get(m, "B"), 2, optional=True)
    if bool(A) != bool(B):
        raise ConfigError("model.B" if A else "model.A", "A and B must be given together")
    rho = _num("model.spectral_radius", get(m, "spectral_radius"))
    if rho <= 0:
        raise ConfigError("model.spectral_radius", "must be positive")
    dt = _num("model.dt", get(m, "dt"))
    if dt <= 0:
        raise ConfigError("model.dt", "must be positive")
    la = get(m, "lookahead")
    diag = math.hypot(bounds[2] - bounds[0], bounds[3] - bounds[1])
    lookahead = 0.01 * diag if la == "auto" else _num("model.lookahead", la)
    if lookahead <= 0:
        raise ConfigError("model.lookahead", "must be positive")
    r_weight = _num("model.r_weight", get(m, "r_weight"))
    if r_weight <= 0:
        raise ConfigError("model.r_weight", "must be positive")

    return ScenarioConfig(
        mode=mode, dynamics=dynamics, M=M, N=N, H=H, L=L, r_c=r_c, gamma=gamma, seed=seed,
        staleness=staleness, drop_prob=drop, controller=controller, order=order, w2_every_step=w2_every,
        bounds=bounds, initial_kind=kind, initial_box=box, initial_path=ipath, heading=heading,
        target_kind=tkind, components=comps, target_path=tpath,
        model_seed=_num("model.model_seed", get(m, "model_seed"), int), spectral_radius=rho,
        A=A, B=B, dt=dt, lookahead=lookahead, r_weight=r_weight,
        out_dir=get("output", "dir"), snapshots=_bool("output.snapshots", get("output", "snapshots")),
        dumps=_bool("output.dumps", get("output", "dumps")), base_dir=str(base_dir),
    )


def parse_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("file", f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text, base_dir=path.parent)


# ------------------------------------------------------------------ presets

PRESETS = {
    "lti_centralized_concentrated": """
[scenario]
mode = centralized
dynamics = lti
M = 30
N = 1000
[initial]
kind = concentrated
""",
    "lti_decentralized_uniform": """
[scenario]
mode = decentralized
dynamics = lti
M = 30
N = 1000
gamma = 0
[initial]
kind = uniform
""",
    "unicycle_decentralized_nomem": """
[scenario]
mode = decentralized
dynamics = unicycle
M = 100
N = 1538
gamma = 0
[model]
r_weight = 1e-3
""",
    "unicycle_decentralized_memory": """
[scenario]
mode = decentralized
dynamics = unicycle
M = 100
N = 1538
gamma = 0.7
[model]
r_weight = 1e-3
""",
}


def preset(name) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return parse_config_text(PRESETS[name])


def with_overrides(cfg: ScenarioConfig, seed=None, cycles=None, out_dir=None) -> ScenarioConfig:
    text = cfg.to_ini()
    new = parse_config_text(text, cfg.base_dir)
    if seed is not None:
        new.seed = int(seed)
    if cycles is not None:
        if cycles < 0:
            raise ConfigError("scenario.L", "cycle count must be non-negative")
        new.L = int(cycles)
    if out_dir is not None:
        new.out_dir = str(out_dir)
    return new


# ------------------------------------------------------------------ building


def _resolve(cfg, p):
    p = Path(p)
    return p if p.is_absolute() else Path(cfg.base_dir) / p


def _targets(cfg: ScenarioConfig):
    if cfg.target_kind == "file":
        try:
            tg = load_measure(_resolve(cfg, cfg.target_path))
        except OSError as exc:
            raise ConfigError("target.path", f"cannot read: {exc.strerror}") from None
        if tg.dim != 2:
            raise ConfigError("target.path", "targets must be planar")
        if len(tg) != cfg.N:
            raise ConfigError("target.path", f"file holds {len(tg)} samples but N = {cfg.N}")
        return tg
    mix = [((c[0], c[1]), np.array([[c[2], c[3]], [c[3], c[4]]]), c[5]) for c in cfg.components]
    try:
        return sample_target_from_mixture(mix, cfg.N, cfg.seed)
    except BadCovariance as exc:
        raise ConfigError("target.components", str(exc)) from None


def _initial_positions(cfg: ScenarioConfig, rng):
    if cfg.initial_kind == "file":
        try:
            pts = np.atleast_2d(np.loadtxt(_resolve(cfg, cfg.initial_path), comments="#", ndmin=2))
        except OSError as exc:
            raise ConfigError("initial.path", f"cannot read: {exc.strerror}") from None
        if pts.shape[0] != cfg.M or pts.shape[1] < 2:
            raise ConfigError("initial.path", f"expected {cfg.M} rows of 'x y'")
        return pts[:, :2]
    lo = np.array(cfg.initial_box[:2] if cfg.initial_kind == "concentrated" else cfg.bounds[:2])
    hi = np.array(cfg.initial_box[2:] if cfg.initial_kind == "concentrated" else cfg.bounds[2:])
    return rng.uniform(lo, hi, size=(cfg.M, 2))


def _lti_model(cfg: ScenarioConfig):
    if cfg.A:
        A = np.array(cfg.A).reshape(2, 2)
        B = np.array(cfg.B).reshape(2, 1)
    else:
        A, B = random_controllable_pair(2, 1, np.random.default_rng(cfg.model_seed),
                                        horizon=cfg.H, spectral_radius=cfg.spectral_radius)
    try:
        return LtiModel(A, B, cfg.H)
    except NotControllable as exc:
        raise ConfigError("model.A", str(exc)) from None


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Materialize targets, initial states and the dynamics model."""
    rng = np.random.default_rng([cfg.seed, 1])
    targets = _targets(cfg)
    pos = _initial_positions(cfg, rng)
    if cfg.dynamics == "lti":
        model = _lti_model(cfg)
        try:
            gramian(model)
        except GramianIllConditioned as exc:
            raise ConfigError("model.A", str(exc)) from None
        initial = pos
    else:
        model = unicycle(cfg.dt, cfg.lookahead, cfg.r_weight * np.eye(2))
        if cfg.heading == "random":
            theta = rng.uniform(-np.pi, np.pi, cfg.M)
        else:
            theta = np.full(cfg.M, float(cfg.heading))
        initial = np.column_stack([pos, theta])
    return Scenario(
        mode=cfg.mode, model=model, targets=targets, initial=initial, horizon=cfg.H,
        cycles=cfg.L, gamma=cfg.gamma, r_c=cfg.r_c, staleness=cfg.staleness,
        drop_prob=cfg.drop_prob, controller=cfg.controller, order=cfg.order,
        w2_every_step=cfg.w2_every_step,
        seed=cfg.seed,
    )
