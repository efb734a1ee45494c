"""Pipeline configuration files.

A config is a sectioned key-value file (``configparser`` syntax) with units
in the key names. Temperatures are given in Celsius and converted to Kelvin
here, once. Time-dependent test loads are polynomials in ``t`` (seconds),
listed as ascending coefficients.

Example::

    [model]
    id = heat_sink
    kind = heat_sink
    n_chip = 10
    n_fin = 40

    [parameters]
    initial_temp_min_c = 20
    initial_temp_max_c = 50
    load_min = 0.05
    load_max = 0.15

    [sampling]
    kinds = SPS, DPS
    method = halton
    seed = 0
    n_s = 30
    omega_rule = pi_over_t_end

    [horizon]
    t_end_s = 500
    k = 100

    [pod]
    n_r = 1, 2, 3, 4, 5, 10
    center = false

    [training]
    architectures = direct, rknn
    ensemble_size = 10
    epochs = 200
    batch_size = 128
    learning_rate = 0.003
    lr_final = 1e-05
    seed = 0
    activation = relu
    hidden = 32

    [eval]
    test_temp_c = 20
    constant_load = 0.1
    dynamic_load = 0.15, -0.0002
    step_factors = 1, 0.5
    reference_refine = 10
    step_study_n_r = 5

    [output]
    dir = runs/heat_sink
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .fom import CELSIUS_OFFSET, build_model
from .sampling import PHASES, ParameterSpace, polynomial_signal
from .surrogate import MODES, TrainingConfig

__all__ = ["PipelineConfig", "TestSpec", "load_config", "parse_config"]

_SAMPLING_METHODS = ("halton", "lhs")


@dataclass(frozen=True)
class TestSpec:
    """Definition of one independent test: label, initial temperature (K), load polynomial."""

    label: str
    initial_temperature: float
    load_coefficients: tuple

    def signal(self):
        return polynomial_signal([[self.initial_temperature], list(self.load_coefficients)],
                                 test=self.label)


@dataclass(frozen=True)
class PipelineConfig:
    model_id: str
    model_kind: str
    model_args: dict
    space: ParameterSpace
    sampling_kinds: tuple = ("SPS", "DPS")
    sampling_method: str = "halton"
    sampling_seed: int = 0
    n_s: int = 30
    omega_rule: str = "pi_over_t_end"
    omega_value: float | None = None
    dps_phase: str = "sine"
    t_end: float = 500.0
    k: int = 100
    n_r_list: tuple = (1, 2, 3, 4, 5, 10)
    center: bool = False
    architectures: tuple = ("direct", "rknn")
    ensemble_size: int = 10
    training: TrainingConfig = field(default_factory=TrainingConfig)
    tests: tuple = ()
    step_factors: tuple = (1.0, 0.5)
    reference_refine: int = 10
    step_study_n_r: int = 5
    out_dir: str = "runs"

    @property
    def omega(self):
        if self.omega_rule == "pi_over_t_end":
            return math.pi / self.t_end
        return float(self.omega_value)

    @property
    def tau(self):
        return self.t_end / self.k

    @property
    def max_n_r(self):
        return max(self.n_r_list)

    def build_model(self):
        return build_model(self.model_kind, **self.model_args)

    def test(self, label):
        for t in self.tests:
            if t.label == label:
                return t
        raise ConfigError(f"no test labelled {label!r}")

    def with_overrides(self, seed=None, out_dir=None):
        cfg = self
        if seed is not None:
            cfg = replace(cfg, sampling_seed=int(seed),
                          training=replace(cfg.training, seed=int(seed)))
        if out_dir is not None:
            cfg = replace(cfg, out_dir=str(out_dir))
        return cfg

    def to_text(self):
        """Canonical config text; parsing it yields an equal config."""
        temp_bounds, load_bounds = self.space.bounds
        tr = self.training
        lines = ["[model]", f"id = {self.model_id}", f"kind = {self.model_kind}"]
        lines += [f"{k} = {_fmt(v)}" for k, v in sorted(self.model_args.items())]
        lines += [
            "", "[parameters]",
            f"initial_temp_min_c = {_fmt(temp_bounds[0] - CELSIUS_OFFSET)}",
            f"initial_temp_max_c = {_fmt(temp_bounds[1] - CELSIUS_OFFSET)}",
            f"load_min = {_fmt(load_bounds[0])}",
            f"load_max = {_fmt(load_bounds[1])}",
            "", "[sampling]",
            f"kinds = {', '.join(self.sampling_kinds)}",
            f"method = {self.sampling_method}",
            f"seed = {self.sampling_seed}",
            f"n_s = {self.n_s}",
        ]
        if self.omega_rule == "pi_over_t_end":
            lines.append("omega_rule = pi_over_t_end")
        else:
            lines.append(f"omega_rad_s = {_fmt(self.omega_value)}")
        if self.dps_phase != "sine":
            lines.append(f"dps_phase = {self.dps_phase}")
        lines += [
            "", "[horizon]", f"t_end_s = {_fmt(self.t_end)}", f"k = {self.k}",
            "", "[pod]", f"n_r = {', '.join(map(str, self.n_r_list))}",
            f"center = {str(self.center).lower()}",
            "", "[training]",
            f"architectures = {', '.join(self.architectures)}",
            f"ensemble_size = {self.ensemble_size}",
            f"epochs = {tr.epochs}",
            f"batch_size = {tr.batch_size}",
            f"learning_rate = {_fmt(tr.learning_rate)}",
        ]
        if tr.lr_final is not None:
            lines.append(f"lr_final = {_fmt(tr.lr_final)}")
        lines += [
            f"beta1 = {_fmt(tr.beta1)}", f"beta2 = {_fmt(tr.beta2)}",
            f"seed = {tr.seed}", f"activation = {tr.activation}",
            f"leaky_alpha = {_fmt(tr.leaky_alpha)}", f"hidden = {tr.hidden}",
            "", "[eval]",
        ]
        temps = {t.initial_temperature for t in self.tests}
        if len(temps) == 1:
            lines.append(f"test_temp_c = {_fmt(temps.pop() - CELSIUS_OFFSET)}")
        for t in self.tests:
            lines.append(f"{t.label} = {', '.join(_fmt(c) for c in t.load_coefficients)}")
        lines += [
            f"step_factors = {', '.join(_fmt(f) for f in self.step_factors)}",
            f"reference_refine = {self.reference_refine}",
            f"step_study_n_r = {self.step_study_n_r}",
            "", "[output]", f"dir = {self.out_dir}", "",
        ]
        return "\n".join(lines)

    def digest(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _number(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _list(text, cast=str):
    return tuple(cast(x.strip()) for x in text.split(",") if x.strip())


def _get(section, key, cast, default=None):
    if key not in section:
        if default is None:
            raise ConfigError(f"[{section.name}] is missing {key!r}")
        return default
    try:
        return cast(section[key])
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key}: {exc}") from None


def parse_config(text):
    """Parse config text into a validated :class:`PipelineConfig`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for name in ("model", "parameters", "horizon"):
        if name not in cp:
            raise ConfigError(f"missing [{name}] section")
    model = cp["model"]
    kind = _get(model, "kind", str)
    model_id = model.get("id", kind)
    model_args = {k: _number(v) for k, v in model.items() if k not in ("id", "kind")}

    par = cp["parameters"]
    t_lo = _get(par, "initial_temp_min_c", float) + CELSIUS_OFFSET
    t_hi = _get(par, "initial_temp_max_c", float) + CELSIUS_OFFSET
    u_lo = _get(par, "load_min", float)
    u_hi = _get(par, "load_max", float)
    try:
        space = ParameterSpace(((t_lo, t_hi), (u_lo, u_hi)), ("T0", "load"), ("initial", "load"))
    except ValueError as exc:
        raise ConfigError(f"[parameters] {exc}") from None

    smp = cp["sampling"] if "sampling" in cp else cp["DEFAULT"]
    kinds = tuple(k.upper() for k in _list(smp.get("kinds", "SPS, DPS")))
    if not kinds or any(k not in ("SPS", "DPS") for k in kinds):
        raise ConfigError("[sampling] kinds must be SPS and/or DPS")
    method = smp.get("method", "halton")
    if method not in _SAMPLING_METHODS:
        raise ConfigError(f"[sampling] method must be one of {_SAMPLING_METHODS}")
    if "omega_rad_s" in smp:
        omega_rule, omega_value = "value", _get(smp, "omega_rad_s", float)
        if not omega_value > 0:
            raise ConfigError("[sampling] omega_rad_s must be positive")
    else:
        omega_rule, omega_value = smp.get("omega_rule", "pi_over_t_end"), None
        if omega_rule != "pi_over_t_end":
            raise ConfigError("[sampling] omega_rule must be pi_over_t_end")
    dps_phase = smp.get("dps_phase", "sine")
    if dps_phase not in PHASES:
        raise ConfigError(f"[sampling] dps_phase must be one of {PHASES}")

    hor = cp["horizon"]
    t_end = _get(hor, "t_end_s", float)
    k = _get(hor, "k", int)
    if not t_end > 0 or k < 1:
        raise ConfigError("[horizon] needs t_end_s > 0 and k >= 1")

    pod = cp["pod"] if "pod" in cp else cp["DEFAULT"]
    n_r_list = _list(pod.get("n_r", "1, 2, 3, 4, 5, 10"), int)
    center = pod.get("center", "false").strip().lower() in ("1", "true", "yes", "on")

    trn = cp["training"] if "training" in cp else cp["DEFAULT"]
    archs = _list(trn.get("architectures", "direct, rknn"))
    if any(a not in MODES for a in archs):
        raise ConfigError(f"[training] architectures must be among {MODES}")
    try:
        training = TrainingConfig(
            epochs=_get(trn, "epochs", int, 2000),
            batch_size=_get(trn, "batch_size", int, 0),
            learning_rate=_get(trn, "learning_rate", float, 1e-3),
            lr_final=_get(trn, "lr_final", float) if "lr_final" in trn else None,
            beta1=_get(trn, "beta1", float, 0.9),
            beta2=_get(trn, "beta2", float, 0.999),
            seed=_get(trn, "seed", int, 0) if "seed" in trn else 0,
            activation=trn.get("activation", "relu"),
            leaky_alpha=_get(trn, "leaky_alpha", float, 0.01),
            hidden=_get(trn, "hidden", int, 32),
        )
    except ValueError as exc:
        raise ConfigError(f"[training] {exc}") from None
    ensemble = _get(trn, "ensemble_size", int, 10)

    ev = cp["eval"] if "eval" in cp else cp["DEFAULT"]
    reserved = {"test_temp_c", "step_factors", "reference_refine", "step_study_n_r"}
    test_temp = _get(ev, "test_temp_c", float, t_lo - CELSIUS_OFFSET) + CELSIUS_OFFSET
    tests = tuple(
        TestSpec(label, test_temp, _list(value, float))
        for label, value in ev.items()
        if label not in reserved and label not in cp.defaults()
    )
    step_factors = _list(ev.get("step_factors", "1, 0.5"), float)
    if any(f <= 0 for f in step_factors):
        raise ConfigError("[eval] step factors must be positive")

    cfg = PipelineConfig(
        model_id=model_id,
        model_kind=kind,
        model_args=model_args,
        space=space,
        sampling_kinds=kinds,
        sampling_method=method,
        sampling_seed=_get(smp, "seed", int, 0) if "seed" in smp else 0,
        n_s=_get(smp, "n_s", int, 30),
        omega_rule=omega_rule,
        omega_value=omega_value,
        dps_phase=dps_phase,
        t_end=t_end,
        k=k,
        n_r_list=n_r_list,
        center=center,
        architectures=archs,
        ensemble_size=ensemble,
        training=training,
        tests=tests,
        step_factors=step_factors,
        reference_refine=_get(ev, "reference_refine", int, 10),
        step_study_n_r=_get(ev, "step_study_n_r", int, min(5, max(n_r_list) if n_r_list else 5)),
        out_dir=cp["output"].get("dir", "runs") if "output" in cp else "runs",
    )
    _validate(cfg)
    return cfg


def _validate(cfg):
    try:
        model = cfg.build_model()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[model] {exc}") from None
    if cfg.n_s < 1 or cfg.ensemble_size < 1 or cfg.reference_refine < 1:
        raise ConfigError("n_s, ensemble_size and reference_refine must be >= 1")
    if not cfg.n_r_list or min(cfg.n_r_list) < 1:
        raise ConfigError("[pod] n_r entries must be >= 1")
    if cfg.max_n_r > min(model.n_state, cfg.n_s * (cfg.k + 1)):
        raise ConfigError(f"[pod] n_r {cfg.max_n_r} exceeds the snapshot matrix size")
    labels = [t.label for t in cfg.tests]
    if len(set(labels)) != len(labels):
        raise ConfigError("[eval] duplicate test labels")
    for t in cfg.tests:
        if not t.load_coefficients:
            raise ConfigError(f"[eval] test {t.label} has no load coefficients")


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
