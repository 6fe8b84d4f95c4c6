"""JSON run configuration: schema checks with key and line in every error."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .mc_lab import EnvelopeSpec, ExperimentConfig
from .models import (
    BpreModel,
    DiscreteLaw,
    Environment,
    MdsModel,
    Rademacher,
    Uniform,
    parse_pmf,
)

SUBCOMMANDS = (
    "tail", "logratio", "mdp", "ks", "probe-a1", "lnz-tail", "bpre-sim", "bpre-ci", "coverage",
)
STOCHASTIC = set(SUBCOMMANDS) - {"bpre-ci"}

_EXPERIMENT_KEYS = {
    "name", "model", "statistic", "n", "n0", "replications", "x_grid", "min_expected_hits",
    "tail", "degenerate_policy", "enumerate", "block_length", "envelope", "a_values", "b",
    "level", "horizon", "trajectory", "expect", "fit_at",
}
_TOP_KEYS = {"experiments", "seed", "workers"}
_MODEL_KEYS = {
    "iid": {"kind", "law", "a", "low", "high", "pmf"},
    "mds": {"kind", "beta"},
    "bpre": {"kind", "environments", "exact_threshold"},
}
_ENV_KEYS = {"weight", "pmf"}
_ENVELOPE_KEYS = {"shape", "rho", "c", "gamma_n", "delta_n"}


@dataclass
class Experiment:
    """One config block: the harness config plus subcommand-specific extras."""

    name: str
    config: ExperimentConfig | None
    n_values: list[int]
    extra: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    subcommand: str
    experiments: list[Experiment]
    out_dir: Path | None
    seed: int | None
    workers: int
    config_hash: str
    base_dir: Path = Path(".")


class _Locator:
    def __init__(self, text: str):
        self.text = text

    def line(self, key: str) -> int | None:
        m = re.search(r'"%s"\s*:' % re.escape(key), self.text)
        return self.text.count("\n", 0, m.start()) + 1 if m else None

    def error(self, message: str, key: str) -> ConfigError:
        return ConfigError(message, key=key, line=self.line(key))


def _check_keys(obj, allowed, where, loc):
    if not isinstance(obj, dict):
        raise loc.error(f"{where} must be an object", where)
    for k in obj:
        if k not in allowed:
            raise loc.error(f"unknown key in {where}", k)


def _num(obj, key, loc, kind=float, default=None, required=False):
    if key not in obj:
        if required:
            raise loc.error("missing required key", key)
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise loc.error(f"expected a number, got {v!r}", key)
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise loc.error(f"expected an integer, got {v!r}", key)
        return int(v)
    return float(v)


def _model(obj, loc):
    if not isinstance(obj, dict):
        raise loc.error("model must be an object", "model")
    kind = obj.get("kind")
    if kind not in _MODEL_KEYS:
        raise loc.error(f"model kind must be one of {sorted(_MODEL_KEYS)}", "kind")
    _check_keys(obj, _MODEL_KEYS[kind], "model", loc)
    try:
        if kind == "mds":
            return MdsModel(_num(obj, "beta", loc, required=True))
        if kind == "bpre":
            envs = obj.get("environments")
            if not isinstance(envs, list) or not envs:
                raise loc.error("environments must be a nonempty list", "environments")
            states = []
            for e in envs:
                _check_keys(e, _ENV_KEYS, "environment", loc)
                if not isinstance(e.get("pmf"), str):
                    raise loc.error("pmf must be a string of k:prob pairs", "pmf")
                states.append(Environment(_num(e, "weight", loc, required=True), parse_pmf(e["pmf"])))
            return BpreModel(
                tuple(states), _num(obj, "exact_threshold", loc, int, default=10**6)
            )
        law = obj.get("law")
        if law == "rademacher":
            return Rademacher()
        if law == "uniform":
            return Uniform(_num(obj, "a", loc, default=1.0))
        if law == "two_point":
            return DiscreteLaw.two_point(
                _num(obj, "low", loc, required=True), _num(obj, "high", loc, required=True)
            )
        if law == "discrete":
            if not isinstance(obj.get("pmf"), str):
                raise loc.error("pmf must be a string of value:prob pairs", "pmf")
            pairs = [item.split(":") for item in obj["pmf"].split(",") if item.strip()]
            try:
                values = tuple(float(a) for a, _ in pairs)
                probs = tuple(float(b) for _, b in pairs)
            except ValueError:
                raise loc.error("pmf entries must look like 'value:prob'", "pmf") from None
            return DiscreteLaw(values, probs)
        raise loc.error("law must be rademacher, uniform, two_point or discrete", "law")
    except ConfigError as exc:
        if exc.line is None and exc.key is not None:
            raise ConfigError(str(exc).rsplit(" (", 1)[0], key=exc.key, line=loc.line(exc.key)) from None
        raise


def _float_list(obj, key, loc, default=()):
    v = obj.get(key, default)
    if not isinstance(v, (list, tuple)) or any(
        isinstance(x, bool) or not isinstance(x, (int, float)) for x in v
    ):
        raise loc.error("expected a list of numbers", key)
    return [float(x) for x in v]


def _experiment(obj, index, subcommand, loc) -> Experiment:
    _check_keys(obj, _EXPERIMENT_KEYS, "experiment", loc)
    name = obj.get("name", subcommand if index == 0 else f"{subcommand}_{index}")
    if not isinstance(name, str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
        raise loc.error("name must be a plain file stem", "name")
    extra = {}
    if "expect" in obj:
        exp = _float_list(obj, "expect", loc)
        if len(exp) != 2 or exp[0] > exp[1]:
            raise loc.error("expect must be [low, high]", "expect")
        extra["expect"] = exp
    if "level" in obj:
        extra["level"] = _num(obj, "level", loc)
        if not 0 < extra["level"] < 1:
            raise loc.error("level must lie in (0, 1)", "level")
    if subcommand == "mdp":
        extra["a_values"] = _float_list(obj, "a_values", loc)
        extra["b"] = _num(obj, "b", loc, default=1.0)
    if subcommand == "bpre-ci":
        traj = obj.get("trajectory")
        if not isinstance(traj, str):
            raise loc.error("bpre-ci needs a trajectory CSV path", "trajectory")
        extra["trajectory"] = traj
        extra["n0"] = _num(obj, "n0", loc, int, default=0)
        extra["n"] = _num(obj, "n", loc, int, required=True)
        extra.setdefault("level", 0.95)
        return Experiment(name, None, [extra["n"]], extra)

    n_raw = obj.get("n", 100)
    if isinstance(n_raw, list):
        if not n_raw:
            raise loc.error("n list is empty", "n")
        n_values = [_num({"n": v}, "n", loc, int) for v in n_raw]
    else:
        n_values = [_num(obj, "n", loc, int, default=100)]
    if "fit_at" in obj:
        extra["fit_at"] = _num(obj, "fit_at", loc, int)
    if subcommand == "bpre-sim":
        extra["horizon"] = _num(obj, "horizon", loc, int, default=n_values[0])
    if "model" not in obj:
        raise loc.error("missing required key", "model")
    model = _model(obj["model"], loc)
    envelope = None
    if "envelope" in obj:
        env = obj["envelope"]
        _check_keys(env, _ENVELOPE_KEYS, "envelope", loc)
        envelope = EnvelopeSpec(
            env.get("shape", "thm21"),
            _num(env, "rho", loc, default=1.0),
            _num(env, "c", loc),
            _num(env, "gamma_n", loc),
            _num(env, "delta_n", loc),
        )
    for key, choices in (("tail", ("upper", "lower")), ("degenerate_policy", ("skip", "error"))):
        if key in obj and obj[key] not in choices:
            raise loc.error(f"{key} must be one of {choices}", key)
    if "enumerate" in obj and not isinstance(obj["enumerate"], bool):
        raise loc.error("enumerate must be true or false", "enumerate")
    default_reps = 1 if subcommand == "bpre-sim" else 10_000
    kwargs = dict(
        model=model,
        statistic=obj.get("statistic", "N" if subcommand == "coverage" else "W"),
        n=n_values[0],
        replications=_num(obj, "replications", loc, int, default=default_reps),
        x_grid=_float_list(obj, "x_grid", loc),
        n0=_num(obj, "n0", loc, int, default=0),
        block_length=_num(obj, "block_length", loc, int, default=1),
        min_expected_hits=_num(obj, "min_expected_hits", loc, int, default=50),
        tail=obj.get("tail", "upper"),
        degenerate_policy=obj.get("degenerate_policy", "skip"),
        enumerate=obj.get("enumerate", False),
        envelope=envelope,
    )
    try:
        cfg = ExperimentConfig(**kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc).rsplit(" (", 1)[0], key=exc.key, line=loc.line(exc.key or "")) from None
    for n in n_values[1:]:
        try:
            ExperimentConfig(**{**kwargs, "n": n})
        except ConfigError as exc:
            raise ConfigError(str(exc).rsplit(" (", 1)[0], key="n", line=loc.line("n")) from None
    return Experiment(name, cfg, n_values, extra)


def parse_config(
    text: str,
    subcommand: str = "tail",
    *,
    out_dir=None,
    seed: int | None = None,
    workers: int | None = None,
    base_dir=None,
) -> RunConfig:
    """Validate config text for ``subcommand``; explicit arguments override file values."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", line=exc.lineno) from None
    loc = _Locator(text)
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", line=1)
    if "experiments" in data:
        _check_keys(data, _TOP_KEYS, "config", loc)
        blocks = data["experiments"]
        if not isinstance(blocks, list) or not blocks:
            raise loc.error("experiments must be a nonempty list", "experiments")
    else:
        top = {k: data[k] for k in data if k in ("seed", "workers")}
        blocks = [{k: v for k, v in data.items() if k not in top}]
        data = top
    if seed is None:
        seed = _num(data, "seed", loc, int)
    if seed is not None and not 0 <= seed < 2**64:
        raise loc.error("seed must be an unsigned 64-bit integer", "seed")
    if workers is None:
        workers = _num(data, "workers", loc, int, default=1)
    if workers < 1:
        raise ConfigError("workers must be >= 1", key="workers")
    if subcommand in STOCHASTIC and seed is None:
        raise ConfigError(f"subcommand {subcommand!r} needs a seed", key="seed")
    experiments = []
    for i, block in enumerate(blocks):
        if not isinstance(block, dict):
            raise loc.error("each experiment must be an object", "experiments")
        exp = _experiment(block, i, subcommand, loc)
        if exp.config is not None:
            exp.config = _with_seed(exp.config, seed)
        experiments.append(exp)
    names = [e.name for e in experiments]
    if len(set(names)) != len(names):
        raise loc.error("experiment names must be unique", "name")
    return RunConfig(
        subcommand,
        experiments,
        Path(out_dir) if out_dir is not None else None,
        seed,
        workers,
        hashlib.sha256(text.encode()).hexdigest(),
        Path(base_dir) if base_dir is not None else Path("."),
    )


def _with_seed(cfg: ExperimentConfig, seed):
    return replace(cfg, seed=0 if seed is None else seed)
