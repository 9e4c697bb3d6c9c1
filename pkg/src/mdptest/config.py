"""Flat TOML run configuration shared by all CLI commands.

Every key is top level. Generator settings carry a ``tiger_`` or ``glucose_``
prefix (e.g. ``glucose_order = 2``). Command-line flags override file values;
the resolved configuration is echoed in every output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import tomli
import tomli_w

from .envs import GlucoseConfig, TigerConfig
from .forest import ForestParams
from .markov_test import TestConfig
from .policy import RLSettings

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = CONFIG_SCHEMA_VERSION
    # data
    n_actions: int = 0
    state_dim: int = 0
    horizon: int = 0
    append_reward_to_state: bool = False
    # test
    B: int = 100
    Q: int = 8
    L: int = 3
    alpha: float = 0.05
    n_draws: int = 2000
    alpha_half: bool = False
    normalize: bool = True
    seed: int = 0
    # forest
    n_trees: int = 100
    max_depth: int = 12
    min_leaf_size: int = 5
    mtry: int = 0
    bootstrap_fraction: float = 0.8
    # selection
    K: int = 10
    # batch RL
    gamma: float = 0.9
    n_iters: int = 50
    fqi_trees: int = 100
    fqe_trees: int = 75
    tol: float = 1e-4
    # execution
    threads: int = 0

    def __post_init__(self):
        if self.schema_version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {self.schema_version}")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    def forest_params(self) -> ForestParams:
        return ForestParams(
            n_trees=self.n_trees,
            max_depth=self.max_depth,
            min_leaf_size=self.min_leaf_size,
            mtry=self.mtry or None,
            bootstrap_fraction=self.bootstrap_fraction,
            seed=self.seed,
        )

    def test_config(self) -> TestConfig:
        return TestConfig(
            B=self.B,
            Q=self.Q,
            L=self.L,
            alpha=self.alpha,
            n_draws=self.n_draws,
            seed=self.seed,
            alpha_half=self.alpha_half,
            normalize=self.normalize,
            forest=self.forest_params(),
        )

    def rl_settings(self) -> RLSettings:
        return RLSettings(
            gamma=self.gamma,
            n_iters=self.n_iters,
            fqi_trees=self.fqi_trees,
            fqe_trees=self.fqe_trees,
            tol=self.tol,
            forest=self.forest_params(),
        )


@dataclass(frozen=True)
class Settings:
    """A run configuration plus generator overrides."""

    run: RunConfig = RunConfig()
    tiger: dict | None = None
    glucose: dict | None = None

    def tiger_config(self) -> TigerConfig:
        return TigerConfig(**(self.tiger or {}))

    def glucose_config(self) -> GlucoseConfig:
        kw = dict(self.glucose or {})
        if "order" in kw and "state_coefs" not in kw and "action_coefs" not in kw:
            order = kw.pop("order")
            return GlucoseConfig.with_order(order, **kw)
        return GlucoseConfig.from_dict(kw)

    def to_dict(self) -> dict:
        out = asdict(self.run)
        for prefix, extra in (("tiger_", self.tiger), ("glucose_", self.glucose)):
            for k, v in (extra or {}).items():
                out[prefix + k] = [list(r) for r in v] if k == "state_coefs" else list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Settings":
        known = {f.name: f for f in fields(RunConfig)}
        run_kw, tiger, glucose = {}, {}, {}
        tiger_keys = {f.name for f in fields(TigerConfig)}
        glucose_keys = {f.name for f in fields(GlucoseConfig)}
        for key, value in data.items():
            if isinstance(value, dict):
                raise ConfigError(f"config must be flat; found table {key!r}")
            if key in known:
                run_kw[key] = _coerce(key, value, known[key].type)
            elif key.startswith("tiger_") and key[6:] in tiger_keys:
                tiger[key[6:]] = value
            elif key.startswith("glucose_") and key[8:] in glucose_keys:
                glucose[key[8:]] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(RunConfig(**run_kw), tiger or None, glucose or None)
        except TypeError as exc:  # pragma: no cover - guarded by key checks
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, **kw) -> "Settings":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, run=replace(self.run, **kw))


def _coerce(key: str, value, type_name):
    t = type_name if isinstance(type_name, str) else type_name.__name__
    if t == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if t == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if t == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    return value


def loads(text: str) -> Settings:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return Settings.from_dict(data)


def load(path) -> Settings:
    with open(path, "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return Settings.from_dict(data)


def dumps(settings: Settings) -> str:
    return tomli_w.dumps(settings.to_dict())
