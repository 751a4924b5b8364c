import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from dotenv import dotenv_values

from battery import (
    BatteryParams,
    PriceScenario,
    RewardMode,
    RewardSeries,
    TargetSpec,
)

from .report import MODELS

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or unknown setting."""


@dataclass(frozen=True)
class Settings:
    """
    Every tunable of the command-line tools. Keys mirror the flags
    (--e-max <-> e_max); defaults reproduce the case study.
    """

    # battery
    e_min: float = 0.0
    e_max: float = 10.0
    power: float = 5.0
    eta_c: float = 0.9
    eta_d: float = 0.9
    eta_self: float = 0.995
    e0: float = 5.0
    # target band
    band_lo: float = 5.0
    band_hi: float = 7.0
    e_target: float = 6.0
    rho: float = 10.0
    epsilon: float = 0.05
    critical_hours: str = '24'
    horizon: int = 24
    # stopping reward
    reward_mode: str = 'cumulative'
    c: float = 0.0
    c_values: str = '0:15'
    # data
    data: str = ''
    fractions: str = '0.6,0.2,0.2'
    seed: int = 0
    synth_days: int = 365
    mean_price: float = 40.0
    amplitude: float = 15.0
    phase: float = 6.0
    ar_coeff: float = 0.7
    noise_sd: float = 5.0
    spike_prob: float = 0.02
    spike_scale: float = 60.0
    # saa
    saa_workers: int = 1
    # dqn
    dqn_episodes: int = 2000
    dqn_gamma: float = 0.99
    dqn_learning_rate: float = 1e-3
    dqn_batch_size: int = 64
    dqn_buffer_capacity: int = 100_000
    dqn_target_sync: int = 500
    dqn_bins: int = 10
    dqn_hidden: str = '64,64'
    dqn_optimizer: str = 'sgd'
    dqn_reward_scale: float = 1.0
    dqn_randomize_start: bool = False
    dqn_penalty_edges: str = 'capacity'
    dqn_price_sampling: str = 'iid'
    dqn_reward_mode: str = 'once'
    # e2e
    e2e_delta: float = 0.05
    e2e_mu: float = 0.1
    e2e_learning_rate: float = 1e-3
    e2e_epochs: int = 20
    e2e_batch_size: int = 16
    e2e_calibration_fraction: float = 0.5
    e2e_architecture: str = 'linear'
    e2e_hidden: str = '128'
    e2e_recalibrate: bool = True
    # harness
    models: str = 'saa,dqn,e2e'
    out_dir: str = 'out'

    @classmethod
    def keys(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def resolve(cls, config_file: Optional[Union[str, Path]] = None,
                overrides: Optional[Dict[str, Any]] = None) -> 'Settings':
        """defaults < key=value config file < explicit overrides (flags)."""
        values: Dict[str, Any] = {}
        if config_file:
            values.update(load_config_file(config_file))
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        return cls().update(values)

    def update(self, values: Dict[str, Any]) -> 'Settings':
        known = {f.name: f.type for f in fields(self)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"Unknown setting(s): {', '.join(unknown)}")
        coerced = {key: _coerce(key, value, known[key]) for key, value in values.items()}
        return replace(self, **coerced)

    def snapshot(self) -> Dict[str, Any]:
        return asdict(self)

    # constructors

    def battery_params(self) -> BatteryParams:
        return _build(BatteryParams, e_min=self.e_min, e_max=self.e_max, power=self.power, eta_c=self.eta_c,
                      eta_d=self.eta_d, eta_self=self.eta_self, e0=self.e0)

    def target_spec(self) -> TargetSpec:
        target = _build(TargetSpec, band_lo=self.band_lo, band_hi=self.band_hi, e_target=self.e_target,
                        rho=self.rho, epsilon=min(self.epsilon, 0.999999), critical_hours=self.critical_hour_tuple())
        try:
            target.validate_for(self.battery_params(), self.horizon)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return target

    def critical_hour_tuple(self) -> Tuple[int, ...]:
        return tuple(int(h) for h in _split_list(self.critical_hours, 'critical_hours'))

    def reward_series(self, c: Optional[float] = None, mode: Optional[str] = None) -> RewardSeries:
        mode = self.reward_mode if mode is None else mode
        try:
            mode = RewardMode(mode)
        except ValueError as e:
            raise ConfigError(f"reward mode must be 'cumulative' or 'once', got {mode!r}") from e
        return RewardSeries.constant(self.c if c is None else c, self.horizon, mode)

    def c_value_list(self) -> List[float]:
        return parse_c_values(self.c_values)

    def fraction_tuple(self) -> Tuple[float, float, float]:
        parts = tuple(float(v) for v in _split_list(self.fractions, 'fractions'))
        if len(parts) != 3:
            raise ConfigError(f"fractions needs three values, got {self.fractions!r}")
        return parts

    def model_list(self) -> List[str]:
        models = [m.lower() for m in _split_list(self.models, 'models')]
        bad = [m for m in models if m not in MODELS]
        if bad or not models:
            raise ConfigError(f"models must be drawn from {MODELS}, got {self.models!r}")
        return models

    def synth_spec(self):
        from ingest import SynthSpec

        return _build(SynthSpec, days=self.synth_days, horizon=self.horizon, mean_price=self.mean_price,
                      amplitude=self.amplitude, phase=self.phase, ar_coeff=self.ar_coeff, noise_sd=self.noise_sd,
                      spike_prob=self.spike_prob, spike_scale=self.spike_scale, seed=self.seed)

    def saa_config(self, scenarios: Sequence[PriceScenario], c: Optional[float] = None):
        from saa import SaaConfig

        return _build(SaaConfig, scenarios=tuple(scenarios), epsilon=self.epsilon, reward=self.reward_series(c),
                      params=self.battery_params(), target=self.target_spec())

    def dqn_config(self, c: Optional[float] = None):
        from dqn import DqnConfig

        return _build(
            DqnConfig, reward=self.reward_series(c, self.dqn_reward_mode), gamma=self.dqn_gamma,
            learning_rate=self.dqn_learning_rate,
            batch_size=self.dqn_batch_size, buffer_capacity=self.dqn_buffer_capacity,
            target_sync_period=self.dqn_target_sync, episodes=self.dqn_episodes, rho=self.rho, seed=self.seed,
            hidden=_int_tuple(self.dqn_hidden, 'dqn_hidden'), n_bins=self.dqn_bins, optimizer=self.dqn_optimizer,
            reward_scale=self.dqn_reward_scale, randomize_start=self.dqn_randomize_start,
            penalty_edges=self.dqn_penalty_edges, price_sampling=self.dqn_price_sampling,
        )

    def e2e_config(self, c: Optional[float] = None):
        from e2e import E2eConfig

        return _build(
            E2eConfig, reward=self.reward_series(c), delta=self.e2e_delta, rho=self.rho, mu=self.e2e_mu,
            learning_rate=self.e2e_learning_rate, epochs=self.e2e_epochs, batch_size=self.e2e_batch_size,
            calibration_fraction=self.e2e_calibration_fraction, seed=self.seed,
            architecture=self.e2e_architecture, hidden=_int_tuple(self.e2e_hidden, 'e2e_hidden'),
            recalibrate_per_batch=self.e2e_recalibrate,
        )


def _build(cls, **kwargs):
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(f"Invalid {cls.__name__}: {e}") from e


def _split_list(text: str, key: str) -> List[str]:
    items = [item.strip() for item in str(text).split(',') if item.strip()]
    if not items:
        raise ConfigError(f"{key} must not be empty")
    return items


def _int_tuple(text: str, key: str) -> Tuple[int, ...]:
    try:
        return tuple(int(v) for v in _split_list(text, key))
    except ValueError as e:
        raise ConfigError(f"{key} must be a comma-separated list of integers, got {text!r}") from e


_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


def _coerce(key: str, value: Any, kind) -> Any:
    kind = {'float': float, 'int': int, 'bool': bool, 'str': str}.get(kind, kind)
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in _TRUE:
                return True
            if text in _FALSE:
                return False
            raise ValueError(value)
        if kind is int:
            number = float(value)
            if number != int(number):
                raise ValueError(value)
            return int(number)
        if kind is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Setting {key}={value!r} is not a valid {kind.__name__}") from e


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """key=value lines with # comments; nothing is read from the process environment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    values = dotenv_values(path, interpolate=False)
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ConfigError(f"{path}: keys without a value: {', '.join(missing)}")
    logger.debug(f"Read {len(values)} settings from {path}")
    return {key.strip().lower(): value for key, value in values.items()}


def parse_c_values(text: str) -> List[float]:
    """Either 'start:stop[:step]' (inclusive) or a comma-separated list."""
    text = str(text).strip()
    try:
        if ':' in text:
            parts = [float(p) for p in text.split(':')]
            if len(parts) not in (2, 3):
                raise ValueError(text)
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) == 3 else 1.0
            if step <= 0 or stop < start:
                raise ValueError(text)
            count = int(round((stop - start) / step)) + 1
            return [start + i * step for i in range(count)]
        return [float(v) for v in _split_list(text, 'c_values')]
    except ValueError as e:
        raise ConfigError(f"c_values must be 'start:stop[:step]' or a list, got {text!r}") from e
