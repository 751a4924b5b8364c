import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .loader import ScenarioTable

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthSpec:
    """
    Synthetic day-ahead prices: a daily sinusoid around mean_price, AR(1)
    noise carried across hours and days, and occasional positive spikes.
    Temperature follows the same daily cycle with its own noise. Features are
    the previous day's prices, a weekend flag, a day-of-week one-hot and the
    hour of day as a sine/cosine pair.
    """

    days: int
    horizon: int = 24
    mean_price: float = 40.0
    amplitude: float = 15.0
    phase: float = 6.0
    ar_coeff: float = 0.7
    noise_sd: float = 5.0
    spike_prob: float = 0.02
    spike_scale: float = 60.0
    temp_mean: float = 20.0
    temp_amplitude: float = 8.0
    temp_noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.days < 1 or self.horizon < 1:
            raise ValueError(f"days and horizon must be positive, got {self.days}, {self.horizon}")
        if not 0 <= self.spike_prob <= 1:
            raise ValueError(f"spike_prob must lie in [0, 1], got {self.spike_prob}")
        if not -1 < self.ar_coeff < 1:
            raise ValueError(f"ar_coeff must lie in (-1, 1), got {self.ar_coeff}")
        for name in ('noise_sd', 'spike_scale', 'temp_noise_sd'):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    def cycle(self) -> np.ndarray:
        """Shape of the daily cycle, hours 1..T."""
        hours = np.arange(1, self.horizon + 1)
        return np.sin(2 * np.pi * (hours - self.phase) / self.horizon)

    def base_prices(self) -> np.ndarray:
        return self.mean_price + self.amplitude * self.cycle()


def day_id(index: int) -> str:
    return f"{index + 1:05d}"


def synth_scenarios(spec: SynthSpec) -> ScenarioTable:
    rng = np.random.default_rng(spec.seed)
    T, D = spec.horizon, spec.days
    base = spec.base_prices()

    # Stationary start so the first day is not calmer than the rest.
    state = rng.normal(0.0, spec.noise_sd / np.sqrt(1 - spec.ar_coeff ** 2)) if spec.noise_sd > 0 else 0.0
    shocks = rng.normal(0.0, 1.0, size=(D, T)) * spec.noise_sd
    spikes = (rng.random((D, T)) < spec.spike_prob) * rng.exponential(1.0, size=(D, T)) * spec.spike_scale
    temp_noise = rng.normal(0.0, 1.0, size=(D, T)) * spec.temp_noise_sd

    prices = np.empty((D, T))
    for d in range(D):
        for t in range(T):
            state = spec.ar_coeff * state + shocks[d, t]
            prices[d, t] = base[t] + state
    prices += spikes
    temperature = spec.temp_mean + spec.temp_amplitude * spec.cycle() + temp_noise

    lagged = np.vstack((base, prices[:-1]))
    dow = np.arange(D) % 7
    angle = 2 * np.pi * np.arange(1, T + 1) / T

    columns = {
        'day': np.repeat([day_id(d) for d in range(D)], T),
        'hour': np.tile(np.arange(1, T + 1), D),
        'price': prices.reshape(-1),
        'temperature': temperature.reshape(-1),
        'feat_lag_price': lagged.reshape(-1),
        'feat_weekend': np.repeat(dow >= 5, T).astype(float),
    }
    for k in range(7):
        columns[f'feat_dow_{k}'] = np.repeat(dow == k, T).astype(float)
    columns['feat_hour_sin'] = np.tile(np.sin(angle), D)
    columns['feat_hour_cos'] = np.tile(np.cos(angle), D)
    frame = pd.DataFrame(columns)
    logger.info(f"Synthesized {D} days x {T} hours (seed {spec.seed})")
    return ScenarioTable(frame, T)
