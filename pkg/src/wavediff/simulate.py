"""Reference dataset simulator.

Produces desk-scale minute-bar data with known stylized facts (volatility
clustering, intraday U-shape, coupled spreads and volumes) so the rest of
the pipeline can be exercised and evaluated without proprietary feeds.
The functional forms here are deliberately simple: a GARCH(1,1) core, a
cosine-bowl intraday multiplier, and log-linear spread/volume couplings.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from .errors import ConfigError
from .ingest import MINUTES_PER_DAY, TradingDay


@dataclass(frozen=True)
class ReferenceModelConfig:
    n_days: int = 512
    garch_omega: float = 2.5e-9
    garch_alpha: float = 0.09
    garch_beta: float = 0.90
    u_shape_amplitude: float = 2.0
    spread_coupling: float = 0.5
    volume_coupling: float = 1.0
    base_price: float = 100.0
    rng_seed: int = 0
    # Artifact knobs beyond the headline parameters.
    tick_size: float = 0.01
    spread_base_ticks: float = 2.0
    volume_base: float = 5000.0
    spread_noise: float = 0.35
    volume_noise: float = 0.5
    volume_spread_noise: float = -0.6
    start_date: date = date(2005, 1, 3)

    def check(self) -> None:
        if self.garch_alpha + self.garch_beta >= 1.0:
            raise ConfigError(
                "GARCH not stationary: alpha + beta ="
                f" {self.garch_alpha + self.garch_beta} >= 1"
            )
        if min(self.garch_omega, self.garch_alpha, self.garch_beta) < 0:
            raise ConfigError("GARCH parameters must be non-negative")
        if self.u_shape_amplitude < 1.0:
            raise ConfigError("u_shape_amplitude must be >= 1")
        if self.n_days < 1:
            raise ConfigError("n_days must be >= 1")


def intraday_multiplier(amplitude: float, n: int = MINUTES_PER_DAY) -> np.ndarray:
    """Cosine bowl: `amplitude` at the first and last minute, 1.0 mid-day."""
    t = np.arange(n, dtype=np.float64)
    return 1.0 + (amplitude - 1.0) * (1.0 + np.cos(2.0 * np.pi * t / (n - 1))) / 2.0


def _simulate_day(cfg: ReferenceModelConfig, day_index: int) -> TradingDay:
    # Independent substream per day: parallel generation is order-free.
    rng = np.random.default_rng([cfg.rng_seed, day_index])
    n = MINUTES_PER_DAY
    shape = intraday_multiplier(cfg.u_shape_amplitude, n)

    var_bar = cfg.garch_omega / (1.0 - cfg.garch_alpha - cfg.garch_beta)
    sigma_bar = np.sqrt(var_bar)

    eps = rng.standard_normal(n)
    returns = np.empty(n)
    sigma2 = np.empty(n)
    sigma2[0] = var_bar
    returns[0] = shape[0] * np.sqrt(sigma2[0]) * eps[0]
    for t in range(1, n):
        core = returns[t - 1] / shape[t - 1]
        sigma2[t] = cfg.garch_omega + cfg.garch_alpha * core**2 + cfg.garch_beta * sigma2[t - 1]
        returns[t] = shape[t] * np.sqrt(sigma2[t]) * eps[t]

    mid = cfg.base_price * np.exp(np.cumsum(returns))

    # Spread and volume move with the instantaneous volatility level,
    # with a shared noise term whose loading sets the spread/volume
    # correlation sign.
    z = np.log(np.sqrt(sigma2) * shape / sigma_bar)
    eta = rng.standard_normal(n)
    u = rng.standard_normal(n)
    spread = cfg.tick_size * cfg.spread_base_ticks * np.exp(
        cfg.spread_coupling * z + cfg.spread_noise * eta
    )
    spread = np.maximum(cfg.tick_size, spread)
    volume = cfg.volume_base * np.exp(
        cfg.volume_coupling * z + cfg.volume_spread_noise * eta + cfg.volume_noise * u
    )
    volume = np.maximum(0.0, np.rint(volume))

    bid = mid - spread / 2.0
    ask = mid + spread / 2.0
    return TradingDay.from_arrays(_nth_weekday(cfg.start_date, day_index), bid, ask, volume)


def _nth_weekday(start: date, n: int) -> date:
    # n-th weekday on/after start (weekends skipped; holidays are not modeled).
    whole_weeks, rest = divmod(n, 5)
    day = start + timedelta(weeks=whole_weeks)
    while day.weekday() >= 5:
        day += timedelta(days=1)
    for _ in range(rest):
        day += timedelta(days=1)
        while day.weekday() >= 5:
            day += timedelta(days=1)
    return day


def generate_reference_dataset(cfg: ReferenceModelConfig) -> list[TradingDay]:
    """Simulate ``cfg.n_days`` trading days, deterministic in ``cfg.rng_seed``."""
    cfg.check()
    return [_simulate_day(cfg, i) for i in range(cfg.n_days)]
