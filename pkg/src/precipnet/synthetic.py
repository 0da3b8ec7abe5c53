"""
Desk-scale synthetic coincidence generator.

Brightness temperatures follow a toy radiometric forward model: a per-surface
baseline, warming of the low-frequency channels by rain emission over ocean,
and cooling of the high-frequency channels by ice scattering. Because the
model is analytic it can be inverted per pixel (:func:`invert_rate`), which
gives the estimation tests a reference error level.
"""
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .data import (GMI_CHANNELS, RATE_THRESHOLD, PrecipDatabase, PrecipLabel,
                   RadarSource, SurfaceClass)
from .errors import ConfigError

EMISSION_MAX_GHZ = 37.0
SCATTERING_MIN_GHZ = 89.0
RAIN_ICE_FRACTION = 0.5
TB_MIN, TB_MAX = 50.0, 350.0
CLOUD_LWP = 0.1     # kg/m2
CLOUD_IWP = 0.15

# Clear-sky baselines (K) for the 13 GMI channels.
_BASE_OCEAN = np.array([170.0, 95.0, 185.0, 120.0, 215.0, 215.0, 150.0,
                        255.0, 220.0, 270.0, 265.0, 255.0, 265.0])
_BASE_LAND = np.array([275.0, 265.0, 275.0, 266.0, 276.0, 274.0, 268.0,
                       275.0, 272.0, 272.0, 270.0, 255.0, 263.0])


@dataclass
class SyntheticConfig:
    """Generator settings. Priors are ordered (none, rain, snow) and the
    surface mix (ocean, land, coast)."""

    n_records: int = 100_000
    class_priors: tuple = (0.7, 0.2, 0.1)
    surface_mix: tuple = (0.6, 0.25, 0.15)
    rain_dist: tuple = (0.0, 1.0)        # lognormal (mu, sigma)
    snow_dist: tuple = (2.0, 0.15)       # gamma (shape, scale)
    tb_noise_sigma: float = 2.0
    seed: int = 0
    n_channels: int = 13
    emission_gain: float = 15.0
    scattering_gain: float = 25.0
    source: RadarSource = RadarSource.DPR

    def __post_init__(self):
        self.class_priors = tuple(float(p) for p in self.class_priors)
        self.surface_mix = tuple(float(p) for p in self.surface_mix)
        self.rain_dist = tuple(float(p) for p in self.rain_dist)
        self.snow_dist = tuple(float(p) for p in self.snow_dist)
        self.source = _as_source(self.source)
        for name in ("class_priors", "surface_mix"):
            probs = getattr(self, name)
            if len(probs) != 3 or min(probs) < 0.0:
                raise ConfigError(f"{name} must be three non-negative probabilities")
            if abs(sum(probs) - 1.0) > 1e-12:
                raise ConfigError(f"{name} sums to {sum(probs)!r}, not 1")
        if len(self.rain_dist) != 2 or not self.rain_dist[1] > 0.0:
            raise ConfigError("rain_dist sigma must be positive")
        if len(self.snow_dist) != 2 or min(self.snow_dist) <= 0.0:
            raise ConfigError("snow_dist shape and scale must be positive")
        if not self.tb_noise_sigma >= 0.0:
            raise ConfigError("tb_noise_sigma must be >= 0")
        if self.n_records < 0 or self.n_channels < 2:
            raise ConfigError("n_records must be >= 0 and n_channels >= 2")
        if min(self.emission_gain, self.scattering_gain) <= 0.0:
            raise ConfigError("forward-model gains must be positive")

    def to_dict(self):
        d = asdict(self)
        d["source"] = self.source.name.lower()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _as_source(value):
    if isinstance(value, str):
        return RadarSource[value.upper()]
    return RadarSource(value)


def channel_frequencies(n_channels):
    if n_channels == len(GMI_CHANNELS):
        return np.array([f for f, _ in GMI_CHANNELS])
    return np.geomspace(10.65, 183.31, n_channels)


def surface_baselines(n_channels):
    """Clear-sky tb per surface class, shape (3, n_channels)."""
    if n_channels == len(GMI_CHANNELS):
        ocean, land = _BASE_OCEAN, _BASE_LAND
    else:
        # V-pol GMI values interpolated in log-frequency
        vpol = [i for i, (_, pol) in enumerate(GMI_CHANNELS) if pol != "H"]
        f_ref = np.log([GMI_CHANNELS[i][0] for i in vpol])
        f = np.log(channel_frequencies(n_channels))
        ocean = np.interp(f, f_ref, _BASE_OCEAN[vpol])
        land = np.interp(f, f_ref, _BASE_LAND[vpol])
    return np.stack([ocean, land, 0.5 * (ocean + land)])


def channel_gains(surface, label, config):
    """Per-channel sensitivity of mean tb to ln(1 + rate)."""
    freqs = channel_frequencies(config.n_channels)
    emission = (freqs <= EMISSION_MAX_GHZ).astype(float)
    scattering = (freqs >= SCATTERING_MIN_GHZ).astype(float)
    label = PrecipLabel(label)
    if label == PrecipLabel.RAIN:
        gain = -RAIN_ICE_FRACTION * config.scattering_gain * scattering
        if SurfaceClass(surface) == SurfaceClass.OCEAN:
            gain = gain + config.emission_gain * emission
        return gain
    if label == PrecipLabel.SNOW:
        return -config.scattering_gain * scattering
    return np.zeros(config.n_channels)


def mean_tb(surface, label, rate, config):
    """Noise-free forward model for vectors of surface, label and rate."""
    surface = np.asarray(surface, dtype=int)
    label = np.asarray(label, dtype=int)
    rate = np.asarray(rate, dtype=float)
    out = surface_baselines(config.n_channels)[surface].copy()
    signal = np.log1p(rate)
    for s in SurfaceClass:
        for lab in (PrecipLabel.RAIN, PrecipLabel.SNOW):
            mask = (surface == s) & (label == lab)
            if mask.any():
                out[mask] += signal[mask, None] * channel_gains(s, lab, config)
    return out


def generate_synthetic(config):
    """Draw an unstratified database from the forward model.

    Deterministic given ``config.seed``; every random stream is drawn for all
    records in a fixed order regardless of the outcome of earlier draws.
    """
    n = config.n_records
    rng = np.random.default_rng(config.seed)
    surface = rng.choice(3, size=n, p=config.surface_mix)
    cls = rng.choice(3, size=n, p=config.class_priors)
    label = np.choose(cls, [PrecipLabel.NONE, PrecipLabel.RAIN, PrecipLabel.SNOW])
    rain = rng.lognormal(config.rain_dist[0], config.rain_dist[1], size=n)
    snow = rng.gamma(config.snow_dist[0], config.snow_dist[1], size=n)
    rate = np.where(label == PrecipLabel.RAIN, rain,
                    np.where(label == PrecipLabel.SNOW, snow, 0.0))
    light = rate < RATE_THRESHOLD
    rate[light] = 0.0
    label[light] = PrecipLabel.NONE

    noise = rng.normal(0.0, 1.0, size=(n, config.n_channels)) * config.tb_noise_sigma
    tb = np.clip(mean_tb(surface, label, rate, config) + noise, TB_MIN, TB_MAX)

    is_rain = (label == PrecipLabel.RAIN).astype(float)
    is_snow = (label == PrecipLabel.SNOW).astype(float)
    signal = np.log1p(rate)
    u = rng.uniform(size=n)
    t2m = np.where(is_rain > 0, 278.0 + 27.0 * u,
                   np.where(is_snow > 0, 250.0 + 26.0 * u, 250.0 + 55.0 * u))
    wvp = (45.0 * np.exp(0.06 * (t2m - 300.0)) * rng.lognormal(0.0, 0.25, size=n)
           + 4.0 * is_rain * signal)
    # precipitating columns carry a cloud-water offset even at light rates
    lwp = (rng.gamma(1.5, 0.04, size=n)
           + is_rain * (CLOUD_LWP + 0.12 * signal) * rng.lognormal(0.0, 0.3, size=n)
           + 0.02 * is_snow * signal)
    iwp = (rng.gamma(1.5, 0.03, size=n)
           + is_snow * (CLOUD_IWP + 0.25 * signal) * rng.lognormal(0.0, 0.3, size=n)
           + 0.06 * is_rain * signal * rng.lognormal(0.0, 0.3, size=n))
    cape = (rng.exponential(150.0, size=n)
            + 300.0 * is_rain * signal * rng.lognormal(0.0, 0.5, size=n))
    ancillary = np.column_stack([lwp, iwp, wvp, cape, t2m])

    abs_lat = np.clip((305.0 - t2m) / 0.9 + rng.normal(0.0, 8.0, size=n), 0.0, 89.9)
    lat = np.where(rng.uniform(size=n) < 0.5, -abs_lat, abs_lat)
    lon = rng.uniform(-180.0, 180.0, size=n)

    return PrecipDatabase(tb, ancillary, surface, label, rate, lat, lon,
                          np.full(n, int(config.source)))


def invert_rate(tb, surface, label, config, max_rate=500.0):
    """Least-squares rate for each pixel under the known forward model.

    Solves the 1-D normal equation d/dr sum_c (tb_c - mean_c(r))^2 = 0 by
    bracketing root-finding, with the rate constrained to [0, max_rate].
    """
    tb = np.atleast_2d(np.asarray(tb, dtype=float))
    surface = np.broadcast_to(np.asarray(surface, dtype=int), (len(tb),))
    label = np.broadcast_to(np.asarray(label, dtype=int), (len(tb),))
    base = surface_baselines(config.n_channels)
    out = np.zeros(len(tb))
    for i in range(len(tb)):
        if label[i] == PrecipLabel.NONE:
            continue
        gain = channel_gains(surface[i], label[i], config)
        anomaly = tb[i] - base[surface[i]]

        def normal_eq(r):
            return np.dot(gain, anomaly - gain * np.log1p(r))

        lo, hi = normal_eq(0.0), normal_eq(max_rate)
        if lo <= 0.0:
            out[i] = 0.0
        elif hi >= 0.0:
            out[i] = max_rate
        else:
            out[i] = brentq(normal_eq, 0.0, max_rate, xtol=1e-12, rtol=1e-12)
    return out
