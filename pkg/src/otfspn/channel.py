"""Doubly dispersive channel generation and application.

Tap delays come from a power-delay profile (3GPP TDL-C by default, scaled by
the configured delay spread) quantized to the sample grid; taps sharing a
sample point have their powers summed.  Each retained tap is an independent
stationary complex Gaussian process with Jakes autocorrelation
``J_0(2*pi*f_D*T_s*lag)``, synthesized by circulant embedding of the Bessel
covariance so the second-order statistics are exact -- the Wiener-filter
estimator assumes exactly these statistics.

The receive model is

    r[n] = exp(j*theta[n]) * sum_l h[n, l] * s[n - l] + eta[n],

i.e. phase noise multiplies at the receiver after the channel.  With a cyclic
prefix at least as long as the channel memory, the retained window sees a
circular convolution, so taps and phase are generated for the M*N retained
samples only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import j0

from .dd_analysis import dd_transform
from .grid import GridConfig
from .oscillator import PhasePath

SPEED_OF_LIGHT = 299_792_458.0

# TR 38.901 Table 7.7.2-3 (TDL-C): normalized delay, power in dB
TDL_C = [
    (0.0000, -4.4), (0.2099, -1.2), (0.2219, -3.5), (0.2329, -5.2),
    (0.2176, -2.5), (0.6366, 0.0), (0.6448, -2.2), (0.6560, -3.9),
    (0.6584, -7.4), (0.7935, -7.1), (0.8213, -10.7), (0.9336, -11.1),
    (1.2285, -5.1), (1.3083, -6.8), (2.1704, -8.7), (2.7105, -13.2),
    (4.2589, -13.9), (4.6003, -13.9), (5.4902, -15.8), (5.6077, -17.1),
    (6.3065, -16.0), (6.6374, -15.7), (7.0427, -21.6), (8.6523, -22.8),
]


def doppler_from_velocity(v_kmh: float, f_c: float) -> float:
    """Maximum Doppler shift for a relative velocity in km/h."""
    return (v_kmh / 3.6) * f_c / SPEED_OF_LIGHT


@dataclass(frozen=True)
class ChannelProfile:
    """Power-delay profile (delays in seconds, linear powers summing to 1)
    plus the maximum Doppler shift."""

    delays: tuple
    powers: tuple
    f_D: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.delays, dtype=float)
        p = np.asarray(self.powers, dtype=float)
        if d.shape != p.shape or d.size == 0:
            raise ValueError("delays and powers must be equal-length, non-empty")
        if np.any(d < 0) or np.any(p < 0):
            raise ValueError("delays and powers must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("powers must sum to 1")
        if self.f_D < 0:
            raise ValueError("f_D must be >= 0")

    @classmethod
    def from_table(cls, delays_ns, powers_db, f_D: float = 0.0,
                   delay_scale: float = 1.0) -> "ChannelProfile":
        """Build from a (delay ns, power dB) table; powers are normalized."""
        d = np.asarray(delays_ns, dtype=float) * 1e-9 * delay_scale
        p = 10.0 ** (np.asarray(powers_db, dtype=float) / 10.0)
        p = p / p.sum()
        return cls(tuple(d), tuple(p), f_D)

    @classmethod
    def tdl_c(cls, delay_spread: float = 100e-9, f_D: float = 0.0) -> "ChannelProfile":
        d = np.array([row[0] for row in TDL_C]) * delay_spread
        p = 10.0 ** (np.array([row[1] for row in TDL_C]) / 10.0)
        return cls(tuple(d), tuple(p / p.sum()), f_D)

    @classmethod
    def ideal(cls) -> "ChannelProfile":
        """Single unit tap, no Doppler (AWGN once noise is added)."""
        return cls((0.0,), (1.0,), 0.0)

    def quantized(self, T_s: float):
        """(tap sample indices, tap powers) on the T_s grid, coincident taps merged."""
        idx = np.rint(np.asarray(self.delays) / T_s).astype(int)
        out = {}
        for i, p in zip(idx, self.powers):
            out[i] = out.get(i, 0.0) + p
        keys = sorted(out)
        return np.array(keys), np.array([out[k] for k in keys])


@dataclass
class ChannelRealization:
    """Per-sample tap gains ``taps[n, l]`` for one frame window.

    ``tap_delays`` holds the sample delay of each column; columns between
    quantized taps are absent (zero power).  ``L`` is the channel length in
    samples, i.e. max delay + 1.
    """

    taps: np.ndarray          # (n_samples, n_taps)
    tap_delays: np.ndarray    # (n_taps,)

    @property
    def L(self) -> int:
        return int(self.tap_delays.max()) + 1

    def dense_taps(self) -> np.ndarray:
        """(n_samples, L) matrix with zero columns for empty delays."""
        out = np.zeros((self.taps.shape[0], self.L), dtype=complex)
        out[:, self.tap_delays] = self.taps
        return out


_JAKES_FACTORS: dict = {}


def _jakes_factor(n_samples: int, f_d_norm: float) -> np.ndarray:
    """Factor F with F F^H equal to the Bessel Toeplitz covariance.

    Eigendecomposition of J_0(2*pi*f_d_norm*|i-j|) with the numerically-zero
    tail dropped; the band-limited Jakes spectrum makes the covariance close
    to low rank, so F is n x r with r roughly 2*f_d_norm*n + O(log n).
    Cached per (length, Doppler) because building it dominates drawing from
    it.  (A plain circulant embedding of the Bessel sequence is not PSD --
    clipping its negative modes biases the tap power by several percent.)
    """
    key = (n_samples, f_d_norm)
    fac = _JAKES_FACTORS.get(key)
    if fac is None:
        lag = np.arange(n_samples)
        cov = j0(2.0 * np.pi * f_d_norm * np.abs(lag[:, None] - lag[None, :]))
        w, v = np.linalg.eigh(cov)
        keep = w > 1e-12 * w[-1]
        fac = v[:, keep] * np.sqrt(w[keep])
        _JAKES_FACTORS[key] = fac
    return fac


def _jakes_process(n_samples: int, f_d_norm: float, rng: np.random.Generator,
                   n_procs: int) -> np.ndarray:
    """(n_procs, n_samples) unit-power complex Gaussians with exact Bessel
    autocorrelation."""
    if f_d_norm == 0.0:
        w = (rng.standard_normal(n_procs) + 1j * rng.standard_normal(n_procs))
        return np.repeat(w[:, None] / np.sqrt(2.0), n_samples, axis=1)
    fac = _jakes_factor(n_samples, f_d_norm)
    r = fac.shape[1]
    w = (rng.standard_normal((n_procs, r))
         + 1j * rng.standard_normal((n_procs, r))) / np.sqrt(2.0)
    return w @ fac.T


def realize_channel(profile: ChannelProfile, cfg: GridConfig, seed,
                    n_samples: int | None = None) -> ChannelRealization:
    """Draw one channel realization over the frame window.

    Taps are mutually independent, zero-mean complex Gaussian and stationary
    with autocorrelation J_0(2*pi*f_D*T_s*lag); tap powers follow the
    sample-quantized profile.  Requires n_cp >= L - 1.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if n_samples is None:
        n_samples = cfg.frame_len
    delays, powers = profile.quantized(cfg.T_s)
    L = int(delays.max()) + 1
    if L - 1 > cfg.n_cp:
        raise ValueError(f"channel length {L} exceeds CP ({cfg.n_cp} samples)")
    procs = _jakes_process(n_samples, profile.f_D * cfg.T_s, rng, len(delays))
    taps = (np.sqrt(powers)[:, None] * procs).T
    return ChannelRealization(taps, delays)


def effective_channel(chan: ChannelRealization, path: PhasePath) -> np.ndarray:
    """True effective taps g[n, l] = exp(j*theta[n]) h[n, l], dense in delay.

    The trailing samples of the path align with the channel window (the path
    may include the CP, the channel does not)."""
    h = chan.dense_taps()
    n = h.shape[0]
    if len(path) < n:
        raise ValueError("phase path shorter than channel window")
    return path.psi[-n:, None] * h


def apply_channel(s: np.ndarray, chan: ChannelRealization, path: PhasePath,
                  noise_var: float, seed, cfg: GridConfig) -> np.ndarray:
    """Transmit CP-prefixed samples through the LTV channel plus phase noise.

    Returns the post-CP-removal window of length M*N.  With n_cp >= L - 1
    the linear time-varying convolution restricted to that window equals a
    circular one in the CP-free transmit block, which is how it is computed.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    s = np.asarray(s).ravel()
    mn = cfg.frame_len
    if s.size == mn + cfg.n_cp:
        s = s[cfg.n_cp:]
    elif s.size != mn:
        raise ValueError(f"expected {mn + cfg.n_cp} or {mn} samples, got {s.size}")
    if chan.taps.shape[0] != mn:
        raise ValueError("channel window does not match the grid")
    acc = np.zeros(mn, dtype=complex)
    for col, l in enumerate(chan.tap_delays):
        acc += chan.taps[:, col] * np.roll(s, l)
    r = path.psi[-mn:] * acc
    if noise_var > 0:
        r = r + np.sqrt(noise_var / 2.0) * (rng.standard_normal(mn)
                                            + 1j * rng.standard_normal(mn))
    return r


def delay_time_matrix(taps: np.ndarray, mn: int) -> np.ndarray:
    """Dense circular delay-time channel matrix from (mn, L) tap gains.

    Row n has h[n, l] at column (n - l) mod mn.  Oracle-scale only.
    """
    if mn > 4096:
        raise ValueError("dense delay-time matrix limited to M*N <= 4096")
    H = np.zeros((mn, mn), dtype=complex)
    rows = np.arange(mn)
    for l in range(taps.shape[1]):
        H[rows, (rows - l) % mn] += taps[:, l]
    return H


def effective_dd_channel(chan: ChannelRealization, path: PhasePath,
                         cfg: GridConfig) -> np.ndarray:
    """Dense effective delay-Doppler channel G_DD (small grids only).

    G_DD = (F_N kron I_M) diag(psi) H_DT (F_N^H kron I_M); the demodulated
    receive vector equals G_DD @ x plus noise.
    """
    mn = cfg.frame_len
    if mn > 4096:
        raise ValueError("effective_dd_channel limited to M*N <= 4096")
    G_dt = delay_time_matrix(effective_channel(chan, path), mn)
    return dd_transform(G_dt, cfg)
