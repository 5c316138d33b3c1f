"""Joint phase-noise/channel estimation and the interpolation baselines.

The effective channel seen by every delay tap is the tap gain times the
receiver phase rotation, so it fluctuates sample to sample even in a static
channel.  Estimation runs in two stages:

* Stage 1 places a strong impulse pilot on the delay-Doppler grid, guarded
  by 2L-2 empty delay rows.  In delay-time the pilot is an impulse train
  with period M, so dividing the received samples in the guarded rows by the
  known train yields N noisy snapshots of each tap, one per period; a
  threshold on the per-tap energy rejects empty delay bins.
* Stage 2 fills in the M*N - N missing samples per tap with the LMMSE
  interpolator ``W = K_{g,ghat} (K_{ghat,ghat})^+``.  The effective-channel
  autocorrelation factorizes into the phase-rotation factor times the Jakes
  Bessel factor (independent processes, entrywise product), so W is built
  entirely from statistics and is shared by all taps and all frames with the
  same configuration.

Baselines from the interpolation literature (complex-exponential BEM,
natural cubic splines, zero-order hold of the stage-1 snapshots) and the
OFDM phase-tracking-pilot estimator are provided for comparison.  BEM and
splines assume the tap trajectories are smooth between pilots, which holds
for Doppler spread but not for the wideband phase-noise component; the
Wiener filter instead weights each observation by the true correlation
structure, which is the entire point of the method.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve
from scipy.special import j0

from .dd_analysis import dd_transform
from .grid import Frame, GridConfig
from .oscillator import PhaseNoiseModel, expected_rotation


@dataclass(frozen=True)
class PilotLayout:
    """Impulse pilot position, guard width and pilot power.

    The guard spans delay rows m_p - (L-1) .. m_p + (L-1) (circularly) over
    all Doppler bins; sigma2_p is the power of the pilot symbol on the
    delay-Doppler grid.
    """

    L: int
    m_p: int | None = None   # default L-1 (guards sit at the grid edge)
    n_p: int = 0
    sigma2_p: float | None = None  # default: pilot-sample SNR = data SNR + 30 dB

    def resolved(self, cfg: GridConfig) -> "PilotLayout":
        m_p = self.L - 1 if self.m_p is None else self.m_p
        s2p = 1000.0 * cfg.N if self.sigma2_p is None else self.sigma2_p
        if 2 * self.L - 1 > cfg.M:
            raise ValueError(f"guard region (2L-1={2*self.L-1} rows) exceeds M={cfg.M}")
        return PilotLayout(self.L, m_p, self.n_p % cfg.N, s2p)

    def overhead(self, cfg: GridConfig) -> float:
        """Fraction of the grid consumed by the pilot and its guards."""
        return (2 * self.L - 1) / cfg.M

    def pilot_indices(self, cfg: GridConfig) -> np.ndarray:
        """Delay-time sample indices of the pilot impulse train."""
        return self.m_p + np.arange(cfg.N) * cfg.M

    def guard_rows(self, cfg: GridConfig) -> np.ndarray:
        return np.unique((self.m_p + np.arange(-(self.L - 1), self.L)) % cfg.M)

    def data_mask(self, cfg: GridConfig) -> np.ndarray:
        """Boolean M x N mask of the data-bearing grid cells."""
        mask = np.ones((cfg.M, cfg.N), dtype=bool)
        mask[self.guard_rows(cfg), :] = False
        return mask

    def n_data(self, cfg: GridConfig) -> int:
        return int(self.data_mask(cfg).sum())

    def pilot_frame(self, cfg: GridConfig) -> Frame:
        """Pilot-only frame (pilot cell set, everything else zero)."""
        X = np.zeros((cfg.M, cfg.N), dtype=complex)
        X[self.m_p, self.n_p] = np.sqrt(self.sigma2_p)
        return Frame(X)


def build_pilot_frame(layout: PilotLayout, data_symbols, cfg: GridConfig) -> Frame:
    """Assemble a frame: pilot at (m_p, n_p), zero guards, data elsewhere.

    Data symbols fill the unguarded cells in column-major order.
    """
    layout = layout.resolved(cfg)
    data_symbols = np.asarray(data_symbols).ravel()
    mask = layout.data_mask(cfg)
    n_data = int(mask.sum())
    if data_symbols.size != n_data:
        raise ValueError(f"layout carries {n_data} data cells, got {data_symbols.size} symbols")
    X = layout.pilot_frame(cfg).dd
    X.T[mask.T] = data_symbols  # column-major fill
    return Frame(X)


def extract_data(frame_dd: np.ndarray, layout: PilotLayout, cfg: GridConfig) -> np.ndarray:
    """Data-cell contents of a frame, in the build_pilot_frame fill order."""
    return frame_dd.T[layout.data_mask(cfg).T]


@dataclass
class PartialEstimate:
    """Stage-1 per-tap snapshots at the pilot indices (rows: taps, cols: periods)."""

    g_hat: np.ndarray         # (L, N)
    active: np.ndarray        # (L,) bool, taps that survived the threshold


def stage1_estimate(r: np.ndarray, layout: PilotLayout, cfg: GridConfig,
                    noise_var: float) -> PartialEstimate:
    """Threshold-based per-tap estimates from the pilot impulse train.

    Tap l is observed at samples m_p + l + k*M; dividing by the known train
    amplitude sigma_p/sqrt(N) (and the Doppler ramp for n_p != 0) gives
    ghat_l[k] = g[m_p + l + k*M, l] plus noise of variance N*noise_var/
    sigma2_p.  Taps whose mean energy stays below three times that noise
    floor are zeroed.
    """
    layout = layout.resolved(cfg)
    r = np.asarray(r).ravel()
    if r.size != cfg.frame_len:
        raise ValueError(f"expected {cfg.frame_len} samples, got {r.size}")
    k = np.arange(cfg.N)
    ramp = np.exp(-2j * np.pi * layout.n_p * k / cfg.N)
    scale = np.sqrt(cfg.N / layout.sigma2_p)
    g_hat = np.empty((layout.L, cfg.N), dtype=complex)
    for l in range(layout.L):
        g_hat[l] = r[(layout.m_p + l + k * cfg.M) % cfg.frame_len] * scale * ramp
    floor = 3.0 * noise_var * cfg.N / layout.sigma2_p
    active = np.mean(np.abs(g_hat) ** 2, axis=1) > floor
    g_hat[~active] = 0.0
    return PartialEstimate(g_hat, active)


def effective_autocorr(model: PhaseNoiseModel, f_D: float, T_s: float, lags,
                       phase_autocorr=None) -> np.ndarray:
    """k_g(lag): phase rotation factor times the Jakes Bessel factor.

    ``phase_autocorr`` may supply a measured phase autocorrelation sequence
    (indexed by lag) in place of the model-based one, e.g. for oscillators
    with flicker noise characterized only through their PSD.
    """
    lags = np.asarray(lags)
    if phase_autocorr is not None:
        table = np.asarray(phase_autocorr)
        k_psi = table[np.abs(lags)]
    else:
        k_psi = expected_rotation(model, np.abs(lags))
    return k_psi * j0(2.0 * np.pi * f_D * T_s * np.abs(lags))


@dataclass
class WienerFilter:
    """LMMSE interpolator from N pilot-index snapshots to all M*N samples."""

    W: np.ndarray             # (MN, N)
    mse_per_sample: np.ndarray  # theoretical MMSE at each output sample


def build_wiener(model: PhaseNoiseModel, f_D: float, noise_ratio: float,
                 cfg: GridConfig, layout: PilotLayout,
                 phase_autocorr=None) -> WienerFilter:
    """Solve the Wiener-Hopf system for the configured statistics.

    ``noise_ratio`` is the variance of the stage-1 observation noise
    relative to unit tap power, i.e. N*sigma2_eta/sigma2_p.  The pilot-index
    autocorrelation is ridge-regularized by max(noise_ratio, 1e-8*tr/N); it
    is near-singular when both the Doppler and the phase noise are small.
    """
    layout = layout.resolved(cfg)
    if noise_ratio < 0:
        raise ValueError("noise_ratio must be >= 0")
    mn = cfg.frame_len
    pilots = layout.pilot_indices(cfg)
    k_cross = effective_autocorr(
        model, f_D, cfg.T_s,
        np.abs(np.arange(mn)[:, None] - pilots[None, :]), phase_autocorr)
    k_pil = effective_autocorr(
        model, f_D, cfg.T_s,
        np.abs(pilots[:, None] - pilots[None, :]), phase_autocorr)
    ridge = max(noise_ratio, 1e-8 * np.trace(k_pil).real / cfg.N)
    k_obs = k_pil + ridge * np.eye(cfg.N)
    # W = K_cross K_obs^-1 via a Hermitian solve on the transposed system
    W = solve(k_obs, k_cross.conj().T, assume_a="pos").conj().T
    k0 = float(effective_autocorr(model, f_D, cfg.T_s, 0, phase_autocorr))
    mse = k0 - np.einsum("mn,mn->m", W, k_cross.conj()).real
    return WienerFilter(W, mse)


@dataclass
class FullEstimate:
    """Per-sample effective channel estimate for every tap (MN x L)."""

    g_dt: np.ndarray

    def dd_matrix(self, cfg: GridConfig) -> np.ndarray:
        """Dense delay-Doppler estimate (small grids), the DD-domain view of
        the banded circular delay-time matrix built from the tap columns."""
        mn = cfg.frame_len
        G = np.zeros((mn, mn), dtype=complex)
        rows = np.arange(mn)
        for l in range(self.g_dt.shape[1]):
            G[rows, (rows - l) % mn] += self.g_dt[:, l]
        return dd_transform(G, cfg)


def stage2_estimate(partial: PartialEstimate, wiener: WienerFilter) -> FullEstimate:
    """Apply the shared Wiener filter to every tap column."""
    n_obs = wiener.W.shape[1]
    if partial.g_hat.shape[1] != n_obs:
        raise ValueError(f"filter expects {n_obs} snapshots per tap, "
                         f"got {partial.g_hat.shape[1]}")
    return FullEstimate(wiener.W @ partial.g_hat.T)


def stage1_hold_estimate(partial: PartialEstimate, cfg: GridConfig) -> FullEstimate:
    """Stage-1 only: hold each snapshot over its M-sample delay block."""
    blocks = np.arange(cfg.frame_len) // cfg.M
    return FullEstimate(partial.g_hat.T[blocks, :])


def bem_order(cfg: GridConfig, f_D: float, beta_pn: float = 0.0,
              k_over: float = 1.0, include_pn_bandwidth: bool = False) -> int:
    """Number of complex-exponential basis functions.

    Default sizes the basis to the Doppler spread only,
    Q = ceil(2*M*N*T_s*k_over*f_D + 1); with ``include_pn_bandwidth`` the
    phase-noise bandwidth is added to the spread (useful only when the
    phase noise is slow enough for a basis expansion to track).
    """
    mn_t = cfg.frame_len * cfg.T_s
    if include_pn_bandwidth:
        q = int(np.ceil(2.0 * k_over * mn_t * (f_D + beta_pn))) + 1
    else:
        q = int(np.ceil(2.0 * mn_t * k_over * f_D + 1.0))
    return max(q, 1)


def bem_estimate(partial: PartialEstimate, cfg: GridConfig, layout: PilotLayout,
                 f_D: float, beta_pn: float = 0.0, k_over: float = 1.0,
                 include_pn_bandwidth: bool = False) -> FullEstimate:
    """Least-squares fit of an oversampled CE-BEM to the pilot snapshots.

    Q basis tones spaced 1/(k_over*M*N) in normalized frequency, centered on
    DC, fitted per tap at the pilot indices and evaluated on all samples.
    """
    layout = layout.resolved(cfg)
    q = bem_order(cfg, f_D, beta_pn, k_over, include_pn_bandwidth)
    if q > cfg.N:
        warnings.warn(f"BEM order {q} exceeds the {cfg.N} pilot snapshots; clamping")
        q = cfg.N
    mn = cfg.frame_len
    freqs = (np.arange(q) - (q - 1) / 2.0) / (k_over * mn)
    basis = np.exp(2j * np.pi * np.arange(mn)[:, None] * freqs[None, :])
    b_pil = basis[layout.pilot_indices(cfg), :]
    coef, *_ = np.linalg.lstsq(b_pil, partial.g_hat.T, rcond=None)
    return FullEstimate(basis @ coef)


def spline_estimate(partial: PartialEstimate, cfg: GridConfig,
                    layout: PilotLayout) -> FullEstimate:
    """Not-a-knot cubic spline through the pilot snapshots, per tap,
    real and imaginary parts separately; extrapolates past the end pilots."""
    layout = layout.resolved(cfg)
    pilots = layout.pilot_indices(cfg)
    grid = np.arange(cfg.frame_len)
    vals = partial.g_hat.T  # (N, L)
    re = CubicSpline(pilots, vals.real, axis=0, bc_type="not-a-knot")(grid)
    im = CubicSpline(pilots, vals.imag, axis=0, bc_type="not-a-knot")(grid)
    return FullEstimate(re + 1j * im)


# --------------------------------------------------------------------------
# OFDM phase-tracking baseline
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PtrpLayout:
    """Comb phase-tracking pilots for the equivalent OFDM system.

    Subcarriers 0, spacing, 2*spacing, ... carry unit pilots in every OFDM
    symbol; symbol 0 is a full pilot symbol used for the one-shot channel
    estimate.  Remaining cells carry data.
    """

    spacing: int = 8
    pilot_value: complex = 1.0 + 0.0j

    def comb(self, cfg: GridConfig) -> np.ndarray:
        return np.arange(0, cfg.M, self.spacing)

    def data_mask(self, cfg: GridConfig) -> np.ndarray:
        mask = np.ones((cfg.M, cfg.N), dtype=bool)
        mask[:, 0] = False
        mask[self.comb(cfg), :] = False
        return mask

    def n_data(self, cfg: GridConfig) -> int:
        return int(self.data_mask(cfg).sum())

    def pilot_grid(self, cfg: GridConfig) -> np.ndarray:
        X = np.zeros((cfg.M, cfg.N), dtype=complex)
        X[:, 0] = self.pilot_value
        X[self.comb(cfg), :] = self.pilot_value
        return X


def build_ptrp_frame(layout: PtrpLayout, data_symbols, cfg: GridConfig) -> Frame:
    data_symbols = np.asarray(data_symbols).ravel()
    mask = layout.data_mask(cfg)
    if data_symbols.size != mask.sum():
        raise ValueError(f"layout carries {int(mask.sum())} data cells, "
                         f"got {data_symbols.size} symbols")
    X = layout.pilot_grid(cfg)
    X.T[mask.T] = data_symbols
    return Frame(X)


def ofdm_cpe_estimate(rx_freq: np.ndarray, layout: PtrpLayout, cfg: GridConfig,
                      f_D: float = 0.0, interpolate: bool = False,
                      k_over: float = 1.0):
    """Per-symbol common phase error from the PTRPs, plus a channel estimate.

    Returns (cpe, H_est): the CPE angle per OFDM symbol and the M x N
    effective channel used for one-tap equalization.  Without interpolation
    the channel is the symbol-0 snapshot rotated by the CPE; with it, each
    comb subcarrier's trajectory is BEM-fitted across symbols and linearly
    interpolated in frequency.
    """
    Y = np.asarray(rx_freq)
    if Y.shape != (cfg.M, cfg.N):
        raise ValueError(f"expected ({cfg.M}, {cfg.N}) frame, got {Y.shape}")
    comb = layout.comb(cfg)
    p = layout.pilot_value
    h0 = Y[:, 0] / p
    ref = h0[comb] * p
    corr = (Y[comb, :].conj().T @ ref).conj()       # per-symbol pilot correlation
    cpe = np.angle(corr)
    if not interpolate:
        H = h0[:, None] * np.exp(1j * cpe)[None, :]
        return cpe, H
    h_pil = Y[comb, :] / p                          # per-symbol comb estimates
    sym_T = (cfg.M + cfg.n_cp) * cfg.T_s
    q = max(int(np.ceil(2.0 * k_over * cfg.N * sym_T * f_D + 1.0)), 1)
    q = min(q, cfg.N)
    freqs = (np.arange(q) - (q - 1) / 2.0) / (k_over * cfg.N)
    basis = np.exp(2j * np.pi * np.arange(cfg.N)[:, None] * freqs[None, :])
    coef, *_ = np.linalg.lstsq(basis, h_pil.T, rcond=None)
    h_fit = (basis @ coef).T                        # (len(comb), N)
    H = np.empty((cfg.M, cfg.N), dtype=complex)
    rows = np.arange(cfg.M)
    for n in range(cfg.N):
        H[:, n] = (np.interp(rows, comb, h_fit[:, n].real)
                   + 1j * np.interp(rows, comb, h_fit[:, n].imag))
    return cpe, H
