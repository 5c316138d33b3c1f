"""Delay-Doppler phase-noise operator, its statistics, and SINR expressions.

A unit-modulus phase path psi multiplies the received samples in the
delay-time domain.  Seen from the delay-Doppler grid the multiplication
becomes a block-circulant operator with N diagonal M x M blocks; block n is
built from the coefficients

    phi_n[m] = (1/N) sum_k psi[m + k*M] exp(-j*2*pi*n*k/N),

the N-point DFT (scaled by 1/N) of the phase samples seen by delay bin m.
Doppler bin 0 carries the common rotation of every symbol, the other bins
leak energy between Doppler bins (inter-Doppler interference).  Because the
DFT samples the phase at a spacing of M samples, the relevant phase
decorrelation lag is M times larger than in an OFDM system over the same
bandwidth, which is why OTFS is the more phase-noise-sensitive of the two.

All second-order quantities reduce to the mean rotation factor
``expected_rotation(model, lag)``; the interference power needs only the
diagonal of the coefficient autocorrelation matrix.  For a free-running
oscillator that diagonal has an exact closed form (a pair of finite
geometric sums), evaluated here in O(1) per entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridConfig
from .oscillator import PhaseNoiseModel, PhasePath, expected_rotation, sample_paths

_DENSE_LIMIT = 4096


@dataclass
class DdPhaseOperator:
    """Block-circulant delay-Doppler phase-noise operator.

    ``phi[m, n]`` is the coefficient of block n at delay m; the full matrix
    (never materialized except for small oracles) has block (p, q) equal to
    ``diag(phi[:, (p-q) mod N])``.
    """

    phi: np.ndarray  # (M, N)

    @property
    def M(self) -> int:
        return self.phi.shape[0]

    @property
    def N(self) -> int:
        return self.phi.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Multiply a vectorized delay-Doppler frame by the operator.

        Per delay bin this is a circular convolution along Doppler, done
        with FFTs; identical to demodulate(psi * modulate(x)).
        """
        X = np.asarray(x).reshape(self.M, self.N, order="F")
        Y = np.fft.ifft(np.fft.fft(X, axis=1) * np.fft.fft(self.phi, axis=1), axis=1)
        return Y.reshape(-1, order="F")

    def as_dense(self) -> np.ndarray:
        mn = self.M * self.N
        if mn > _DENSE_LIMIT:
            raise ValueError(f"refusing to materialize {mn}x{mn} operator")
        out = np.zeros((mn, mn), dtype=complex)
        for p in range(self.N):
            for q in range(self.N):
                blk = np.diag(self.phi[:, (p - q) % self.N])
                out[p * self.M:(p + 1) * self.M, q * self.M:(q + 1) * self.M] = blk
        return out


def dd_coefficients(path: PhasePath, cfg: GridConfig) -> DdPhaseOperator:
    """Coefficients phi_n[m] of one phase path on the given grid.

    Uses the trailing M*N samples of the path, i.e. the post-CP-removal
    window of a full frame path.
    """
    mn = cfg.frame_len
    if len(path) < mn:
        raise ValueError(f"path too short: {len(path)} < {mn}")
    psig = path.psi[-mn:].reshape(cfg.M, cfg.N, order="F")
    return DdPhaseOperator(np.fft.fft(psig, axis=1) / cfg.N)


def dd_transform(mat: np.ndarray, cfg: GridConfig) -> np.ndarray:
    """(F_N kron I_M) @ mat @ (F_N^H kron I_M) without forming Kronecker factors."""
    mn = cfg.frame_len
    if mat.shape != (mn, mn):
        raise ValueError(f"expected {mn}x{mn} matrix, got {mat.shape}")
    T = mat.reshape(cfg.N, cfg.M, cfg.N, cfg.M)
    T = np.fft.fft(T, axis=0) / np.sqrt(cfg.N)
    T = np.fft.ifft(T, axis=2) * np.sqrt(cfg.N)
    return T.reshape(mn, mn)


@dataclass
class PhaseAutocorr:
    """Autocorrelation matrix of the Doppler-domain phase coefficients."""

    K: np.ndarray  # (N, N) Hermitian PSD, unit trace

    @property
    def diag(self) -> np.ndarray:
        return self.K.diagonal().real

    @property
    def signal_power(self) -> float:
        return float(self.K[0, 0].real)

    @property
    def idi_power(self) -> float:
        return float(self.diag[1:].sum())


def k_phi(model: PhaseNoiseModel, cfg: GridConfig) -> PhaseAutocorr:
    """Full N x N coefficient autocorrelation, K = F R F^H / N.

    R is the Toeplitz matrix of rotation factors at lags |k-l|*M; the result
    is Hermitian PSD with unit trace.
    """
    lags = np.abs(np.subtract.outer(np.arange(cfg.N), np.arange(cfg.N))) * cfg.M
    R = expected_rotation(model, lags)
    F = np.fft.fft(np.eye(cfg.N)) / np.sqrt(cfg.N)
    return PhaseAutocorr(F @ R @ F.conj().T / cfg.N)


def _diag_from_rotation(r: np.ndarray, size: int, p: int) -> float:
    """K[p,p] = (1/size^2) sum_n (size-|n|) r(|n|) cos(2*pi*p*n/size).

    ``r`` holds the rotation factors at lags 0..size-1.  Compensated
    summation keeps the small off-peak entries accurate.
    """
    n = np.arange(1, size)
    terms = 2.0 * (size - n) * r[1:] * np.cos(2.0 * np.pi * p * n / size)
    return (math.fsum(terms) + size * r[0]) / size**2


def k_phi_diag(model: PhaseNoiseModel, cfg: GridConfig) -> np.ndarray:
    """Diagonal of K_phi for any oscillator kind (O(N) per entry)."""
    r = expected_rotation(model, np.arange(cfg.N) * cfg.M)
    return np.array([_diag_from_rotation(r, cfg.N, p) for p in range(cfg.N)])


def _fro_closed_form(alpha: float, size: int, p: int) -> float:
    """Closed form of the weighted Toeplitz sum for geometric rotation factors.

    Evaluates (1/size^2) sum_{n=-(size-1)}^{size-1} (size-|n|) alpha^|n|
    e^{-j 2 pi p n / size} through the two finite geometric-series identities
    sum z^n = (1-z^size)/(1-z) and
    sum n z^n = (z - size z^size + (size-1) z^(size+1)) / (1-z)^2,
    using z = alpha e^{-j 2 pi p / size} (note z^size = alpha^size).
    """
    if alpha >= 1.0:
        return 1.0 if p % size == 0 else 0.0
    if 1.0 - alpha < 1e-6:
        # geometric form loses digits to cancellation as alpha -> 1
        r = alpha ** np.arange(size, dtype=float)
        return _diag_from_rotation(r, size, p)
    z = alpha * np.exp(-2j * np.pi * p / size)
    zc = np.conj(z)
    a_sz = alpha**size
    s1 = ((1.0 - a_sz) / (1.0 - z) + (1.0 - a_sz) / (1.0 - zc)).real
    u = 1.0 + (size - 1) * a_sz
    s2 = ((z * u - size * a_sz) / (1.0 - z) ** 2
          + (zc * u - size * a_sz) / (1.0 - zc) ** 2).real
    return (s1 - 1.0) / size - s2 / size**2


def k_phi_fro_closed_form(model: PhaseNoiseModel, cfg: GridConfig, p: int) -> float:
    """Exact K[p,p] for a free-running oscillator, O(1) evaluation."""
    if model.kind != "FRO":
        raise ValueError("closed form only holds for the FRO model")
    alpha = float(np.exp(-2.0 * np.pi * model.beta_pn * model.T_s * cfg.M))
    return _fro_closed_form(alpha, cfg.N, p)


@dataclass
class SinrReport:
    """Analytic signal/IDI/noise split and the resulting SINR."""

    signal_power: float
    idi_power: float
    noise_power: float
    kind: str
    M: int
    N: int
    waveform: str = "otfs"

    @property
    def sinr(self) -> float:
        denom = self.idi_power + self.noise_power
        return float("inf") if denom <= 0 else self.signal_power / denom

    @property
    def sinr_db(self) -> float:
        return 10.0 * np.log10(self.sinr)


def _sinr(model: PhaseNoiseModel, cfg: GridConfig, noise_var: float,
          size: int, lag_scale: int, waveform: str) -> SinrReport:
    if noise_var < 0:
        raise ValueError("noise variance must be >= 0")
    if model.beta_pn == 0.0:
        sig, idi = 1.0, 0.0
    elif model.kind == "FRO":
        alpha = float(np.exp(-2.0 * np.pi * model.beta_pn * model.T_s * lag_scale))
        diag = np.array([_fro_closed_form(alpha, size, p) for p in range(size)])
        sig, idi = diag[0], float(diag[1:].sum())
    else:
        r = expected_rotation(model, np.arange(size) * lag_scale)
        diag = np.array([_diag_from_rotation(r, size, p) for p in range(size)])
        sig, idi = diag[0], float(diag[1:].sum())
    return SinrReport(sig, idi, noise_var, model.kind, cfg.M, cfg.N, waveform)


def sinr_otfs(model: PhaseNoiseModel, cfg: GridConfig, noise_var: float) -> SinrReport:
    """Analytic OTFS SINR; phase statistics sampled at multiples of M."""
    return _sinr(model, cfg, noise_var, cfg.N, cfg.M, "otfs")


def sinr_ofdm(model: PhaseNoiseModel, cfg: GridConfig, noise_var: float) -> SinrReport:
    """Analytic SINR for the equivalent M-subcarrier OFDM system (unit lags)."""
    return _sinr(model, cfg, noise_var, cfg.M, 1, "ofdm")


def measured_sinr(model: PhaseNoiseModel, cfg: GridConfig, noise_var: float,
                  trials: int, seed, waveform: str = "otfs",
                  chunk: int = 512) -> SinrReport:
    """Monte Carlo counterpart of the analytic SINR.

    Draws phase paths, forms the Doppler-domain (or, for OFDM, subcarrier-
    domain) coefficients of each, and averages the measured signal and
    interference powers from the coefficient split.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mn = cfg.frame_len
    sig_acc = 0.0
    idi_acc = 0.0
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        theta = sample_paths(model, n, mn, rng)
        psi = np.exp(1j * theta)
        if waveform == "otfs":
            # (n, M, N): Doppler DFT over the M-spaced samples of each delay bin
            grid = psi.reshape(n, cfg.N, cfg.M).transpose(0, 2, 1)
            phi = np.fft.fft(grid, axis=2) / cfg.N
            p2 = np.abs(phi) ** 2
            sig_acc += p2[:, :, 0].mean(axis=1).sum()
            idi_acc += p2[:, :, 1:].sum(axis=2).mean(axis=1).sum()
        else:
            # (n, M, N) with contiguous M-sample blocks as OFDM symbols
            grid = psi.reshape(n, cfg.N, cfg.M).transpose(0, 2, 1)
            phi = np.fft.fft(grid, axis=1) / cfg.M
            p2 = np.abs(phi) ** 2
            sig_acc += p2[:, 0, :].mean(axis=1).sum()
            idi_acc += p2[:, 1:, :].sum(axis=1).mean(axis=1).sum()
        done += n
    return SinrReport(sig_acc / trials, idi_acc / trials, noise_var,
                      model.kind, cfg.M, cfg.N, waveform)
