"""Symbol recovery: linear MMSE, LSMR with interference cancellation,
rate-1/2 convolutional coding and the frame-level metrics.

The effective delay-time channel matrix is banded circular (row n holds the
tap gains g[n, l] at columns (n - l) mod MN), so equalization defaults to
that domain: MMSE solves the sparse normal equations, LSMR-IC works
matrix-free through the tap columns.  The known pilot/guard content is
reconstructed and cancelled before detection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, lsmr, spsolve

from .estimation import PilotLayout, extract_data
from .grid import Frame, GridConfig, QamConfig, constellation, otfs_demodulate, otfs_modulate, qam_demap


@dataclass(frozen=True)
class EqualizerConfig:
    kind: str = "mmse"            # "mmse" | "lsmr_ic"
    i_ic: int = 10
    i_lsmr: int = 20
    domain: str = "delay_time"    # "delay_time" | "delay_doppler" (mmse only)

    def __post_init__(self):
        if self.kind not in ("mmse", "lsmr_ic"):
            raise ValueError(f"unknown equalizer kind {self.kind!r}")
        if self.i_ic < 1 or self.i_lsmr < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.domain not in ("delay_time", "delay_doppler"):
            raise ValueError(f"unknown equalization domain {self.domain!r}")


@dataclass
class DetectionResult:
    symbols: np.ndarray          # equalized data-cell symbols, layout order
    bits: np.ndarray             # hard-decided bits for those symbols
    dd_grid: np.ndarray          # full equalized delay-Doppler grid
    residual: float = 0.0
    converged: bool = True


class ChannelOp:
    """Matrix-free banded-circular delay-time channel from tap columns.

    Gather indices and conjugate gains are precomputed once per frame; the
    per-iteration cost inside LSMR is two fancy gathers and a reduction.
    """

    def __init__(self, g_dt: np.ndarray):
        self.g = np.asarray(g_dt)
        self.mn, n_taps = self.g.shape
        lags = np.arange(n_taps)[:, None]
        pos = np.arange(self.mn)[None, :]
        self._idx_f = (pos - lags) % self.mn      # x index feeding output n
        self._idx_r = (pos + lags) % self.mn      # y index feeding output m
        self._gf = self.g.T
        self._gr = np.conj(self.g[self._idx_r, lags])

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("ln,ln->n", self._gf, x[self._idx_f])

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return np.einsum("lm,lm->m", self._gr, y[self._idx_r])

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator((self.mn, self.mn), matvec=self.matvec,
                              rmatvec=self.rmatvec, dtype=complex)

    def to_sparse(self) -> sp.csr_matrix:
        rows = np.arange(self.mn)
        mats = [sp.csr_matrix((self.g[:, l], (rows, (rows - l) % self.mn)),
                              shape=(self.mn, self.mn))
                for l in range(self.g.shape[1])]
        out = mats[0]
        for m in mats[1:]:
            out = out + m
        return out


def _known_grid(layout: PilotLayout | None, cfg: GridConfig) -> np.ndarray:
    if layout is None:
        return np.zeros((cfg.M, cfg.N), dtype=complex)
    return layout.resolved(cfg).pilot_frame(cfg).dd


def mmse_equalize(r: np.ndarray, g_dt: np.ndarray, noise_var: float,
                  cfg: GridConfig, layout: PilotLayout | None = None,
                  qam: QamConfig | None = None,
                  domain: str = "delay_time") -> DetectionResult:
    """Linear MMSE detection, x_hat = (G^H G + noise_var I)^-1 G^H y.

    The pilot contribution predicted by the channel estimate is subtracted
    from y first; the solve runs on the sparse banded system in delay-time
    (or on the dense DD matrix when domain="delay_doppler", small grids).
    """
    op = ChannelOp(g_dt)
    y = np.asarray(r).ravel() - op.matvec(
        otfs_modulate(Frame(_known_grid(layout, cfg)), cfg, with_cp=False))
    if domain == "delay_time":
        G = op.to_sparse().tocsc()
        A = (G.getH() @ G + noise_var * sp.identity(op.mn, format="csc")).tocsc()
        x_dt = spsolve(A, G.getH() @ y)
        x_dd = otfs_demodulate(x_dt, cfg).dd
    elif domain == "delay_doppler":
        from .estimation import FullEstimate
        Gdd = FullEstimate(g_dt).dd_matrix(cfg)
        y_dd = otfs_demodulate(y, cfg).vec
        A = Gdd.conj().T @ Gdd + noise_var * np.eye(op.mn)
        x = np.linalg.solve(A, Gdd.conj().T @ y_dd)
        x_dd = x.reshape(cfg.M, cfg.N, order="F")
    else:
        raise ValueError(f"unknown equalization domain {domain!r}")
    return _finalize(x_dd, y, op, layout, cfg, qam)


def _finalize(x_dd, y_data, op, layout, cfg, qam,
              residual=None, converged=True) -> DetectionResult:
    if layout is not None:
        symbols = extract_data(x_dd, layout.resolved(cfg), cfg)
    else:
        symbols = x_dd.reshape(-1, order="F")
    bits = qam_demap(symbols, qam) if qam is not None else np.empty(0, dtype=np.int64)
    if residual is None:
        x_dt = otfs_modulate(Frame(x_dd), cfg, with_cp=False)
        residual = float(np.linalg.norm(y_data - op.matvec(x_dt)))
    return DetectionResult(symbols, bits, x_dd, residual, converged)


def _harden(x_dd: np.ndarray, mask: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Nearest-constellation decisions on the data cells, zeros elsewhere."""
    hard = np.zeros_like(x_dd)
    data = x_dd[mask]
    idx = np.argmin(np.abs(data[:, None] - points[None, :]), axis=1)
    hard[mask] = points[idx]
    return hard


def lsmr_ic_equalize(r: np.ndarray, g_dt: np.ndarray, noise_var: float,
                     cfg: GridConfig, layout: PilotLayout, qam: QamConfig,
                     eq: EqualizerConfig | None = None) -> DetectionResult:
    """Iterative detection: damped LSMR solves with interference cancellation.

    Each outer pass hard-decides the data symbols, cancels the most reliable
    fraction (growing to all of them by the last pass, most reliable first)
    and re-solves the damped least-squares problem for the remainder with
    I_lsmr inner iterations.  An iterate is kept only if it does not
    increase the data residual, so the reported residual is non-increasing;
    if the final pass was rejected the result is flagged unconverged.
    """
    eq = eq or EqualizerConfig(kind="lsmr_ic")
    layout = layout.resolved(cfg)
    op = ChannelOp(g_dt)
    lin_op = op.as_linear_operator()
    damp = float(np.sqrt(noise_var))
    points = constellation(qam)
    mask = layout.data_mask(cfg)
    y = np.asarray(r).ravel() - op.matvec(
        otfs_modulate(Frame(layout.pilot_frame(cfg).dd), cfg, with_cp=False))

    x_dt = lsmr(lin_op, y, damp=damp, maxiter=eq.i_lsmr)[0]
    x_dd = otfs_demodulate(x_dt, cfg).dd
    best_res = float(np.linalg.norm(y - op.matvec(x_dt)))
    best_dd = x_dd
    converged = True
    for t in range(1, eq.i_ic + 1):
        hard = _harden(x_dd, mask, points)
        frac = t / eq.i_ic
        if frac < 1.0:
            # cancel only the most reliable decisions on early passes
            err = np.abs(x_dd - hard)[mask]
            cut = np.quantile(err, frac)
            keep = np.zeros_like(mask)
            keep[mask] = err <= cut
            hard = np.where(keep, hard, 0.0)
        s_hard = otfs_modulate(Frame(hard), cfg, with_cp=False)
        resid = y - op.matvec(s_hard)
        delta = lsmr(lin_op, resid, damp=damp, maxiter=eq.i_lsmr)[0]
        cand_dt = s_hard + delta
        cand_dd = otfs_demodulate(cand_dt, cfg).dd
        cand_res = float(np.linalg.norm(y - op.matvec(cand_dt)))
        if cand_res <= best_res:
            best_res, best_dd = cand_res, cand_dd
            x_dd = cand_dd
            converged = True
        else:
            converged = False
    return _finalize(best_dd, y, op, layout, cfg, qam,
                     residual=best_res, converged=converged)


# --------------------------------------------------------------------------
# Rate-1/2 convolutional code, constraint length 7, generators (133, 171)
# --------------------------------------------------------------------------

CONV_K = 7
CONV_GENS = (0o133, 0o171)
_N_STATES = 1 << (CONV_K - 1)


def _parity(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    while np.any(x):
        out ^= x & 1
        x = x >> 1
    return out


def _tables():
    """next_state[s, b] and the two output bits out[s, b, 0:2]."""
    states = np.arange(_N_STATES)
    nxt = np.empty((_N_STATES, 2), dtype=np.int64)
    out = np.empty((_N_STATES, 2, 2), dtype=np.int64)
    for b in (0, 1):
        full = (b << (CONV_K - 1)) | states   # newest bit in the MSB
        nxt[:, b] = full >> 1
        for i, g in enumerate(CONV_GENS):
            out[:, b, i] = _parity(full & g)
    return nxt, out


_NEXT, _OUT = _tables()


def conv_encode(bits) -> np.ndarray:
    """Zero-terminated rate-1/2 encoding; output has 2*(len(bits)+6) bits."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    padded = np.concatenate([bits, np.zeros(CONV_K - 1, dtype=np.int64)])
    out = np.empty(2 * padded.size, dtype=np.int64)
    s = 0
    for i, b in enumerate(padded):
        out[2 * i:2 * i + 2] = _OUT[s, b]
        s = _NEXT[s, b]
    return out


# For destination state d the input bit is its MSB and the two candidate
# sources differ in their oldest bit: src in {2*(d & half-1), +1}.
_DST = np.arange(_N_STATES)
_DST_BIT = _DST >> (CONV_K - 2)
_SRC0 = (_DST & ((1 << (CONV_K - 2)) - 1)) << 1
_SRC1 = _SRC0 + 1


def viterbi_decode(llrs, n_info: int) -> np.ndarray:
    """Soft-input Viterbi decoding of a zero-terminated block.

    ``llrs`` holds one log-likelihood ratio per coded bit (positive favors
    bit 0), two per trellis step.
    """
    llrs = np.asarray(llrs, dtype=float).reshape(-1, 2)
    n_steps = llrs.shape[0]
    if n_steps != n_info + CONV_K - 1:
        raise ValueError(f"expected {2 * (n_info + CONV_K - 1)} LLRs, got {2 * n_steps}")
    big = 1e30
    pm = np.full(_N_STATES, big)
    pm[0] = 0.0
    choice = np.empty((n_steps, _N_STATES), dtype=np.int64)
    for t in range(n_steps):
        # cost of sending bit value o against an LLR that favors 0: o * llr
        bcost = _OUT[:, :, 0] * llrs[t, 0] + _OUT[:, :, 1] * llrs[t, 1]
        c0 = pm[_SRC0] + bcost[_SRC0, _DST_BIT]
        c1 = pm[_SRC1] + bcost[_SRC1, _DST_BIT]
        take0 = c0 <= c1
        pm = np.where(take0, c0, c1)
        choice[t] = (np.where(take0, _SRC0, _SRC1) << 1) | _DST_BIT
    s = 0  # zero tail forces the final state
    bits = np.empty(n_steps, dtype=np.int64)
    for t in range(n_steps - 1, -1, -1):
        bits[t] = choice[t, s] & 1
        s = choice[t, s] >> 1
    return bits[:n_info]


def qam_llrs(symbols, qam: QamConfig, noise_var: float) -> np.ndarray:
    """Max-log LLRs (positive favors bit 0) for each bit of each symbol."""
    symbols = np.asarray(symbols).ravel()
    points = constellation(qam)
    bps = qam.bits_per_symbol
    labels = ((np.arange(qam.order)[:, None] >> np.arange(bps - 1, -1, -1)) & 1)
    d2 = np.abs(symbols[:, None] - points[None, :]) ** 2
    nv = max(noise_var, 1e-12)
    llr = np.empty((symbols.size, bps))
    for j in range(bps):
        d0 = d2[:, labels[:, j] == 0].min(axis=1)
        d1 = d2[:, labels[:, j] == 1].min(axis=1)
        llr[:, j] = (d1 - d0) / nv
    return llr.ravel()


# --------------------------------------------------------------------------
# Frame metrics
# --------------------------------------------------------------------------

def ber(bits_hat, bits_true) -> float:
    bits_hat = np.asarray(bits_hat).ravel()
    bits_true = np.asarray(bits_true).ravel()
    if bits_hat.size != bits_true.size:
        raise ValueError("bit payloads differ in length")
    return float(np.mean(bits_hat != bits_true))


def evm(x_hat, x_true) -> float:
    x_hat = np.asarray(x_hat).ravel()
    x_true = np.asarray(x_true).ravel()
    return float(np.sqrt(np.sum(np.abs(x_hat - x_true) ** 2)
                         / np.sum(np.abs(x_true) ** 2)))


def nmse(g_est: np.ndarray, g_true: np.ndarray) -> float:
    g_est = np.asarray(g_est)
    g_true = np.asarray(g_true)
    if g_est.shape != g_true.shape:
        raise ValueError(f"shape mismatch {g_est.shape} vs {g_true.shape}")
    return float(np.sum(np.abs(g_est - g_true) ** 2)
                 / np.sum(np.abs(g_true) ** 2))
