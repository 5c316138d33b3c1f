"""Scenario configuration, Monte Carlo execution and CSV emission.

A scenario is a flat bag of parameters with exactly one sweep axis.  Every
sweep point runs ``trials`` independent frames; trial t draws all of its
randomness (bits, channel, phase path, noise) from one generator seeded with
``seed + t``, so results are reproducible and independent of how trials are
distributed over workers.  Aggregation is indexed by trial, never by
completion order.

Metric rows carry the scenario hash (canonical JSON, SHA-256) so CSV output
is self-identifying; presets reproduce the reference experiments at desk
scale by default and at the full grid with ``full=True``.
"""

from __future__ import annotations

import concurrent.futures as cf
import csv
import hashlib
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import channel as ch
from . import dd_analysis as dd
from . import equalization as eq
from . import estimation as est
from .grid import (GridConfig, QamConfig, ofdm_demodulate, ofdm_modulate,
                   otfs_modulate, qam_demap, qam_map)
from .oscillator import PhaseNoiseModel, PhasePath, sample_path

ESTIMATORS = ("proposed", "bem", "spline", "stage1", "perfect",
              "ofdm_ptrp", "ofdm_ptrp_interp")
SWEEPS = ("snr_db", "beta_pn", "f_pll", "f_D", "f_D_norm", "velocity")


@dataclass(frozen=True)
class Scenario:
    """One simulation campaign: fixed parameters plus a single sweep axis."""

    name: str = "scenario"
    kind: str = "link"                  # "link" (BER/EVM/NMSE) | "sinr"
    label: str = ""                     # metric-name prefix for multi-curve CSVs

    M: int = 32
    N: int = 16
    n_cp: int = 16
    f_c: float = 5.9e9
    bandwidth: float = 7.68e6
    qam_order: int = 4

    oscillator: str = "FRO"
    beta_pn: float = 2e3
    f_pll: float = 1e6

    channel: str = "tdl_c"              # "tdl_c" | "awgn" ("ideal" alias)
    delay_spread: float = 100e-9
    velocity: float = 0.0               # km/h
    f_D: float | None = None            # Hz; overrides velocity when set

    pilot_L: int | None = None          # default: quantized channel length
    pilot_boost_db: float = 30.0

    estimator: str = "proposed"
    bem_k_over: float = 1.0
    bem_include_pn: bool = False
    ptrp_spacing: int = 8

    equalizer: str = "mmse"             # "mmse" | "lsmr_ic"
    eq_domain: str = "delay_time"
    i_ic: int = 10
    i_lsmr: int = 20
    coded: bool = False
    snr_is_ebn0: bool = False

    snr_db: float = 20.0
    sweep: str = "snr_db"
    sweep_values: tuple = (0.0, 10.0, 20.0)
    trials: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("link", "sinr"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.channel not in ("tdl_c", "ideal", "awgn"):
            raise ValueError(f"unknown channel {self.channel!r}")
        if self.equalizer not in ("mmse", "lsmr_ic"):
            raise ValueError(f"unknown equalizer {self.equalizer!r}")
        if self.oscillator not in ("FRO", "CPLL", "DPLL"):
            raise ValueError(f"unknown oscillator {self.oscillator!r}")
        if self.sweep not in SWEEPS:
            raise ValueError(f"unknown sweep axis {self.sweep!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if len(self.sweep_values) == 0:
            raise ValueError("sweep_values must not be empty")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sweep_values"] = list(self.sweep_values)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        if "sweep_values" in d:
            d["sweep_values"] = tuple(d["sweep_values"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ResultRow:
    sweep_name: str
    sweep_value: float
    metric: str
    value: float
    ci95: float
    trials: int
    scenario_hash: str
    seed: int


CSV_COLUMNS = ("sweep_name", "sweep_value", "metric", "value", "ci95",
               "trials", "scenario_hash", "seed")


def emit_csv(rows, path_or_file) -> None:
    """Write rows with the fixed column order; floats use repr for exact
    round-tripping and platform-stable bytes."""
    def _write(f):
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r.sweep_name, repr(float(r.sweep_value)), r.metric,
                        repr(float(r.value)), repr(float(r.ci95)),
                        r.trials, r.scenario_hash, r.seed])
    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        try:
            with open(path_or_file, "w", encoding="utf-8", newline="") as f:
                _write(f)
        except OSError as e:
            raise OSError(f"cannot write CSV to {path_or_file}: {e}") from e


def parse_csv(path_or_file) -> list:
    """Inverse of emit_csv."""
    if hasattr(path_or_file, "read"):
        f = path_or_file
        rows = _parse(f)
    else:
        with open(path_or_file, encoding="utf-8", newline="") as f:
            rows = _parse(f)
    return rows


def _parse(f) -> list:
    rdr = csv.reader(f)
    header = next(rdr)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    return [ResultRow(r[0], float(r[1]), r[2], float(r[3]), float(r[4]),
                      int(r[5]), r[6], int(r[7])) for r in rdr]


# --------------------------------------------------------------------------
# Scenario resolution
# --------------------------------------------------------------------------

@dataclass
class SweepPoint:
    """Everything a trial needs at one sweep value, built once and shared."""

    cfg: GridConfig
    qam: QamConfig
    model: PhaseNoiseModel
    profile: ch.ChannelProfile
    layout: est.PilotLayout | None
    ptrp: est.PtrpLayout | None
    wiener: est.WienerFilter | None
    noise_var: float
    scenario: Scenario
    sweep_value: float


def _resolve_point(s: Scenario, value: float) -> SweepPoint:
    params = {s.sweep: value}
    cfg = GridConfig(s.M, s.N, s.n_cp, s.f_c, s.bandwidth)
    beta = params.get("beta_pn", s.beta_pn)
    f_pll = params.get("f_pll", s.f_pll)
    model = PhaseNoiseModel(s.oscillator, beta, cfg.T_s, f_pll)

    if "f_D_norm" in params:
        f_D = params["f_D_norm"] * cfg.doppler_spacing
    elif "f_D" in params:
        f_D = params["f_D"]
    elif s.f_D is not None:
        f_D = s.f_D
    else:
        vel = params.get("velocity", s.velocity)
        f_D = ch.doppler_from_velocity(vel, s.f_c)

    if s.channel == "tdl_c":
        profile = ch.ChannelProfile.tdl_c(s.delay_spread, f_D)
    elif s.channel in ("ideal", "awgn"):
        profile = ch.ChannelProfile((0.0,), (1.0,), f_D)
    else:
        raise ValueError(f"unknown channel {s.channel!r}")

    snr_db = params.get("snr_db", s.snr_db)
    snr = 10.0 ** (snr_db / 10.0)
    if s.snr_is_ebn0:
        rate = 0.5 if s.coded else 1.0
        snr = snr * QamConfig(s.qam_order).bits_per_symbol * rate
    noise_var = 1.0 / snr

    layout = ptrp = wiener = None
    if s.kind == "link":
        if s.estimator.startswith("ofdm"):
            ptrp = est.PtrpLayout(spacing=s.ptrp_spacing)
        else:
            delays, _ = profile.quantized(cfg.T_s)
            L = s.pilot_L if s.pilot_L is not None else int(delays.max()) + 1
            sigma2_p = cfg.N * 10.0 ** (s.pilot_boost_db / 10.0)
            layout = est.PilotLayout(L=L, sigma2_p=sigma2_p).resolved(cfg)
            if s.estimator == "proposed":
                noise_ratio = noise_var * cfg.N / layout.sigma2_p
                wiener = est.build_wiener(model, f_D, noise_ratio, cfg, layout)
    return SweepPoint(cfg, QamConfig(s.qam_order), model, profile, layout,
                      ptrp, wiener, noise_var, s, value)


# --------------------------------------------------------------------------
# Per-trial pipelines
# --------------------------------------------------------------------------

def _estimate(tag: str, point: SweepPoint, part: est.PartialEstimate,
              f_D: float) -> est.FullEstimate:
    s = point.scenario
    if tag == "proposed":
        return est.stage2_estimate(part, point.wiener)
    if tag == "stage1":
        return est.stage1_hold_estimate(part, point.cfg)
    if tag == "spline":
        return est.spline_estimate(part, point.cfg, point.layout)
    if tag == "bem":
        return est.bem_estimate(part, point.cfg, point.layout, f_D,
                                point.model.beta_pn, s.bem_k_over,
                                s.bem_include_pn)
    raise ValueError(f"unknown estimator {tag!r}")


def _realize(point: SweepPoint, rng, n_samples: int) -> ch.ChannelRealization:
    if point.scenario.channel in ("ideal", "awgn"):
        # deterministic unit tap: pure AWGN once noise is added
        return ch.ChannelRealization(np.ones((n_samples, 1), dtype=complex),
                                     np.array([0]))
    return ch.realize_channel(point.profile, point.cfg, rng, n_samples)


def _run_otfs_trial(point: SweepPoint, trial_seed: int) -> dict:
    rng = np.random.default_rng(trial_seed)
    s, cfg, qam = point.scenario, point.cfg, point.qam
    layout = point.layout
    mn = cfg.frame_len

    n_data = layout.n_data(cfg)
    bps = qam.bits_per_symbol
    if s.coded:
        n_info = n_data * bps // 2 - (eq.CONV_K - 1)
        info = rng.integers(0, 2, n_info)
        bits = eq.conv_encode(info)
    else:
        bits = rng.integers(0, 2, n_data * bps)
    data = qam_map(bits, qam)
    frame = est.build_pilot_frame(layout, data, cfg)
    tx = otfs_modulate(frame, cfg)

    chan = _realize(point, rng, mn)
    path = sample_path(point.model, mn + cfg.n_cp, rng)
    r = ch.apply_channel(tx, chan, path, point.noise_var, rng, cfg)
    g_true = ch.effective_channel(chan, path)

    if s.estimator == "perfect":
        full = est.FullEstimate(g_true)
        nmse_val = 0.0
    else:
        part = est.stage1_estimate(r, layout, cfg, point.noise_var)
        full = _estimate(s.estimator, point, part, point.profile.f_D)
        nmse_val = eq.nmse(full.g_dt, g_true)

    if s.equalizer == "lsmr_ic":
        det = eq.lsmr_ic_equalize(r, full.g_dt, point.noise_var, cfg, layout,
                                  qam, eq.EqualizerConfig("lsmr_ic", s.i_ic, s.i_lsmr))
    else:
        det = eq.mmse_equalize(r, full.g_dt, point.noise_var, cfg, layout,
                               qam, domain=s.eq_domain)

    out = {"evm": eq.evm(det.symbols, data), "nmse": nmse_val}
    if s.coded:
        llrs = eq.qam_llrs(det.symbols, qam, point.noise_var)
        out["ber"] = eq.ber(eq.viterbi_decode(llrs, n_info), info)
    else:
        out["ber"] = eq.ber(det.bits, bits)
    return out


def _apply_ltv_stream(tx, chan: ch.ChannelRealization, path: PhasePath,
                      noise_var: float, rng) -> np.ndarray:
    """Linear (non-circular) time-varying convolution for the OFDM stream."""
    n = tx.size
    acc = np.zeros(n, dtype=complex)
    for col, l in enumerate(chan.tap_delays):
        if l == 0:
            acc += chan.taps[:, col] * tx
        else:
            acc[l:] += chan.taps[l:, col] * tx[:-l]
    out = path.psi[:n] * acc
    if noise_var > 0:
        out = out + np.sqrt(noise_var / 2.0) * (rng.standard_normal(n)
                                                + 1j * rng.standard_normal(n))
    return out


def _run_ofdm_trial(point: SweepPoint, trial_seed: int) -> dict:
    rng = np.random.default_rng(trial_seed)
    s, cfg, qam = point.scenario, point.cfg, point.qam
    ptrp = point.ptrp
    stream_len = cfg.N * (cfg.M + cfg.n_cp)

    n_data = ptrp.n_data(cfg)
    bps = qam.bits_per_symbol
    if s.coded:
        n_info = n_data * bps // 2 - (eq.CONV_K - 1)
        info = rng.integers(0, 2, n_info)
        bits = eq.conv_encode(info)
    else:
        bits = rng.integers(0, 2, n_data * bps)
    data = qam_map(bits, qam)
    frame = est.build_ptrp_frame(ptrp, data, cfg)
    tx = ofdm_modulate(frame, cfg)

    chan = _realize(point, rng, stream_len)
    path = sample_path(point.model, stream_len, rng)
    r = _apply_ltv_stream(tx, chan, path, point.noise_var, rng)
    Y = ofdm_demodulate(r, cfg).dd

    interp = s.estimator == "ofdm_ptrp_interp"
    cpe, H = est.ofdm_cpe_estimate(Y, ptrp, cfg, point.profile.f_D, interp)
    X_hat = Y / H
    mask = ptrp.data_mask(cfg)
    symbols = X_hat.T[mask.T]
    out = {"evm": eq.evm(symbols, data)}
    if s.coded:
        llrs = eq.qam_llrs(symbols, qam, point.noise_var)
        out["ber"] = eq.ber(eq.viterbi_decode(llrs, n_info), info)
    else:
        out["ber"] = eq.ber(qam_demap(symbols, qam), bits)
    return out


# --------------------------------------------------------------------------
# Execution
# --------------------------------------------------------------------------

def _aggregate(per_trial: list, key: str):
    vals = np.array([t[key] for t in per_trial], dtype=float)
    mean = float(np.mean(vals))
    ci = 0.0
    if vals.size > 1:
        ci = float(1.96 * np.std(vals, ddof=1) / np.sqrt(vals.size))
    return mean, ci


def _run_link_point(point: SweepPoint, workers: int) -> list:
    s = point.scenario
    runner = _run_ofdm_trial if s.estimator.startswith("ofdm") else _run_otfs_trial
    seeds = [s.seed + t for t in range(s.trials)]
    results = [None] * s.trials
    if workers > 1:
        with cf.ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(runner, point, sd): i for i, sd in enumerate(seeds)}
            for fut in cf.as_completed(futs):
                results[futs[fut]] = fut.result()
    else:
        for i, sd in enumerate(seeds):
            results[i] = runner(point, sd)
    prefix = f"{s.label}_" if s.label else ""
    rows = []
    for key in sorted(results[0]):
        mean, ci = _aggregate(results, key)
        rows.append(ResultRow(s.sweep, float(point.sweep_value), prefix + key,
                              mean, ci, s.trials, s.hash(), s.seed))
    return rows


def _run_sinr_point(point: SweepPoint, workers: int) -> list:
    """Analytic and Monte Carlo SINR for OTFS and the equivalent OFDM system.

    The measured value is the ratio of powers pooled over all trials; its
    confidence interval comes from the spread of per-block SINRs.
    """
    s = point.scenario
    rows = []
    blocks = min(20, s.trials)
    sizes = [s.trials // blocks + (1 if b < s.trials % blocks else 0)
             for b in range(blocks)]
    for waveform in ("otfs", "ofdm"):
        ana = (dd.sinr_otfs if waveform == "otfs" else dd.sinr_ofdm)(
            point.model, point.cfg, point.noise_var)
        rows.append(ResultRow(s.sweep, float(point.sweep_value),
                              f"sinr_{waveform}_analytic_db", ana.sinr_db,
                              0.0, s.trials, s.hash(), s.seed))
        sig = idi = 0.0
        block_db = []
        for b, nb in enumerate(sizes):
            rep = dd.measured_sinr(point.model, point.cfg, point.noise_var,
                                   nb, s.seed + 7919 * b, waveform)
            sig += nb * rep.signal_power
            idi += nb * rep.idi_power
            block_db.append(rep.sinr_db)
        pooled = dd.SinrReport(sig / s.trials, idi / s.trials, point.noise_var,
                               point.model.kind, s.M, s.N, waveform)
        ci = 0.0
        if len(block_db) > 1 and np.all(np.isfinite(block_db)):
            ci = float(1.96 * np.std(block_db, ddof=1) / np.sqrt(len(block_db)))
        rows.append(ResultRow(s.sweep, float(point.sweep_value),
                              f"sinr_{waveform}_measured_db", pooled.sinr_db,
                              ci, s.trials, s.hash(), s.seed))
    return rows


def run_scenario(scenario: Scenario, workers: int = 1) -> list:
    """Run every sweep point; returns ResultRow list in sweep order."""
    rows = []
    for value in scenario.sweep_values:
        point = _resolve_point(scenario, float(value))
        if scenario.kind == "sinr":
            rows.extend(_run_sinr_point(point, workers))
        else:
            rows.extend(_run_link_point(point, workers))
    return rows


def run_scenarios(scenarios, workers: int = 1) -> list:
    rows = []
    for s in scenarios:
        rows.extend(run_scenario(s, workers))
    return rows


def load_scenario(path: str) -> Scenario:
    """Read a scenario from a YAML key/value document."""
    import yaml
    try:
        with open(path, encoding="utf-8") as f:
            doc = yaml.safe_load(f)
    except OSError as e:
        raise OSError(f"cannot read scenario file {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ValueError(f"scenario file {path} must hold a key/value mapping")
    return Scenario.from_dict(doc)


def save_scenario(scenario: Scenario, path: str) -> None:
    import yaml
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(scenario.to_dict(), f, sort_keys=True)


# --------------------------------------------------------------------------
# Figure presets
# --------------------------------------------------------------------------

_OTFS_CURVES = ("proposed", "bem", "spline", "stage1")


def _grid(full: bool) -> dict:
    return {"M": 128, "N": 32} if full else {"M": 32, "N": 16}


def _curves(base: Scenario, estimators) -> list:
    return [replace(base, name=f"{base.name}-{tag}", label=tag, estimator=tag)
            for tag in estimators]


def preset(name: str, trials: int | None = None, seed: int = 0,
           full: bool = False) -> list:
    """Scenario list for one reference figure, desk scale unless ``full``."""
    g = _grid(full)
    n_trials = trials if trials is not None else (100_000 if full else 2000)
    betas = (1e2, 3e2, 1e3, 2e3, 5e3, 1e4)

    if name == "fig5":
        s = Scenario(name="fig5", kind="sinr", oscillator="FRO", snr_db=20.0,
                     sweep="beta_pn",
                     sweep_values=(0.0, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1e3),
                     trials=n_trials if trials is not None else (10_000 if full else 2000),
                     seed=seed, **g)
        return [s]
    if name in ("fig6", "fig7"):
        # EVM (fig6) and NMSE (fig7) vs phase-noise bandwidth, no Doppler
        base = Scenario(name=name, snr_db=20.0, velocity=0.0, equalizer="mmse",
                        bem_include_pn=True, sweep="beta_pn", sweep_values=betas,
                        trials=n_trials, seed=seed, **g)
        return _curves(base, _OTFS_CURVES)
    if name == "fig8":
        base = Scenario(name="fig8", snr_db=24.0, velocity=0.0, equalizer="mmse",
                        bem_include_pn=True, sweep="beta_pn",
                        sweep_values=(1e2, 1e3, 2e3, 5e3, 1e4, 2e4),
                        trials=n_trials, seed=seed, **g)
        return _curves(base, _OTFS_CURVES + ("ofdm_ptrp",))
    if name == "fig9":
        base = Scenario(name="fig9", snr_db=20.0, beta_pn=0.0,
                        equalizer="lsmr_ic", sweep="f_D_norm",
                        sweep_values=(0.25, 0.5, 1.0, 1.5, 2.0),
                        trials=n_trials, seed=seed, **g)
        return _curves(base, _OTFS_CURVES)
    if name == "fig10":
        base = Scenario(name="fig10", beta_pn=1e3, velocity=500.0,
                        equalizer="lsmr_ic", sweep="snr_db",
                        sweep_values=(0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0),
                        trials=n_trials, seed=seed, **g)
        return _curves(base, _OTFS_CURVES)
    if name in ("fig11", "fig12"):
        beta = 2e3 if name == "fig11" else 5e3
        extra = ("ofdm_ptrp", "ofdm_ptrp_interp") if name == "fig11" else ()
        base = Scenario(name=name, beta_pn=beta, velocity=500.0,
                        equalizer="lsmr_ic", sweep="snr_db",
                        sweep_values=(0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0),
                        trials=n_trials, seed=seed, **g)
        return _curves(base, _OTFS_CURVES + extra)
    if name in ("fig13", "fig14"):
        # coded BER vs Eb/N0; fig13: 4-QAM at beta=1e4, fig14: 16-QAM at 5e3
        beta, order = (1e4, 4) if name == "fig13" else (5e3, 16)
        base = Scenario(name=name, beta_pn=beta, velocity=500.0, coded=True,
                        snr_is_ebn0=True, qam_order=order, equalizer="lsmr_ic",
                        sweep="snr_db",
                        sweep_values=(0.0, 3.0, 6.0, 9.0, 12.0, 15.0),
                        trials=n_trials, seed=seed, **g)
        return _curves(base, _OTFS_CURVES)
    raise ValueError(f"unknown preset {name!r}")


PRESETS = ("fig5", "fig6", "fig7", "fig8", "fig9", "fig10", "fig11", "fig12",
           "fig13", "fig14")
