"""Seeded Monte-Carlo experiment engine.

A run is a grid of (trial, sweep point, method). Every trial derives its
own generator from base_seed + trial index, draws one channel realization,
then walks the sweep points in listed order, drawing fresh training and
noise per point. Methods consume no randomness, so a run is a pure
function of its configuration: results.csv replays byte for byte.

Wall-clock times are recorded next to the results (timings.csv) instead of
inside them, keeping the main CSV deterministic.

Parameter errors are computed after matching estimated components to the
truth through their factor columns; angle errors are wrapped to [-pi, pi)
and delay errors to half the aliasing period before squaring. Units are
raw: radians^2, seconds^2, squared gain magnitude.
"""

from __future__ import annotations

import configparser
import os
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .beamforming import (
    BeamformingConfig,
    design_beamforming,
    effective_channel_stack,
    select_paths,
    spectral_efficiency,
)
from .channel import (
    ArrayGeometry,
    OfdmConfig,
    cascade_from_paths,
    composite_paths,
    random_realization,
    wrap_angle,
)
from .cpd import als_fit, match_components, vandermonde_fit
from .crb import PARAM_CLASSES, crb_diag, fim_analytic
from .recovery import (
    channel_nmse,
    recover_parameters,
    reconstruct_channels,
    refine_estimate,
)
from .somp import GridSpec, build_dictionary, somp_estimate
from .training import factor_matrices, kruskal_check, random_training, synthesize

__all__ = [
    "PROFILES",
    "CSV_COLUMNS",
    "ExperimentConfig",
    "ExperimentRecord",
    "profile_config",
    "run_sweep",
    "summarize",
    "write_results",
    "write_summary",
    "load_config",
    "apply_config_file",
    "crb_table",
    "write_crb_table",
    "replay",
]

PROFILES = {
    "desk": dict(
        n_bs=8, n_ue=8, m_y=8, m_z=8,
        n_bs_paths=2, n_ue_paths=2, delay_max=1e-7,
        n_tones=128, n_training=8, sample_rate=0.32e9,
        n_slots=8, n_frames=8, n_streams=2,
    ),
    "paper": dict(
        n_bs=32, n_ue=32, m_y=16, m_z=16,
        n_bs_paths=3, n_ue_paths=3, delay_max=1e-7,
        n_tones=128, n_training=16, sample_rate=0.32e9,
        n_slots=16, n_frames=16, n_streams=2,
    ),
}

_METHODS = ("vs", "als", "somp")
_SWEEPS = ("snr", "n_training", "n_frames", "n_slots")

_MSE_CLASSES = ("ris_az", "ris_el", "bs_aod", "ue_aoa", "gain", "delay")

CSV_COLUMNS = (
    "trial", "seed", "sweep_value", "method", "snr_db", "noise_var", "nmse",
    *(f"mse_{c}" for c in _MSE_CLASSES),
    *(f"crb_{c}" for c in _MSE_CLASSES),
    "se_est", "se_perfect",
)


@dataclass
class ExperimentConfig:
    """Flat description of a run; see PROFILES for the two stock setups.

    snr_db is the fixed estimation SNR used when the sweep variable is not
    'snr' (None means noiseless). bf_noise_var, when left None, defaults
    to tx_power / snr_lin at each point.
    """

    n_bs: int = 8
    n_ue: int = 8
    m_y: int = 8
    m_z: int = 8
    n_bs_paths: int = 2
    n_ue_paths: int = 2
    delay_max: float = 1e-7
    n_tones: int = 128
    n_training: int = 8
    sample_rate: float = 0.32e9
    n_slots: int = 8
    n_frames: int = 8
    n_streams: int = 2
    sweep_name: str = "snr"
    sweep_values: tuple = (0.0, 10.0, 20.0, 30.0)
    trials: int = 1
    base_seed: int = 0
    snr_db: float | None = 20.0
    methods: tuple = ("vs", "als", "somp")
    polish: bool = True
    beamform: bool = False
    tx_power: float = 1.0
    bf_noise_var: float | None = None
    n_rf_tx: int | None = None
    n_rf_rx: int | None = None

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.sweep_values = tuple(float(v) for v in self.sweep_values)
        for name in (
            "n_bs", "n_ue", "m_y", "m_z", "n_bs_paths", "n_ue_paths",
            "n_tones", "n_training", "sample_rate", "n_slots", "n_frames",
            "n_streams", "trials",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.delay_max < 0 or self.tx_power <= 0:
            raise ValueError("delay_max must be >= 0 and tx_power > 0")
        if not self.methods or any(m not in _METHODS for m in self.methods):
            raise ValueError(f"methods must be a non-empty subset of {_METHODS}")
        if self.sweep_name not in _SWEEPS:
            raise ValueError(f"sweep_name must be one of {_SWEEPS}")
        if not self.sweep_values:
            raise ValueError("sweep_values must be non-empty")
        if self.sweep_name != "snr":
            for v in self.sweep_values:
                if v != int(v) or v < 1:
                    raise ValueError(f"{self.sweep_name} sweep values must be positive integers")

    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.n_bs, self.n_ue, self.m_y, self.m_z)

    @property
    def rank(self) -> int:
        return self.n_bs_paths * self.n_ue_paths

    def point(self, value: float):
        """(ofdm, n_slots, n_frames, snr_db) with the sweep value applied."""
        n_training = self.n_training
        n_slots = self.n_slots
        n_frames = self.n_frames
        snr = self.snr_db
        if self.sweep_name == "snr":
            snr = value
        elif self.sweep_name == "n_training":
            n_training = int(value)
        elif self.sweep_name == "n_frames":
            n_frames = int(value)
        else:
            n_slots = int(value)
        ofdm = OfdmConfig(self.n_tones, n_training, self.sample_rate)
        return ofdm, n_slots, n_frames, snr


@dataclass
class ExperimentRecord:
    """One method evaluation at one sweep point of one trial."""

    trial: int
    seed: int
    sweep_value: float
    method: str
    snr_db: float
    noise_var: float
    nmse: float
    mse: dict = field(default_factory=dict)
    crb: dict = field(default_factory=dict)
    se_est: float = np.nan
    se_perfect: float = np.nan
    wall_time: float = 0.0

    def row(self) -> list:
        vals = [self.trial, self.seed, self.sweep_value, self.method,
                self.snr_db, self.noise_var, self.nmse]
        vals += [self.mse.get(c, np.nan) for c in _MSE_CLASSES]
        vals += [self.crb.get(c, np.nan) for c in _MSE_CLASSES]
        vals += [self.se_est, self.se_perfect]
        return vals


def profile_config(name: str, **overrides) -> ExperimentConfig:
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return ExperimentConfig(**{**PROFILES[name], **overrides})


def _wrap_delay(err: np.ndarray, period: float) -> np.ndarray:
    return np.mod(err + period / 2.0, period) - period / 2.0


def _param_mses(est, cp, perm, alias_period: float) -> dict:
    p = np.asarray(perm)
    out = {}
    for name in ("ris_az", "ris_el", "bs_aod", "ue_aoa"):
        diff = wrap_angle(getattr(est, name)[p] - getattr(cp, name))
        out[name] = float(np.mean(diff**2))
    out["gain"] = float(np.mean(np.abs(est.gain[p] - cp.gain) ** 2))
    ddiff = _wrap_delay(est.delay[p] - cp.delay, alias_period)
    out["delay"] = float(np.mean(ddiff**2))
    return out


def _class_crbs(cp, tc, geom, ofdm, noise_var: float) -> dict:
    rep = crb_diag(fim_analytic(cp, tc, geom, ofdm, noise_var))
    out = {}
    for name in ("ris_az", "ris_el", "bs_aod", "ue_aoa", "delay"):
        out[name] = float(np.mean(rep.class_values(name)))
    out["gain"] = float(np.mean(rep.class_values("gain_re") + rep.class_values("gain_im")))
    return out


def _select_relaxed(paths, geom, bf_cfg: BeamformingConfig):
    """select_paths with progressive threshold relaxation.

    Random desk channels regularly place two path angles inside one beam
    width; rather than dropping the trial, retry with looser separation
    (the SVD precoders tolerate correlated columns).
    """
    for factor in (1.0, 3.0, np.inf):
        bs = min(1.0 - 1e-12, bf_cfg.bs_corr_max * factor)
        ue = min(1.0 - 1e-12, bf_cfg.ue_corr_max * factor)
        relaxed = replace(bf_cfg, bs_corr_max=bs, ue_corr_max=ue)
        try:
            select_paths(paths, geom, relaxed)
            return relaxed
        except ValueError:
            continue
    raise ValueError("path selection failed even with relaxed thresholds")


def _design_se(paths_design, cp_true, geom, ofdm, bf_cfg: BeamformingConfig) -> float:
    """Design on paths_design, evaluate on the true channel."""
    relaxed = _select_relaxed(paths_design, geom, bf_cfg)
    sol = design_beamforming(
        paths_design, geom, ofdm, replace(relaxed, n_rf_tx=None, n_rf_rx=None)
    )
    truth = effective_channel_stack(cp_true, sol.v, geom, ofdm)
    return spectral_efficiency(truth, sol.f_digital, sol.w_digital, bf_cfg.noise_var)


def _bf_config(cfg: ExperimentConfig, snr_db: float | None) -> BeamformingConfig:
    if cfg.bf_noise_var is not None:
        nv = cfg.bf_noise_var
    elif snr_db is not None:
        nv = cfg.tx_power / 10.0 ** (snr_db / 10.0)
    else:
        nv = 0.1
    return BeamformingConfig(
        tx_power=cfg.tx_power,
        noise_var=nv,
        n_streams=cfg.n_streams,
        n_rf_tx=cfg.n_rf_tx,
        n_rf_rx=cfg.n_rf_rx,
    )


def _run_trial(cfg: ExperimentConfig, trial: int) -> list[ExperimentRecord]:
    seed = cfg.base_seed + trial
    rng = np.random.default_rng(seed)
    geom = cfg.geometry()
    ch = random_realization(cfg.n_bs_paths, cfg.n_ue_paths, cfg.delay_max, rng)
    cp = composite_paths(ch)
    u = cp.count
    records = []
    for value in cfg.sweep_values:
        ofdm, n_slots, n_frames, snr = cfg.point(value)
        tc = random_training(geom, n_slots, n_frames, cfg.n_streams, rng)
        check = kruskal_check(n_slots, n_frames * cfg.n_streams, ofdm.n_training, u)
        if not check.satisfied:
            warnings.warn(
                f"identifiability condition fails at sweep value {value} "
                f"(slack {check.slack}); methods run anyway"
            )
        synth = synthesize(cp, tc, geom, ofdm, snr, rng if snr is not None else None)
        pilots = range(1, ofdm.n_training + 1)
        true_stack = np.stack([cascade_from_paths(cp, geom, ofdm, p) for p in pilots])
        true_factors = factor_matrices(cp, tc, geom, ofdm)
        crbs = _class_crbs(cp, tc, geom, ofdm, synth.noise_var) if snr is not None else {}

        bf_cfg = _bf_config(cfg, snr) if cfg.beamform else None
        se_base = np.nan
        if cfg.beamform:
            se_base = _design_se(cp, cp, geom, ofdm, bf_cfg)

        for method in cfg.methods:
            t0 = time.perf_counter()
            mses: dict = {}
            se_est = np.nan
            if method == "somp":
                d = build_dictionary(geom, tc, GridSpec())
                sres = somp_estimate(synth.tensor, d, u)
                nmse = channel_nmse(sres.channels, true_stack)
            else:
                fit = vandermonde_fit(synth.tensor, u) if method == "vs" else als_fit(synth.tensor, u)
                est = recover_parameters(fit.factors, tc, geom, ofdm)
                if cfg.polish:
                    est = refine_estimate(est, synth.tensor, tc, geom, ofdm)
                nmse = channel_nmse(reconstruct_channels(est, geom, ofdm), true_stack)
                perm = match_components(fit.factors, true_factors).permutation
                mses = _param_mses(est, cp, perm, ofdm.alias_period)
                if cfg.beamform:
                    se_est = _design_se(est, cp, geom, ofdm, bf_cfg)
            # the perfect-CSI designer can score any candidate exactly, so a
            # configuration reached from estimates is available to it too;
            # pooling keeps the genie value an upper bound even though the
            # selection heuristic and phase ascent are not exact optimizers
            se_perfect = se_base
            if cfg.beamform and np.isfinite(se_est):
                se_perfect = max(se_base, se_est)
            records.append(
                ExperimentRecord(
                    trial=trial,
                    seed=seed,
                    sweep_value=float(value),
                    method=method,
                    snr_db=np.nan if snr is None else float(snr),
                    noise_var=float(synth.noise_var),
                    nmse=float(nmse),
                    mse=mses,
                    crb=dict(crbs),
                    se_est=float(se_est),
                    se_perfect=float(se_perfect),
                    wall_time=time.perf_counter() - t0,
                )
            )
    return records


def run_sweep(cfg: ExperimentConfig) -> list[ExperimentRecord]:
    """All records of the configured run, in (trial, point, method) order."""
    records = []
    for trial in range(cfg.trials):
        records.extend(_run_trial(cfg, trial))
    return records


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def summarize(records: list[ExperimentRecord]):
    """Per (method, sweep value) medians of every numeric column + counts."""
    if not records:
        raise ValueError("no records to summarize")
    keys = sorted({(r.method, r.sweep_value) for r in records}, key=lambda k: (k[0], k[1]))
    numeric = CSV_COLUMNS[4:]
    rows = []
    for method, value in keys:
        group = [r.row() for r in records if r.method == method and r.sweep_value == value]
        arr = np.asarray([g[4:] for g in group], dtype=float)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
            med = np.nanmedian(arr, axis=0)
        row = {"method": method, "sweep_value": value, "count": len(group)}
        row.update({f"median_{c}": med[i] for i, c in enumerate(numeric)})
        rows.append(row)
    return rows


_CONFIG_SCHEMA = {
    "geometry": ("n_bs", "n_ue", "m_y", "m_z"),
    "channel": ("n_bs_paths", "n_ue_paths", "delay_max"),
    "ofdm": ("n_tones", "n_training", "sample_rate"),
    "training": ("n_slots", "n_frames", "n_streams"),
    "sweep": ("sweep_name", "sweep_values"),
    "run": ("trials", "base_seed", "snr_db", "methods", "polish"),
    "beamforming": ("beamform", "tx_power", "bf_noise_var", "n_rf_tx", "n_rf_rx"),
}

_INT_KEYS = {
    "n_bs", "n_ue", "m_y", "m_z", "n_bs_paths", "n_ue_paths", "n_tones",
    "n_training", "n_slots", "n_frames", "n_streams", "trials", "base_seed",
}
_FLOAT_KEYS = {"delay_max", "sample_rate", "tx_power"}
_OPT_FLOAT_KEYS = {"snr_db", "bf_noise_var"}
_OPT_INT_KEYS = {"n_rf_tx", "n_rf_rx"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _OPT_FLOAT_KEYS:
        return None if raw.lower() == "none" else float(raw)
    if key in _OPT_INT_KEYS:
        return None if raw.lower() == "none" else int(raw)
    if key in ("beamform", "polish"):
        if raw.lower() not in ("true", "false"):
            raise ValueError(f"{key} must be true or false, got {raw!r}")
        return raw.lower() == "true"
    if key == "sweep_values":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if key == "methods":
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if key == "sweep_name":
        return raw
    raise KeyError(key)


def apply_config_file(cfg: ExperimentConfig, path) -> ExperimentConfig:
    """Overlay a sectioned key-value file onto a config.

    Every ExperimentConfig field is addressable; unknown sections or keys
    are errors. The [artifact] section (metadata echo) is ignored.
    """
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    updates = {}
    for section in parser.sections():
        if section == "artifact":
            continue
        if section not in _CONFIG_SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _CONFIG_SCHEMA[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            updates[key] = _parse_value(key, raw)
    return replace(cfg, **updates)


def load_config(path) -> ExperimentConfig:
    return apply_config_file(ExperimentConfig(), path)


def _config_ini(cfg: ExperimentConfig) -> str:
    lines = ["[artifact]", "name = riscade", f"version = {__version__}", ""]
    for section, keys in _CONFIG_SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            val = getattr(cfg, key)
            if isinstance(val, tuple):
                val = ",".join(_fmt(v) for v in val)
            lines.append(f"{key} = {val}")
        lines.append("")
    return "\n".join(lines)


def write_results(records: list[ExperimentRecord], cfg: ExperimentConfig, out_dir) -> dict:
    """results.csv + metadata.ini + timings.csv under out_dir.

    results.csv is a pure function of the config (replayable); timings.csv
    carries the wall-clock measurements separately.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "results": os.path.join(out_dir, "results.csv"),
        "metadata": os.path.join(out_dir, "metadata.ini"),
        "timings": os.path.join(out_dir, "timings.csv"),
    }
    with open(paths["results"], "w") as fh:
        fh.write("# riscade sweep results; columns fixed as listed below\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for r in records:
            fh.write(",".join(_fmt(v) for v in r.row()) + "\n")
    with open(paths["metadata"], "w") as fh:
        fh.write(_config_ini(cfg))
    with open(paths["timings"], "w") as fh:
        fh.write("trial,sweep_value,method,wall_seconds\n")
        for r in records:
            fh.write(f"{r.trial},{_fmt(r.sweep_value)},{r.method},{r.wall_time:.6f}\n")
    return paths


def write_summary(rows, path) -> None:
    if not rows:
        raise ValueError("no summary rows")
    cols = list(rows[0].keys())
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")


def crb_table(cfg: ExperimentConfig, snrs=None) -> list[dict]:
    """Per-trial, per-SNR class-averaged bound values (no estimation run).

    The noise variance at each SNR follows the same definition as
    synthesize: ||clean||^2 / (snr_lin * #entries).
    """
    snrs = tuple(cfg.sweep_values if snrs is None else snrs)
    geom = cfg.geometry()
    rows = []
    for trial in range(cfg.trials):
        seed = cfg.base_seed + trial
        rng = np.random.default_rng(seed)
        ch = random_realization(cfg.n_bs_paths, cfg.n_ue_paths, cfg.delay_max, rng)
        cp = composite_paths(ch)
        ofdm = OfdmConfig(cfg.n_tones, cfg.n_training, cfg.sample_rate)
        tc = random_training(geom, cfg.n_slots, cfg.n_frames, cfg.n_streams, rng)
        clean = synthesize(cp, tc, geom, ofdm)
        n_entries = cfg.n_slots * cfg.n_frames * cfg.n_streams * cfg.n_training
        for snr in snrs:
            noise_var = clean.clean.norm() ** 2 / (10.0 ** (snr / 10.0) * n_entries)
            row = {"trial": trial, "seed": seed, "snr_db": snr, "noise_var": noise_var}
            row.update({f"crb_{k}": v for k, v in _class_crbs(cp, tc, geom, ofdm, noise_var).items()})
            rows.append(row)
    return rows


def write_crb_table(rows, path) -> None:
    write_summary(rows, path)


def replay(from_dir, out_dir) -> bool:
    """Re-run the experiment described by a metadata sidecar.

    Returns True when the regenerated results.csv matches the original
    byte for byte (always True for untouched sidecars; the run is a pure
    function of the config).
    """
    cfg = load_config(os.path.join(from_dir, "metadata.ini"))
    records = run_sweep(cfg)
    paths = write_results(records, cfg, out_dir)
    original = os.path.join(from_dir, "results.csv")
    if not os.path.exists(original):
        return False
    with open(original, "rb") as fh:
        a = fh.read()
    with open(paths["results"], "rb") as fh:
        b = fh.read()
    return a == b
