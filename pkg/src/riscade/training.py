"""Training protocol and received-tensor synthesis.

During training the RIS cycles through Q reflection patterns (columns of
``ris_profile``); for each pattern the BS sends one pilot beam per frame t
and the user applies an N_s-column combiner, over P pilot subcarriers.
Stacking streams and frames, the noiseless observation is a Q x (T*N_s) x P
tensor that admits a rank-U CP model with one component per composite
cascade path:

* mode-1 factor column: ris_profile^T a_irs(az_u, el_u)
* mode-2 factor column: gain_u * F^T kron(conj(a_bs), a_ue)
* mode-3 factor column: delay response over pilot subcarriers p = 1..P

where F stacks kron(f_t, conj(W_t)) over frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import (
    ArrayGeometry,
    CompositePaths,
    OfdmConfig,
    array_pair_response,
    irs_difference_response,
)
from .tensor3 import ComplexTensor3, FactorTriple, cp_reconstruct

__all__ = [
    "TrainingConfig",
    "ReceivedTensor",
    "KruskalCheck",
    "random_training",
    "factor_matrices",
    "delay_response",
    "synthesize",
    "kruskal_check",
    "save_training",
    "load_training",
]


@dataclass(frozen=True)
class TrainingConfig:
    """Training-side knobs: RIS patterns, BS pilot beams, user combiners.

    ris_profile: (M, Q) unit-modulus reflection patterns, one per slot
    tx_beams: (n_bs, T) pilot beamformers, one per frame
    rx_combiners: (n_ue, N_s, T) per-frame combining matrices
    """

    ris_profile: np.ndarray
    tx_beams: np.ndarray
    rx_combiners: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.ris_profile, dtype=np.complex128)
        f = np.asarray(self.tx_beams, dtype=np.complex128)
        w = np.asarray(self.rx_combiners, dtype=np.complex128)
        if v.ndim != 2 or f.ndim != 2 or w.ndim != 3:
            raise ValueError("ris_profile must be 2-D, tx_beams 2-D, rx_combiners 3-D")
        if w.shape[2] != f.shape[1]:
            raise ValueError("frame counts of tx_beams and rx_combiners disagree")
        object.__setattr__(self, "ris_profile", v)
        object.__setattr__(self, "tx_beams", f)
        object.__setattr__(self, "rx_combiners", w)

    @property
    def n_slots(self) -> int:
        return self.ris_profile.shape[1]

    @property
    def n_frames(self) -> int:
        return self.tx_beams.shape[1]

    @property
    def n_streams(self) -> int:
        return self.rx_combiners.shape[1]

    def beam_matrix(self) -> np.ndarray:
        """Stacked composite pilots, shape (n_bs*n_ue, T*N_s).

        Column (t*N_s + s) is kron(f_t, conj(w_{t,s})), so that applying its
        transpose to kron(conj(a_bs), a_ue) yields f_t^T conj(a_bs) * w_{t,s}^H a_ue.
        """
        f = self.tx_beams
        w = self.rx_combiners
        n_bs, t = f.shape
        n_ue, n_s, _ = w.shape
        # kron over the antenna axes, frame by frame
        x = f[:, None, None, :] * w.conj()[None, :, :, :]  # (n_bs, n_ue, N_s, T)
        return x.reshape(n_bs * n_ue, n_s, t).transpose(0, 2, 1).reshape(n_bs * n_ue, t * n_s)


@dataclass(frozen=True)
class ReceivedTensor:
    """Observed training tensor plus the synthesis bookkeeping."""

    tensor: ComplexTensor3
    noise_var: float
    snr_db: float | None = None
    clean: ComplexTensor3 | None = None


class KruskalCheck:
    """Outcome of the generic CP-uniqueness rank condition."""

    __slots__ = ("satisfied", "slack")

    def __init__(self, satisfied: bool, slack: int):
        self.satisfied = satisfied
        self.slack = slack

    def __iter__(self):
        return iter((self.satisfied, self.slack))

    def __repr__(self):
        return f"KruskalCheck(satisfied={self.satisfied}, slack={self.slack})"


def random_training(
    geom: ArrayGeometry,
    n_slots: int,
    n_frames: int,
    n_streams: int,
    rng: np.random.Generator,
) -> TrainingConfig:
    """Draw unit-modulus training: every entry of the RIS patterns, pilot
    beams and combiners is e^{j*u} with u uniform on [-pi, pi).

    Draw order: ris_profile, tx_beams, rx_combiners.
    """
    if min(n_slots, n_frames, n_streams) < 1:
        raise ValueError("training sizes must be positive")

    def phases(*shape):
        return np.exp(1j * rng.uniform(-np.pi, np.pi, shape))

    return TrainingConfig(
        ris_profile=phases(geom.m, n_slots),
        tx_beams=phases(geom.n_bs, n_frames),
        rx_combiners=phases(geom.n_ue, n_streams, n_frames),
    )


def delay_response(delays: np.ndarray, ofdm: OfdmConfig) -> np.ndarray:
    """Pilot-subcarrier delay signatures, shape (P, U).

    Column u has entries e^{-j*2*pi*fs*delay_u*p/n_tones}, p = 1..P; a zero
    delay gives the all-ones column.
    """
    p = np.arange(1, ofdm.n_training + 1)
    return np.exp(
        -2j * np.pi * ofdm.sample_rate / ofdm.n_tones * np.outer(p, np.atleast_1d(delays))
    )


def factor_matrices(
    paths: CompositePaths,
    tc: TrainingConfig,
    geom: ArrayGeometry,
    ofdm: OfdmConfig,
) -> FactorTriple:
    """CP factor triple of the noiseless training tensor for these paths."""
    a = tc.ris_profile.T @ irs_difference_response(paths.ris_az, paths.ris_el, geom)
    b = tc.beam_matrix().T @ array_pair_response(paths.bs_aod, paths.ue_aoa, geom)
    return FactorTriple(a, b * paths.gain, delay_response(paths.delay, ofdm))


def synthesize(
    paths: CompositePaths,
    tc: TrainingConfig,
    geom: ArrayGeometry,
    ofdm: OfdmConfig,
    snr_db: float | None = None,
    rng: np.random.Generator | None = None,
) -> ReceivedTensor:
    """Noiseless or noisy training tensor at a prescribed SNR.

    SNR is defined as ||clean||_F^2 / ||noise||_F^2; the per-entry complex
    noise variance is set analytically to ||clean||_F^2 / (snr_lin * #entries)
    so the realized SNR concentrates on the target. ``snr_db=None`` returns
    the noiseless tensor with noise_var 0.
    """
    clean = cp_reconstruct(factor_matrices(paths, tc, geom, ofdm))
    if snr_db is None:
        return ReceivedTensor(tensor=clean, noise_var=0.0, snr_db=None, clean=clean)
    if rng is None:
        raise ValueError("a Generator is required to draw noise")
    n_entries = int(np.prod(clean.dims))
    snr_lin = 10.0 ** (snr_db / 10.0)
    noise_var = clean.norm() ** 2 / (snr_lin * n_entries)
    noise = np.sqrt(noise_var / 2.0) * (
        rng.standard_normal(clean.dims) + 1j * rng.standard_normal(clean.dims)
    )
    return ReceivedTensor(
        tensor=ComplexTensor3(clean.data + noise),
        noise_var=float(noise_var),
        snr_db=float(snr_db),
        clean=clean,
    )


def kruskal_check(n_slots: int, n_obs: int, n_pilots: int, rank: int) -> KruskalCheck:
    """Generic CP-uniqueness condition on the three tensor dims vs the rank.

    With generic factors the k-ranks equal min(dim, rank); the condition is
    sum of the three min(dim, rank) >= 2*rank + 2. Returns the pass flag and
    the slack (lhs - rhs, negative when violated).
    """
    if min(n_slots, n_obs, n_pilots, rank) < 1:
        raise ValueError("dims and rank must be positive")
    lhs = min(n_slots, rank) + min(n_obs, rank) + min(n_pilots, rank)
    slack = lhs - (2 * rank + 2)
    return KruskalCheck(slack >= 0, slack)


def save_training(tc: TrainingConfig, path) -> None:
    """Serialize a training configuration (npz) for exact replay."""
    np.savez(
        path,
        ris_profile=tc.ris_profile,
        tx_beams=tc.tx_beams,
        rx_combiners=tc.rx_combiners,
    )


def load_training(path) -> TrainingConfig:
    with np.load(path) as data:
        return TrainingConfig(
            ris_profile=data["ris_profile"],
            tx_beams=data["tx_beams"],
            rx_combiners=data["rx_combiners"],
        )
