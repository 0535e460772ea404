"""Geometric wideband channel model for a BS -> RIS -> user link.

All angles are spatial phase-progression arguments in radians (the exponent
step of e^{j*n*angle} across array elements), not physical angles; use
:func:`spatial_angle` to convert a physical angle for a given element
spacing. Steering vectors are unit-norm (1/sqrt(elements)).

The two hops are sparse multipath channels. Per subcarrier p (1-based, out
of ``OfdmConfig.n_training`` pilots drawn from ``n_tones`` total):

* BS->RIS: sum over paths of gain * delay phase * a_ris(az, el) a_bs(aod)^H
* RIS->user: sum over paths of gain * delay phase * a_ue(aoa) a_ris(az, el)^H

with delay phase e^{-j*2*pi*fs*delay*p/n_tones}. The end-to-end cascade
(for any RIS reflection pattern) factors through the column-wise Khatri-Rao
product of the two hops, which is where the composite-path parametrization
below comes from.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .kernels import khatri_rao

__all__ = [
    "ArrayGeometry",
    "OfdmConfig",
    "ChannelRealization",
    "CompositePaths",
    "spatial_angle",
    "wrap_angle",
    "steering_bs",
    "steering_ue",
    "steering_irs",
    "delay_phases",
    "bs_ris_channel",
    "ris_ue_channel",
    "cascade_channel",
    "composite_paths",
    "array_pair_response",
    "irs_difference_response",
    "cascade_from_paths",
    "random_realization",
    "save_realization",
    "load_realization",
]


@dataclass(frozen=True)
class ArrayGeometry:
    """Antenna counts: BS/user ULAs and the RIS uniform planar array."""

    n_bs: int
    n_ue: int
    m_y: int  # RIS horizontal size
    m_z: int  # RIS vertical size

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{f.name} must be a positive integer, got {v!r}")

    @property
    def m(self) -> int:
        return self.m_y * self.m_z


@dataclass(frozen=True)
class OfdmConfig:
    """Wideband sampling setup.

    n_tones: total subcarrier count of the underlying OFDM grid
    n_training: pilot subcarriers actually observed (1..n_training)
    sample_rate: sampling rate in Hz
    """

    n_tones: int
    n_training: int
    sample_rate: float

    def __post_init__(self):
        if self.n_tones < 1:
            raise ValueError("n_tones must be positive")
        if not 1 <= self.n_training <= self.n_tones:
            raise ValueError(
                f"n_training must lie in [1, n_tones], got {self.n_training}"
            )
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def alias_period(self) -> float:
        """Delay period (seconds) beyond which pilot phases alias: n_tones/fs."""
        return self.n_tones / self.sample_rate


def _float_array(name: str, x, n: int | None = None) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if n is not None and arr.size != n:
        raise ValueError(f"{name} must have length {n}, got {arr.size}")
    return arr


@dataclass(frozen=True)
class ChannelRealization:
    """Path parameters for both hops.

    BS->RIS arrays all have the same length (the BS-side path count);
    likewise the RIS->user arrays. Delays are in seconds and must be
    nonnegative.
    """

    bs_gain: np.ndarray
    bs_aod: np.ndarray
    ris_aoa_az: np.ndarray
    ris_aoa_el: np.ndarray
    bs_delay: np.ndarray
    ue_gain: np.ndarray
    ue_aoa: np.ndarray
    ris_aod_az: np.ndarray
    ris_aod_el: np.ndarray
    ue_delay: np.ndarray

    def __post_init__(self):
        bs_gain = np.atleast_1d(np.asarray(self.bs_gain, dtype=np.complex128))
        ue_gain = np.atleast_1d(np.asarray(self.ue_gain, dtype=np.complex128))
        n_bs, n_ue = bs_gain.size, ue_gain.size
        if n_bs < 1 or n_ue < 1:
            raise ValueError("each hop needs at least one path")
        object.__setattr__(self, "bs_gain", bs_gain)
        object.__setattr__(self, "ue_gain", ue_gain)
        for name, n in (
            ("bs_aod", n_bs),
            ("ris_aoa_az", n_bs),
            ("ris_aoa_el", n_bs),
            ("bs_delay", n_bs),
            ("ue_aoa", n_ue),
            ("ris_aod_az", n_ue),
            ("ris_aod_el", n_ue),
            ("ue_delay", n_ue),
        ):
            object.__setattr__(self, name, _float_array(name, getattr(self, name), n))
        if np.any(self.bs_delay < 0) or np.any(self.ue_delay < 0):
            raise ValueError("delays must be nonnegative")

    @property
    def n_bs_paths(self) -> int:
        return self.bs_gain.size

    @property
    def n_ue_paths(self) -> int:
        return self.ue_gain.size


@dataclass(frozen=True)
class CompositePaths:
    """End-to-end cascade path parameters.

    One entry per (BS-side path m, user-side path n) pair, ordered with the
    BS-side index slowest: u = m * n_ue_paths + n (0-based). Stored angles
    are wrapped to [-pi, pi).
    """

    gain: np.ndarray
    delay: np.ndarray
    ris_az: np.ndarray  # RIS azimuth difference (arrival minus departure)
    ris_el: np.ndarray
    bs_aod: np.ndarray
    ue_aoa: np.ndarray
    n_bs_paths: int
    n_ue_paths: int

    def __post_init__(self):
        gain = np.atleast_1d(np.asarray(self.gain, dtype=np.complex128))
        u = gain.size
        object.__setattr__(self, "gain", gain)
        for name in ("delay", "ris_az", "ris_el", "bs_aod", "ue_aoa"):
            object.__setattr__(self, name, _float_array(name, getattr(self, name), u))
        if self.n_bs_paths * self.n_ue_paths != u:
            raise ValueError(
                f"{u} composite paths inconsistent with "
                f"{self.n_bs_paths} x {self.n_ue_paths} link paths"
            )

    @property
    def count(self) -> int:
        return self.gain.size

    def cross_index(self, u1: int, u2: int) -> int:
        """Composite index pairing u1's BS-side path with u2's user-side path."""
        m = u1 // self.n_ue_paths
        n = u2 % self.n_ue_paths
        return m * self.n_ue_paths + n


def spatial_angle(physical_rad: float, spacing_wavelengths: float = 0.5) -> float:
    """Phase-progression argument 2*pi*(d/lambda)*sin(angle) for a ULA axis."""
    return 2.0 * np.pi * spacing_wavelengths * np.sin(physical_rad)


def wrap_angle(x):
    """Wrap to [-pi, pi)."""
    return np.mod(np.asarray(x, dtype=float) + np.pi, 2.0 * np.pi) - np.pi


def steering_bs(aod: float, n_bs: int) -> np.ndarray:
    """Unit-norm BS array response [1, e^{j*aod}, ..., e^{j*(n-1)*aod}]/sqrt(n)."""
    return np.exp(1j * aod * np.arange(n_bs)) / np.sqrt(n_bs)


def steering_ue(aoa: float, n_ue: int) -> np.ndarray:
    return np.exp(1j * aoa * np.arange(n_ue)) / np.sqrt(n_ue)


def steering_irs(az: float, el: float, geom: ArrayGeometry) -> np.ndarray:
    """Unit-norm RIS planar response, kron of the two axis responses.

    Element (m_y*M_z + m_z) equals e^{j*(m_y*az + m_z*el)}/sqrt(M).
    """
    ay = np.exp(1j * az * np.arange(geom.m_y)) / np.sqrt(geom.m_y)
    az_vec = np.exp(1j * el * np.arange(geom.m_z)) / np.sqrt(geom.m_z)
    return np.kron(ay, az_vec)


def delay_phases(delay: float, ofdm: OfdmConfig, p) -> np.ndarray:
    """e^{-j*2*pi*fs*delay*p/n_tones} for 1-based subcarrier index/indices p."""
    p = np.asarray(p, dtype=float)
    return np.exp(-2j * np.pi * ofdm.sample_rate * delay * p / ofdm.n_tones)


def _steering_matrix_bs(aods: np.ndarray, n: int) -> np.ndarray:
    return np.exp(1j * np.outer(np.arange(n), aods)) / np.sqrt(n)


def _steering_matrix_irs(az: np.ndarray, el: np.ndarray, geom: ArrayGeometry) -> np.ndarray:
    ay = np.exp(1j * np.outer(np.arange(geom.m_y), az)) / np.sqrt(geom.m_y)
    azv = np.exp(1j * np.outer(np.arange(geom.m_z), el)) / np.sqrt(geom.m_z)
    return khatri_rao(ay, azv)


def bs_ris_channel(ch: ChannelRealization, geom: ArrayGeometry, ofdm: OfdmConfig, p: int) -> np.ndarray:
    """BS->RIS frequency-domain channel at pilot subcarrier p, shape (M, n_bs)."""
    a_ris = _steering_matrix_irs(ch.ris_aoa_az, ch.ris_aoa_el, geom)
    a_bs = _steering_matrix_bs(ch.bs_aod, geom.n_bs)
    w = ch.bs_gain * delay_phases(ch.bs_delay, ofdm, p)
    return (a_ris * w) @ a_bs.conj().T


def ris_ue_channel(ch: ChannelRealization, geom: ArrayGeometry, ofdm: OfdmConfig, p: int) -> np.ndarray:
    """RIS->user frequency-domain channel at pilot subcarrier p, shape (n_ue, M)."""
    a_ue = _steering_matrix_bs(ch.ue_aoa, geom.n_ue)
    a_ris = _steering_matrix_irs(ch.ris_aod_az, ch.ris_aod_el, geom)
    w = ch.ue_gain * delay_phases(ch.ue_delay, ofdm, p)
    return (a_ue * w) @ a_ris.conj().T


def cascade_channel(g: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Reflection-invariant cascade G^T kr R, shape (n_bs*n_ue, M).

    Column m is kron(G^T[:, m], R[:, m]); right-multiplying by a reflection
    vector reproduces R diag(.) G up to the fixed vectorization.
    """
    if g.shape[0] != r.shape[1]:
        raise ValueError("hop channels disagree on the RIS size")
    return khatri_rao(np.ascontiguousarray(g.T), r)


def composite_paths(ch: ChannelRealization) -> CompositePaths:
    """Composite cascade parametrization of a two-hop realization.

    Pair (m, n) maps to index u = m*n_ue_paths + n with gain = product of
    link gains, delay = sum of link delays, RIS angles = arrival minus
    departure (wrapped), BS AoD from path m and user AoA from path n.
    """
    l_bs, l_ue = ch.n_bs_paths, ch.n_ue_paths
    return CompositePaths(
        gain=np.repeat(ch.bs_gain, l_ue) * np.tile(ch.ue_gain, l_bs),
        delay=np.repeat(ch.bs_delay, l_ue) + np.tile(ch.ue_delay, l_bs),
        ris_az=wrap_angle(np.repeat(ch.ris_aoa_az, l_ue) - np.tile(ch.ris_aod_az, l_bs)),
        ris_el=wrap_angle(np.repeat(ch.ris_aoa_el, l_ue) - np.tile(ch.ris_aod_el, l_bs)),
        bs_aod=np.repeat(ch.bs_aod, l_ue),
        ue_aoa=np.tile(ch.ue_aoa, l_bs),
        n_bs_paths=l_bs,
        n_ue_paths=l_ue,
    )


def array_pair_response(bs_aod: np.ndarray, ue_aoa: np.ndarray, geom: ArrayGeometry) -> np.ndarray:
    """Columns kron(conj(a_bs(aod_u)), a_ue(aoa_u)), shape (n_bs*n_ue, U)."""
    a_bs = _steering_matrix_bs(np.atleast_1d(bs_aod), geom.n_bs)
    a_ue = _steering_matrix_bs(np.atleast_1d(ue_aoa), geom.n_ue)
    return khatri_rao(a_bs.conj(), a_ue)


def irs_difference_response(ris_az: np.ndarray, ris_el: np.ndarray, geom: ArrayGeometry) -> np.ndarray:
    """Columns a_irs(az_u, el_u), shape (M, U)."""
    return _steering_matrix_irs(np.atleast_1d(ris_az), np.atleast_1d(ris_el), geom)


def cascade_from_paths(paths, geom: ArrayGeometry, ofdm: OfdmConfig, p: int) -> np.ndarray:
    """Cascade channel at pilot p from composite parameters, shape (n_bs*n_ue, M).

    sum_u gain_u * delay phase * kron(conj(a_bs), a_ue) a_irs(az, el)^T / sqrt(M).
    The 1/sqrt(M) is the normalization constant left over when the entrywise
    product of the two unit-norm RIS responses is rewritten as the unit-norm
    difference-angle response; with it, this equals
    cascade_channel(bs_ris_channel(.), ris_ue_channel(.)) exactly.

    Accepts any object with gain/delay/ris_az/ris_el/bs_aod/ue_aoa arrays
    (both :class:`CompositePaths` and recovered parameter estimates).
    """
    a_pair = array_pair_response(paths.bs_aod, paths.ue_aoa, geom)
    a_irs = irs_difference_response(paths.ris_az, paths.ris_el, geom)
    w = paths.gain * delay_phases(paths.delay, ofdm, p) / np.sqrt(geom.m)
    return (a_pair * w) @ a_irs.T


def random_realization(
    n_bs_paths: int,
    n_ue_paths: int,
    delay_max: float,
    rng: np.random.Generator,
) -> ChannelRealization:
    """Draw a realization: angles uniform on [0, 2*pi), delays uniform on
    [0, delay_max], gains standard circular complex normal.

    Draw order is fixed (BS hop first: gains, aod, ris az, ris el, delays;
    then the user hop) so a seeded generator reproduces the realization.
    """
    if delay_max < 0:
        raise ValueError("delay_max must be nonnegative")

    def cn(n):
        return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)

    bs_gain = cn(n_bs_paths)
    bs_aod = rng.uniform(0.0, 2.0 * np.pi, n_bs_paths)
    ris_aoa_az = rng.uniform(0.0, 2.0 * np.pi, n_bs_paths)
    ris_aoa_el = rng.uniform(0.0, 2.0 * np.pi, n_bs_paths)
    bs_delay = rng.uniform(0.0, delay_max, n_bs_paths)
    ue_gain = cn(n_ue_paths)
    ue_aoa = rng.uniform(0.0, 2.0 * np.pi, n_ue_paths)
    ris_aod_az = rng.uniform(0.0, 2.0 * np.pi, n_ue_paths)
    ris_aod_el = rng.uniform(0.0, 2.0 * np.pi, n_ue_paths)
    ue_delay = rng.uniform(0.0, delay_max, n_ue_paths)
    return ChannelRealization(
        bs_gain, bs_aod, ris_aoa_az, ris_aoa_el, bs_delay,
        ue_gain, ue_aoa, ris_aod_az, ris_aod_el, ue_delay,
    )


_FORMAT_HEADER = "# riscade channel realization v1"


def save_realization(ch: ChannelRealization, path) -> None:
    """Plain-text serialization, one path per line.

    Line format: link tag ('bs-ris' or 'ris-ue'), gain re, gain im, array
    angle (BS AoD or user AoA), RIS azimuth, RIS elevation, delay seconds.
    """
    lines = [_FORMAT_HEADER]
    for i in range(ch.n_bs_paths):
        lines.append(
            "bs-ris %.17e %.17e %.17e %.17e %.17e %.17e"
            % (
                ch.bs_gain[i].real, ch.bs_gain[i].imag, ch.bs_aod[i],
                ch.ris_aoa_az[i], ch.ris_aoa_el[i], ch.bs_delay[i],
            )
        )
    for i in range(ch.n_ue_paths):
        lines.append(
            "ris-ue %.17e %.17e %.17e %.17e %.17e %.17e"
            % (
                ch.ue_gain[i].real, ch.ue_gain[i].imag, ch.ue_aoa[i],
                ch.ris_aod_az[i], ch.ris_aod_el[i], ch.ue_delay[i],
            )
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_realization(path) -> ChannelRealization:
    bs, ue = [], []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 7 or parts[0] not in ("bs-ris", "ris-ue"):
                raise ValueError(f"malformed channel line: {line!r}")
            vals = [float(x) for x in parts[1:]]
            (bs if parts[0] == "bs-ris" else ue).append(vals)
    if not bs or not ue:
        raise ValueError("realization file must contain both link tags")
    bs_arr = np.asarray(bs)
    ue_arr = np.asarray(ue)
    return ChannelRealization(
        bs_gain=bs_arr[:, 0] + 1j * bs_arr[:, 1],
        bs_aod=bs_arr[:, 2],
        ris_aoa_az=bs_arr[:, 3],
        ris_aoa_el=bs_arr[:, 4],
        bs_delay=bs_arr[:, 5],
        ue_gain=ue_arr[:, 0] + 1j * ue_arr[:, 1],
        ue_aoa=ue_arr[:, 2],
        ris_aod_az=ue_arr[:, 3],
        ris_aod_el=ue_arr[:, 4],
        ue_delay=ue_arr[:, 5],
    )
