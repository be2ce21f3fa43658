"""Multilevel Daubechies DWT and whole-band detail zeroing.

Two boundary modes are available:

``symmetric`` (default)
    Half-sample symmetric extension at every level. Each band has
    ``floor((n + L - 1) / 2)`` coefficients for an input of length ``n`` and
    filter length ``L``, which is slightly more than half; the extra
    coefficients carry the boundary and make reconstruction exact.
``periodization``
    Odd-length inputs are first padded by repeating the last sample, then
    transformed periodically into ``ceil(n / 2)`` coefficients per band. The
    transform is orthogonal on the padded signal, so coefficient energy equals
    the energy of the padded signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

MODES = ("symmetric", "periodization")

# Minimum-phase Daubechies scaling filters, normalised to sum sqrt(2).
_DAUBECHIES = {
    1: (0.7071067811865475244, 0.7071067811865475244),
    2: (0.48296291314453414337, 0.83651630373780790558, 0.22414386804201338103,
        -0.12940952255126038117),
    3: (0.332670552950082616, 0.80689150931109257649, 0.4598775021184915701,
        -0.1350110200102545887, -0.085441273882026661693, 0.035226291885709536603),
    4: (0.23037781330889650086, 0.71484657055291564709, 0.63088076792985890788,
        -0.027983769416859854211, -0.18703481171909308408, 0.030841381835560763627,
        0.032883011666885199735, -0.010597401785069032105),
    5: (0.16010239797419291448, 0.60382926979718967054, 0.72430852843777292773,
        0.13842814590132073151, -0.24229488706638203186, -0.032244869584638374648,
        0.077571493840045713523, -0.0062414902127982742742, -0.012580751999081999469,
        0.003335725285473771278),
    6: (0.11154074335010946362, 0.49462389039845308568, 0.75113390802109535068,
        0.31525035170919762909, -0.22626469396543982008, -0.12976686756726193556,
        0.097501605587323049102, 0.027522865530305728626, -0.031582039317486029565,
        0.00055384220116149613925, 0.0047772575109455106396, -0.0010773010853084795649),
    7: (0.07785205408500917902, 0.39653931948191730654, 0.72913209084623511992,
        0.46978228740519312247, -0.14390600392856497541, -0.22403618499387498264,
        0.071309219266830264751, 0.080612609151083071913, -0.03802993693501441358,
        -0.016574541630666880654, 0.012550998556099840613, 0.00042957797292136652113,
        -0.0018016407040474909153, 0.00035371379997452024845),
    8: (0.054415842243104009955, 0.31287159091429997066, 0.67563073629728980681,
        0.58535468365420671277, -0.015829105256349305667, -0.28401554296154692652,
        0.00047248457391328277036, 0.12874742662047845886, -0.01736930100180754617,
        -0.044088253930794751507, 0.013981027917398281649, 0.0087460940474057767164,
        -0.0048703529934515743104, -0.0003917403733769470463, 0.00067544940645056936637,
        -0.00011747678412476953373),
}

SUPPORTED_ORDERS = tuple(sorted(_DAUBECHIES))


class SignalTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class WaveletSpec:
    order: int = 4
    levels: int = 4
    family: str = "daubechies"
    mode: str = "symmetric"

    def __post_init__(self):
        if self.family != "daubechies":
            raise ValueError(f"unsupported wavelet family {self.family!r}")
        if self.order not in _DAUBECHIES:
            raise ValueError(f"unsupported Daubechies order {self.order}; choose from {SUPPORTED_ORDERS}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown boundary mode {self.mode!r}")

    @property
    def filter_length(self) -> int:
        return 2 * self.order


@dataclass(frozen=True)
class WaveletCoeffs:
    """Approximation band plus detail bands ordered deepest first (CD_J .. CD_1)."""

    approx: np.ndarray
    details: tuple[np.ndarray, ...]
    spec: WaveletSpec
    original_length: int

    def detail(self, level: int) -> np.ndarray:
        """Detail band at ``level`` (1 = finest)."""
        return self.details[len(self.details) - level]

    def replace_details(self, zero_levels: Iterable[int]) -> "WaveletCoeffs":
        zero = set(zero_levels)
        n = len(self.details)
        details = tuple(
            np.zeros_like(d) if (n - i) in zero else d for i, d in enumerate(self.details)
        )
        return WaveletCoeffs(self.approx, details, self.spec, self.original_length)


def daubechies_filters(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal (lowpass, highpass) pair for db``order``.

    The highpass is the quadrature mirror ``g[k] = (-1)**k * h[L-1-k]``.
    """
    if order not in _DAUBECHIES:
        raise ValueError(f"unsupported Daubechies order {order}; choose from {SUPPORTED_ORDERS}")
    h = np.array(_DAUBECHIES[order], dtype=np.float64)
    g = h[::-1] * np.where(np.arange(len(h)) % 2 == 0, 1.0, -1.0)
    return h, g


def band_lengths(n: int, spec: WaveletSpec) -> list[int]:
    """Input length at each level followed by the deepest band length."""
    lengths = [n]
    for _ in range(spec.levels):
        if spec.mode == "symmetric":
            n = (n + spec.filter_length - 1) // 2
        else:
            n = (n + 1) // 2
        lengths.append(n)
    return lengths


def _check_length(n: int, spec: WaveletSpec) -> None:
    lengths = band_lengths(n, spec)
    for level, m in enumerate(lengths[:-1], 1):
        if m < spec.filter_length:
            raise SignalTooShortError(
                f"signal of length {n} too short for {spec.levels} levels of db{spec.order}: "
                f"level {level} input has {m} < {spec.filter_length} samples"
            )


def _analysis(x: np.ndarray, h: np.ndarray, g: np.ndarray, mode: str):
    L = len(h)
    n = x.shape[-1]
    if mode == "symmetric":
        ext = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(L - 2, L - 1)], mode="symmetric")
        out = (n + L - 1) // 2
    else:
        if n % 2:
            x = np.concatenate([x, x[..., -1:]], axis=-1)
            n += 1
        out = n // 2
        ext = np.concatenate([x, x[..., : L - 2]], axis=-1) if L > 2 else x
        while ext.shape[-1] < 2 * out + L - 2:
            ext = np.concatenate([ext, x], axis=-1)
    # windows[..., i, k] = ext[2i + k]
    windows = np.lib.stride_tricks.sliding_window_view(ext, L, axis=-1)[..., : 2 * out : 2, :]
    return windows @ h, windows @ g


def _synthesis(a: np.ndarray, d: np.ndarray, h: np.ndarray, g: np.ndarray, n: int, mode: str):
    L = len(h)
    m = a.shape[-1]
    # full[..., 2i + k] += a[i] h[k] + d[i] g[k]
    contrib = a[..., :, None] * h + d[..., :, None] * g
    full = np.zeros(a.shape[:-1] + (2 * m + L - 2,))
    for k in range(L):
        full[..., k : k + 2 * m : 2] += contrib[..., k]
    if mode == "symmetric":
        return full[..., L - 2 : L - 2 + n]
    period = 2 * m
    out = full[..., :period].copy()
    tail = full[..., period:]
    for start in range(0, tail.shape[-1], period):
        chunk = tail[..., start : start + period]
        out[..., : chunk.shape[-1]] += chunk
    return out[..., :n]


def dwt_decompose(signal, spec: WaveletSpec = WaveletSpec()) -> WaveletCoeffs:
    """Multilevel decomposition of a 1D signal (or of each row of a 2D array)."""
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[-1]
    _check_length(n, spec)
    h, g = daubechies_filters(spec.order)
    details = []
    approx = x
    for _ in range(spec.levels):
        approx, d = _analysis(approx, h, g, spec.mode)
        details.append(d)
    return WaveletCoeffs(approx, tuple(reversed(details)), spec, n)


def dwt_reconstruct(coeffs: WaveletCoeffs) -> np.ndarray:
    spec = coeffs.spec
    if len(coeffs.details) != spec.levels:
        raise ValueError(f"expected {spec.levels} detail bands, got {len(coeffs.details)}")
    lengths = band_lengths(coeffs.original_length, spec)
    expected = lengths[:0:-1]
    got = [coeffs.approx.shape[-1]] + [d.shape[-1] for d in coeffs.details]
    if got[0] != expected[0] or got[1:] != expected:
        raise ValueError(f"inconsistent band lengths {got} for original length {coeffs.original_length}")
    h, g = daubechies_filters(spec.order)
    approx = np.asarray(coeffs.approx, dtype=np.float64)
    for d, n in zip(coeffs.details, lengths[-2::-1]):
        approx = _synthesis(approx, np.asarray(d, dtype=np.float64), h, g, n, spec.mode)
    return approx


def denoise(signal, spec: WaveletSpec = WaveletSpec(), zero_levels: Iterable[int] = (1, 2)) -> np.ndarray:
    """Zero whole detail bands and reconstruct.

    With the defaults this is db4, four levels, CD1 and CD2 removed.
    """
    zero_levels = set(zero_levels)
    bad = sorted(lv for lv in zero_levels if not 1 <= lv <= spec.levels)
    if bad:
        raise ValueError(f"zero_levels {bad} outside 1..{spec.levels}")
    coeffs = dwt_decompose(signal, spec)
    return dwt_reconstruct(coeffs.replace_details(zero_levels))
