"""Snapshot synthesis: DOA sampling, symbol generation, path losses, noise.

The received matrix is ``Y = A(theta) diag(sqrt(p)) S + N`` with per-entry
circular complex Gaussian noise of variance ``eta = 10**(-snr_db/10)``;
powers are rescaled to unit mean so the SNR definition and the noiseless
covariance ``A diag(p) A^H`` stay mutually consistent.

Also home of the SNAPDOA1 dataset file format (binary, little-endian):
magic ``SNAPDOA1``; header ``u32 m, u32 t, u32 k_max, u32 record_count,
u8 modulation``; per record ``u16 k``, ``k * f64`` sorted DOAs (rad),
``k * f64`` powers, then ``m*t`` complex snapshot entries as interleaved
``f32`` (re, im) pairs, column-major by snapshot.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import ArrayGeometry, response_matrix

THETA_MIN = np.pi / 6
THETA_MAX = 5 * np.pi / 6
DELTA_MIN = np.pi / 60

MODULATIONS = ("gaussian", "qpsk", "qam16", "mixed")
_QAM16_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(10.0)
_QPSK_POINTS = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)

_MAGIC = b"SNAPDOA1"


def derive_seed(master_seed: int, *path: int) -> int:
    """Stable 64-bit child seed for record/trial ``path`` under a master seed.

    Output depends only on the integers, not on scheduling, so parallel and
    serial generation agree.
    """
    ss = np.random.SeedSequence([int(master_seed)] + [int(p) for p in path])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SourceConfig:
    """Ground truth for one realization: angles, powers, symbol statistics."""

    thetas: tuple[float, ...]  # sorted ascending, radians
    powers: tuple[float, ...]  # unit mean (or all zero for noise-only runs)
    modulation: str = "gaussian"
    # Coherent multipath: within each group every non-leader's symbol stream
    # is alpha times the leader's (group[0]).  Indices are 1-based.
    coherence_groups: tuple[tuple[int, ...], ...] = ()
    coherence_alphas: tuple[tuple[complex, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "thetas", tuple(float(t) for t in self.thetas))
        object.__setattr__(self, "powers", tuple(float(p) for p in self.powers))
        if len(self.thetas) != len(self.powers) or not self.thetas:
            raise ValueError("thetas and powers must be equal-length and nonempty")
        if any(b < a for a, b in zip(self.thetas, self.thetas[1:])):
            raise ValueError("thetas must be sorted ascending")
        if any(not 0.0 <= t <= np.pi for t in self.thetas):
            raise ValueError("thetas must lie in [0, pi]")
        p = np.asarray(self.powers)
        if np.any(p < 0):
            raise ValueError("powers must be nonnegative")
        if np.any(p > 0):
            if abs(p.mean() - 1.0) > 1e-12:
                raise ValueError("powers must have unit mean")
            pmin = p.min()
            if pmin == 0 or p.max() / pmin > 10 + 1e-9:
                raise ValueError("power ratio max/min must not exceed 10")
        if self.modulation not in MODULATIONS:
            raise ValueError(f"unknown modulation {self.modulation!r}")
        _validate_coherence(self.k, self.coherence_groups, self.coherence_alphas)

    @property
    def k(self) -> int:
        return len(self.thetas)


def _validate_coherence(k, groups, alphas):
    if len(groups) != len(alphas):
        raise ValueError("coherence groups and alphas must pair up")
    seen = set()
    for members, a in zip(groups, alphas):
        if len(a) != len(members) - 1:
            raise ValueError("need one alpha per non-leader group member")
        for i in members:
            if not 1 <= i <= k:
                raise ValueError(f"coherence index {i} outside 1..{k}")
            if i in seen:
                raise ValueError(f"source {i} appears in two coherence groups")
            seen.add(i)
        for alpha in a:
            alpha = complex(alpha)
            if alpha == 0 or not np.isfinite(alpha.real) or not np.isfinite(alpha.imag):
                raise ValueError("coherence alpha must be finite and nonzero")


@dataclass
class SnapshotBatch:
    """One batch of received snapshots plus the truth that generated it."""

    y: np.ndarray  # complex, m x t
    t: int
    snr_db: float
    noise_power: float
    truth: SourceConfig
    seed: int

    def __post_init__(self):
        if self.y.shape[1] != self.t:
            raise ValueError("snapshot count disagrees with matrix width")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("snapshot matrix contains non-finite entries")


def sample_doas(k: int, theta_min: float, theta_max: float, delta_min: float,
                rng: np.random.Generator) -> np.ndarray:
    """Poisson-disk (dart throwing) draw of ``k`` sorted angles with all
    pairwise gaps >= ``delta_min``.

    Restarts after 1e4 consecutive rejections; fails after 100 restarts.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if (k - 1) * delta_min > theta_max - theta_min:
        raise ValueError(
            f"cannot place {k} angles with separation {delta_min} in "
            f"[{theta_min}, {theta_max}]")
    for _ in range(100):
        accepted: list[float] = []
        rejections = 0
        while len(accepted) < k and rejections < 10_000:
            cand = rng.uniform(theta_min, theta_max)
            if all(abs(cand - a) >= delta_min for a in accepted):
                accepted.append(cand)
                rejections = 0
            else:
                rejections += 1
        if len(accepted) == k:
            return np.sort(np.asarray(accepted))
    raise ValueError("Poisson-disk sampling failed; separation too tight")


def gen_symbols(modulation: str, k: int, t: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. unit-average-power source symbols, one row per source."""
    if k < 1 or t < 1:
        raise ValueError("k and t must be >= 1")
    if modulation == "gaussian":
        return (rng.standard_normal((k, t)) + 1j * rng.standard_normal((k, t))) / np.sqrt(2.0)
    if modulation == "qpsk":
        return _QPSK_POINTS[rng.integers(0, 4, size=(k, t))]
    if modulation == "qam16":
        re = _QAM16_LEVELS[rng.integers(0, 4, size=(k, t))]
        im = _QAM16_LEVELS[rng.integers(0, 4, size=(k, t))]
        return re + 1j * im
    if modulation == "mixed":
        # Per-symbol fair coin: 1 -> QPSK, 0 -> 16QAM.
        mask = rng.integers(0, 2, size=(k, t)).astype(bool)
        qpsk = _QPSK_POINTS[rng.integers(0, 4, size=(k, t))]
        re = _QAM16_LEVELS[rng.integers(0, 4, size=(k, t))]
        im = _QAM16_LEVELS[rng.integers(0, 4, size=(k, t))]
        return np.where(mask, qpsk, re + 1j * im)
    raise ValueError(f"unknown modulation {modulation!r}")


def gen_powers(k: int, rng: np.random.Generator, ratio_max: float = 10.0) -> np.ndarray:
    """Random per-source powers with unit mean and max/min <= ratio_max.

    Preliminary draws are uniform on [1, ratio_max] and then rescaled by
    ``k / sum``; rescaling preserves ratios, so the bound is automatic.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if ratio_max < 1:
        raise ValueError("ratio_max must be >= 1")
    raw = rng.uniform(1.0, ratio_max, size=k)
    return k * raw / raw.sum()


def apply_coherence(symbols: np.ndarray, groups, alphas) -> np.ndarray:
    """Replace each non-leader row by alpha times its group leader's row."""
    _validate_coherence(symbols.shape[0], tuple(tuple(g) for g in groups),
                        tuple(tuple(a) for a in alphas))
    out = symbols.copy()
    for members, a in zip(groups, alphas):
        leader = members[0] - 1
        for idx, alpha in zip(members[1:], a):
            out[idx - 1] = complex(alpha) * symbols[leader]
    return out


def synthesize(geom: ArrayGeometry, config: SourceConfig, t: int, snr_db: float,
               seed: int) -> SnapshotBatch:
    """Generate ``Y = A diag(sqrt(p)) S + N`` for ``t`` snapshots.

    Bit-reproducible from (geom, config, t, snr_db, seed); the draw order is
    symbols, then noise.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    rng = np.random.default_rng(seed)
    s = gen_symbols(config.modulation, config.k, t, rng)
    if config.coherence_groups:
        s = apply_coherence(s, config.coherence_groups, config.coherence_alphas)
    a = response_matrix(geom, config.thetas)
    eta = 10.0 ** (-snr_db / 10.0)
    noise = np.sqrt(eta / 2.0) * (
        rng.standard_normal((geom.m, t)) + 1j * rng.standard_normal((geom.m, t)))
    y = (a * np.sqrt(np.asarray(config.powers))) @ s + noise
    return SnapshotBatch(y=y, t=t, snr_db=float(snr_db), noise_power=eta,
                         truth=config, seed=int(seed))


def random_record(geom: ArrayGeometry, k: int, t: int, modulation: str,
                  snr_db: float, seed: int,
                  theta_min: float = THETA_MIN, theta_max: float = THETA_MAX,
                  delta_min: float = DELTA_MIN,
                  coherence_groups=(), coherence_alphas=()) -> SnapshotBatch:
    """One fully random realization: draw DOAs and powers, then synthesize.

    Truth draws and snapshot draws use independent child seeds so the batch's
    stored seed alone reproduces the snapshots given the truth.
    """
    cfg_rng = np.random.default_rng(derive_seed(seed, 0))
    thetas = sample_doas(k, theta_min, theta_max, delta_min, cfg_rng)
    powers = gen_powers(k, cfg_rng)
    config = SourceConfig(thetas=tuple(thetas), powers=tuple(powers),
                          modulation=modulation,
                          coherence_groups=tuple(tuple(g) for g in coherence_groups),
                          coherence_alphas=tuple(tuple(a) for a in coherence_alphas))
    return synthesize(geom, config, t, snr_db, derive_seed(seed, 1))


# --------------------------------------------------------------------------
# SNAPDOA1 dataset files
# --------------------------------------------------------------------------

_MOD_CODES = {name: i for i, name in enumerate(MODULATIONS)}
_MOD_NAMES = {i: name for name, i in _MOD_CODES.items()}


@dataclass
class Dataset:
    """In-memory view of a SNAPDOA1 file; angles/powers zero-padded to k_max."""

    m: int
    t: int
    k_max: int
    modulation: str
    k: np.ndarray       # (records,) uint16
    doas: np.ndarray    # (records, k_max) float64, sorted then zero-padded
    powers: np.ndarray  # (records, k_max) float64
    y: np.ndarray       # (records, m, t) complex64

    @property
    def records(self) -> int:
        return len(self.k)


def write_dataset(path, dataset: Dataset) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIIB", dataset.m, dataset.t, dataset.k_max,
                             dataset.records, _MOD_CODES[dataset.modulation]))
        for i in range(dataset.records):
            k = int(dataset.k[i])
            fh.write(struct.pack("<H", k))
            fh.write(dataset.doas[i, :k].astype("<f8").tobytes())
            fh.write(dataset.powers[i, :k].astype("<f8").tobytes())
            fh.write(_pack_snapshots(dataset.y[i]))


def _pack_snapshots(y: np.ndarray) -> bytes:
    flat = np.asarray(y, dtype=np.complex64).flatten(order="F")
    inter = np.empty(2 * flat.size, dtype="<f4")
    inter[0::2] = flat.real
    inter[1::2] = flat.imag
    return inter.tobytes()


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"not a SNAPDOA1 file: bad magic {magic!r}")
        m, t, k_max, count, mod_code = struct.unpack("<IIIIB", fh.read(17))
        if mod_code not in _MOD_NAMES:
            raise ValueError(f"unknown modulation code {mod_code}")
        ks = np.zeros(count, dtype=np.uint16)
        doas = np.zeros((count, k_max))
        powers = np.zeros((count, k_max))
        y = np.zeros((count, m, t), dtype=np.complex64)
        for i in range(count):
            (k,) = struct.unpack("<H", fh.read(2))
            if k > k_max:
                raise ValueError(f"record {i} has k={k} > k_max={k_max}")
            ks[i] = k
            doas[i, :k] = np.frombuffer(fh.read(8 * k), dtype="<f8")
            powers[i, :k] = np.frombuffer(fh.read(8 * k), dtype="<f8")
            inter = np.frombuffer(fh.read(8 * m * t), dtype="<f4")
            y[i] = (inter[0::2] + 1j * inter[1::2]).reshape((m, t), order="F")
        if fh.read(1):
            raise ValueError("trailing bytes after last record")
    return Dataset(m=m, t=t, k_max=k_max, modulation=_MOD_NAMES[mod_code],
                   k=ks, doas=doas, powers=powers, y=y)


def read_dataset_header(path) -> dict:
    """Header fields only, for quick inspection."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"not a SNAPDOA1 file: bad magic {magic!r}")
        m, t, k_max, count, mod_code = struct.unpack("<IIIIB", fh.read(17))
    return {"m": m, "t": t, "k_max": k_max, "records": count,
            "modulation": _MOD_NAMES.get(mod_code, f"code{mod_code}")}


def generate_dataset(geom: ArrayGeometry, k_list: Sequence[int], records: int,
                     t: int, modulation: str, snr_db_range: tuple[float, float],
                     k_max: int, master_seed: int,
                     coherence_groups=(), coherence_alphas=(),
                     theta_min: float = THETA_MIN, theta_max: float = THETA_MAX,
                     delta_min: float = DELTA_MIN) -> Dataset:
    """Build a dataset of ``records`` random realizations.

    Source counts cycle round-robin through ``k_list`` (equal per-K counts
    whenever ``records`` divides evenly); each record's SNR is uniform over
    ``snr_db_range``.  Record i depends only on (master_seed, i).
    """
    if max(k_list) > k_max:
        raise ValueError("k_list exceeds k_max")
    ks = np.zeros(records, dtype=np.uint16)
    doas = np.zeros((records, k_max))
    powers = np.zeros((records, k_max))
    y = np.zeros((records, geom.m, t), dtype=np.complex64)
    lo, hi = snr_db_range
    for i in range(records):
        k = int(k_list[i % len(k_list)])
        snr_rng = np.random.default_rng(derive_seed(master_seed, i, 2))
        snr = lo if lo == hi else snr_rng.uniform(lo, hi)
        # Coherence groups apply only to records large enough to contain them.
        groups = coherence_groups if _coherence_fits(coherence_groups, k) else ()
        alphas = coherence_alphas if groups else ()
        batch = random_record(geom, k, t, modulation, snr,
                              derive_seed(master_seed, i),
                              theta_min, theta_max, delta_min,
                              groups, alphas)
        ks[i] = k
        doas[i, :k] = batch.truth.thetas
        powers[i, :k] = batch.truth.powers
        y[i] = batch.y.astype(np.complex64)
    return Dataset(m=geom.m, t=t, k_max=k_max, modulation=modulation,
                   k=ks, doas=doas, powers=powers, y=y)


def _coherence_fits(groups, k):
    return bool(groups) and all(i <= k for g in groups for i in g)
