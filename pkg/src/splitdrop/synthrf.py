"""Synthetic chirp-burst dataset with per-transmitter hardware fingerprints.

Each transmitter gets a fixed impairment profile (IQ imbalance, carrier
frequency offset, DC offset, envelope time constants, third-order
compression) drawn once from configured ranges. Every signal is the same
chirp packet shaped by that profile, with a fresh carrier phase and AWGN
realization; a record keeps 500 complex samples from the packet start
(covering the ramp-up) and 500 from the end (covering the ramp-down).

Known transmitters are split into train/test records; unknown transmitters
and pure-noise "random" records only ever appear in the test split.

On disk: ``manifest.json``, ``train.iqf32``/``test.iqf32`` (interleaved
little-endian float32 I,Q), and ``labels.csv`` (split, index, label, tag,
snr). Generation is bit-reproducible from the manifest seed.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .rngutil import derive_rng

RECORD_LEN = 1000
_HALF = RECORD_LEN // 2

KNOWN_TAG = "known"
UNKNOWN_TAG = "unknown"
RANDOM_TAG = "random"
RANDOM_LABEL = -1


@dataclass(frozen=True)
class ImpairmentRanges:
    """Half-widths / bounds for the per-transmitter impairment draws."""

    gain_db: float = 1.0
    phase_deg: float = 5.0
    cfo_hz: float = 2000.0
    dc_mag: float = 0.02
    tau_min: float = 5.0
    tau_max: float = 50.0
    nonlin_max: float = 0.1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ImpairmentRanges":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class TransmitterProfile:
    """One transmitter's hardware fingerprint."""

    tx_id: int
    gain_db: float
    phase_deg: float
    cfo_hz: float
    dc_offset: complex
    ramp_up_tau: float
    ramp_down_tau: float
    nonlin: float


@dataclass(frozen=True)
class SignalRecord:
    """1000 complex IQ samples plus label and split tag."""

    iq: np.ndarray
    label: int
    tag: str
    snr_db: float

    def __post_init__(self):
        iq = np.asarray(self.iq, dtype=np.complex64)
        if iq.shape != (RECORD_LEN,):
            raise ValueError(f"record must hold exactly {RECORD_LEN} samples")
        object.__setattr__(self, "iq", iq)


@dataclass(frozen=True)
class DatasetManifest:
    """Everything needed to regenerate the dataset bit-for-bit."""

    n_known: int = 44
    n_unknown: int = 4
    signals_per_tx: int = 1000
    snr_db: float = 20.0
    oversample: int = 4
    seed: int = 0
    n_random: int = 1000
    train_fraction: float = 0.8
    sym_len: int = 256
    n_symbols: int = 8
    random_phase: bool = True
    bandwidth_hz: float = 1e6
    carrier_hz: float = 902.3e6
    ranges: ImpairmentRanges = field(default_factory=ImpairmentRanges)

    def __post_init__(self):
        if self.n_known < 1 or self.n_unknown < 0 or self.signals_per_tx < 1:
            raise ValueError("transmitter/signal counts must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly in (0, 1)")
        if self.sym_len * self.n_symbols < RECORD_LEN:
            raise ValueError("packet shorter than one record")

    @property
    def packet_len(self) -> int:
        return self.sym_len * self.n_symbols

    @property
    def sample_rate_hz(self) -> float:
        return self.bandwidth_hz * self.oversample

    @property
    def known_ids(self) -> List[int]:
        return list(range(self.n_known))

    @property
    def unknown_ids(self) -> List[int]:
        return list(range(self.n_known, self.n_known + self.n_unknown))

    @property
    def n_train_per_tx(self) -> int:
        return int(round(self.signals_per_tx * self.train_fraction))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ranges"] = self.ranges.to_dict()
        d["known_ids"] = self.known_ids
        d["unknown_ids"] = self.unknown_ids
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        kwargs = {f.name: d[f.name] for f in dataclasses.fields(cls) if f.name in d}
        kwargs["ranges"] = ImpairmentRanges.from_dict(d.get("ranges", {}))
        return cls(**kwargs)


def draw_profiles(manifest: DatasetManifest) -> List[TransmitterProfile]:
    """Impairment profiles for all known-then-unknown transmitters.

    Redraws on the (measure-zero) event that two profiles come out closer
    than the draw resolution in every parameter.
    """
    r = manifest.ranges
    rng = derive_rng(manifest.seed, "profiles")
    profiles: List[TransmitterProfile] = []
    for tx_id in range(manifest.n_known + manifest.n_unknown):
        while True:
            dc_mag = rng.uniform(0.0, r.dc_mag)
            dc_phase = rng.uniform(0.0, 2 * math.pi)
            cand = TransmitterProfile(
                tx_id=tx_id,
                gain_db=rng.uniform(-r.gain_db, r.gain_db),
                phase_deg=rng.uniform(-r.phase_deg, r.phase_deg),
                cfo_hz=rng.uniform(-r.cfo_hz, r.cfo_hz),
                dc_offset=complex(dc_mag * math.cos(dc_phase), dc_mag * math.sin(dc_phase)),
                ramp_up_tau=rng.uniform(r.tau_min, r.tau_max),
                ramp_down_tau=rng.uniform(r.tau_min, r.tau_max),
                nonlin=rng.uniform(0.0, r.nonlin_max),
            )
            if all(_profiles_differ(cand, p) for p in profiles):
                profiles.append(cand)
                break
    return profiles


def _profiles_differ(a: TransmitterProfile, b: TransmitterProfile, rtol: float = 1e-9) -> bool:
    pairs = [
        (a.gain_db, b.gain_db), (a.phase_deg, b.phase_deg), (a.cfo_hz, b.cfo_hz),
        (a.ramp_up_tau, b.ramp_up_tau), (a.ramp_down_tau, b.ramp_down_tau),
        (a.nonlin, b.nonlin), (abs(a.dc_offset - b.dc_offset), 0.0),
    ]
    return any(abs(x - y) > rtol * max(1.0, abs(x), abs(y)) for x, y in pairs)


def _chirp_packet(manifest: DatasetManifest) -> np.ndarray:
    """Unit-amplitude repeated up-chirps sweeping the channel bandwidth."""
    n = manifest.packet_len
    idx = np.arange(manifest.sym_len)
    bw_norm = 1.0 / manifest.oversample  # cycles per sample
    freq = bw_norm * (idx / manifest.sym_len - 0.5)
    phase_sym = 2 * np.pi * np.cumsum(freq)
    phase = np.tile(phase_sym, manifest.n_symbols)[:n]
    return np.exp(1j * phase)


def _envelope(manifest: DatasetManifest, profile: TransmitterProfile) -> np.ndarray:
    n = np.arange(manifest.packet_len, dtype=np.float64)
    up = 1.0 - np.exp(-(n + 1.0) / profile.ramp_up_tau)
    down = 1.0 - np.exp(-(manifest.packet_len - n) / profile.ramp_down_tau)
    return up * down


def _extract(packet: np.ndarray) -> np.ndarray:
    return np.concatenate([packet[:_HALF], packet[-_HALF:]])


def record_steady_mask(manifest: DatasetManifest, profile: TransmitterProfile,
                       threshold: float = 0.99) -> np.ndarray:
    """Boolean mask over the 1000 record samples where the envelope is steady."""
    return _extract(_envelope(manifest, profile)) >= threshold


def synth_clean_record(manifest: DatasetManifest, profile: TransmitterProfile,
                       phase0: float = 0.0) -> np.ndarray:
    """Noise-free record: chirp packet shaped by the profile's impairments."""
    x = _chirp_packet(manifest) * _envelope(manifest, profile)
    x = x * (1.0 - profile.nonlin * np.abs(x) ** 2)
    g = 10.0 ** (profile.gain_db / 20.0)
    rot = g * np.exp(1j * math.radians(profile.phase_deg))
    a = (1.0 + rot) / 2.0
    b = (1.0 - rot) / 2.0
    x = a * x + b * np.conj(x)
    n = np.arange(manifest.packet_len)
    x = x * np.exp(1j * (2 * np.pi * profile.cfo_hz / manifest.sample_rate_hz * n + phase0))
    x = x + profile.dc_offset
    return _extract(x).astype(np.complex64)


def add_awgn(iq: np.ndarray, snr_db: float, steady: np.ndarray,
             rng: np.random.Generator) -> np.ndarray:
    """Add complex white noise scaled against the steady-region signal power."""
    if math.isinf(snr_db):
        return iq.astype(np.complex64)
    p_sig = float(np.mean(np.abs(iq[steady].astype(np.complex128)) ** 2))
    p_noise = p_sig / 10.0 ** (snr_db / 10.0)
    sigma = math.sqrt(p_noise / 2.0)
    noise = rng.normal(0.0, sigma, size=(iq.size, 2))
    return (iq + (noise[:, 0] + 1j * noise[:, 1])).astype(np.complex64)


def random_record(rng: np.random.Generator, length: int = RECORD_LEN) -> np.ndarray:
    """Unit-power circular complex Gaussian noise record."""
    z = rng.normal(0.0, math.sqrt(0.5), size=(length, 2))
    return (z[:, 0] + 1j * z[:, 1]).astype(np.complex64)


def synth_record(manifest: DatasetManifest, profile: TransmitterProfile,
                 signal_index: int) -> np.ndarray:
    """One noisy record for (profile, signal index), fully seed-determined."""
    if manifest.random_phase:
        phase0 = float(derive_rng(manifest.seed, "phase", profile.tx_id, signal_index)
                       .uniform(0.0, 2 * math.pi))
    else:
        phase0 = 0.0
    clean = synth_clean_record(manifest, profile, phase0)
    steady = record_steady_mask(manifest, profile)
    rng = derive_rng(manifest.seed, "noise", profile.tx_id, signal_index)
    return add_awgn(clean, manifest.snr_db, steady, rng)


def augment_shift(record, max_shift: int, seed: int = 0,
                  rng: Optional[np.random.Generator] = None):
    """Circularly shift the IQ vector by a uniform integer in [-max_shift, max_shift].

    Accepts a SignalRecord or a bare complex array and returns the same type;
    length and energy are invariant.
    """
    if max_shift >= RECORD_LEN:
        raise ValueError("max_shift must be below the record length")
    if rng is None:
        rng = derive_rng(seed, "shift")
    s = int(rng.integers(-max_shift, max_shift + 1)) if max_shift > 0 else 0
    if isinstance(record, SignalRecord):
        return dataclasses.replace(record, iq=np.roll(record.iq, s))
    return np.roll(record, s)


@dataclass
class Dataset:
    """In-memory dataset: manifest plus per-split stacked records."""

    manifest: DatasetManifest
    train_iq: np.ndarray
    train_labels: np.ndarray
    test_iq: np.ndarray
    test_labels: np.ndarray
    test_tags: List[str]

    @property
    def class_of_label(self) -> dict:
        return {tx: i for i, tx in enumerate(self.manifest.known_ids)}

    def train_classes(self) -> np.ndarray:
        lut = self.class_of_label
        return np.array([lut[int(t)] for t in self.train_labels], dtype=np.int64)


def generate(manifest: DatasetManifest) -> Dataset:
    """Deterministically generate all records for the manifest."""
    profiles = draw_profiles(manifest)
    n_train_per = manifest.n_train_per_tx
    train_iq, train_labels = [], []
    test_iq, test_labels, test_tags = [], [], []

    for tx_id in manifest.known_ids:
        prof = profiles[tx_id]
        for i in range(manifest.signals_per_tx):
            rec = synth_record(manifest, prof, i)
            if i < n_train_per:
                train_iq.append(rec)
                train_labels.append(tx_id)
            else:
                test_iq.append(rec)
                test_labels.append(tx_id)
                test_tags.append(KNOWN_TAG)
    for tx_id in manifest.unknown_ids:
        prof = profiles[tx_id]
        for i in range(manifest.signals_per_tx):
            test_iq.append(synth_record(manifest, prof, i))
            test_labels.append(tx_id)
            test_tags.append(UNKNOWN_TAG)
    for i in range(manifest.n_random):
        test_iq.append(random_record(derive_rng(manifest.seed, "random", i)))
        test_labels.append(RANDOM_LABEL)
        test_tags.append(RANDOM_TAG)

    return Dataset(
        manifest=manifest,
        train_iq=np.stack(train_iq) if train_iq else np.empty((0, RECORD_LEN), np.complex64),
        train_labels=np.array(train_labels, dtype=np.int64),
        test_iq=np.stack(test_iq) if test_iq else np.empty((0, RECORD_LEN), np.complex64),
        test_labels=np.array(test_labels, dtype=np.int64),
        test_tags=test_tags,
    )


def _write_iqf32(path: Path, iq: np.ndarray):
    inter = np.empty((iq.shape[0], RECORD_LEN, 2), dtype="<f4")
    inter[:, :, 0] = iq.real
    inter[:, :, 1] = iq.imag
    inter.tofile(path)


def _read_iqf32(path: Path) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % (2 * RECORD_LEN) != 0:
        raise ValueError(f"{path}: size is not a whole number of records")
    raw = raw.reshape(-1, RECORD_LEN, 2)
    out = np.empty(raw.shape[:2], dtype=np.complex64)
    out.real = raw[:, :, 0]
    out.imag = raw[:, :, 1]
    return out


def write_dataset(ds: Dataset, out_dir) -> Path:
    """Write manifest.json, train/test.iqf32, and labels.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.json", "w") as f:
        json.dump(ds.manifest.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    _write_iqf32(out / "train.iqf32", ds.train_iq)
    _write_iqf32(out / "test.iqf32", ds.test_iq)
    with open(out / "labels.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["split", "index", "label", "tag", "snr_db"])
        for i, label in enumerate(ds.train_labels):
            w.writerow(["train", i, int(label), KNOWN_TAG, f"{ds.manifest.snr_db:g}"])
        for i, (label, tag) in enumerate(zip(ds.test_labels, ds.test_tags)):
            snr = "" if tag == RANDOM_TAG else f"{ds.manifest.snr_db:g}"
            w.writerow(["test", i, int(label), tag, snr])
    return out


def load_dataset(path) -> Dataset:
    """Read a dataset directory written by write_dataset."""
    root = Path(path)
    with open(root / "manifest.json") as f:
        manifest = DatasetManifest.from_dict(json.load(f))
    train_iq = _read_iqf32(root / "train.iqf32")
    test_iq = _read_iqf32(root / "test.iqf32")
    train_labels, test_labels, test_tags = [], [], []
    with open(root / "labels.csv", newline="") as f:
        for row in csv.DictReader(f):
            if row["split"] == "train":
                train_labels.append(int(row["label"]))
            else:
                test_labels.append(int(row["label"]))
                test_tags.append(row["tag"])
    if len(train_labels) != train_iq.shape[0] or len(test_labels) != test_iq.shape[0]:
        raise ValueError("labels.csv does not match the iqf32 record counts")
    return Dataset(
        manifest=manifest,
        train_iq=train_iq,
        train_labels=np.array(train_labels, dtype=np.int64),
        test_iq=test_iq,
        test_labels=np.array(test_labels, dtype=np.int64),
        test_tags=test_tags,
    )
