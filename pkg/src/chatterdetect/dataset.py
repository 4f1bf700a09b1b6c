"""Labeled frame datasets: build, split, persist.

A dataset directory holds two files: a UTF-8 ``manifest`` of key=value
provenance records and a ``frames.bin`` with a fixed 16-byte header
(magic ``CHDS``) followed by one fixed-size record per sample, so the
file size is exactly header + n_samples * (4 * n_lines + 20) bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from . import defaults
from .errors import CorruptDataset, EmptyDataset, IoFailure, MissingClass
from .signal_io import CLASS_ORDER, LabelTrack, MachiningClass, TimeSignal
from .spectral import SpectralConfig, SpectralFrame, extract_frames, frame_lines_valid

MAGIC = b"CHDS"
FORMAT_VERSION = 1
MANIFEST_FILE = "manifest"
FRAMES_FILE = "frames.bin"


class Split(IntEnum):
    TRAIN = 0
    VAL = 1
    TEST = 2
    TEST2_AMBIGUOUS = 3

    @property
    def token(self) -> str:
        return _SPLIT_TOKENS[self]


_SPLIT_TOKENS = {
    Split.TRAIN: "train",
    Split.VAL: "val",
    Split.TEST: "test",
    Split.TEST2_AMBIGUOUS: "test2",
}


def split_from_token(token: str) -> Split:
    for split, tok in _SPLIT_TOKENS.items():
        if tok == token.strip().lower():
            return split
    raise ValueError(f"unknown split {token!r}")


@dataclass(frozen=True, eq=False)
class Sample:
    frame: SpectralFrame
    label: MachiningClass
    source_id: str
    ambiguous: bool

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.frame == other.frame
            and self.label == other.label
            and self.source_id == other.source_id
            and self.ambiguous == other.ambiguous
        )


@dataclass(eq=False)
class LabeledDataset:
    samples: list[Sample]
    splits: list[Split]
    manifest: dict[str, str]
    n_lines: int

    def __post_init__(self):
        if len(self.samples) != len(self.splits):
            raise ValueError("samples and splits must be parallel")

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.n_lines == other.n_lines
            and self.manifest == other.manifest
            and self.splits == other.splits
            and self.samples == other.samples
        )

    def split_indices(self, split: Split) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    def split_arrays(self, split: Split):
        """(lines, labels) arrays for one split: float32 (n, n_lines), int64 (n,)."""
        idx = self.split_indices(split)
        if not idx:
            return (
                np.zeros((0, self.n_lines), dtype=np.float32),
                np.zeros(0, dtype=np.int64),
            )
        x = np.stack([self.samples[i].frame.lines for i in idx])
        y = np.array([int(self.samples[i].label) for i in idx], dtype=np.int64)
        return x, y


def stratified_split(
    labels: np.ndarray,
    ambiguous: np.ndarray,
    split_seed: int,
    test_fraction: float,
    val_fraction: float = defaults.VAL_FRACTION,
) -> np.ndarray:
    """Assign splits per class: ambiguous samples all go to the held-out
    ambiguous test split; the rest are shuffled per class, floor(test_fraction)
    go to Test, then floor(val_fraction) of the remainder to Val, remainder
    to Train."""
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must lie in [0, 1)")
    labels = np.asarray(labels)
    ambiguous = np.asarray(ambiguous, dtype=bool)
    out = np.full(labels.shape, int(Split.TEST2_AMBIGUOUS), dtype=np.int8)
    rng = np.random.default_rng(split_seed)
    for cls in CLASS_ORDER:
        idx = np.flatnonzero((labels == int(cls)) & ~ambiguous)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(np.floor(test_fraction * idx.size))
        n_val = int(np.floor(val_fraction * (idx.size - n_test)))
        out[idx[:n_test]] = int(Split.TEST)
        out[idx[n_test : n_test + n_val]] = int(Split.VAL)
        out[idx[n_test + n_val :]] = int(Split.TRAIN)
    return out


def _count_key(split: Split, cls: MachiningClass) -> str:
    return f"count.{split.token}.{cls.token}"


def build_dataset(
    pairs,
    config: SpectralConfig = SpectralConfig(),
    split_seed: int = 0,
    test_fraction: float = defaults.TEST_FRACTION,
    source_ids=None,
    source_specs=None,
) -> LabeledDataset:
    """Turn (TimeSignal, LabelTrack, ambiguous) triples into a split dataset.

    A frame is kept only when its [t_start, t_start + window) span lies
    fully inside one labeled interval; straddling or unlabeled frames are
    dropped and counted in the manifest.
    """
    pairs = list(pairs)
    if source_ids is None:
        source_ids = [f"signal-{i:04d}" for i in range(len(pairs))]
    if len(source_ids) != len(pairs):
        raise ValueError("source_ids must parallel pairs")

    samples: list[Sample] = []
    dropped = 0
    for (signal, track, ambiguous), source_id in zip(pairs, source_ids):
        window_s = _window_seconds(signal, config)
        for frame in extract_frames(signal, config):
            label = track.label_for_span(frame.t_start_s, frame.t_start_s + window_s)
            if label is None:
                dropped += 1
                continue
            samples.append(Sample(frame, label, source_id, bool(ambiguous)))
    if not samples:
        raise EmptyDataset("no frame fell inside a labeled interval")

    labels = np.array([int(s.label) for s in samples])
    ambiguous_flags = np.array([s.ambiguous for s in samples])
    split_codes = stratified_split(labels, ambiguous_flags, split_seed, test_fraction)
    splits = [Split(int(c)) for c in split_codes]

    present = set(labels[~ambiguous_flags].tolist())
    trained = {int(s.label) for s, sp in zip(samples, splits) if sp is Split.TRAIN}
    if present - trained:
        missing = ", ".join(MachiningClass(c).token for c in sorted(present - trained))
        raise MissingClass(f"no training samples for class(es): {missing}")

    manifest = {
        "format": "chatterdetect-dataset",
        "version": str(FORMAT_VERSION),
        "n_lines": str(config.n_lines),
        "hop_s": repr(config.hop_s),
        "window_s": repr(config.window_s),
        "f_min_hz": repr(config.f_min_hz),
        "f_max_hz": repr(config.f_max_hz),
        "crop_db": repr(config.crop_db),
        "taper": config.taper,
        "split_seed": str(split_seed),
        "test_fraction": repr(test_fraction),
        "dropped_frames": str(dropped),
        "n_samples": str(len(samples)),
    }
    for split in Split:
        for cls in CLASS_ORDER:
            n = sum(
                1
                for s, sp in zip(samples, splits)
                if sp is split and s.label is cls
            )
            manifest[_count_key(split, cls)] = str(n)
    manifest["n_sources"] = str(len(pairs))
    for i, source_id in enumerate(source_ids):
        manifest[f"source.{i}.id"] = source_id
        manifest[f"source.{i}.ambiguous"] = "1" if pairs[i][2] else "0"
        if source_specs is not None and source_specs[i]:
            manifest[f"source.{i}.spec"] = source_specs[i]

    return LabeledDataset(samples, splits, manifest, config.n_lines)


def _window_seconds(signal: TimeSignal, config: SpectralConfig) -> float:
    window_n = int(round(config.window_s * signal.sample_rate_hz))
    return window_n / signal.sample_rate_hz


def class_distribution(ds: LabeledDataset, split: Split) -> dict[MachiningClass, int]:
    counts = {cls: 0 for cls in CLASS_ORDER}
    for sample, s in zip(ds.samples, ds.splits):
        if s == split:
            counts[sample.label] += 1
    return counts


def _record_dtype(n_lines: int) -> np.dtype:
    return np.dtype(
        [
            ("source", "<u4"),
            ("frame_index", "<u4"),
            ("t_start", "<f8"),
            ("label", "u1"),
            ("split", "u1"),
            ("ambiguous", "u1"),
            ("pad", "u1"),
            ("lines", "<f4", (n_lines,)),
        ]
    )


def save_dataset(ds: LabeledDataset, out_dir) -> None:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc

    source_table: list[str] = []
    source_index: dict[str, int] = {}
    for s in ds.samples:
        if s.source_id not in source_index:
            source_index[s.source_id] = len(source_table)
            source_table.append(s.source_id)

    records = np.zeros(len(ds.samples), dtype=_record_dtype(ds.n_lines))
    for i, (sample, split) in enumerate(zip(ds.samples, ds.splits)):
        records[i] = (
            source_index[sample.source_id],
            sample.frame.frame_index,
            sample.frame.t_start_s,
            int(sample.label),
            int(split),
            1 if sample.ambiguous else 0,
            0,
            sample.frame.lines,
        )

    header = struct.pack("<4sIII", MAGIC, FORMAT_VERSION, ds.n_lines, len(ds.samples))
    try:
        (out / FRAMES_FILE).write_bytes(header + records.tobytes())
        manifest_lines = [f"{k}={v}" for k, v in ds.manifest.items()]
        manifest_lines.append(f"frames.sources={'|'.join(source_table)}")
        (out / MANIFEST_FILE).write_text(
            "\n".join(manifest_lines) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {out}: {exc}") from exc


def load_dataset(in_dir) -> LabeledDataset:
    src = Path(in_dir)
    try:
        manifest_text = (src / MANIFEST_FILE).read_text(encoding="utf-8")
        blob = (src / FRAMES_FILE).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read dataset from {src}: {exc}") from exc

    manifest: dict[str, str] = {}
    for line in manifest_text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise CorruptDataset(f"bad manifest line {line!r}")
        key, value = line.split("=", 1)
        manifest[key] = value
    source_table = manifest.pop("frames.sources", "").split("|")

    if len(blob) < 16:
        raise CorruptDataset("frames.bin shorter than its header")
    magic, version, n_lines, n_samples = struct.unpack_from("<4sIII", blob)
    if magic != MAGIC:
        raise CorruptDataset(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptDataset(f"unsupported version {version}")
    dtype = _record_dtype(n_lines)
    expected = 16 + n_samples * dtype.itemsize
    if len(blob) != expected:
        raise CorruptDataset(
            f"frames.bin is {len(blob)} bytes, expected exactly {expected}"
        )
    try:
        crop_db = float(manifest["crop_db"])
    except (KeyError, ValueError):
        raise CorruptDataset("manifest is missing a usable crop_db") from None

    records = np.frombuffer(blob, dtype=dtype, offset=16)
    samples: list[Sample] = []
    splits: list[Split] = []
    for rec in records:
        if rec["label"] > 2 or rec["split"] > 3:
            raise CorruptDataset("label or split code out of range")
        split = Split(int(rec["split"]))
        if bool(rec["ambiguous"]) != (split is Split.TEST2_AMBIGUOUS):
            raise CorruptDataset("ambiguous flag inconsistent with split assignment")
        lines = np.array(rec["lines"], dtype=np.float32)
        if not frame_lines_valid(lines, crop_db):
            raise CorruptDataset("frame violates the renormalization invariants")
        source = int(rec["source"])
        if source >= len(source_table):
            raise CorruptDataset("source index out of range")
        samples.append(
            Sample(
                SpectralFrame(int(rec["frame_index"]), float(rec["t_start"]), lines),
                MachiningClass(int(rec["label"])),
                source_table[source],
                bool(rec["ambiguous"]),
            )
        )
        splits.append(split)
    return LabeledDataset(samples, splits, manifest, n_lines)
