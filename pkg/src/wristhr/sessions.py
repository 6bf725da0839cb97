"""On-disk container for synchronized physiological sessions.

One directory per session:

    manifest.txt     key = value lines; channel lines use
                     ``channel.<name> = fs:<Hz>,count:<n>,dtype:f32le,units:<text>``
    <name>.f32       raw little-endian float32 samples, no header
    hr.csv           ``t_s,hr_bpm`` ground-truth heart-rate track
    activity.csv     ``start_s,end_s,label`` activity intervals

The format is deliberately trivial so it can be produced from any language.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import Channel

__all__ = [
    "SessionRecording",
    "SessionManifest",
    "FormatError",
    "CorruptionError",
    "ValidationError",
    "REQUIRED_CHANNELS",
    "FORMAT_VERSION",
    "load_session",
    "write_session",
    "validate_session",
]

REQUIRED_CHANNELS = ("ppg", "acc_x", "acc_y", "acc_z")
ACC_CHANNELS = ("acc_x", "acc_y", "acc_z")
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Manifest or directory layout does not match the container format."""


class CorruptionError(ValueError):
    """Payload sizes disagree with the manifest."""


class ValidationError(ValueError):
    """A loaded session violates a type invariant."""


@dataclass
class SessionRecording:
    """Synchronized multi-rate channel set with HR and activity tracks."""

    subject_id: str
    channels: dict[str, Channel]
    hr_track: np.ndarray  # (n, 2) columns: time s, hr BPM
    activity_track: list[tuple[float, float, str]]

    def __post_init__(self):
        self.hr_track = np.asarray(self.hr_track, dtype=np.float64).reshape(-1, 2)

    @property
    def ppg_acc_shift_s(self) -> float:
        """Temporal shift applied to ACC relative to PPG (ACC t0 offset)."""
        return float(self.channels["acc_x"].t0 - self.channels["ppg"].t0)

    def activity_at(self, start_s: float, end_s: float) -> str | None:
        """Label of the interval fully covering [start_s, end_s], else None."""
        for a, b, label in self.activity_track:
            if a <= start_s and end_s <= b:
                return label
        return None


@dataclass
class SessionManifest:
    format_version: int
    subject_id: str
    channels: dict[str, dict]  # name -> {fs, count, dtype, units}
    ppg_acc_shift_s: float = 0.0
    extra: dict[str, str] = field(default_factory=dict)


def validate_session(s: SessionRecording) -> list[str]:
    """Check all invariants; returns one violation string per broken rule."""
    violations: list[str] = []
    for name in REQUIRED_CHANNELS:
        if name not in s.channels:
            violations.append(f"channels: required channel '{name}' missing")
    for name, ch in s.channels.items():
        if ch.fs <= 0:
            violations.append(f"channels[{name}].fs: must be positive")
        if not np.all(np.isfinite(ch.samples)):
            violations.append(f"channels[{name}].samples: non-finite values")
    hr = s.hr_track
    if hr.size:
        if np.any(hr[:, 1] <= 0) or np.any(hr[:, 1] > 300):
            violations.append("hr_track: hr values must lie in (0, 300] BPM")
        if np.any(np.diff(hr[:, 0]) < 0):
            violations.append("hr_track: times must be non-decreasing")
    prev_end = -np.inf
    for a, b, label in s.activity_track:
        if b <= a:
            violations.append(f"activity_track: interval ({a}, {b}, {label!r}) has end <= start")
        if a < prev_end:
            violations.append(
                f"activity_track: interval ({a}, {b}, {label!r}) overlaps its predecessor or is unsorted"
            )
        prev_end = max(prev_end, b)
    return violations


def _write_f32(path: Path, samples: np.ndarray) -> None:
    np.asarray(samples, dtype="<f4").tofile(path)


def _read_f32(path: Path) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").astype(np.float64)


def write_session(s: SessionRecording, path: str | Path) -> None:
    """Write a session directory; ``load_session`` round-trips it."""
    violations = validate_session(s)
    if violations:
        raise ValidationError("; ".join(violations))
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    try:
        lines = [
            f"format_version = {FORMAT_VERSION}",
            f"subject_id = {s.subject_id}",
            f"ppg_acc_shift_s = {s.ppg_acc_shift_s!r}",
        ]
        for name in sorted(s.channels):
            ch = s.channels[name]
            units = "sensor"
            lines.append(
                f"channel.{name} = fs:{ch.fs!r},count:{len(ch.samples)},dtype:f32le,units:{units}"
            )
            _write_f32(out / f"{name}.f32", ch.samples)
        (out / "manifest.txt").write_text("\n".join(lines) + "\n")
        with open(out / "hr.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "hr_bpm"])
            for t, hr in s.hr_track:
                w.writerow([f"{t:.6f}", f"{hr:.6f}"])
        with open(out / "activity.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["start_s", "end_s", "label"])
            for a, b, label in s.activity_track:
                w.writerow([f"{a:.6f}", f"{b:.6f}", label])
    except OSError as exc:
        raise OSError(f"failed writing session to {out}: {exc}") from exc


def _parse_manifest(path: Path) -> SessionManifest:
    if not path.exists():
        raise FormatError(f"{path}: manifest.txt not found")
    channels: dict[str, dict] = {}
    fields: dict[str, str] = {}
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{ln}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key.startswith("channel."):
            name = key[len("channel.") :]
            spec: dict = {}
            for part in value.split(","):
                k, _, v = part.partition(":")
                spec[k.strip()] = v.strip()
            try:
                channels[name] = {
                    "fs": float(spec["fs"]),
                    "count": int(spec["count"]),
                    "dtype": spec.get("dtype", "f32le"),
                    "units": spec.get("units", ""),
                }
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{path}:{ln}: bad channel spec {value!r}: {exc}") from exc
            if channels[name]["dtype"] != "f32le":
                raise FormatError(f"{path}:{ln}: unsupported dtype {channels[name]['dtype']!r}")
        else:
            fields[key] = value
    try:
        version = int(fields.pop("format_version"))
    except KeyError:
        raise FormatError(f"{path}: missing format_version") from None
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {version}")
    subject = fields.pop("subject_id", "unknown")
    shift = float(fields.pop("ppg_acc_shift_s", "0.0"))
    return SessionManifest(
        format_version=version,
        subject_id=subject,
        channels=channels,
        ppg_acc_shift_s=shift,
        extra=fields,
    )


def _read_hr_csv(path: Path) -> np.ndarray:
    if not path.exists():
        return np.empty((0, 2))
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and header[:2] != ["t_s", "hr_bpm"]:
            raise FormatError(f"{path}: expected header 't_s,hr_bpm', got {header!r}")
        for row in reader:
            if row:
                rows.append((float(row[0]), float(row[1])))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 2)


def _read_activity_csv(path: Path) -> list[tuple[float, float, str]]:
    if not path.exists():
        return []
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and header[:3] != ["start_s", "end_s", "label"]:
            raise FormatError(f"{path}: expected header 'start_s,end_s,label', got {header!r}")
        for row in reader:
            if row:
                out.append((float(row[0]), float(row[1]), row[2]))
    return out


def load_session(path: str | Path) -> SessionRecording:
    """Load and validate a session directory.

    The manifest's ``ppg_acc_shift_s`` is applied by shifting the ACC
    channels' t0; all other channels start at t0 = 0.
    """
    root = Path(path)
    manifest = _parse_manifest(root / "manifest.txt")
    for name in REQUIRED_CHANNELS:
        if name not in manifest.channels:
            raise FormatError(f"{root}: manifest lists no channel '{name}'")
    channels: dict[str, Channel] = {}
    for name, spec in manifest.channels.items():
        payload = root / f"{name}.f32"
        if not payload.exists():
            raise FormatError(f"{root}: payload {payload.name} missing")
        samples = _read_f32(payload)
        if len(samples) != spec["count"]:
            raise CorruptionError(
                f"{payload}: manifest declares {spec['count']} samples, file holds {len(samples)}"
            )
        t0 = manifest.ppg_acc_shift_s if name in ACC_CHANNELS else 0.0
        channels[name] = Channel(samples=samples, fs=spec["fs"], t0=t0)
    session = SessionRecording(
        subject_id=manifest.subject_id,
        channels=channels,
        hr_track=_read_hr_csv(root / "hr.csv"),
        activity_track=_read_activity_csv(root / "activity.csv"),
    )
    violations = validate_session(session)
    if violations:
        raise ValidationError(f"{root}: " + "; ".join(violations))
    return session
