"""On-disk formats: EVT1 event containers, PPM frames, dataset manifest.

EVT1 layout (little-endian)::

    header  16 bytes: b"EVT1", u16 width, u16 height, u64 duration_us
    record  16 bytes: u16 x, u16 y, u8 polarity (0 -> -1, 1 -> +1), 3 pad, u64 t
"""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Iterable

import numpy as np

from .stream import DualSample, EventStream, FrameImage, Scenario, event_frequency

MAGIC = b"EVT1"
HEADER = np.dtype([("magic", "S4"), ("width", "<u2"), ("height", "<u2"), ("duration", "<u8")])
RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("pad", "V3"), ("t", "<u8")])
assert HEADER.itemsize == 16 and RECORD.itemsize == 16


class EVT1ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def encode_evt1(stream: EventStream) -> bytes:
    if stream.width > 0xFFFF or stream.height > 0xFFFF:
        raise ValueError("resolution does not fit in u16")
    header = np.zeros(1, dtype=HEADER)
    header["magic"] = MAGIC
    header["width"] = stream.width
    header["height"] = stream.height
    header["duration"] = stream.duration_us
    rec = np.zeros(len(stream), dtype=RECORD)
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p > 0
    rec["t"] = stream.t
    return header.tobytes() + rec.tobytes()


def decode_evt1(buf: bytes) -> EventStream:
    if len(buf) < HEADER.itemsize:
        raise EVT1ParseError("truncated header", 0)
    header = np.frombuffer(buf, dtype=HEADER, count=1)[0]
    if header["magic"] != MAGIC:
        raise EVT1ParseError(f"bad magic {bytes(buf[:4])!r}", 0)
    width, height, duration = int(header["width"]), int(header["height"]), int(header["duration"])
    body = len(buf) - HEADER.itemsize
    n, rem = divmod(body, RECORD.itemsize)
    if rem:
        raise EVT1ParseError("truncated record", HEADER.itemsize + n * RECORD.itemsize)
    rec = np.frombuffer(buf, dtype=RECORD, count=n, offset=HEADER.itemsize)

    def offset_of(i):
        return HEADER.itemsize + int(i) * RECORD.itemsize

    bad = np.flatnonzero((rec["x"] >= width) | (rec["y"] >= height))
    if bad.size:
        raise EVT1ParseError("coordinate outside sensor resolution", offset_of(bad[0]))
    bad = np.flatnonzero(rec["p"] > 1)
    if bad.size:
        raise EVT1ParseError(f"invalid polarity byte {rec['p'][bad[0]]}", offset_of(bad[0]))
    t = rec["t"].astype(np.int64)
    bad = np.flatnonzero((rec["t"] >= duration) | (rec["t"] > np.iinfo(np.int64).max))
    if bad.size:
        raise EVT1ParseError("timestamp outside duration", offset_of(bad[0]))
    if n > 1:
        bad = np.flatnonzero(np.diff(t) < 0)
        if bad.size:
            raise EVT1ParseError("events not sorted by timestamp", offset_of(bad[0] + 1))
    p = np.where(rec["p"] == 1, 1, -1).astype(np.int8)
    return EventStream(rec["x"], rec["y"], t, p, width, height, duration, validate=False)


def write_evt1(path, stream: EventStream) -> None:
    Path(path).write_bytes(encode_evt1(stream))


def read_evt1(path) -> EventStream:
    return decode_evt1(Path(path).read_bytes())


def write_ppm(path, pixels: np.ndarray) -> None:
    """Binary P6 pixmap, 8 bits per channel. ``pixels`` is 3 x H x W in [0, 1]."""
    _, h, w = pixels.shape
    img = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img.transpose(1, 2, 0)).tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported")
    img = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return img.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


# -- dataset on disk ---------------------------------------------------------
#
# manifest.txt: one sample per line
#   <relative dir> <label> light=<..> position=<..> subject=<..> split=<..>
# each sample dir holds events.evt1 and frame_<t_us>.ppm files.


def save_sample(sample_dir, sample: DualSample) -> None:
    sample_dir = Path(sample_dir)
    sample_dir.mkdir(parents=True, exist_ok=True)
    write_evt1(sample_dir / "events.evt1", sample.events)
    for f in sample.frames:
        write_ppm(sample_dir / f"frame_{f.t_us:012d}.ppm", f.pixels)


def load_sample(sample_dir, label: int, scenario: Scenario) -> DualSample:
    sample_dir = Path(sample_dir)
    events = read_evt1(sample_dir / "events.evt1")
    frames = []
    for p in sorted(sample_dir.glob("frame_*.ppm")):
        t = int(p.stem.split("_", 1)[1])
        frames.append(FrameImage(read_ppm(p), t))
    return DualSample(events, frames, label, scenario)


def write_manifest(path, entries: Iterable[tuple[str, int, Scenario, str]]) -> None:
    lines = []
    for rel, label, sc, split in entries:
        lines.append(f"{rel} {label} light={sc.light} position={sc.position} subject={sc.subject} split={split}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[tuple[str, int, Scenario, str]]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ValueError(f"{path}:{lineno}: expected '<path> <label> [tags]'")
        tags = dict(p.split("=", 1) for p in parts[2:])
        sc = Scenario(tags.get("light", "bright"), tags.get("position", "front"), int(tags.get("subject", 0)))
        out.append((parts[0], int(parts[1]), sc, tags.get("split", "train")))
    return out


def load_dataset(manifest_path) -> tuple[list[DualSample], list[DualSample]]:
    root = Path(manifest_path).parent
    train, test = [], []
    for rel, label, sc, split in read_manifest(manifest_path):
        (test if split == "test" else train).append(load_sample(root / rel, label, sc))
    return train, test


def write_frequency_csv(path, samples: Iterable[DualSample], class_names: list[str] | None = None) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "class", "light", "position", "freq_kevps"])
        for i, s in enumerate(samples):
            cls = class_names[s.label] if class_names else s.label
            w.writerow([i, cls, s.scenario.light, s.scenario.position, f"{event_frequency(s.events):.6f}"])


def ensure_writable(directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if not os.access(d, os.W_OK):
        raise PermissionError(f"directory not writable: {d}")
    return d
