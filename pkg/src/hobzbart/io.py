"""CSV ingestion/emission and the binary draw-file format.

Draw file layout (all integers little-endian)::

    b"HOBZ1"                magic
    uint16                  format version
    uint32 + bytes          JSON header (sorted keys, compact)
    uint32                  number of sections
    per section:
        uint16 + bytes      UTF-8 name
        uint8               ndim
        uint64 * ndim       shape
        float64 * prod      row-major little-endian payload

CSV artifacts may start with ``#`` comment lines carrying provenance; the
reader skips them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import DataIOError, ValidationError
from .sampler import Dataset, PosteriorDraws

MAGIC = b"HOBZ1"
FORMAT_VERSION = 1

_CORE_SECTIONS = ("kappa", "f1", "f0", "fb", "test_f1", "test_f0", "test_fb")


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def format_float(v) -> str:
    """Shortest text that parses back to the identical double."""
    return repr(float(v))


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def _open_text(path, mode):
    try:
        return open(path, mode, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot open {path}: {exc.strerror or exc}") from exc


def read_csv_table(path) -> tuple[list[str], list[list[str]]]:
    with _open_text(path, "r") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        reader = csv.reader(lines)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: file is empty (a header row is required)") from None
        rows = [row for row in reader if row]
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise ValidationError(f"{path}: duplicate column names in header")
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ValidationError(f"{path}: data row {i} has {len(row)} fields, header has {len(header)}")
    return header, rows


def _parse_cell(text, path, row, col) -> float:
    s = text.strip()
    if s == "" or s.lower() in ("na", "nan", "null", "none"):
        raise ValidationError(f"{path}: missing value at data row {row}, column {col!r}")
    try:
        v = float(s)
    except ValueError:
        raise ValidationError(f"{path}: non-numeric value {s!r} at data row {row}, column {col!r}") from None
    if not math.isfinite(v):
        raise ValidationError(f"{path}: non-finite value {s!r} at data row {row}, column {col!r}")
    return v


def ingest_csv(path, response: str = "y", arm: str | None = None, exclude=()) -> Dataset:
    """Load a dataset; every column other than the response, arm and ``exclude`` is a covariate.

    Data rows are numbered from 1 in error messages.
    """
    header, rows = read_csv_table(path)
    if response not in header:
        raise ValidationError(f"{path}: response column {response!r} not found in header")
    if arm is not None and arm not in header:
        raise ValidationError(f"{path}: arm column {arm!r} not found in header")
    skip = {response, arm, *exclude}
    cov = [j for j, name in enumerate(header) if name not in skip]
    yj = header.index(response)
    n = len(rows)
    X = np.empty((n, len(cov)))
    y = np.empty(n)
    arms = [] if arm is not None else None
    aj = header.index(arm) if arm is not None else -1
    for i, row in enumerate(rows):
        for k, j in enumerate(cov):
            X[i, k] = _parse_cell(row[j], path, i + 1, header[j])
        v = _parse_cell(row[yj], path, i + 1, response)
        if not 0.0 <= v <= 1.0:
            raise ValidationError(f"{path}: response {row[yj].strip()!r} at data row {i + 1} is outside [0, 1]")
        y[i] = v
        if arms is not None:
            label = row[aj].strip()
            if label == "":
                raise ValidationError(f"{path}: missing arm label at data row {i + 1}")
            arms.append(label)
    arm_arr = None
    if arms is not None:
        try:
            arm_arr = np.array([float(a) for a in arms])
        except ValueError:
            arm_arr = np.array(arms)
    return Dataset(X, y, arm_arr)


def write_csv(path, header, rows, comments=()) -> None:
    with _open_text(path, "w") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_dataset_csv(path, data: Dataset, covariate_names=None, response: str = "y",
                      arm: str = "arm", comments=()) -> None:
    names = list(covariate_names) if covariate_names is not None else [f"x{j + 1}" for j in range(data.p)]
    if len(names) != data.p:
        raise ValidationError("one name per covariate column is required")
    header = names + [response] + ([arm] if data.arm is not None else [])
    rows = []
    for i in range(data.n):
        row = [float(v) for v in data.X[i]] + [float(data.y[i])]
        if data.arm is not None:
            a = data.arm[i]
            row.append(float(a) if isinstance(a, (float, np.floating)) else (int(a) if isinstance(a, (int, np.integer)) else str(a)))
        rows.append(row)
    write_csv(path, header, rows, comments)


# --------------------------------------------------------------------------
# draw files
# --------------------------------------------------------------------------


def _sections(draws: PosteriorDraws):
    for name in _CORE_SECTIONS:
        arr = getattr(draws, name)
        if arr is not None:
            yield name, arr
    for name in sorted(draws.extras):
        yield "extra:" + name, draws.extras[name]


def encode_draws(draws: PosteriorDraws, header: dict | None = None) -> bytes:
    head = {"meta": draws.meta}
    if header:
        head.update(header)
    blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(blob)), blob]
    secs = list(_sections(draws))
    parts.append(struct.pack("<I", len(secs)))
    for name, arr in secs:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_draws(buf: bytes) -> tuple[PosteriorDraws, dict]:
    try:
        if buf[:5] != MAGIC:
            raise ValidationError("not a draw file (bad magic)")
        version, hlen = struct.unpack_from("<HI", buf, 5)
        if version != FORMAT_VERSION:
            raise ValidationError(f"unsupported draw-file version {version}")
        pos = 11
        head = json.loads(buf[pos:pos + hlen].decode())
        pos += hlen
        (nsec,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        arrays = {}
        for _ in range(nsec):
            (nl,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nl].decode()
            pos += nl
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            count = int(np.prod(shape)) if ndim else 1
            end = pos + 8 * count
            if end > len(buf):
                raise ValidationError("draw file is truncated")
            arrays[name] = np.frombuffer(buf[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
            pos = end
        if pos != len(buf):
            raise ValidationError("trailing bytes after last section")
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"corrupt draw file: {exc}") from exc
    for key in ("kappa", "f1", "f0", "fb"):
        if key not in arrays:
            raise ValidationError(f"draw file lacks section {key!r}")
    extras = {k[6:]: v for k, v in arrays.items() if k.startswith("extra:")}
    draws = PosteriorDraws(arrays["kappa"], arrays["f1"], arrays["f0"], arrays["fb"],
                           arrays.get("test_f1"), arrays.get("test_f0"), arrays.get("test_fb"),
                           meta=head.pop("meta", {}), extras=extras)
    return draws, head


def write_draws(path, draws: PosteriorDraws, header: dict | None = None) -> None:
    try:
        Path(path).write_bytes(encode_draws(draws, header))
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_draws(path) -> tuple[PosteriorDraws, dict]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return decode_draws(buf)
