"""Structured text serialization for channels, error statistics and codebooks.

One record per matrix. A record is a header line

    record <label> rows <r> cols <c> [provenance <dt|real>] [samples <n>]

followed by r*c whitespace-separated re/im decimal pairs in column-major
order. Blank lines and '#' comment lines are ignored. The format is the
plug-in point for externally ray-traced channels.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .scenario import LINK_NAMES, ChannelSet

_FLOAT_FMT = "{:.17g}"


@dataclass
class MatrixRecord:
    label: str
    matrix: np.ndarray
    provenance: str | None = None
    samples: int | None = None


def write_records(fh: io.TextIOBase, records: list[MatrixRecord]) -> None:
    for rec in records:
        mat = np.atleast_2d(np.asarray(rec.matrix, dtype=complex))
        rows, cols = mat.shape
        header = f"record {rec.label} rows {rows} cols {cols}"
        if rec.provenance is not None:
            if rec.provenance not in ("dt", "real"):
                raise ValidationError(f"bad provenance {rec.provenance!r}")
            header += f" provenance {rec.provenance}"
        if rec.samples is not None:
            header += f" samples {int(rec.samples)}"
        fh.write(header + "\n")
        flat = mat.ravel(order="F")
        parts = []
        for z in flat:
            parts.append(_FLOAT_FMT.format(float(z.real)))
            parts.append(_FLOAT_FMT.format(float(z.imag)))
        # 8 numbers (4 complex entries) per line keeps files diffable
        for k in range(0, len(parts), 8):
            fh.write(" ".join(parts[k : k + 8]) + "\n")


def read_records(fh: io.TextIOBase) -> list[MatrixRecord]:
    tokens: list[str] = []
    for line in fh:
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    records: list[MatrixRecord] = []
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(tokens):
            raise ValidationError("unexpected end of record stream")
        tok = tokens[pos]
        pos += 1
        return tok

    while pos < len(tokens):
        if take() != "record":
            raise ValidationError("expected 'record' keyword")
        label = take()
        rows = cols = None
        provenance = None
        samples = None
        while pos < len(tokens) and tokens[pos] in ("rows", "cols", "provenance", "samples"):
            key = take()
            val = take()
            if key == "rows":
                rows = int(val)
            elif key == "cols":
                cols = int(val)
            elif key == "provenance":
                if val not in ("dt", "real"):
                    raise ValidationError(f"bad provenance {val!r}")
                provenance = val
            else:
                samples = int(val)
        if rows is None or cols is None:
            raise ValidationError(f"record {label!r} is missing rows/cols")
        n = rows * cols
        vals = np.empty(2 * n)
        for k in range(2 * n):
            try:
                vals[k] = float(take())
            except ValueError as exc:
                raise ValidationError(f"bad numeric entry in record {label!r}") from exc
        flat = vals[0::2] + 1j * vals[1::2]
        mat = np.reshape(flat, (rows, cols), order="F")
        records.append(MatrixRecord(label, mat, provenance, samples))
    return records


# -- typed wrappers ----------------------------------------------------------

def write_channel_set(fh: io.TextIOBase, ch: ChannelSet) -> None:
    write_records(
        fh,
        [MatrixRecord(name, ch.link(name), provenance=ch.provenance) for name in LINK_NAMES],
    )


def read_channel_set(fh: io.TextIOBase, provenance: str | None = None) -> ChannelSet:
    """Read one channel set; records may carry either provenance tag.

    If ``provenance`` is given, only records with that tag are used (so one
    file can hold a dt and a real set side by side).
    """
    records = read_records(fh)
    links: dict[str, np.ndarray] = {}
    tag = provenance
    for rec in records:
        if rec.label not in LINK_NAMES:
            continue
        if provenance is not None and rec.provenance not in (provenance, None):
            continue
        if rec.label in links:
            raise ValidationError(f"duplicate link record {rec.label!r}")
        links[rec.label] = rec.matrix
        if tag is None:
            tag = rec.provenance
    missing = [name for name in LINK_NAMES if name not in links]
    if missing:
        raise ValidationError(f"channel file is missing links: {missing}")
    return ChannelSet(provenance=tag or "real", **links)


def write_error_stats(fh: io.TextIOBase, sigma: np.ndarray, n: int) -> None:
    write_records(fh, [MatrixRecord("error_covariance", sigma, samples=n)])


def read_error_stats(fh: io.TextIOBase) -> tuple[np.ndarray, int]:
    for rec in read_records(fh):
        if rec.label == "error_covariance":
            return rec.matrix, int(rec.samples or 0)
    raise ValidationError("no error_covariance record found")


def write_codebook(fh: io.TextIOBase, label: str, entries: list[np.ndarray]) -> None:
    mat = np.column_stack([np.asarray(e, dtype=complex).ravel() for e in entries])
    write_records(fh, [MatrixRecord(label, mat)])
