"""Small shared helpers: seed derivation, config hashing, CSV output."""

from __future__ import annotations

import hashlib
import json

import numpy as np

_U64 = 2 ** 64


def seedseq(*parts) -> np.random.SeedSequence:
    """Deterministic SeedSequence from any mix of ints (negatives wrapped)."""
    return np.random.SeedSequence([int(p) % _U64 for p in parts])


def config_hash(config: dict) -> str:
    """Stable short hash of a config mapping (key-sorted JSON)."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_csv(path, columns: dict, header_comment: str = ""):
    """Write named columns to CSV with an optional leading '#' comment line."""
    names = list(columns)
    rows = zip(*[np.atleast_1d(columns[c]) for c in names])
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(",".join(names) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_csv(path):
    """Read a CSV written by write_csv back into a dict of ndarrays."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    names = lines[0].split(",")
    cells = [ln.split(",") for ln in lines[1:]]
    out = {}
    for i, name in enumerate(names):
        col = [row[i] for row in cells]
        try:
            out[name] = np.asarray([float(c) for c in col])
        except ValueError:
            out[name] = np.asarray(col)
    return out
