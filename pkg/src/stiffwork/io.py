"""CSV output with ``#`` metadata headers, written atomically."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np


def atomic_write_text(path, text):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_csv(columns: dict, meta: dict | None = None) -> str:
    lines = [f"# {k} = {v}" for k, v in (meta or {}).items()]
    names = list(columns)
    lines.append(",".join(names))
    arrays = [np.asarray(columns[n]) for n in names]
    for row in zip(*arrays):
        lines.append(",".join(_fmt(x) for x in row))
    return "\n".join(lines) + "\n"


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, columns: dict, meta: dict | None = None):
    atomic_write_text(path, format_csv(columns, meta))


def read_csv(path):
    """Returns (meta, columns) from a file written by :func:`write_csv`."""
    meta, header, rows = {}, None, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                k, _, v = line[1:].partition("=")
                meta[k.strip()] = v.strip()
            elif header is None:
                header = line.split(",")
            elif line:
                rows.append([float(x) for x in line.split(",")])
    data = np.array(rows).reshape(-1, len(header))
    return meta, {h: data[:, i] for i, h in enumerate(header)}


def stable_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
