"""CSV/JSON writers for distributions, equilibria and sweeps."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile

import numpy as np

from .core import INFINITE

EQUILIBRIUM_HEADER = ["m", "a", "crashed", "lambda", "M0", "tau", "welfare_rate", "thresholds"]


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".12g")


def atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    return buf.getvalue()


def thresholds_field(profile) -> str:
    return ";".join("inf" if k == INFINITE else str(int(k)) for k in profile)


def distribution_csv(dist) -> str:
    return _csv(["money", "fraction"], [(i, f) for i, f in enumerate(np.asarray(dist, dtype=float))])


def per_type_csv(rows) -> str:
    out = []
    for t, r in enumerate(rows):
        out += [(t, i, f) for i, f in enumerate(r)]
    return _csv(["type_index", "money", "fraction"], out)


def _eq_fields(res):
    return [res.crashed, res.lam, res.M0, res.tau, res.welfare.per_round, thresholds_field(res.profile)]


def equilibrium_csv(res) -> str:
    return _csv(EQUILIBRIUM_HEADER, [[res.m, res.a, *_eq_fields(res)]])


def sweep_csv(rows, xname: str, with_utility: bool = False) -> str:
    header = [xname, "crashed", "lambda", "M0", "tau", "welfare_rate", "thresholds"]
    if with_utility:
        header.append("standard_utility")
    out = []
    for row in rows:
        if row.result is None:
            line = [row.x, True, math.nan, math.nan, math.nan, math.nan, ""]
            if with_utility:
                line.append("")
        else:
            line = [row.x, *_eq_fields(row.result)]
            if with_utility:
                line.append(";".join(fmt(u) for u in row.result.welfare.per_type_utility))
        out.append(line)
    return _csv(header, out)


def read_distribution_csv(path) -> np.ndarray:
    """Read a ``money,fraction`` CSV into a dense vector indexed by money level."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"money", "fraction"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header money,fraction")
        pairs = [(int(r["money"]), float(r["fraction"])) for r in reader]
    if not pairs:
        raise ValueError(f"{path}: no rows")
    out = np.zeros(max(i for i, _ in pairs) + 1)
    for i, f in pairs:
        out[i] += f
    return out


def ratios_csv(M) -> str:
    M = np.asarray(M, dtype=float)
    rows = []
    for i, f in enumerate(M):
        ratio = M[i] / M[i - 1] if i and M[i - 1] > 0 else math.nan
        rows.append((i, f, math.log(f) if f > 0 else -math.inf, ratio))
    return _csv(["money", "fraction", "log_fraction", "ratio"], rows)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
