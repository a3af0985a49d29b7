"""CSV and JSON input/output for two-phase data."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile

import numpy as np

from .asymptotics import DrawSet
from .data import Design, DesignSpec, TwoPhaseSample
from .exceptions import DataError

__all__ = [
    "read_sample",
    "parse_sample",
    "format_sample",
    "parse_draws",
    "format_weights",
    "atomic_write",
    "read_text",
    "dumps",
]


def read_text(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj):
    """Deterministic JSON text."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _numbered(header, prefix):
    cols = [h for h in header if h.startswith(prefix)]
    idx = []
    for c in cols:
        tail = c[len(prefix):]
        if not tail.isdigit():
            raise DataError(f"bad column name {c!r}")
        idx.append(int(tail))
    if sorted(idx) != list(range(1, len(idx) + 1)):
        raise DataError(f"columns {prefix}1..{prefix}m must be consecutive")
    return [f"{prefix}{i}" for i in range(1, len(idx) + 1)]


def _float(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"row {row}: column {col}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}: column {col}: value must be finite")
    return v


def _int01(text, row, col):
    if text.strip() not in ("0", "1"):
        raise DataError(f"row {row}: column {col} must be 0 or 1, got {text!r}")
    return int(text)


def parse_sample(text, design=Design.WITHOUT_REPLACEMENT, spec: DesignSpec = None):
    """Parse the two-phase CSV schema.

    Columns: ``id, y, delta, u_1..u_m, [stratum], xi, x_1..x_p, [pi0]``.
    ``x`` fields are empty for ``xi = 0``; an empty ``x`` with ``xi = 1`` is
    an error naming the (1-based) data row. Without a ``stratum`` column the
    strata are recomputed with ``spec``. ``pi0`` defaults to ``n_j/N_j``.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty input") from None
    required = ("id", "y", "delta", "xi")
    for col in required:
        if col not in header:
            raise DataError(f"missing column {col!r}")
    ucols = _numbered(header, "u_")
    xcols = _numbered(header, "x_")
    if not xcols:
        raise DataError("no covariate columns x_1..x_p")
    known = set(required) | set(ucols) | set(xcols) | {"stratum", "pi0"}
    extra = [h for h in header if h not in known]
    if extra:
        raise DataError(f"unknown columns: {extra}")
    pos = {h: i for i, h in enumerate(header)}
    has_stratum = "stratum" in pos
    has_pi0 = "pi0" in pos
    ids, y, delta, u, strat, xi, x, pi0 = [], [], [], [], [], [], [], []
    for row, rec in enumerate(reader, start=1):
        if not rec or all(not f.strip() for f in rec):
            continue
        if len(rec) != len(header):
            raise DataError(f"row {row}: expected {len(header)} fields, got {len(rec)}")
        get = lambda c: rec[pos[c]].strip()
        ids.append(get("id"))
        y.append(_float(get("y"), row, "y"))
        delta.append(_int01(get("delta"), row, "delta"))
        u.append([_float(get(c), row, c) for c in ucols])
        s = _int01(get("xi"), row, "xi")
        xi.append(s)
        if has_stratum:
            t = get("stratum")
            if not t.isdigit() or int(t) < 1:
                raise DataError(f"row {row}: stratum must be a positive integer")
            strat.append(int(t))
        vals = [get(c) for c in xcols]
        if s == 1:
            if any(v == "" for v in vals):
                raise DataError(f"row {row}: selected record (xi = 1) has missing x")
            x.append([_float(v, row, c) for v, c in zip(vals, xcols)])
        else:
            x.append([_float(v, row, c) if v else np.nan for v, c in zip(vals, xcols)])
        if has_pi0:
            pi0.append(_float(get("pi0"), row, "pi0"))
    if not ids:
        raise DataError("no data rows")
    if len(set(ids)) != len(ids):
        raise DataError("duplicate ids")
    u = np.array(u, float).reshape(len(ids), len(ucols))
    if has_stratum:
        stratum = np.array(strat, int)
        J = spec.n_strata if spec is not None else int(stratum.max())
    else:
        if spec is None:
            raise DataError("no stratum column and no stratification rule given")
        stratum = spec.assign(np.array(y), np.array(delta), u)
        J = spec.n_strata
    return TwoPhaseSample.from_arrays(
        y, delta, u, stratum, xi, np.array(x, float), J, design,
        np.array(pi0, float) if has_pi0 else None, np.array(ids, dtype=object))


def read_sample(path, design=Design.WITHOUT_REPLACEMENT, spec=None):
    return parse_sample(read_text(path), design, spec)


def _fmt(v):
    return "" if not np.isfinite(v) else repr(float(v))


def format_sample(sample: TwoPhaseSample, include_pi0=False):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    m, p = sample.u.shape[1], sample.n_covariates
    header = (["id", "y", "delta"] + [f"u_{k + 1}" for k in range(m)]
              + ["stratum", "xi"] + [f"x_{k + 1}" for k in range(p)])
    if include_pi0:
        header.append("pi0")
    wr.writerow(header)
    for i in range(sample.N):
        rec = ([str(sample.ids[i]), _fmt(sample.y[i]), int(sample.delta[i])]
               + [_fmt(v) for v in sample.u[i]]
               + [int(sample.stratum[i]), int(sample.xi[i])]
               + [_fmt(v) for v in sample.x[i]])
        if include_pi0:
            rec.append(_fmt(sample.pi0[i]))
        wr.writerow(rec)
    return buf.getvalue()


def format_weights(sample: TwoPhaseSample, method, weights):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["id", "method", "w"])
    for i in range(sample.N):
        wr.writerow([str(sample.ids[i]), method, repr(float(weights[i]))])
    return buf.getvalue()


def parse_draws(text):
    """Parse a draws CSV: ``ltilde_1..p, Z_1..k, stratum, pi0[, gdot]``."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty input") from None
    lcols = _numbered(header, "ltilde_")
    zcols = _numbered(header, "Z_")
    if not lcols:
        raise DataError("no ltilde_1..ltilde_p columns")
    for col in ("stratum", "pi0"):
        if col not in header:
            raise DataError(f"missing column {col!r}")
    known = set(lcols) | set(zcols) | {"stratum", "pi0", "gdot"}
    extra = [h for h in header if h not in known]
    if extra:
        raise DataError(f"unknown columns: {extra}")
    pos = {h: i for i, h in enumerate(header)}
    rows = []
    for row, rec in enumerate(reader, start=1):
        if not rec or all(not f.strip() for f in rec):
            continue
        if len(rec) != len(header):
            raise DataError(f"row {row}: expected {len(header)} fields, got {len(rec)}")
        rows.append([_float(rec[pos[h]].strip(), row, h) for h in header])
    if not rows:
        raise DataError("no data rows")
    a = np.array(rows)
    col = lambda names: a[:, [pos[n] for n in names]]
    stratum = a[:, pos["stratum"]]
    if np.any(stratum != np.round(stratum)) or np.any(stratum < 1):
        raise DataError("stratum must hold positive integers")
    gdot = a[:, pos["gdot"]] if "gdot" in pos else None
    return DrawSet(col(lcols), col(zcols), stratum.astype(int), a[:, pos["pi0"]], gdot)
