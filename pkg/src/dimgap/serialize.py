"""Deterministic serialization helpers: 17-significant-digit floats everywhere.

All artifacts this package writes (CSV tables, JSON reports, TOML configs)
format floating-point values with ``%.17g`` so that round-trips are exact for
IEEE-754 doubles and reruns are byte-identical.
"""

import math
import os

import numpy as np

FLOAT_FMT = "%.17g"


def fmt_float(x):
    """Format a float at 17 significant digits (exact double round-trip)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return FLOAT_FMT % x


def fmt_value(x):
    """Format a scalar cell for CSV: floats via fmt_float, the rest via str.

    None becomes the empty string (missing value).
    """
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return fmt_float(x)
    return str(x)


def dumps_json(obj, indent=0):
    """Serialize to JSON with fmt_float for every float.

    Supports dict, list/tuple, numpy arrays (as nested lists), str, int,
    bool, None, float. Dict keys must be strings; insertion order is kept.
    """
    pad = " " * indent
    inner = " " * (indent + 2)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            # JSON has no literals for these; serialize as strings.
            return '"%s"' % fmt_float(x)
        return fmt_float(x)
    if isinstance(obj, str):
        out = obj.replace("\\", "\\\\").replace('"', '\\"')
        out = out.replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t")
        return '"%s"' % out
    if isinstance(obj, np.ndarray):
        return dumps_json(obj.tolist(), indent)
    if isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            return "[]"
        items = [dumps_json(v, indent + 2) for v in obj]
        if all(len(s) < 20 and "\n" not in s for s in items) and len(items) <= 8:
            return "[" + ", ".join(items) + "]"
        body = (",\n" + inner).join(items)
        return "[\n" + inner + body + "\n" + pad + "]"
    if isinstance(obj, dict):
        if len(obj) == 0:
            return "{}"
        items = []
        for key, val in obj.items():
            items.append('%s: %s' % (dumps_json(str(key)), dumps_json(val, indent + 2)))
        body = (",\n" + inner).join(items)
        return "{\n" + inner + body + "\n" + pad + "}"
    raise TypeError("cannot serialize %r to JSON" % type(obj))


def matrix_to_json(arr):
    """Encode a 2-D array as {rows, cols, entries} with row-major entries."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim != 2:
        raise ValueError("matrix_to_json expects a 2-D array, got shape %s" % (arr.shape,))
    return {
        "rows": int(arr.shape[0]),
        "cols": int(arr.shape[1]),
        "entries": [float(x) for x in arr.ravel(order="C")],
    }


def matrix_from_json(obj):
    """Decode a {rows, cols, entries} mapping back to a 2-D array."""
    rows, cols = int(obj["rows"]), int(obj["cols"])
    entries = np.asarray(obj["entries"], dtype=float)
    if entries.size != rows * cols:
        raise ValueError("matrix entries length %d != %d*%d" % (entries.size, rows, cols))
    return entries.reshape(rows, cols)


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps_json(obj))
        fh.write("\n")


def read_json(path):
    import json

    with open(path) as fh:
        return json.load(fh)


def write_csv(path, header, rows):
    """Write a CSV with a header row; cells formatted via fmt_value."""
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt_value(c) for c in row) + "\n")


def read_csv(path):
    """Read a CSV written by write_csv: returns (header, list of row lists)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        raise ValueError("empty CSV file: %s" % path)
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:] if ln != ""]
    return header, rows


def _toml_scalar(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        s = fmt_float(v)
        # TOML floats need a dot, exponent, or special form.
        if s not in ("nan", "inf", "-inf") and "." not in s and "e" not in s and "E" not in s:
            s += ".0"
        return s
    if isinstance(v, str):
        return '"%s"' % v.replace("\\", "\\\\").replace('"', '\\"')
    raise TypeError("cannot serialize %r to TOML" % type(v))


def dumps_toml(mapping):
    """Serialize a dict (scalars, lists of scalars, one level of sub-tables)."""
    top, tables = [], []
    for key, val in mapping.items():
        if isinstance(val, dict):
            tables.append((key, val))
        elif isinstance(val, (list, tuple, np.ndarray)):
            items = ", ".join(_toml_scalar(v) for v in val)
            top.append("%s = [%s]" % (key, items))
        else:
            top.append("%s = %s" % (key, _toml_scalar(val)))
    out = "\n".join(top)
    for name, tbl in tables:
        out += "\n\n[%s]\n" % name
        out += "\n".join(
            "%s = %s"
            % (k, "[%s]" % ", ".join(_toml_scalar(x) for x in v) if isinstance(v, (list, tuple, np.ndarray)) else _toml_scalar(v))
            for k, v in tbl.items()
        )
    return out + "\n"


def write_toml(path, mapping):
    with open(path, "w") as fh:
        fh.write(dumps_toml(mapping))


def read_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python 3.10: stdlib tomllib arrived in 3.11
        import tomli as tomllib

    with open(path, "rb") as fh:
        return tomllib.load(fh)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
