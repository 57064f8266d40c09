"""Market, shares, prices and result documents (UTF-8 JSON).

Numbers are written with 17 significant digits; ``-inf`` (and ``inf`` in
result bounds) are written as strings.  Market documents accept only finite
numbers or the string ``"-inf"`` in the surplus tables.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

from .entropy import HeterogeneitySpec
from .errors import ParseError, ValidationError
from .market import MarketSpec

MARKET_KEYS = ("producers", "consumers", "qualities", "alpha", "gamma")


# ---------------------------------------------------------------- writer

def _number(x):
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    if x == 0:
        return "0"
    return format(x, ".17g")


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def dumps(obj, indent=2, _level=0) -> str:
    """Deterministic JSON: insertion-ordered keys, scalar lists kept on one line."""
    obj = _plain(obj)
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _number(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        if len(obj) <= 3 and all(not isinstance(_plain(v), (list, dict)) for v in obj.values()):
            return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps(v)}" for k, v in obj.items()) + "}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        items = [_plain(v) for v in obj]
        if all(not isinstance(v, (list, dict)) for v in items):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in items) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def digest(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------- reader

def loads(text: str, source="document"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: {exc.msg}", exc.lineno, exc.colno) from None


def _require(doc, key, source):
    if not isinstance(doc, dict):
        raise ParseError(f"{source}: top level must be an object")
    if key not in doc:
        raise ParseError(f"{source}: missing key {key!r}")
    return doc[key]


def _real(v, where, allow_neg_inf=False, allow_inf=False):
    if isinstance(v, bool):
        raise ParseError(f"{where}: expected a number, got a boolean")
    if isinstance(v, (int, float)):
        if not math.isfinite(v):
            raise ParseError(f"{where}: non-finite literal")
        return float(v)
    if isinstance(v, str):
        if v == "-inf" and (allow_neg_inf or allow_inf):
            return -math.inf
        if v == "inf" and allow_inf:
            return math.inf
    suffix = ' or "-inf"' if allow_neg_inf else ""
    raise ParseError(f"{where}: expected a number{suffix}, got {v!r}")


def _vector(v, where, **kw):
    if not isinstance(v, list):
        raise ParseError(f"{where}: expected a list")
    return np.array([_real(e, f"{where}[{i}]", **kw) for i, e in enumerate(v)], dtype=np.float64)


def _matrix(v, where, **kw):
    if not isinstance(v, list) or not all(isinstance(r, list) for r in v):
        raise ParseError(f"{where}: expected a list of rows")
    rows = [_vector(r, f"{where}[{i}]", **kw) for i, r in enumerate(v)]
    if rows and len({len(r) for r in rows}) != 1:
        raise ParseError(f"{where}: ragged rows")
    return np.array(rows, dtype=np.float64).reshape(len(rows), -1 if rows else 0)


def _population(v, where):
    if not isinstance(v, list) or not v:
        raise ParseError(f"{where}: expected a non-empty list")
    labels, masses = [], []
    for i, entry in enumerate(v):
        if not isinstance(entry, dict) or "label" not in entry or "mass" not in entry:
            raise ParseError(f"{where}[{i}]: expected {{label, mass}}")
        if not isinstance(entry["label"], str):
            raise ParseError(f"{where}[{i}].label: expected a string")
        labels.append(entry["label"])
        masses.append(_real(entry["mass"], f"{where}[{i}].mass"))
    return labels, masses


def market_from_dict(doc, source="market", base_dir=None):
    """Build ``(MarketSpec, HeterogeneitySpec | None)`` from a parsed market document."""
    for key in MARKET_KEYS:
        _require(doc, key, source)
    x_labels, n = _population(doc["producers"], f"{source}.producers")
    y_labels, m = _population(doc["consumers"], f"{source}.consumers")
    qualities = doc["qualities"]
    if not isinstance(qualities, list) or not all(isinstance(q, str) for q in qualities):
        raise ParseError(f"{source}.qualities: expected a list of strings")
    alpha = _matrix(doc["alpha"], f"{source}.alpha", allow_neg_inf=True)
    gamma = _matrix(doc["gamma"], f"{source}.gamma", allow_neg_inf=True)
    free = doc.get("free_disposal", False)
    if not isinstance(free, bool):
        raise ParseError(f"{source}.free_disposal: expected a boolean")
    try:
        spec = MarketSpec(x_labels, y_labels, qualities, n, m, alpha, gamma, free)
    except ValidationError as exc:
        raise ParseError(f"{source}: {exc}") from None
    het = None
    if "heterogeneity" in doc:
        het = _heterogeneity(doc["heterogeneity"], spec, source, base_dir)
    return spec, het


def _heterogeneity(block, spec, source, base_dir):
    if not isinstance(block, dict) or "kind" not in block:
        raise ParseError(f"{source}.heterogeneity: expected {{kind: ...}}")
    if block["kind"] == "logit":
        return HeterogeneitySpec.logit()
    if block["kind"] != "empirical":
        raise ParseError(f"{source}.heterogeneity.kind: expected 'logit' or 'empirical'")
    if "draws_file" not in block:
        raise ParseError(f"{source}.heterogeneity: empirical kind needs draws_file")
    path = Path(block["draws_file"])
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{source}.heterogeneity.draws_file: {exc}") from None
    draws = loads(text, str(path))
    prod = [_matrix(d, f"{path}.producers[{i}]") for i, d in enumerate(_require(draws, "producers", str(path)))]
    cons = [_matrix(d, f"{path}.consumers[{i}]") for i, d in enumerate(_require(draws, "consumers", str(path)))]
    seed = draws.get("seed")
    try:
        return HeterogeneitySpec.empirical(prod, cons, seed).check(spec)
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc}") from None


def parse_market(text: str, source="market", base_dir=None):
    return market_from_dict(loads(text, source), source, base_dir)


def read_market(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from None
    spec, het = parse_market(data.decode("utf-8"), str(path), path.parent)
    return spec, het, data


def market_to_dict(spec: MarketSpec, heterogeneity=None) -> dict:
    doc = {
        "producers": [{"label": lbl, "mass": float(v)} for lbl, v in zip(spec.producer_types, spec.n)],
        "consumers": [{"label": lbl, "mass": float(v)} for lbl, v in zip(spec.consumer_types, spec.m)],
        "qualities": list(spec.qualities),
        "alpha": spec.alpha.tolist(),
        "gamma": spec.gamma.tolist(),
    }
    if spec.free_disposal:
        doc["free_disposal"] = True
    if heterogeneity is not None:
        doc["heterogeneity"] = heterogeneity
    return doc


def serialize_market(spec: MarketSpec, heterogeneity=None) -> str:
    """Canonical text form; ``heterogeneity`` is an already-formed block (e.g. ``{"kind": "logit"}``)."""
    return dumps(market_to_dict(spec, heterogeneity)) + "\n"


# ---------------------------------------------------------------- shares / prices

def parse_shares(doc, source="shares"):
    sx = _matrix(_require(doc, "supply_shares", source), f"{source}.supply_shares")
    sy = _matrix(_require(doc, "demand_shares", source), f"{source}.demand_shares")
    n = _vector(_require(doc, "n", source), f"{source}.n")
    m = _vector(_require(doc, "m", source), f"{source}.m")
    if sx.shape[1] != sy.shape[1]:
        raise ParseError(f"{source}: supply and demand share rows have different lengths")
    if sx.shape[0] != n.size or sy.shape[0] != m.size:
        raise ParseError(f"{source}: one mass per share row expected")
    return sx, sy, n, m


def parse_prices(doc, source="prices"):
    return _vector(_require(doc, "p", source), f"{source}.p")


def parse_allocation(doc, spec, source="result"):
    p = parse_prices(doc, source)
    mu_xz = _matrix(_require(doc, "mu_xz", source), f"{source}.mu_xz")
    mu_zy = _matrix(_require(doc, "mu_zy", source), f"{source}.mu_zy")
    nx, nz, ny = spec.shape
    if p.shape != (nz,) or mu_xz.shape != (nx, nz) or mu_zy.shape != (nz, ny):
        raise ParseError(
            f"{source}: dimensions p{p.shape}, mu_xz{mu_xz.shape}, mu_zy{mu_zy.shape} "
            f"do not match market ({nx}, {nz}, {ny})"
        )
    return p, mu_xz, mu_zy


# ---------------------------------------------------------------- CSV export

def to_csv(payload: dict) -> str:
    """Long-format ``table,row,column,value`` export of every numeric vector and table."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["table", "row", "column", "value"])

    def emit(name, value):
        value = _plain(value)
        if isinstance(value, dict):
            for k, v in value.items():
                emit(f"{name}.{k}" if name else k, v)
        elif isinstance(value, list) and value and all(isinstance(r, list) for r in value):
            for i, row in enumerate(value):
                for j, v in enumerate(row):
                    if isinstance(v, (int, float)) and not isinstance(v, bool):
                        w.writerow([name, i, j, _number(v).strip('"')])
        elif isinstance(value, list):
            for i, v in enumerate(value):
                if isinstance(v, (int, float)) and not isinstance(v, bool):
                    w.writerow([name, i, "", _number(v).strip('"')])
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            w.writerow([name, "", "", _number(value).strip('"')])

    emit("", payload)
    return buf.getvalue()

