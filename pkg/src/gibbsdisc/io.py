"""File formats: ensemble files, CSV tables and JSON reports.

Ensemble file layout: one line of UTF-8 JSON (the header), then the
coefficient block as little-endian complex128 of shape (M, N) in row order,
then M little-endian float64 log-weights (-inf marks a rejected sample).

CSV files start with ``#`` comment lines carrying the config hash and the
package version, followed by a header row (``pandas.read_csv(path,
comment="#")`` reads them directly).
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .bessel import BesselBasis
from .measure import GibbsEnsemble
from .nonlinearity import NonlinearitySpec

ENSEMBLE_FORMAT = "gibbsdisc-ensemble/1"


def ensemble_header(ens: GibbsEnsemble, config_hash: str = "") -> dict:
    return {
        "format": ENSEMBLE_FORMAT,
        "version": __version__,
        "config_hash": config_hash,
        "seed": ens.seed,
        "N": int(ens.coeffs.shape[1]),
        "M": ens.size,
        "s": ens.s,
        "R": ens.R,
        "first_index": ens.first_index,
        "spec": ens.spec.to_dict(),
        "basis_hash": ens.basis.basis_id,
        "quad_order": ens.basis.quad_order,
        **({"meta": ens.meta} if ens.meta else {}),
    }


def write_ensemble(path, ens: GibbsEnsemble, config_hash: str = "") -> None:
    header = json.dumps(ensemble_header(ens, config_hash), sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode() + b"\n")
        fh.write(np.ascontiguousarray(ens.coeffs, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(ens.log_weights, dtype="<f8").tobytes())


def read_ensemble_header(path) -> dict:
    with open(path, "rb") as fh:
        return json.loads(fh.readline())


def read_ensemble(path, basis: BesselBasis) -> GibbsEnsemble:
    """Load an ensemble; ``basis`` must be the one it was generated on."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != ENSEMBLE_FORMAT:
            raise ValueError(f"{path}: not an ensemble file")
        if header["basis_hash"] != basis.basis_id:
            raise ValueError(f"{path}: basis hash {header['basis_hash']} does not match {basis.basis_id}")
        m, n = header["M"], header["N"]
        coeffs = np.frombuffer(fh.read(16 * m * n), dtype="<c16").reshape(m, n).astype(complex)
        logw = np.frombuffer(fh.read(8 * m), dtype="<f8").astype(float)
    if logw.size != m:
        raise ValueError(f"{path}: truncated file")
    return GibbsEnsemble(coeffs, logw, header["R"], header["seed"], header["s"],
                         NonlinearitySpec.from_dict(header["spec"]), basis,
                         header.get("first_index", 0), header.get("meta", {}))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else str(float(v))
    return str(v)


def write_csv(path, columns, rows, stamp: dict) -> None:
    """Write ``rows`` under ``columns`` with ``stamp`` items as leading comments."""
    with open(path, "w", newline="") as fh:
        for key in sorted(stamp):
            fh.write(f"# {key}={stamp[key]}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> tuple[dict, list[str], np.ndarray]:
    """(stamp, columns, float array) from a file written by :func:`write_csv`."""
    stamp = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            stamp[k] = v
        else:
            body.append(line)
    columns = body[0].split(",")
    data = np.array([[float(x) for x in line.split(",")] for line in body[1:]]).reshape(-1, len(columns))
    return stamp, columns, data


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, payload: dict, stamp: dict) -> None:
    doc = {**stamp, **_jsonable(payload)}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
