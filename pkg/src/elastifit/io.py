"""File formats: CSV matrices and JSON model files.

CSV convention: rows are products, columns are observations, comma
separated, UTF-8, LF line endings, no header by default.  Values are
written with 17 significant digits so write-then-read round-trips
float64 exactly.  A non-numeric first line is treated as a header and
skipped on read.

Model files are JSON with a versioned schema holding the dimensions, the
factors in row-major order, and fit metadata.  A full-rank matrix is
stored losslessly as the factor pair ``(E, I)`` with a zero diagonal.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .core import ElasticityModel
from .errors import DataError

__all__ = [
    "read_matrix",
    "read_vector",
    "write_matrix",
    "save_model",
    "load_model",
    "model_from_etilde",
]

SCHEMA_VERSION = 1


def write_matrix(path: str | Path, values: np.ndarray, header: list[str] | None = None) -> None:
    """Write a matrix (or a vector, as one column) with full precision."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    lines = []
    if header is not None:
        lines.append(",".join(header))
    for row in values:
        lines.append(",".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _parse_line(path: str | Path, line: str, row: int, integer: bool) -> list[float]:
    out = []
    for col, token in enumerate(line.split(",")):
        try:
            value = float(token)
        except ValueError:
            raise DataError(f"{path}: row {row}, column {col}: {token.strip()!r} is not a number")
        if not np.isfinite(value):
            raise DataError(f"{path}: row {row}, column {col}: value {value} is not finite")
        if integer and value != np.floor(value):
            raise DataError(
                f"{path}: row {row}, column {col}: {value} has a fractional part; "
                "demand counts must be integers"
            )
        out.append(value)
    return out


def read_matrix(path: str | Path, integer: bool = False) -> np.ndarray:
    """Read a CSV matrix; with ``integer=True`` reject fractional values."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise DataError(f"{path}: file is empty")
    start = 0
    try:
        float(lines[0].split(",")[0])
    except ValueError:
        start = 1  # header line
        if len(lines) == 1:
            raise DataError(f"{path}: no data rows after header")
    rows = [_parse_line(path, line, i, integer) for i, line in enumerate(lines[start:])]
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i} has {len(row)} columns, expected {width}")
    return np.asarray(rows, dtype=np.float64)


def read_vector(path: str | Path) -> np.ndarray:
    """Read a length-n vector stored as a single CSV column (or row)."""
    values = read_matrix(path)
    if 1 not in values.shape:
        raise DataError(f"{path}: expected a single row or column, got shape {values.shape}")
    return values.ravel()


def model_from_etilde(e_tilde: np.ndarray) -> ElasticityModel:
    """Exact factored form of a full-rank augmented matrix: ``E = E @ I``."""
    e_tilde = np.asarray(e_tilde, dtype=np.float64)
    n = e_tilde.shape[0]
    return ElasticityModel(
        B=e_tilde[:, :n], C=np.eye(n), s=np.zeros(n), log_d_nom=e_tilde[:, n]
    )


def save_model(
    path: str | Path,
    model: ElasticityModel,
    lam: float | None = None,
    fit_meta: dict[str, Any] | None = None,
) -> None:
    """Write a model file.  ``fit_meta`` lands under the ``"fit"`` key."""
    payload = {
        "schema_version": SCHEMA_VERSION,
        "n": model.n_products,
        "r": model.rank,
        "lambda": lam,
        "B": [float(v) for v in model.B.ravel()],
        "C": [float(v) for v in model.C.ravel()],
        "s": [float(v) for v in model.s],
        "log_d_nom": [float(v) for v in model.log_d_nom],
        "fit": fit_meta or {},
    }
    Path(path).write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8", newline="\n"
    )


def load_model(path: str | Path) -> tuple[ElasticityModel, dict[str, Any]]:
    """Read a model file back; returns the model and the raw metadata."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    try:
        version = payload["schema_version"]
        if version != SCHEMA_VERSION:
            raise DataError(f"{path}: unsupported schema version {version}")
        n, r = int(payload["n"]), int(payload["r"])
        B = np.asarray(payload["B"], dtype=np.float64)
        C = np.asarray(payload["C"], dtype=np.float64)
        s = np.asarray(payload["s"], dtype=np.float64)
        log_d_nom = np.asarray(payload["log_d_nom"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed model file: {exc}") from exc
    if B.size != n * r or C.size != n * r:
        raise DataError(f"{path}: factor lengths do not match n={n}, r={r}")
    if s.size != n or log_d_nom.size != n:
        raise DataError(f"{path}: vector lengths do not match n={n}")
    model = ElasticityModel(
        B=B.reshape(n, r), C=C.reshape(n, r), s=s, log_d_nom=log_d_nom
    )
    meta = {k: payload.get(k) for k in ("lambda", "fit")}
    return model, meta
