"""Matrix Market (.mtx) ingestion and canonical output.

Coordinate files become CSR leaves (1-based indices converted, symmetric and
hermitian storage expanded, duplicates summed); array files become Dense
leaves.  The writer emits a canonical coordinate form: entries sorted by
(column, row) with 17 significant digits, so write -> read -> write is
byte-stable.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .core import SELF_ADJOINT, annotate, dense as to_dense
from .errors import MatrixMarketParseError, UnsupportedOperationError
from .operators import Dense, SparseCSR
from . import config

_FORMATS = ("coordinate", "array")
_FIELDS = ("real", "complex", "integer", "pattern")
_SYMMETRIES = ("general", "symmetric", "skew-symmetric", "hermitian")


def _parse_banner(line, lineno):
    parts = line.strip().split()
    if len(parts) != 5 or parts[0] != "%%MatrixMarket":
        raise MatrixMarketParseError(
            "banner must read '%%MatrixMarket matrix <format> <field> <symmetry>'",
            lineno,
        )
    _, obj, fmt, field, symmetry = (p.lower() for p in parts)
    if obj != "matrix":
        raise MatrixMarketParseError(f"unsupported object '{obj}'", lineno)
    if fmt not in _FORMATS:
        raise MatrixMarketParseError(f"unknown format '{fmt}'", lineno)
    if field not in _FIELDS:
        raise MatrixMarketParseError(f"unknown field '{field}'", lineno)
    if symmetry not in _SYMMETRIES:
        raise MatrixMarketParseError(f"unknown symmetry '{symmetry}'", lineno)
    if fmt == "array" and field == "pattern":
        raise MatrixMarketParseError("array format cannot carry a pattern field", lineno)
    return fmt, field, symmetry


def _parse_int(tok, what, lineno):
    try:
        return int(tok)
    except ValueError:
        raise MatrixMarketParseError(f"malformed {what} '{tok}'", lineno) from None


def _parse_float(tok, what, lineno):
    try:
        return float(tok)
    except ValueError:
        raise MatrixMarketParseError(f"malformed {what} '{tok}'", lineno) from None


def _value_columns(field):
    return {"real": 1, "integer": 1, "complex": 2, "pattern": 0}[field]


def read_matrix_market(path):
    """Parse a Matrix Market file into a CSR or Dense operator.

    Symmetric and hermitian inputs are expanded to full storage and annotated
    self-adjoint.  Malformed input raises with the offending line number.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    it = iter(enumerate(lines, start=1))
    lineno, line = 0, ""
    banner = None
    for lineno, line in it:
        if banner is None:
            banner = _parse_banner(line, lineno)
            continue
        if line.startswith("%") or not line.strip():
            continue
        break
    else:
        raise MatrixMarketParseError("missing size line", lineno + 1)
    fmt, field, symmetry = banner

    size_parts = line.split()
    if fmt == "coordinate":
        if len(size_parts) != 3:
            raise MatrixMarketParseError(
                "coordinate size line must be 'rows cols nnz'", lineno
            )
        rows = _parse_int(size_parts[0], "row count", lineno)
        cols = _parse_int(size_parts[1], "column count", lineno)
        nnz = _parse_int(size_parts[2], "entry count", lineno)
        if rows < 1 or cols < 1 or nnz < 0:
            raise MatrixMarketParseError("invalid matrix dimensions", lineno)
        return _read_coordinate(it, rows, cols, nnz, field, symmetry, lineno)
    if len(size_parts) != 2:
        raise MatrixMarketParseError("array size line must be 'rows cols'", lineno)
    rows = _parse_int(size_parts[0], "row count", lineno)
    cols = _parse_int(size_parts[1], "column count", lineno)
    if rows < 1 or cols < 1:
        raise MatrixMarketParseError("invalid matrix dimensions", lineno)
    return _read_array(it, rows, cols, field, symmetry, lineno)


def _entry_value(parts, field, lineno):
    if field == "pattern":
        return 1.0
    if field == "complex":
        return complex(
            _parse_float(parts[0], "real part", lineno),
            _parse_float(parts[1], "imaginary part", lineno),
        )
    if field == "integer":
        return float(_parse_int(parts[0], "integer value", lineno))
    return _parse_float(parts[0], "value", lineno)


def _read_coordinate(it, rows, cols, nnz, field, symmetry, size_lineno):
    want_vals = _value_columns(field)
    ii, jj, vv = [], [], []
    seen = 0
    lineno = size_lineno
    for lineno, line in it:
        if line.startswith("%") or not line.strip():
            continue
        if seen >= nnz:
            raise MatrixMarketParseError(
                f"more than the declared {nnz} entries", lineno
            )
        parts = line.split()
        if len(parts) != 2 + want_vals:
            raise MatrixMarketParseError(
                f"expected {2 + want_vals} fields, found {len(parts)}", lineno
            )
        i = _parse_int(parts[0], "row index", lineno)
        j = _parse_int(parts[1], "column index", lineno)
        if not (1 <= i <= rows) or not (1 <= j <= cols):
            raise MatrixMarketParseError(
                f"index ({i}, {j}) outside a {rows}x{cols} matrix", lineno
            )
        val = _entry_value(parts[2:], field, lineno)
        ii.append(i - 1)
        jj.append(j - 1)
        vv.append(val)
        if symmetry != "general" and i != j:
            ii.append(j - 1)
            jj.append(i - 1)
            if symmetry == "symmetric":
                vv.append(val)
            elif symmetry == "skew-symmetric":
                vv.append(-val)
            else:  # hermitian
                vv.append(np.conj(val))
        seen += 1
    if seen != nnz:
        raise MatrixMarketParseError(
            f"entry list truncated: found {seen} of {nnz} entries", lineno + 1
        )
    dtype = np.complex128 if field == "complex" else np.float64
    if seen == 0:
        coo = sp.coo_matrix((rows, cols), dtype=dtype)
    else:
        coo = sp.coo_matrix(
            (np.asarray(vv, dtype=dtype), (ii, jj)), shape=(rows, cols)
        )
    op = _csr_allow_empty(coo)
    if symmetry in ("symmetric", "hermitian"):
        op = annotate(op, SELF_ADJOINT)
    return op


def _csr_allow_empty(coo):
    csr = coo.tocsr()
    csr.sum_duplicates()
    csr.sort_indices()
    return SparseCSR(csr.indptr, csr.indices, csr.data, csr.shape)


def _read_array(it, rows, cols, field, symmetry, size_lineno):
    dtype = np.complex128 if field == "complex" else np.float64
    stored = rows * cols if symmetry == "general" else rows * (rows + 1) // 2
    values = []
    lineno = size_lineno
    for lineno, line in it:
        if line.startswith("%") or not line.strip():
            continue
        if len(values) >= stored:
            raise MatrixMarketParseError(
                f"more than the declared {stored} array values", lineno
            )
        parts = line.split()
        if len(parts) != max(1, _value_columns(field)):
            raise MatrixMarketParseError(
                f"expected {max(1, _value_columns(field))} fields, found {len(parts)}",
                lineno,
            )
        values.append(_entry_value(parts, field, lineno))
    if len(values) != stored:
        raise MatrixMarketParseError(
            f"array data truncated: found {len(values)} of {stored} values",
            lineno + 1,
        )
    m = np.zeros((rows, cols), dtype=dtype)
    if symmetry == "general":
        m[:] = np.asarray(values, dtype=dtype).reshape(cols, rows).T
    else:
        if rows != cols:
            raise MatrixMarketParseError(
                f"{symmetry} array matrices must be square", size_lineno
            )
        at = 0
        for j in range(cols):  # column-major lower triangle
            for i in range(j, rows):
                v = values[at]
                at += 1
                m[i, j] = v
                if i != j:
                    if symmetry == "symmetric":
                        m[j, i] = v
                    elif symmetry == "skew-symmetric":
                        m[j, i] = -v
                    else:
                        m[j, i] = np.conj(v)
    op = Dense(m)
    if symmetry in ("symmetric", "hermitian"):
        op = annotate(op, SELF_ADJOINT)
    return op


def _fmt_value(v, complex_field):
    if complex_field:
        return f"{v.real:.17g} {v.imag:.17g}"
    return f"{v:.17g}"


def write_matrix_market(A, path):
    """Write an operator in canonical coordinate form (sorted by column, row)."""
    if A.kind == "csr":
        coo = A._sp.tocoo()
        rows, cols = A.shape
        data = list(zip(coo.col.tolist(), coo.row.tolist(), coo.data.tolist()))
    else:
        if A.rows * A.cols > config.get_dense_cap() ** 2:
            raise UnsupportedOperationError(
                "operator too large to materialize for Matrix Market output"
            )
        m = A.matrix if A.kind == "dense" else to_dense(A)
        rows, cols = m.shape
        jj, ii = np.nonzero(m.T)
        data = [(int(j), int(i), m[i, j]) for j, i in zip(jj, ii)]
    complex_field = np.issubdtype(A.dtype, np.complexfloating)
    field = "complex" if complex_field else "real"
    data.sort(key=lambda t: (t[0], t[1]))
    lines = [f"%%MatrixMarket matrix coordinate {field} general"]
    lines.append(f"{rows} {cols} {len(data)}")
    for j, i, v in data:
        lines.append(f"{i + 1} {j + 1} {_fmt_value(v, complex_field)}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
