"""Delimited-text and JSON readers and writers with atomic replacement."""
from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .model import BiclusterSet, DuplicateId, ExpressionMatrix, OutcomeMatrix, ValidationError


def atomic_write_text(path, text):
    """Write ``text`` to a temporary file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj, path):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _sniff_delimiter(path):
    if str(path).endswith((".tsv", ".tab")):
        return "\t"
    with open(path, encoding="utf-8") as fh:
        head = fh.readline()
    return "\t" if head.count("\t") > head.count(",") else ","


def _fmt(v):
    return repr(float(v))


def _csv_text(rows, delimiter):
    import io as _io

    buf = _io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def write_matrix(path, values, row_ids, col_ids, corner="sample_id", delimiter=","):
    """Labelled matrix: header of column ids, one row per row id; floats in round-trip repr."""
    rows = [[corner] + list(col_ids)]
    for rid, row in zip(row_ids, np.asarray(values)):
        rows.append([rid] + [_fmt(v) for v in row])
    atomic_write_text(path, _csv_text(rows, delimiter))


def read_expression(path):
    """Read an expression matrix: first row gene ids, first column sample ids."""
    delim = _sniff_delimiter(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delim) if r]
    if len(rows) < 2:
        raise ValidationError(f"{path}: expected a header row and at least one data row")
    gene_ids = rows[0][1:]
    sample_ids = [r[0] for r in rows[1:]]
    try:
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry ({exc})") from None
    if values.ndim != 2 or values.shape[1] != len(gene_ids):
        raise ValidationError(f"{path}: ragged rows or header/column count mismatch")
    if len(set(sample_ids)) != len(sample_ids) or len(set(gene_ids)) != len(gene_ids):
        raise DuplicateId(f"{path}: duplicate sample or gene identifiers")
    return ExpressionMatrix(values, sample_ids, gene_ids)


def write_expression(path, x: ExpressionMatrix):
    write_matrix(path, x.values, x.sample_ids, x.gene_ids)


def write_outcomes(path, y: OutcomeMatrix, sample_ids):
    rows = [["sample_id", "class_label"]]
    labels = y.labels
    for sid, c in zip(sample_ids, labels):
        rows.append([sid, y.class_labels[c]])
    atomic_write_text(path, _csv_text(rows, ","))


def read_outcomes(path, sample_ids=None, class_labels=None, reference_class=None):
    """Read ``sample_id,class_label`` rows into a one-hot matrix.

    Classes are ordered as ``class_labels`` when given, else by first
    appearance with ``reference_class`` (a label) moved to the front.
    """
    delim = _sniff_delimiter(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delim) if r]
    if not rows or [h.strip() for h in rows[0][:2]] != ["sample_id", "class_label"]:
        raise ValidationError(f"{path}: header must be sample_id,class_label")
    body = rows[1:]
    ids = [r[0] for r in body]
    labs = [r[1] for r in body]
    if len(set(ids)) != len(ids):
        raise DuplicateId(f"{path}: duplicate sample identifiers")
    if class_labels is None:
        class_labels = list(dict.fromkeys(labs))
        if reference_class is not None:
            if reference_class not in class_labels:
                raise ValidationError(f"{path}: reference class {reference_class!r} not present")
            class_labels.remove(reference_class)
            class_labels.insert(0, reference_class)
    ref = class_labels.index(reference_class) if reference_class is not None else 0
    index = {c: i for i, c in enumerate(class_labels)}
    if sample_ids is not None:
        pos = {s: i for i, s in enumerate(ids)}
        missing = [s for s in sample_ids if s not in pos]
        if missing or len(ids) != len(sample_ids):
            from .model import DimensionMismatch

            raise DimensionMismatch(f"{path}: outcome samples do not match the expression samples")
        labs = [labs[pos[s]] for s in sample_ids]
    try:
        codes = [index[c] for c in labs]
    except KeyError as exc:
        raise ValidationError(f"{path}: unknown class label {exc}") from None
    return OutcomeMatrix.from_labels(codes, len(class_labels), class_labels, ref)


def write_biclusters(path, bics: BiclusterSet, extra=None):
    obj = {"K_hat": bics.K_hat, "biclusters": bics.to_json_obj()}
    if extra:
        obj.update(extra)
    dump_json(obj, path)


def read_biclusters(path):
    return BiclusterSet.from_json_obj(load_json(path))


def write_rows(path, header, rows, delimiter="\t"):
    atomic_write_text(path, _csv_text([header] + [list(r) for r in rows], delimiter))
