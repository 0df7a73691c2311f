"""
CSV datasets for the command line: header required, comma separated, UTF-8.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from dpdglm.errors import DomainError, InputError
from dpdglm.model import GlmModel, Sample

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    columns: List[str]
    y_column: str
    x_columns: List[str]
    sample: Sample
    intercept: bool = False

    @property
    def design_names(self) -> List[str]:
        return (["(intercept)"] if self.intercept else []) + list(self.x_columns)


def load_csv(
    path: Path | str,
    y_column: Optional[str] = None,
    x_columns: Optional[Sequence[str]] = None,
    intercept: bool = False,
    model: Optional[GlmModel] = None,
) -> Dataset:
    """
    Read a dataset. The response defaults to a column named "y" (else the first
    column) and the covariates to every other column.

    Errors carry the 1-based line number of the offending row.
    """
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot open {path}: {e.strerror}")
    with handle:
        reader = csv.reader(handle)
        try:
            header = [name.strip() for name in next(reader)]
        except StopIteration:
            raise InputError(f"{path} is empty", line=1)
        except csv.Error as e:
            raise InputError(str(e), line=reader.line_num)
        if len(set(header)) != len(header) or any(not name for name in header):
            raise InputError("header has empty or duplicate column names", line=1)

        y_name = y_column or ("y" if "y" in header else header[0])
        x_names = list(x_columns) if x_columns else [c for c in header if c != y_name]
        for name in [y_name, *x_names]:
            if name not in header:
                raise InputError(f"column {name!r} not in header {header}", line=1)
        if not x_names:
            raise InputError("need at least one covariate column", line=1)
        positions = [header.index(name) for name in [y_name, *x_names]]

        rows = []
        try:
            for record in reader:
                line = reader.line_num
                if not record or all(not cell.strip() for cell in record):
                    continue
                if len(record) != len(header):
                    raise InputError(f"expected {len(header)} fields, found {len(record)}", line=line)
                values = []
                for p in positions:
                    cell = record[p].strip()
                    if not cell:
                        raise InputError(f"missing value in column {header[p]!r}", line=line)
                    try:
                        value = float(cell)
                    except ValueError:
                        raise InputError(f"not a number in column {header[p]!r}: {cell!r}", line=line)
                    if not np.isfinite(value):
                        raise InputError(f"non-finite value in column {header[p]!r}", line=line)
                    values.append(value)
                if model is not None:
                    try:
                        model.check_response(values[0])
                    except DomainError as e:
                        raise InputError(str(e), line=line)
                rows.append(values)
        except csv.Error as e:
            raise InputError(str(e), line=reader.line_num)

    if not rows:
        raise InputError(f"{path} has no data rows")
    data = np.array(rows, dtype=float)
    X = data[:, 1:]
    if intercept:
        X = np.column_stack([np.ones(len(X)), X])
    logger.info(f"Loaded {len(data)} rows from {path} (y={y_name}, x={x_names})")
    return Dataset(
        columns=header,
        y_column=y_name,
        x_columns=x_names,
        sample=Sample(X=X, y=data[:, 0]),
        intercept=intercept,
    )
