"""Datasets, column-role schemas and CSV ingestion."""

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError, UsageError

logger = logging.getLogger(__name__)

ROLES = ("x", "y", "w", "ignore")


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    W: Optional[np.ndarray] = None
    x_names: List[str] = field(default_factory=list)
    y_names: List[str] = field(default_factory=list)
    w_name: Optional[str] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        if self.Y.ndim == 1:
            self.Y = self.Y.reshape(-1, 1)
        if self.X.shape[0] != self.Y.shape[0]:
            raise DataError(f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}")
        if self.W is not None:
            self.W = np.asarray(self.W, dtype=float).reshape(-1)
            if self.W.shape[0] != self.n:
                raise DataError("Treatment column length does not match the data")
            if not np.all(np.isin(self.W, (0.0, 1.0))):
                raise SchemaError("Treatment column must contain only 0 and 1")
            if self.w_name is None:
                self.w_name = "w"
        if not self.x_names:
            self.x_names = [f"x{j + 1}" for j in range(self.p)]
        if not self.y_names:
            self.y_names = [f"y{j + 1}" for j in range(self.d)] if self.d > 1 else ["y"]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.Y.shape[1]

    def response(self, treatment_as_response: bool = True) -> np.ndarray:
        """Matrix the forest splits on: Y, with the treatment column appended
        when present and requested."""
        if treatment_as_response and self.W is not None:
            return np.column_stack([self.Y, self.W])
        return self.Y

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.X[rows], self.Y[rows], None if self.W is None else self.W[rows],
            list(self.x_names), list(self.y_names), self.w_name,
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=self.x_names)
        for j, name in enumerate(self.y_names):
            frame[name] = self.Y[:, j]
        if self.W is not None:
            frame[self.w_name] = self.W.astype(int)
        return frame


@dataclass(frozen=True)
class DatasetSchema:
    roles: Dict[str, str]

    def __post_init__(self):
        for column, role in self.roles.items():
            if role not in ROLES:
                raise SchemaError(f"Column {column!r} has unknown role {role!r}; expected one of {ROLES}")
        counts = {r: sum(1 for v in self.roles.values() if v == r) for r in ROLES}
        if counts["x"] < 1:
            raise SchemaError("Schema needs at least one x column")
        if counts["y"] < 1:
            raise SchemaError("Schema needs at least one y column")
        if counts["w"] > 1:
            raise SchemaError("Schema allows at most one w column")

    @classmethod
    def parse(cls, text: str) -> "DatasetSchema":
        """``col:role,col:role`` as used on the command line."""
        roles: Dict[str, str] = {}
        for part in filter(None, (s.strip() for s in text.split(","))):
            if ":" not in part:
                raise UsageError(f"Role entry {part!r} must look like column:role")
            column, role = part.rsplit(":", 1)
            roles[column.strip()] = role.strip().lower()
        return cls(roles)

    @classmethod
    def from_lists(cls, x: List[str], y: List[str], w: Optional[str] = None) -> "DatasetSchema":
        roles = {c: "x" for c in x}
        roles.update({c: "y" for c in y})
        if w:
            roles[w] = "w"
        return cls(roles)

    def columns(self, role: str) -> List[str]:
        return [c for c, r in self.roles.items() if r == role]


def frame_to_dataset(frame: pd.DataFrame, schema: DatasetSchema, source: str = "<data>") -> Dataset:
    missing = [c for c in schema.roles if c not in frame.columns]
    if missing:
        raise SchemaError(f"{source}: columns {missing} named in the schema are missing")
    typed = schema.columns("x") + schema.columns("y") + schema.columns("w")
    values = {}
    for column in typed:
        raw = frame[column]
        parsed = pd.to_numeric(raw, errors="coerce")
        bad = parsed.isna() | ~np.isfinite(parsed.to_numpy(dtype=float, na_value=np.nan))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataError(f"{source}: row {row + 1}, column {column!r}: "
                            f"cannot use {raw.iloc[row]!r} as a finite number")
        values[column] = parsed.to_numpy(dtype=float)
    w_cols = schema.columns("w")
    W = None
    if w_cols:
        W = values[w_cols[0]]
        if not np.all(np.isin(W, (0.0, 1.0))):
            row = int(np.flatnonzero(~np.isin(W, (0.0, 1.0)))[0])
            raise SchemaError(f"{source}: row {row + 1}, column {w_cols[0]!r}: treatment must be 0 or 1")
    X = np.column_stack([values[c] for c in schema.columns("x")])
    Y = np.column_stack([values[c] for c in schema.columns("y")])
    return Dataset(X, Y, W, schema.columns("x"), schema.columns("y"), w_cols[0] if w_cols else None)


def _read_frame(src, source: str) -> pd.DataFrame:
    try:
        return pd.read_csv(src, dtype=str, encoding="utf-8", keep_default_na=False)
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Cannot read {source}: {e}")


def parse_dataset_bytes(raw: bytes, schema: DatasetSchema, source: str = "<upload>") -> Dataset:
    """Same as load_dataset for an uploaded CSV body."""
    return frame_to_dataset(_read_frame(io.BytesIO(raw), source), schema, source=source)


def load_dataset(path, schema: DatasetSchema) -> Dataset:
    p = Path(path)
    dataset = frame_to_dataset(_read_frame(p, str(p)), schema, source=str(p))
    logger.info("Loaded %s: n=%d p=%d d=%d%s", p, dataset.n, dataset.p, dataset.d,
                " (with treatment)" if dataset.W is not None else "")
    return dataset


def save_dataset(dataset: Dataset, path) -> None:
    dataset.to_frame().to_csv(path, index=False, float_format="%.17g")


def schema_for(dataset: Dataset) -> DatasetSchema:
    roles: Mapping[str, str] = {c: "x" for c in dataset.x_names}
    roles = dict(roles, **{c: "y" for c in dataset.y_names})
    if dataset.W is not None:
        roles[dataset.w_name] = "w"
    return DatasetSchema(roles)
