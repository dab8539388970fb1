"""Panel container, long-format CSV I/O and run-configuration files."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ValidationError

__all__ = [
    "MissingPolicy",
    "Panel",
    "format_time",
    "load_config",
    "load_panel",
    "per_store_normalize",
    "save_panel",
]


class MissingPolicy(str, enum.Enum):
    REJECT = "reject"
    ZERO_FILL = "zero_fill"
    DROP_UNIT = "drop_unit"


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Panel:
    """Rectangular unit-by-time panel with treatment metadata.

    Parameters
    ----------
    outcomes : ndarray, shape (n_units, T)
    unit_ids : sequence of str
    time_index : ndarray, length T
        Strictly increasing integers or ``datetime64`` values.
    covariates : mapping of name -> ndarray (n_units, T)
        Per-unit covariate series, usable as extra first-stage regressors.
    treated_units : tuple of int
        Row indices of treated units.
    t0 : int or None
        Number of pre-intervention periods (the last pre period, 1-based).
    fill_count : int
        Number of cells filled by :attr:`MissingPolicy.ZERO_FILL`.
    """

    outcomes: np.ndarray
    unit_ids: tuple
    time_index: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    treated_units: tuple = ()
    t0: int | None = None
    fill_count: int = 0

    def __post_init__(self):
        y = _frozen(self.outcomes)
        if y.ndim != 2:
            raise ValidationError("outcomes must be a 2-d (units x time) array")
        n, T = y.shape
        ids = tuple(str(u) for u in self.unit_ids)
        if len(ids) != n:
            raise ValidationError(f"{len(ids)} unit ids for {n} outcome rows")
        if len(set(ids)) != n:
            raise ValidationError("unit ids are not unique")
        idx = np.array(self.time_index, copy=True)
        if idx.ndim != 1 or len(idx) != T:
            raise ValidationError(f"time_index must have length {T}")
        if T > 1 and not np.all(idx[1:] > idx[:-1]):
            raise ValidationError("time_index must be strictly increasing")
        idx.setflags(write=False)
        if not np.all(np.isfinite(y)):
            raise ValidationError("outcomes contain non-finite values")
        cov = {}
        for name, arr in dict(self.covariates).items():
            a = np.asarray(arr, dtype=float)
            if a.ndim == 1:
                a = np.broadcast_to(a, (n, T))
            if a.shape != (n, T):
                raise ValidationError(f"covariate {name!r} has shape {a.shape}, expected {(n, T)}")
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"covariate {name!r} contains non-finite values")
            cov[name] = _frozen(a)
        treated = tuple(sorted({int(i) for i in self.treated_units}))
        for i in treated:
            if not 0 <= i < n:
                raise ValidationError(f"treated unit index {i} out of range")
        if self.t0 is not None and not 1 < int(self.t0) < T:
            raise ValidationError(f"t0 must satisfy 1 < t0 < T={T}, got {self.t0}")
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "unit_ids", ids)
        object.__setattr__(self, "time_index", idx)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "treated_units", treated)
        object.__setattr__(self, "t0", None if self.t0 is None else int(self.t0))

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcomes.shape[1]

    @property
    def controls(self) -> tuple:
        treated = set(self.treated_units)
        return tuple(i for i in range(self.n_units) if i not in treated)

    def unit_index(self, unit_id) -> int:
        try:
            return self.unit_ids.index(str(unit_id))
        except ValueError:
            raise ValidationError(f"unknown unit {unit_id!r}") from None

    def resolve_t0(self, when) -> int:
        """Translate a period label (integer label or date) into a 1-based t0."""
        if np.issubdtype(self.time_index.dtype, np.datetime64):
            key = np.datetime64(pd.Timestamp(when), "ns").astype(self.time_index.dtype)
        else:
            key = type(self.time_index[0].item())(when)
        hits = np.flatnonzero(self.time_index == key)
        if hits.size == 0:
            raise ValidationError(f"t0 {when!r} is not in the time index")
        return int(hits[0]) + 1

    def with_treatment(self, treated_units: Sequence, t0: int) -> "Panel":
        idx = [u if isinstance(u, (int, np.integer)) else self.unit_index(u) for u in treated_units]
        return replace(self, treated_units=tuple(idx), t0=t0)

    def validate_for_estimation(self):
        if self.t0 is None:
            raise ValidationError("t0 is not set")
        if not self.treated_units:
            raise ValidationError("no treated units")
        if len(self.treated_units) >= self.n_units:
            raise ValidationError("treated units must be a strict subset of all units")


def _parse_time(values: pd.Series):
    if pd.api.types.is_integer_dtype(values):
        return values.astype(np.int64)
    as_num = pd.to_numeric(values, errors="coerce")
    if as_num.notna().all() and np.all(as_num == np.round(as_num)):
        return as_num.astype(np.int64)
    try:
        return pd.to_datetime(values)
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"cannot parse time column: {exc}") from None


def load_panel(
    path,
    schema: Mapping[str, str] | None = None,
    policy: MissingPolicy | str = MissingPolicy.REJECT,
    covariates: Sequence[str] | None = None,
) -> Panel:
    """Read a long-format CSV (one row per unit and period) into a :class:`Panel`.

    ``schema`` maps the roles ``unit``, ``time`` and ``value`` to column
    names (defaults: the role names themselves).  Covariate columns default
    to every remaining column.  A cell is missing when its (unit, time) row
    is absent or its value is empty.
    """
    schema = {"unit": "unit", "time": "time", "value": "value", **(schema or {})}
    policy = MissingPolicy(policy)
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    try:
        df = pd.read_csv(path, dtype={schema["unit"]: str}, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError, pd.errors.EmptyDataError) as exc:
        raise ValidationError(f"cannot parse {path}: {exc}") from None
    for role in ("unit", "time", "value"):
        if schema[role] not in df.columns:
            raise ValidationError(f"column {schema[role]!r} ({role}) not found in {path}")
    ucol, tcol, vcol = schema["unit"], schema["time"], schema["value"]
    if covariates is None:
        covariates = [c for c in df.columns if c not in (ucol, tcol, vcol)]
    df = df.assign(**{tcol: _parse_time(df[tcol])})
    dup = df.duplicated([ucol, tcol])
    if dup.any():
        row = df[dup].iloc[0]
        raise ValidationError(f"duplicate cell ({row[ucol]}, {row[tcol]})")
    for col in [vcol, *covariates]:
        df[col] = pd.to_numeric(df[col], errors="coerce")

    units = sorted(df[ucol].unique())
    times = np.sort(df[tcol].unique())
    wide = df.pivot(index=ucol, columns=tcol, values=vcol).reindex(index=units, columns=times)
    y = wide.to_numpy(dtype=float)
    missing = ~np.isfinite(y)
    fill_count = 0
    if missing.any():
        if policy is MissingPolicy.REJECT:
            i, j = np.argwhere(missing)[0]
            raise ValidationError(f"missing cell ({units[i]}, {format_time(times[j])})")
        if policy is MissingPolicy.ZERO_FILL:
            fill_count = int(missing.sum())
            y = np.where(missing, 0.0, y)
        else:
            keep = ~missing.any(axis=1)
            if not keep.any():
                raise ValidationError("every unit has a missing cell")
            units = [u for u, k in zip(units, keep) if k]
            y = y[keep]
    cov = {}
    for name in covariates:
        c = df.pivot(index=ucol, columns=tcol, values=name).reindex(index=units, columns=times)
        a = c.to_numpy(dtype=float)
        if not np.all(np.isfinite(a)):
            raise ValidationError(f"covariate {name!r} has missing cells")
        cov[name] = a
    index = times.to_numpy() if hasattr(times, "to_numpy") else np.asarray(times)
    return Panel(outcomes=y, unit_ids=units, time_index=index, covariates=cov, fill_count=fill_count)


def format_time(t):
    """Period label as written to files: ISO dates or the integer label."""
    if isinstance(t, (np.datetime64, pd.Timestamp)):
        return str(pd.Timestamp(t).date())
    return str(t)


def save_panel(panel: Panel, path, schema: Mapping[str, str] | None = None):
    """Write ``panel`` as long-format CSV; inverse of :func:`load_panel`."""
    schema = {"unit": "unit", "time": "time", "value": "value", **(schema or {})}
    n, T = panel.outcomes.shape
    data = {
        schema["unit"]: np.repeat(np.array(panel.unit_ids, dtype=object), T),
        schema["time"]: np.tile(panel.time_index, n),
        schema["value"]: panel.outcomes.ravel(),
    }
    for name, arr in panel.covariates.items():
        data[name] = arr.ravel()
    df = pd.DataFrame(data)
    if np.issubdtype(panel.time_index.dtype, np.datetime64):
        df[schema["time"]] = pd.to_datetime(df[schema["time"]]).dt.strftime("%Y-%m-%d")
    df.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")


def per_store_normalize(panel: Panel, store_counts) -> Panel:
    """Divide each outcome cell by the number of stores behind it."""
    counts = np.asarray(store_counts, dtype=float)
    if counts.shape != panel.outcomes.shape:
        raise ValidationError(f"store_counts shape {counts.shape} != outcomes {panel.outcomes.shape}")
    bad = (counts <= 0) & (panel.outcomes != 0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValidationError(
            f"non-positive store count with nonzero sales at ({panel.unit_ids[i]}, {format_time(panel.time_index[j])})"
        )
    safe = np.where(counts > 0, counts, 1.0)
    return replace(panel, outcomes=panel.outcomes / safe)


def load_config(path) -> dict:
    """Parse a ``key = value`` run-configuration file.

    Blank lines and ``#`` comments are ignored.  Values stay strings; the CLI
    coerces them per key.
    """
    out = {}
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such config file: {path}")
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValidationError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out
