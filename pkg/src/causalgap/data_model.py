"""Observation schema, CSV ingestion, imputation, and design-matrix construction.

Every estimator in the package consumes the types defined here: an immutable
:class:`Dataset` of :class:`UnitRecord` rows with derived log-scale columns,
and a :class:`DesignMatrix` built from a declarative :class:`DesignSpec` of
main effects and interaction products.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateProblemError,
    DesignSpecError,
    EmptyDataError,
    RowError,
    SchemaError,
)

TITLES = ("Assistant", "Associate", "Full")
UNIVERSITY_CLASSES = ("BM", "DRUH", "DUVA")
DEPARTMENTS = ("AH", "B", "MHS", "NS", "SS", "TE")

CATEGORICAL_DOMAINS: dict[str, tuple[str, ...]] = {
    "title": TITLES,
    "university_class": UNIVERSITY_CLASSES,
    "department": DEPARTMENTS,
}

NUMERIC_FIELDS = (
    "outcome_raw",
    "outcome_log",
    "treatment",
    "working_years",
    "productivity_log",
    "has_profile",
)

#: Internal field name -> CSV column name.
DEFAULT_SCHEMA: dict[str, str] = {
    "outcome_raw": "salary",
    "treatment": "gender",
    "title": "title",
    "university_class": "university_class",
    "department": "department",
    "working_years": "working_years",
    "productivity_raw": "i10_index",
    "has_profile": "has_scholar_id",
}

DEFAULT_SALARY_FLOOR = 27_000.0

# Plain integers/decimals only; thousands separators and exponents rejected.
_NUMBER_RE = re.compile(r"^-?\d+(\.\d+)?$")


@dataclass(frozen=True)
class UnitRecord:
    """One observation: outcome, binary treatment, covariates, missingness flag."""

    outcome_raw: float
    treatment: int
    title: str
    university_class: str
    department: str
    working_years: float
    productivity_raw: float | None
    has_profile: int

    def validate(self) -> None:
        if not self.outcome_raw > 0:
            raise ValueError(f"outcome_raw must be positive, got {self.outcome_raw}")
        if self.treatment not in (0, 1):
            raise ValueError(f"treatment must be 0 or 1, got {self.treatment}")
        for fname, domain in CATEGORICAL_DOMAINS.items():
            value = getattr(self, fname)
            if value not in domain:
                raise ValueError(f"{fname} must be one of {domain}, got {value!r}")
        if self.working_years < 0:
            raise ValueError(f"working_years must be nonnegative, got {self.working_years}")
        if self.productivity_raw is not None and self.productivity_raw < 0:
            raise ValueError(f"productivity_raw must be nonnegative, got {self.productivity_raw}")
        if self.has_profile not in (0, 1):
            raise ValueError(f"has_profile must be 0 or 1, got {self.has_profile}")


@dataclass(frozen=True)
class LoadReport:
    """Counts collected while ingesting (and later imputing) a dataset."""

    n_read: int
    n_dropped_floor: int
    n_kept: int
    n_missing_productivity: int
    n_imputed: int = 0
    n_groups_fallback: int = 0

    def format(self) -> str:
        lines = [
            f"rows_read: {self.n_read}",
            f"dropped_below_floor: {self.n_dropped_floor}",
            f"rows_kept: {self.n_kept}",
            f"missing_productivity: {self.n_missing_productivity}",
            f"imputed: {self.n_imputed}",
            f"imputation_global_fallback_groups: {self.n_groups_fallback}",
        ]
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.format(), encoding="utf-8")


class Dataset:
    """Immutable ordered collection of records with derived log-scale columns.

    Derived columns are always recomputed from the records: ``outcome_log`` is
    log10 of the raw outcome, ``productivity_log`` is log10(raw + log_offset)
    with missing values carried as NaN until :func:`impute_group_mean` fills
    them on the log scale.
    """

    def __init__(
        self,
        records: Sequence[UnitRecord],
        *,
        log_offset: float = 1.0,
        productivity_log: np.ndarray | None = None,
        load_report: LoadReport | None = None,
    ):
        self.records: tuple[UnitRecord, ...] = tuple(records)
        for rec in self.records:
            rec.validate()
        self.log_offset = float(log_offset)
        self.load_report = load_report
        n = len(self.records)

        self._columns: dict[str, np.ndarray] = {}
        self._columns["outcome_raw"] = np.array([r.outcome_raw for r in self.records], dtype=float)
        self._columns["outcome_log"] = np.log10(self._columns["outcome_raw"])
        self._columns["treatment"] = np.array([r.treatment for r in self.records], dtype=float)
        self._columns["working_years"] = np.array(
            [r.working_years for r in self.records], dtype=float
        )
        self._columns["has_profile"] = np.array([r.has_profile for r in self.records], dtype=float)
        if productivity_log is not None:
            plog = np.asarray(productivity_log, dtype=float).copy()
            if plog.shape != (n,):
                raise ValueError("productivity_log override length mismatch")
        else:
            plog = np.array(
                [
                    math.log10(r.productivity_raw + self.log_offset)
                    if r.productivity_raw is not None
                    else np.nan
                    for r in self.records
                ],
                dtype=float,
            )
        self._columns["productivity_log"] = plog
        for name in CATEGORICAL_DOMAINS:
            self._columns[name] = np.array([getattr(r, name) for r in self.records], dtype=object)
        for arr in self._columns.values():
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        """Return the named raw or derived column (read-only view)."""
        try:
            return self._columns[name]
        except KeyError:
            raise DesignSpecError(f"unknown field {name!r}") from None

    def has_field(self, name: str) -> bool:
        return name in self._columns

    def is_categorical(self, name: str) -> bool:
        return name in CATEGORICAL_DOMAINS

    @property
    def treatment(self) -> np.ndarray:
        return self._columns["treatment"]

    @property
    def outcome_log(self) -> np.ndarray:
        return self._columns["outcome_log"]

    def require_estimable(self) -> None:
        """Estimators need at least two rows and both treatment arms."""
        if len(self) < 2:
            raise DegenerateProblemError("dataset has fewer than 2 rows")
        z = self._columns["treatment"]
        if not (np.any(z == 1) and np.any(z == 0)):
            raise DegenerateProblemError("dataset does not contain both treatment arms")

    def with_productivity_log(
        self, values: np.ndarray, load_report: LoadReport | None = None
    ) -> "Dataset":
        return Dataset(
            self.records,
            log_offset=self.log_offset,
            productivity_log=values,
            load_report=load_report if load_report is not None else self.load_report,
        )

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Row selection that preserves derived (possibly imputed) columns."""
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            [self.records[i] for i in idx],
            log_offset=self.log_offset,
            productivity_log=self._columns["productivity_log"][idx],
        )


def _parse_number(text: str, column: str, line: int) -> float:
    text = text.strip()
    if not _NUMBER_RE.match(text):
        raise RowError(line, f"column {column!r}: not a plain number: {text!r}")
    return float(text)


def _parse_binary(text: str, column: str, line: int) -> int:
    text = text.strip()
    if text not in ("0", "1"):
        raise RowError(line, f"column {column!r}: expected 0 or 1, got {text!r}")
    return int(text)


def _parse_enum(text: str, column: str, domain: tuple[str, ...], line: int) -> str:
    text = text.strip()
    if text not in domain:
        raise RowError(line, f"column {column!r}: {text!r} not in {domain}")
    return text


def load_dataset(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    salary_floor: float = DEFAULT_SALARY_FLOOR,
    *,
    log_offset: float = 1.0,
) -> Dataset:
    """Load a UTF-8 CSV with a header row into a validated :class:`Dataset`.

    ``schema`` maps internal field names to CSV column names (defaults to
    :data:`DEFAULT_SCHEMA`). Rows whose outcome falls below ``salary_floor``
    are dropped and counted in the attached load report.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    missing_keys = set(DEFAULT_SCHEMA) - set(schema)
    if missing_keys:
        raise SchemaError(f"schema map lacks fields: {sorted(missing_keys)}")
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file not found: {path}")

    records: list[UnitRecord] = []
    n_read = 0
    n_dropped = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        absent = [col for col in schema.values() if col not in header]
        if absent:
            raise SchemaError(f"input header missing columns: {absent}")
        for row in reader:
            line = reader.line_num
            n_read += 1
            outcome = _parse_number(row[schema["outcome_raw"]], schema["outcome_raw"], line)
            if outcome <= 0 and salary_floor <= 0:
                raise RowError(line, f"nonpositive outcome {outcome} with no positive floor")
            if outcome < salary_floor:
                n_dropped += 1
                continue
            prod_text = row[schema["productivity_raw"]].strip()
            productivity = (
                None
                if prod_text == ""
                else _parse_number(prod_text, schema["productivity_raw"], line)
            )
            if productivity is not None and productivity < 0:
                raise RowError(line, f"negative productivity {productivity}")
            years = _parse_number(row[schema["working_years"]], schema["working_years"], line)
            if years < 0:
                raise RowError(line, f"negative working_years {years}")
            records.append(
                UnitRecord(
                    outcome_raw=outcome,
                    treatment=_parse_binary(row[schema["treatment"]], schema["treatment"], line),
                    title=_parse_enum(row[schema["title"]], schema["title"], TITLES, line),
                    university_class=_parse_enum(
                        row[schema["university_class"]],
                        schema["university_class"],
                        UNIVERSITY_CLASSES,
                        line,
                    ),
                    department=_parse_enum(
                        row[schema["department"]], schema["department"], DEPARTMENTS, line
                    ),
                    working_years=years,
                    productivity_raw=productivity,
                    has_profile=_parse_binary(
                        row[schema["has_profile"]], schema["has_profile"], line
                    ),
                )
            )
    if not records:
        raise EmptyDataError(f"no rows survived ingestion of {path}")
    n_missing = sum(1 for r in records if r.productivity_raw is None)
    report = LoadReport(
        n_read=n_read,
        n_dropped_floor=n_dropped,
        n_kept=len(records),
        n_missing_productivity=n_missing,
    )
    return Dataset(records, log_offset=log_offset, load_report=report)


def write_dataset_csv(
    d: Dataset, path: str | Path, schema: Mapping[str, str] | None = None
) -> None:
    """Write a dataset back out in the standard input CSV schema.

    Numbers are written with ``repr`` so a write/load round trip preserves
    raw field values exactly.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    fields = list(DEFAULT_SCHEMA)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema[f] for f in fields])
        for rec in d.records:
            row = []
            for f in fields:
                value = getattr(rec, f)
                if value is None:
                    row.append("")
                elif isinstance(value, float):
                    row.append(repr(value))
                else:
                    row.append(str(value))
            writer.writerow(row)


def impute_group_mean(
    d: Dataset,
    group_keys: Sequence[str] = ("treatment", "department", "title"),
    *,
    scale: str = "log",
) -> Dataset:
    """Fill missing productivity with the mean of similar-background units.

    Groups are the distinct value combinations of ``group_keys``; a group with
    no observed productivity falls back to the global mean. ``scale`` selects
    whether means are taken on the log column (default) or on the raw counts
    before the log transform. Idempotent: a dataset without missing values is
    returned unchanged apart from the report.
    """
    if not group_keys:
        raise DesignSpecError("group_keys must be nonempty")
    for key in group_keys:
        if not d.has_field(key):
            raise DesignSpecError(f"unknown group key {key!r}")
    if scale not in ("log", "raw"):
        raise DesignSpecError(f"scale must be 'log' or 'raw', got {scale!r}")

    if scale == "log":
        values = d.column("productivity_log").copy()
    else:
        values = np.array(
            [np.nan if r.productivity_raw is None else float(r.productivity_raw) for r in d.records]
        )
    observed = ~np.isnan(values)
    if not observed.any():
        raise DegenerateProblemError("all productivity values are missing; nothing to impute from")
    global_mean = float(values[observed].mean())

    keys = [tuple(str(d.column(k)[i]) for k in group_keys) for i in range(len(d))]
    sums: dict[tuple, float] = {}
    counts: dict[tuple, int] = {}
    for key, val, obs in zip(keys, values, observed):
        if obs:
            sums[key] = sums.get(key, 0.0) + float(val)
            counts[key] = counts.get(key, 0) + 1

    filled = values.copy()
    n_imputed = 0
    fallback_groups: set[tuple] = set()
    for i, (key, obs) in enumerate(zip(keys, observed)):
        if obs:
            continue
        n_imputed += 1
        if key in counts:
            filled[i] = sums[key] / counts[key]
        else:
            filled[i] = global_mean
            fallback_groups.add(key)

    if scale == "raw":
        plog = d.column("productivity_log").copy()
        miss = np.isnan(plog)
        plog[miss] = np.log10(filled[miss] + d.log_offset)
    else:
        plog = filled

    base = d.load_report or LoadReport(
        n_read=len(d), n_dropped_floor=0, n_kept=len(d), n_missing_productivity=int((~observed).sum())
    )
    report = replace(base, n_imputed=n_imputed, n_groups_fallback=len(fallback_groups))
    return d.with_productivity_log(plog, load_report=report)


@dataclass(frozen=True)
class Term:
    """One additive term of a design: a product over one or more fields.

    Categorical fields expand to dummy indicators. A single-field categorical
    term drops its reference level (first value of the declared domain); an
    interaction term keeps the full dummy set so each cell gets its own slope.
    ``drop_reference`` overrides that default when set.
    """

    fields: tuple[str, ...]
    drop_reference: bool | None = None

    def __init__(self, fields: Iterable[str], drop_reference: bool | None = None):
        object.__setattr__(self, "fields", tuple(fields))
        object.__setattr__(self, "drop_reference", drop_reference)
        if not self.fields:
            raise DesignSpecError("a term needs at least one field")

    def drops_reference(self) -> bool:
        if self.drop_reference is not None:
            return self.drop_reference
        return len(self.fields) == 1


@dataclass(frozen=True)
class DesignSpec:
    """Intercept flag plus an ordered tuple of :class:`Term` products."""

    terms: tuple[Term, ...] = ()
    intercept: bool = True

    def __init__(self, terms: Iterable[Term] = (), intercept: bool = True):
        object.__setattr__(self, "terms", tuple(terms))
        object.__setattr__(self, "intercept", intercept)

    def fields(self) -> tuple[str, ...]:
        seen: list[str] = []
        for term in self.terms:
            for f in term.fields:
                if f not in seen:
                    seen.append(f)
        return tuple(seen)


@dataclass(frozen=True)
class ColumnInfo:
    """Provenance of one design column: the factors whose product built it.

    Each factor is ``(field, level)`` with ``level`` None for numeric fields,
    so the column value is reconstructible from raw data row by row.
    """

    label: str
    factors: tuple[tuple[str, str | None], ...]


@dataclass
class DesignMatrix:
    """Dummy-coded, interaction-expanded numeric matrix with column provenance."""

    columns: list[ColumnInfo]
    values: np.ndarray
    intercept: bool = True

    def __post_init__(self):
        labels = [c.label for c in self.columns]
        if len(set(labels)) != len(labels):
            dupes = sorted({l for l in labels if labels.count(l) > 1})
            raise DesignSpecError(f"duplicate design column labels: {dupes}")
        if self.values.shape[1] != len(self.columns):
            raise DesignSpecError("column metadata does not match value width")
        self.values.setflags(write=False)

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.columns]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column_index(self, label: str) -> int:
        for i, c in enumerate(self.columns):
            if c.label == label:
                return i
        raise DesignSpecError(f"no design column labelled {label!r}")

    def rows(self, indices: Sequence[int]) -> "DesignMatrix":
        idx = np.asarray(indices, dtype=int)
        return DesignMatrix(
            columns=self.columns, values=self.values[idx].copy(), intercept=self.intercept
        )


def _factor_parts(d: Dataset, field_name: str, drop_reference: bool):
    """Expand one field into (label-part, level, value-vector) triples."""
    if d.is_categorical(field_name):
        domain = CATEGORICAL_DOMAINS[field_name]
        levels = domain[1:] if drop_reference else domain
        col = d.column(field_name)
        return [
            (f"{field_name}:{level}", level, (col == level).astype(float)) for level in levels
        ]
    values = d.column(field_name)
    if np.isnan(values).any():
        raise DesignSpecError(
            f"field {field_name!r} contains missing values; impute before building designs"
        )
    return [(field_name, None, values.astype(float))]


def build_design(d: Dataset, spec: DesignSpec) -> DesignMatrix:
    """Materialize a design: intercept, dummy columns, and interaction products."""
    for f in spec.fields():
        if not d.has_field(f):
            raise DesignSpecError(f"design references unknown field {f!r}")
    n = len(d)
    cols: list[np.ndarray] = []
    infos: list[ColumnInfo] = []
    if spec.intercept:
        cols.append(np.ones(n))
        infos.append(ColumnInfo("intercept", ()))
    for term in spec.terms:
        drop = term.drops_reference()
        parts_per_field = [_factor_parts(d, f, drop) for f in term.fields]
        for combo in product(*parts_per_field):
            label = "×".join(part[0] for part in combo)
            factors = tuple((f, part[1]) for f, part in zip(term.fields, combo))
            vec = combo[0][2].copy()
            for part in combo[1:]:
                vec = vec * part[2]
            cols.append(vec)
            infos.append(ColumnInfo(label, factors))
    if not cols:
        raise DesignSpecError("design has no columns (no intercept and no terms)")
    return DesignMatrix(columns=infos, values=np.column_stack(cols), intercept=spec.intercept)


def main_effects_spec(
    include_profile_flag: bool = False,
) -> DesignSpec:
    """Additive design: rank, institution class, department, years, productivity."""
    terms = [
        Term(("title",)),
        Term(("university_class",)),
        Term(("department",)),
        Term(("working_years",)),
        Term(("productivity_log",)),
    ]
    if include_profile_flag:
        terms.insert(0, Term(("has_profile",)))
    return DesignSpec(terms=terms, intercept=True)


def interaction_spec(include_profile_flag: bool = False) -> DesignSpec:
    """Per-rank experience slopes plus per class-by-department productivity slopes."""
    terms = [
        Term(("title", "working_years")),
        Term(("university_class", "department", "productivity_log")),
    ]
    if include_profile_flag:
        terms.insert(0, Term(("has_profile",)))
    return DesignSpec(terms=terms, intercept=True)
