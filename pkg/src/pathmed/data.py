"""Dataset container, formula mini-language, and design-matrix construction.

All fitting operations in the package consume a :class:`Dataset` (five blocks:
baseline covariates, binary treatment, intermediate covariates, mediator,
outcome) together with :class:`Formula` term lists. The treatment column is
recoded internally to {0, 1} with the reference level mapped to 0; formulas
reference it through the synthetic name ``"A"`` and the mediator through
``"M"``. Covariate columns are referenced by their own names.

Formula text grammar: terms separated by ``+``; ``1`` is the intercept,
``name`` a column, ``name^k`` a power, ``name:name[:name...]`` a product of
columns. Example: ``1 + c0 + A + c11 + c12 + c13 + M + A:M``.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, replace
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import (
    CodingError,
    FormulaError,
    MissingDataError,
    ParseError,
    SchemaError,
)

RESERVED_NAMES = ("A", "M")


# ---------------------------------------------------------------------------
# Treatment coding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TreatmentCoding:
    """Comparison level ``a`` and reference level ``a_prime``.

    After ingestion the treatment column holds 1 for ``a`` and 0 for
    ``a_prime``; every downstream indicator and propensity refers to the
    recoded values.
    """

    a: float
    a_prime: float

    def __post_init__(self):
        if self.a == self.a_prime:
            raise CodingError("treatment levels a and a_prime must differ")


# ---------------------------------------------------------------------------
# Formula terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Intercept:
    def label(self) -> str:
        return "1"


@dataclass(frozen=True)
class Col:
    name: str

    def label(self) -> str:
        return self.name


@dataclass(frozen=True)
class Pow:
    name: str
    k: int

    def __post_init__(self):
        if self.k < 2:
            raise FormulaError(f"power term needs exponent >= 2, got {self.k}")

    def label(self) -> str:
        return f"{self.name}^{self.k}"


@dataclass(frozen=True)
class Interact:
    """Product of two or more named columns (repeats allowed)."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 2:
            raise FormulaError("interaction needs at least two column names")
        object.__setattr__(self, "names", tuple(sorted(self.names)))
        if len(set(self.names)) == 1:
            raise FormulaError(
                f"use {self.names[0]}^{len(self.names)} instead of a self-interaction"
            )

    def label(self) -> str:
        return ":".join(self.names)


Term = Union[Intercept, Col, Pow, Interact]

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _normalize_product(names: Sequence[str]) -> Term:
    names = tuple(sorted(names))
    if len(names) == 1:
        return Col(names[0])
    if len(set(names)) == 1:
        return Pow(names[0], len(names))
    return Interact(names)


def _parse_term(token: str) -> Term:
    token = token.strip()
    if token == "1":
        return Intercept()
    if ":" in token:
        parts = [p.strip() for p in token.split(":")]
        expanded: list[str] = []
        for part in parts:
            if "^" in part:
                name, _, kstr = part.partition("^")
                expanded.extend([name.strip()] * _parse_exponent(kstr, token))
            else:
                if not _NAME_RE.match(part):
                    raise ParseError(f"bad column name {part!r} in term {token!r}")
                expanded.append(part)
        for name in expanded:
            if not _NAME_RE.match(name):
                raise ParseError(f"bad column name {name!r} in term {token!r}")
        return _normalize_product(expanded)
    if "^" in token:
        name, _, kstr = token.partition("^")
        name = name.strip()
        if not _NAME_RE.match(name):
            raise ParseError(f"bad column name {name!r} in term {token!r}")
        k = _parse_exponent(kstr, token)
        return Col(name) if k == 1 else Pow(name, k)
    if not _NAME_RE.match(token):
        raise ParseError(f"cannot parse formula term {token!r}")
    return Col(token)


def _parse_exponent(kstr: str, token: str) -> int:
    try:
        k = int(kstr.strip())
    except ValueError:
        raise ParseError(f"bad exponent in term {token!r}") from None
    if k < 1:
        raise ParseError(f"exponent must be >= 1 in term {token!r}")
    return k


@dataclass(frozen=True)
class Formula:
    """Ordered, duplicate-free list of terms; evaluated in listed order."""

    terms: tuple[Term, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        seen = set()
        for term in self.terms:
            if term in seen:
                raise FormulaError(f"duplicate term {term.label()!r}")
            seen.add(term)

    @classmethod
    def parse(cls, text: str) -> "Formula":
        tokens = [tok for tok in (t.strip() for t in text.split("+")) if tok]
        if not tokens:
            raise ParseError(f"empty formula {text!r}")
        return cls(tuple(_parse_term(tok) for tok in tokens))

    def __str__(self) -> str:
        return " + ".join(term.label() for term in self.terms)

    def names(self) -> tuple[str, ...]:
        """Column names referenced, in first-appearance order."""
        out: list[str] = []
        for term in self.terms:
            if isinstance(term, Col):
                cand = [term.name]
            elif isinstance(term, Pow):
                cand = [term.name]
            elif isinstance(term, Interact):
                cand = list(term.names)
            else:
                cand = []
            for name in cand:
                if name not in out:
                    out.append(name)
        return tuple(out)

    def has_intercept(self) -> bool:
        return any(isinstance(t, Intercept) for t in self.terms)

    def drop_treatment_terms(self) -> "Formula":
        """Remove terms that are identically zero at the reference arm
        (recoded A = 0): A itself, its powers, and any product containing A."""
        kept = []
        for term in self.terms:
            if isinstance(term, Col) and term.name == "A":
                continue
            if isinstance(term, Pow) and term.name == "A":
                continue
            if isinstance(term, Interact) and "A" in term.names:
                continue
            kept.append(term)
        return Formula(tuple(kept))


def formula(text: str) -> Formula:
    """Shorthand for :meth:`Formula.parse`."""
    return Formula.parse(text)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Immutable rectangular sample of (C0, A, C1, M, Y) rows.

    ``a`` holds the recoded treatment (reference -> 0, comparison -> 1).
    """

    c0: np.ndarray
    a: np.ndarray
    c1: np.ndarray
    m: np.ndarray
    y: np.ndarray
    c0_names: tuple[str, ...]
    c1_names: tuple[str, ...]

    def __post_init__(self):
        c0 = np.asarray(self.c0, dtype=float)
        if c0.ndim == 1:
            c0 = c0[:, None]
        c1 = np.asarray(self.c1, dtype=float)
        if c1.ndim == 1:
            c1 = c1[:, None]
        object.__setattr__(self, "c0", c0)
        object.__setattr__(self, "c1", c1)
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "c0_names", tuple(self.c0_names))
        object.__setattr__(self, "c1_names", tuple(self.c1_names))

        n = self.a.shape[0]
        for name, block, want in (
            ("c0", self.c0, (n, len(self.c0_names))),
            ("c1", self.c1, (n, len(self.c1_names))),
            ("m", self.m, (n,)),
            ("y", self.y, (n,)),
        ):
            if block.shape != want:
                raise SchemaError(f"block {name!r} has shape {block.shape}, expected {want}")
        for name, block in (("c0", self.c0), ("a", self.a), ("c1", self.c1),
                            ("m", self.m), ("y", self.y)):
            if not np.all(np.isfinite(block)):
                raise MissingDataError(f"block {name!r} contains non-finite values")
        if not np.isin(self.a, (0.0, 1.0)).all():
            raise CodingError("treatment column must contain only 0/1 after recoding")
        names = list(self.c0_names) + list(self.c1_names)
        if len(set(names)) != len(names):
            raise SchemaError("covariate column names must be unique across blocks")
        for reserved in RESERVED_NAMES:
            if reserved in names:
                raise SchemaError(f"column name {reserved!r} is reserved")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def column(self, name: str) -> np.ndarray:
        if name == "A":
            return self.a
        if name == "M":
            return self.m
        if name in self.c0_names:
            return self.c0[:, self.c0_names.index(name)]
        if name in self.c1_names:
            return self.c1[:, self.c1_names.index(name)]
        raise FormulaError(f"name {name!r} does not resolve against the dataset")

    def subset(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            c0=self.c0[rows],
            a=self.a[rows],
            c1=self.c1[rows],
            m=self.m[rows],
            y=self.y[rows],
            c0_names=self.c0_names,
            c1_names=self.c1_names,
        )

    def with_blocks(self, **blocks) -> "Dataset":
        """Copy with some blocks substituted (used for counterfactual
        evaluation of fitted nuisances, e.g. c1 replaced by its predicted
        mean under the reference arm)."""
        return replace(self, **blocks)


# ---------------------------------------------------------------------------
# Design matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    term_labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "term_labels", tuple(self.term_labels))
        if self.values.ndim != 2 or self.values.shape[1] != len(self.term_labels):
            raise SchemaError("design values and term labels disagree")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]


def build_design(
    data: Dataset,
    formula: Formula,
    a_override: float | None = None,
    m_override: float | np.ndarray | None = None,
) -> DesignMatrix:
    """Evaluate a formula on a dataset, column by column.

    ``a_override`` substitutes the recoded treatment column (0 or 1) before
    expansion; ``m_override`` substitutes the mediator column (scalar or
    per-row vector). Interactions are elementwise products.
    """
    n = data.n
    if a_override is not None:
        if a_override not in (0, 1):
            raise CodingError(f"a_override must be 0 or 1, got {a_override!r}")
        a_col = np.full(n, float(a_override))
    else:
        a_col = None
    if m_override is not None:
        m_col = np.broadcast_to(np.asarray(m_override, dtype=float), (n,))
    else:
        m_col = None

    def col(name: str) -> np.ndarray:
        if name == "A" and a_col is not None:
            return a_col
        if name == "M" and m_col is not None:
            return m_col
        return data.column(name)

    columns = []
    for term in formula.terms:
        if isinstance(term, Intercept):
            columns.append(np.ones(n))
        elif isinstance(term, Col):
            columns.append(col(term.name))
        elif isinstance(term, Pow):
            columns.append(col(term.name) ** term.k)
        else:
            prod = col(term.names[0]).copy()
            for name in term.names[1:]:
                prod = prod * col(name)
            columns.append(prod)
    values = np.column_stack(columns) if columns else np.empty((n, 0))
    if not np.all(np.isfinite(values)):
        raise FormulaError(f"formula {formula} produced non-finite design entries")
    return DesignMatrix(values=values, term_labels=tuple(t.label() for t in formula.terms))


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnRoles:
    """Maps dataset roles to CSV column names."""

    c0: tuple[str, ...]
    a: str
    c1: tuple[str, ...]
    m: str
    y: str

    def __post_init__(self):
        object.__setattr__(self, "c0", tuple(self.c0))
        object.__setattr__(self, "c1", tuple(self.c1))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "ColumnRoles":
        missing = [k for k in ("c0", "a", "c1", "m", "y") if k not in mapping]
        if missing:
            raise SchemaError(f"column-role map lacks roles {missing}")
        c0 = mapping["c0"]
        c1 = mapping["c1"]
        return cls(
            c0=tuple([c0] if isinstance(c0, str) else c0),
            a=str(mapping["a"]),
            c1=tuple([c1] if isinstance(c1, str) else c1),
            m=str(mapping["m"]),
            y=str(mapping["y"]),
        )

    def all_names(self) -> tuple[str, ...]:
        return self.c0 + (self.a,) + self.c1 + (self.m, self.y)


def load_csv(path, schema: ColumnRoles | Mapping[str, object], coding: TreatmentCoding) -> Dataset:
    """Read a comma-separated file (header row, '.' decimal point) into a
    Dataset, recoding the treatment to {0, 1} with a_prime -> 0.

    Fails loudly: missing columns raise SchemaError, non-numeric cells raise
    ParseError with row/column, empty cells raise MissingDataError, and
    treatment values outside {a, a_prime} raise CodingError.
    """
    if not isinstance(schema, ColumnRoles):
        schema = ColumnRoles.from_mapping(schema)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        missing = [name for name in schema.all_names() if name not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        index = {name: header.index(name) for name in schema.all_names()}

        rows: list[list[float]] = []
        for lineno, record in enumerate(reader, start=2):
            if not record or all(cell.strip() == "" for cell in record):
                continue
            parsed = []
            for name in schema.all_names():
                cell = record[index[name]].strip() if index[name] < len(record) else ""
                if cell == "":
                    raise MissingDataError(
                        f"{path}: missing value at row {lineno}, column {name!r}"
                    )
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, column {name!r}"
                    ) from None
            rows.append(parsed)

    if not rows:
        raise SchemaError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=float)
    cols = {name: table[:, i] for i, name in enumerate(schema.all_names())}

    a_raw = cols[schema.a]
    recoded = np.full(a_raw.shape, np.nan)
    recoded[a_raw == coding.a] = 1.0
    recoded[a_raw == coding.a_prime] = 0.0
    bad = np.isnan(recoded)
    if bad.any():
        offending = sorted(set(a_raw[bad].tolist()))
        raise CodingError(
            f"{path}: treatment column {schema.a!r} contains value(s) {offending} "
            f"outside coding {{{coding.a}, {coding.a_prime}}}"
        )

    return Dataset(
        c0=np.column_stack([cols[name] for name in schema.c0]),
        a=recoded,
        c1=np.column_stack([cols[name] for name in schema.c1]),
        m=cols[schema.m],
        y=cols[schema.y],
        c0_names=schema.c0,
        c1_names=schema.c1,
    )
