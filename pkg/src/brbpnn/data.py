"""Peeling dataset, normalization, model output selection and fold plan."""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CSV_HEADER = ("case", "theta_p_deg", "u_max_nm", "Fn_max_nN", "Ft_max_nN", "u_det_nm", "alpha_det_deg")
# CSV header -> PeelingRecord attribute
COLUMN_ATTRS = {
    "theta_p_deg": "theta_p",
    "u_max_nm": "u_max",
    "Fn_max_nN": "fn_max",
    "Ft_max_nN": "ft_max",
    "u_det_nm": "u_det",
    "alpha_det_deg": "alpha_det",
}
NUMERIC_COLUMNS = tuple(COLUMN_ATTRS.values())

# FE results: case, peeling angle [deg], u_max [nm], Fn_max [nN], Ft_max [nN],
# u_det [nm], alpha_det [deg]
_CANONICAL_ROWS = (
    (1, 10, 41.8, 174.1584, 1722.719, 393.4, 25.64973),
    (2, 15, 35.6, 171.1613, 1529.699, 263.8, 25.57726),
    (3, 20, 33.8, 165.5169, 1370.545, 199.6, 25.56427),
    (4, 25, 32.4, 160.1255, 1240.153, 161.6, 25.59890),
    (5, 30, 31.2, 155.0284, 1129.391, 136.6, 25.60988),
    (6, 35, 30.6, 150.3356, 1034.944, 119.0, 25.55115),
    (7, 40, 30.2, 145.7655, 950.3074, 106.2, 25.55958),
    (8, 45, 30.0, 141.2537, 872.9422, 96.6, 25.61840),
    (9, 50, 30.2, 136.8172, 801.4117, 89.2, 25.65779),
    (10, 55, 30.6, 132.2554, 733.2346, 83.4, 25.62680),
    (11, 60, 31.4, 127.5051, 667.3803, 78.8, 25.53845),
    (12, 65, 32.8, 122.5176, 602.7001, 75.4, 25.66338),
    (13, 70, 34.4, 117.0706, 537.6730, 72.6, 25.51802),
    (14, 75, 36.8, 110.9777, 471.2534, 70.6, 25.49363),
    (15, 80, 40.2, 104.0514, 402.4569, 69.4, 25.69447),
    (16, 85, 44.8, 95.87533, 330.1474, 68.4, 25.44845),
    (17, 90, 51.8, 86.18540, 254.5306, 68.2, 25.49894),
)
CANONICAL_SIZE = 17
# sha256 of to_csv(load_dataset()); guards the embedded table against edits
CANONICAL_SHA256 = "79ddb033a87e31ec54a34326d24a8419d99f2bae0f4b88ee51de0fb68e08124c"


class DataError(ValueError):
    """Dataset ingestion or validation failure."""


@dataclass(frozen=True)
class PeelingRecord:
    case: int
    theta_p: float
    u_max: float
    fn_max: float
    ft_max: float
    u_det: float
    alpha_det: float

    def value(self, column: str) -> float:
        return getattr(self, COLUMN_ATTRS.get(column, column))


@dataclass(frozen=True)
class ModelSpecChoice:
    kind: str
    name: str
    outputs: tuple[str, ...]
    structure: str

    @property
    def n_outputs(self) -> int:
        return len(self.outputs)


MODEL_I = ModelSpecChoice("I", "BR-BPNN-I", ("u_max", "fn_max", "ft_max"), "1-5-3")
MODEL_II = ModelSpecChoice("II", "BR-BPNN-II", ("u_det", "alpha_det"), "1-2-2")
MODELS = {"I": MODEL_I, "II": MODEL_II}
INPUT_COLUMNS = ("theta_p",)


def get_model(kind: str) -> ModelSpecChoice:
    try:
        return MODELS[kind.upper().removeprefix("BR-BPNN-")]
    except KeyError:
        raise ValueError(f"unknown model {kind!r}; expected I or II") from None


def load_dataset(source: str | Path | None = None, *, canonical: bool | None = None) -> list[PeelingRecord]:
    """Load the embedded FE table (``source=None``) or a CSV file.

    With ``canonical=True`` the CSV must have exactly 17 rows; it defaults to
    True for the embedded table and False for files.
    """
    if source is None:
        return [PeelingRecord(*row) for row in _CANONICAL_ROWS]
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    records = parse_csv(text, origin=str(path))
    if canonical and len(records) != CANONICAL_SIZE:
        raise DataError(f"{path}: expected {CANONICAL_SIZE} data rows, found {len(records)}")
    return records


def parse_csv(text: str, origin: str = "<csv>") -> list[PeelingRecord]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{origin}: empty file") from None
    missing = [c for c in CSV_HEADER if c not in header]
    if missing:
        raise DataError(f"{origin}: line 1: missing column(s) {', '.join(missing)}")
    idx = {c: header.index(c) for c in CSV_HEADER}
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        vals = {}
        for col in CSV_HEADER:
            i = idx[col]
            cell = row[i].strip() if i < len(row) else ""
            try:
                vals[col] = int(cell) if col == "case" else float(cell)
            except ValueError:
                raise DataError(f"{origin}: line {lineno}, column {col!r}: not a number: {cell!r}") from None
            if col != "case" and not np.isfinite(vals[col]):
                raise DataError(f"{origin}: line {lineno}, column {col!r}: non-finite value")
        records.append(PeelingRecord(vals["case"], *(vals[c] for c in CSV_HEADER[1:])))
    if not records:
        raise DataError(f"{origin}: no data rows")
    return records


def to_csv(records: Iterable[PeelingRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([r.case] + [repr(float(getattr(r, a))) for a in NUMERIC_COLUMNS])
    return buf.getvalue()


def dataset_checksum(records: Iterable[PeelingRecord]) -> str:
    return hashlib.sha256(to_csv(records).encode()).hexdigest()


@dataclass(frozen=True)
class Split:
    number: int
    train: tuple[int, ...]
    test: tuple[int, ...]

    @property
    def fold(self) -> str:
        return f"Fold {self.number}"

    @property
    def n_train(self) -> int:
        return len(self.train)

    @property
    def n_test(self) -> int:
        return len(self.test)


@dataclass(frozen=True)
class FoldPlan:
    splits: tuple[Split, ...]
    n_cases: int = CANONICAL_SIZE

    def __getitem__(self, number: int) -> Split:
        if not 1 <= number <= len(self.splits):
            raise IndexError(f"split must be in 1..{len(self.splits)}, got {number}")
        return self.splits[number - 1]

    def __iter__(self):
        return iter(self.splits)

    def __len__(self):
        return len(self.splits)


# test folds, 1-based case numbers
TEST_FOLDS = ((3, 4, 7, 9), (12, 13, 17), (1, 6, 10, 11), (2, 8, 14), (5, 15, 16))


def fold_plan() -> FoldPlan:
    """Five splits; each training set is the complement of its test fold."""
    cases = set(range(1, CANONICAL_SIZE + 1))
    return FoldPlan(tuple(Split(i + 1, tuple(sorted(cases - set(f))), f) for i, f in enumerate(TEST_FOLDS)))


def check_partition(plan: FoldPlan) -> None:
    """Raise DataError unless the test folds partition the cases and train = complement."""
    cases = set(range(1, plan.n_cases + 1))
    seen: set[int] = set()
    for s in plan:
        test, train = set(s.test), set(s.train)
        if seen & test:
            raise DataError(f"split {s.number}: test fold overlaps an earlier fold")
        seen |= test
        if train & test or train | test != cases:
            raise DataError(f"split {s.number}: training set is not the complement of the test fold")
    if seen != cases:
        raise DataError(f"test folds do not cover cases {sorted(cases - seen)}")


@dataclass(frozen=True)
class Normalizer:
    """Per-column division by the column maximum."""

    maxima: dict[str, float]

    @classmethod
    def fit(cls, records: Sequence[PeelingRecord], columns: Iterable[str] = NUMERIC_COLUMNS) -> "Normalizer":
        if not records:
            raise DataError("cannot normalize an empty dataset")
        maxima = {}
        for col in columns:
            m = max(r.value(col) for r in records)
            if m <= 0:
                raise DataError(f"column {col!r} has non-positive maximum {m}")
            maxima[col] = float(m)
        return cls(maxima)

    def apply(self, values, columns: Sequence[str]) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) / self._scale(columns)

    def invert(self, values, columns: Sequence[str]) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self._scale(columns)

    def _scale(self, columns):
        return np.array([self.maxima[c] for c in columns])


def columns_of(records: Sequence[PeelingRecord], columns: Sequence[str]) -> np.ndarray:
    return np.array([[r.value(c) for c in columns] for r in records], dtype=np.float64)


def _select(records, cases):
    by_case = {r.case: r for r in records}
    try:
        return [by_case[c] for c in cases]
    except KeyError as exc:
        raise DataError(f"case {exc.args[0]} not present in dataset") from None


def build_pairs(records, choice: ModelSpecChoice, cases: Sequence[int], normalizer: Normalizer | None = None):
    """Normalized (inputs (n, 1), targets (n, n_outputs)) for the given cases."""
    norm = normalizer or Normalizer.fit(records)
    rows = _select(records, cases)
    u = norm.apply(columns_of(rows, INPUT_COLUMNS), INPUT_COLUMNS)
    t = norm.apply(columns_of(rows, choice.outputs), choice.outputs)
    return u, t


def build_training_pairs(records, choice: ModelSpecChoice, split: int, normalizer: Normalizer | None = None):
    return build_pairs(records, choice, fold_plan()[split].train, normalizer)


def build_testing_pairs(records, choice: ModelSpecChoice, split: int, normalizer: Normalizer | None = None):
    return build_pairs(records, choice, fold_plan()[split].test, normalizer)
