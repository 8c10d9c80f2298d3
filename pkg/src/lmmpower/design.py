"""Experimental layout, model structures and design matrices.

The layout is a fully crossed subjects x items x condition design with the
condition coded -0.5 / +0.5.  Observations are stored subject-major, then
item, then condition.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

CONDITION_CODES = (-0.5, 0.5)


class DesignError(ValueError):
    """Raised for structurally invalid designs or datasets."""


class Structure(str, enum.Enum):
    MAXIMAL = "Maximal"
    ZERO_CORRELATION = "ZeroCorrelation"
    NO_ITEM_SLOPE = "NoItemSlope"
    NO_SUBJECT_SLOPE = "NoSubjectSlope"
    INTERCEPTS_ONLY = "InterceptsOnly"

    @property
    def subject_slope(self) -> bool:
        return self in (Structure.MAXIMAL, Structure.ZERO_CORRELATION, Structure.NO_ITEM_SLOPE)

    @property
    def item_slope(self) -> bool:
        return self in (Structure.MAXIMAL, Structure.ZERO_CORRELATION, Structure.NO_SUBJECT_SLOPE)

    @property
    def correlated(self) -> bool:
        return self is Structure.MAXIMAL

    @property
    def theta_positions(self) -> tuple[int, ...]:
        """Positions of the free relative-covariance entries in the packed 6-vector.

        The packed vector is ``(s00, s10, s11, i00, i10, i11)``: the column-major
        lower triangles of the subject and item factors.
        """
        return _THETA_POSITIONS[self]

    def contains(self, other: "Structure") -> bool:
        """True when ``other`` is obtained from ``self`` by fixing parameters at zero."""
        return set(other.theta_positions) <= set(self.theta_positions)

    @classmethod
    def parse(cls, name: str) -> "Structure":
        key = name.strip().replace("-", "").replace("_", "").lower()
        for s in cls:
            if s.value.lower() == key or s.name.replace("_", "").lower() == key:
                return s
        raise DesignError(f"unknown structure {name!r}")


_THETA_POSITIONS = {
    Structure.MAXIMAL: (0, 1, 2, 3, 4, 5),
    Structure.ZERO_CORRELATION: (0, 2, 3, 5),
    Structure.NO_ITEM_SLOPE: (0, 2, 3),
    Structure.NO_SUBJECT_SLOPE: (0, 3, 5),
    Structure.INTERCEPTS_ONLY: (0, 3),
}

# packed positions holding diagonal entries of a factor (bounded below by 0)
DIAGONAL_POSITIONS = frozenset({0, 2, 3, 5})


def enumerate_structures() -> list[Structure]:
    """The five candidate structures, most to least complex."""
    return [
        Structure.MAXIMAL,
        Structure.ZERO_CORRELATION,
        Structure.NO_ITEM_SLOPE,
        Structure.NO_SUBJECT_SLOPE,
        Structure.INTERCEPTS_ONLY,
    ]


@dataclass(frozen=True)
class ModelSpec:
    structure: Structure
    fixed_slope: bool = True

    @property
    def label(self) -> str:
        return f"{self.structure.value}/{'H1' if self.fixed_slope else 'H0'}"

    @property
    def n_theta(self) -> int:
        return len(self.structure.theta_positions)

    @property
    def n_fixed(self) -> int:
        return 2 if self.fixed_slope else 1

    @property
    def n_free_params(self) -> int:
        return variance_param_count(self) + self.n_fixed

    def nested_in(self, other: "ModelSpec") -> bool:
        if self.fixed_slope and not other.fixed_slope:
            return False
        return other.structure.contains(self.structure)


def variance_param_count(spec: ModelSpec | Structure) -> int:
    """Free covariance parameters including the residual SD."""
    structure = spec.structure if isinstance(spec, ModelSpec) else spec
    return len(structure.theta_positions) + 1


@dataclass(frozen=True)
class ExperimentDesign:
    n_subjects: int
    n_items: int
    n_conditions: int = field(default=2, init=False)
    condition_codes: tuple[float, float] = field(default=CONDITION_CODES, init=False)

    def __post_init__(self):
        for name in ("n_subjects", "n_items"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise DesignError(f"{name} must be a positive integer, got {v!r}")

    @property
    def n_obs(self) -> int:
        return self.n_subjects * self.n_items * self.n_conditions

    def index_vectors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Canonical (subject, item, x) vectors, subject-major."""
        s, i, c = np.meshgrid(
            np.arange(self.n_subjects), np.arange(self.n_items), np.arange(2), indexing="ij"
        )
        x = np.asarray(self.condition_codes)[c.ravel()]
        return s.ravel(), i.ravel(), x


PRESETS = {
    "large": ExperimentDesign(50, 20),
    "small": ExperimentDesign(30, 10),
}


@dataclass(frozen=True, eq=False)
class Dataset:
    """One balanced crossed sample.  Arrays are copied and made read-only."""

    y: np.ndarray
    subject_idx: np.ndarray
    item_idx: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        s = np.array(self.subject_idx)
        i = np.array(self.item_idx)
        x = np.array(self.x, dtype=float)
        n = len(y)
        if not (len(s) == len(i) == len(x) == n) or y.ndim != 1:
            raise DesignError("dataset vectors must be one-dimensional and of equal length")
        if n == 0:
            raise DesignError("empty dataset")
        if not (np.issubdtype(s.dtype, np.integer) and np.issubdtype(i.dtype, np.integer)):
            if not (np.all(s == np.round(s)) and np.all(i == np.round(i))):
                raise DesignError("subject and item indices must be integers")
        s = s.astype(np.int64)
        i = i.astype(np.int64)
        if s.min() < 0 or i.min() < 0:
            raise DesignError("negative subject or item index")
        if not np.all(np.isin(x, CONDITION_CODES)):
            raise DesignError("condition codes must be -0.5 or +0.5")
        ns, ni = int(s.max()) + 1, int(i.max()) + 1
        if n != ns * ni * 2:
            raise DesignError(f"expected {ns * ni * 2} observations for {ns}x{ni}x2, got {n}")
        cell = (s * ni + i) * 2 + (x > 0)
        if np.bincount(cell, minlength=n).max() != 1:
            raise DesignError("each (subject, item, condition) triple must appear exactly once")
        for name, arr in (("y", y), ("subject_idx", s), ("item_idx", i), ("x", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def n_subjects(self) -> int:
        return int(self.subject_idx.max()) + 1

    @property
    def n_items(self) -> int:
        return int(self.item_idx.max()) + 1

    @property
    def design(self) -> ExperimentDesign:
        return ExperimentDesign(self.n_subjects, self.n_items)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("y,subject,item,x\n")
            for yv, sv, iv, xv in zip(self.y.tolist(), self.subject_idx.tolist(),
                                      self.item_idx.tolist(), self.x.tolist()):
                fh.write(f"{yv!r},{sv},{iv},{xv!r}\n")

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        try:
            data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
        except OSError as exc:
            raise DesignError(f"cannot read dataset {path}: {exc}") from exc
        missing = {"y", "subject", "item", "x"} - set(data.dtype.names or ())
        if missing:
            raise DesignError(f"{path}: missing columns {sorted(missing)}")
        data = np.atleast_1d(data)
        return cls(data["y"], data["subject"], data["item"], data["x"])


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    """Fixed-effect matrix X and dense random-effect matrix Z.

    Z columns are grouped by factor (subjects first, then items); within a
    factor each level contributes its terms contiguously (intercept, then
    slope when present).
    """

    X: np.ndarray
    Z: np.ndarray
    blocks: tuple[tuple[str, int, tuple[str, ...]], ...]

    @property
    def n_random(self) -> int:
        return self.Z.shape[1]


def _factor_terms(structure: Structure) -> tuple[tuple[str, ...], tuple[str, ...]]:
    subj = ("intercept", "slope") if structure.subject_slope else ("intercept",)
    item = ("intercept", "slope") if structure.item_slope else ("intercept",)
    return subj, item


def build_matrices(dataset: Dataset, spec: ModelSpec) -> DesignMatrices:
    y, s, i, x = dataset.y, dataset.subject_idx, dataset.item_idx, dataset.x
    if not (len(y) == len(s) == len(i) == len(x)):
        raise DesignError("dimension mismatch between dataset vectors")
    n = len(y)
    X = np.ones((n, 1)) if not spec.fixed_slope else np.column_stack([np.ones(n), x])
    subj_terms, item_terms = _factor_terms(spec.structure)
    blocks = (
        ("subject", dataset.n_subjects, subj_terms),
        ("item", dataset.n_items, item_terms),
    )
    q = sum(levels * len(terms) for _, levels, terms in blocks)
    Z = np.zeros((n, q))
    rows = np.arange(n)
    offset = 0
    for (name, levels, terms), idx in zip(blocks, (s, i)):
        k = len(terms)
        Z[rows, offset + k * idx] = 1.0
        if k == 2:
            Z[rows, offset + k * idx + 1] = x
        offset += levels * k
    return DesignMatrices(X, Z, blocks)


def relative_factor_blocks(theta_packed) -> tuple[np.ndarray, np.ndarray]:
    """Subject and item 2x2 lower-triangular relative factors from the packed vector."""
    t = np.asarray(theta_packed, dtype=float)
    ls = np.array([[t[0], 0.0], [t[1], t[2]]])
    li = np.array([[t[3], 0.0], [t[4], t[5]]])
    return ls, li


def pack_theta(theta, structure: Structure) -> np.ndarray:
    """Embed a structure's free theta entries into the packed 6-vector."""
    theta = np.asarray(theta, dtype=float)
    pos = structure.theta_positions
    if theta.shape != (len(pos),):
        raise DesignError(f"{structure.value} expects {len(pos)} theta entries, got {theta.shape}")
    packed = np.zeros(6)
    packed[list(pos)] = theta
    return packed


def relative_covariance_factor(theta, spec: ModelSpec, dataset_or_design) -> np.ndarray:
    """Block-diagonal Lambda (q x q) matching the column layout of :func:`build_matrices`."""
    ls, li = relative_factor_blocks(pack_theta(theta, spec.structure))
    subj_terms, item_terms = _factor_terms(spec.structure)
    ls = ls[: len(subj_terms), : len(subj_terms)] if len(subj_terms) == 1 else ls
    li = li[: len(item_terms), : len(item_terms)] if len(item_terms) == 1 else li
    ns, ni = dataset_or_design.n_subjects, dataset_or_design.n_items
    return _block_diag(np.kron(np.eye(ns), ls), np.kron(np.eye(ni), li))


def _block_diag(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + b.shape[0], a.shape[1] + b.shape[1]))
    out[: a.shape[0], : a.shape[1]] = a
    out[a.shape[0]:, a.shape[1]:] = b
    return out

