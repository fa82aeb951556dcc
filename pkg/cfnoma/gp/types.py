import math
import numbers
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel
from scipy import sparse

from ..errors import DomainError, GPError


Number = Union[int, float]


def _freeze(exps: Mapping[str, float]) -> Tuple[Tuple[str, float], ...]:
    return tuple(sorted((v, float(e)) for v, e in exps.items() if e != 0))


@dataclass(frozen=True)
class Monomial:
    coef: float
    exps: Tuple[Tuple[str, float], ...] = ()

    def __post_init__(self):
        if not (self.coef > 0 and math.isfinite(self.coef)):
            raise DomainError(f"monomial coefficient must be positive and finite, got {self.coef}")
        if isinstance(self.exps, Mapping):
            object.__setattr__(self, "exps", _freeze(self.exps))
        else:
            object.__setattr__(self, "exps", _freeze(dict(self.exps)))

    @classmethod
    def var(cls, name: str, exp: float = 1.0) -> "Monomial":
        return cls(1.0, {name: exp})

    @classmethod
    def const(cls, value: float) -> "Monomial":
        return cls(float(value))

    @property
    def exponents(self) -> Dict[str, float]:
        return dict(self.exps)

    @property
    def variables(self) -> List[str]:
        return [v for v, _ in self.exps]

    def __call__(self, values: Mapping[str, float]) -> float:
        out = self.coef
        for v, e in self.exps:
            out *= values[v] ** e
        return out

    def __mul__(self, other):
        if isinstance(other, numbers.Real):
            return Monomial(self.coef * other, self.exps)
        if isinstance(other, Monomial):
            exps = self.exponents
            for v, e in other.exps:
                exps[v] = exps.get(v, 0.0) + e
            return Monomial(self.coef * other.coef, exps)
        if isinstance(other, Posynomial):
            return other * self
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, numbers.Real):
            return Monomial(self.coef / other, self.exps)
        if isinstance(other, Monomial):
            return self * other ** -1
        return NotImplemented

    def __rtruediv__(self, other):
        if isinstance(other, numbers.Real):
            return Monomial.const(other) * self ** -1
        return NotImplemented

    def __pow__(self, power: Number) -> "Monomial":
        return Monomial(self.coef**power, {v: e * power for v, e in self.exps})

    def __add__(self, other):
        return Posynomial([self]) + other

    __radd__ = __add__

    def __repr__(self) -> str:
        parts = [f"{self.coef:.6g}"] + [f"{v}^{e:g}" for v, e in self.exps]
        return "*".join(parts)


class Posynomial:
    """Sum of monomials; like terms are merged on construction."""

    __slots__ = ("terms",)

    def __init__(self, terms: Iterable[Monomial]):
        merged: Dict[Tuple[Tuple[str, float], ...], float] = {}
        for term in terms:
            merged[term.exps] = merged.get(term.exps, 0.0) + term.coef
        if not merged:
            raise DomainError("posynomial needs at least one term")
        self.terms: Tuple[Monomial, ...] = tuple(Monomial(c, e) for e, c in merged.items())

    @classmethod
    def of(cls, value: Union["Posynomial", Monomial, Number]) -> "Posynomial":
        if isinstance(value, Posynomial):
            return value
        if isinstance(value, Monomial):
            return cls([value])
        return cls([Monomial.const(value)])

    @property
    def variables(self) -> List[str]:
        return sorted({v for t in self.terms for v in t.variables})

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __call__(self, values: Mapping[str, float]) -> float:
        return math.fsum(t(values) for t in self.terms)

    def __add__(self, other):
        if isinstance(other, (numbers.Real, Monomial, Posynomial)):
            return Posynomial(self.terms + Posynomial.of(other).terms)
        return NotImplemented

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (numbers.Real, Monomial)):
            return Posynomial(t * other for t in self.terms)
        if isinstance(other, Posynomial):
            return Posynomial(a * b for a in self.terms for b in other.terms)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (numbers.Real, Monomial)):
            return Posynomial(t / other for t in self.terms)
        return NotImplemented

    def __repr__(self) -> str:
        return " + ".join(repr(t) for t in self.terms)


def square_of_sum(monomials: Sequence[Monomial]) -> Posynomial:
    """(Σ_i m_i)² expanded into squares and doubled cross products."""
    terms = [m * m for m in monomials]
    for i in range(len(monomials)):
        for j in range(i + 1, len(monomials)):
            terms.append(monomials[i] * monomials[j] * 2.0)
    return Posynomial(terms)


Bound = Tuple[Optional[float], Optional[float]]


@dataclass
class GPProblem:
    """minimize objective s.t. each inequality ≤ 1, each equality = 1."""

    objective: Posynomial
    inequalities: List[Posynomial] = field(default_factory=list)
    equalities: List[Monomial] = field(default_factory=list)
    bounds: Dict[str, Bound] = field(default_factory=dict)
    labels: List[str] = field(default_factory=list)
    variables: Optional[List[str]] = None
    declared: bool = field(default=False, init=False, repr=False)

    def __post_init__(self):
        self.objective = Posynomial.of(self.objective)
        self.inequalities = [Posynomial.of(p) for p in self.inequalities]
        if self.labels and len(self.labels) != len(self.inequalities):
            raise GPError("labels must match inequalities one to one")
        if not self.labels:
            self.labels = [f"ineq[{i}]" for i in range(len(self.inequalities))]
        referenced = set(self.objective.variables)
        for p in self.inequalities:
            referenced.update(p.variables)
        for m in self.equalities:
            referenced.update(m.variables)
        referenced.update(self.bounds)
        self.declared = self.variables is not None
        if self.variables is None:
            self.variables = sorted(referenced)
        else:
            undeclared = referenced - set(self.variables)
            if undeclared:
                raise GPError(f"undeclared variables: {sorted(undeclared)}")
        if not self.variables:
            raise GPError("problem has no variables")
        for name, (lo, hi) in self.bounds.items():
            if (lo is not None and lo <= 0) or (hi is not None and hi <= 0):
                raise GPError(f"bounds of {name} must be positive")
            if lo is not None and hi is not None and lo > hi:
                raise GPError(f"empty bounds for {name}: [{lo}, {hi}]")

    def add(self, constraint: Union[Posynomial, Monomial], label: Optional[str] = None) -> None:
        """Append an inequality; variables it introduces join the problem unless they were declared up front."""
        posy = Posynomial.of(constraint)
        fresh = set(posy.variables) - set(self.variables)
        if fresh:
            if self.declared:
                raise GPError(f"undeclared variables: {sorted(fresh)}")
            self.variables = sorted(set(self.variables) | fresh)
        self.inequalities.append(posy)
        self.labels.append(label or f"ineq[{len(self.inequalities) - 1}]")

    @property
    def num_constraints(self) -> int:
        return len(self.inequalities) + len(self.equalities)


class GPSolution(BaseModel):
    values: Dict[str, float]
    objective: float
    newton_iterations: int
    duality_gap: float
    multipliers: Dict[str, float] = {}


class KKTReport(BaseModel):
    primal_residual: float
    equality_residual: float
    stationarity: float
    complementary_slackness: float
    active: List[str] = []

    def passed(self, tol: float) -> bool:
        return max(
            self.primal_residual, self.equality_residual, self.stationarity, self.complementary_slackness
        ) <= tol


@dataclass
class StackedPosynomials:
    """Log-domain form of a list of posynomials: rows A·y + b, grouped by segment."""

    A: sparse.csr_matrix
    b: np.ndarray
    starts: np.ndarray
    seg_id: np.ndarray
    count: int
    rollup: sparse.csr_matrix

    @classmethod
    def build(cls, posys: Sequence[Posynomial], index: Mapping[str, int]) -> "StackedPosynomials":
        rows, cols, data, b, seg_id, starts = [], [], [], [], [], []
        r = 0
        for k, p in enumerate(posys):
            starts.append(r)
            for term in p.terms:
                for v, e in term.exps:
                    rows.append(r)
                    cols.append(index[v])
                    data.append(e)
                b.append(math.log(term.coef))
                seg_id.append(k)
                r += 1
        A = sparse.csr_matrix((data, (rows, cols)), shape=(r, len(index)))
        rollup = sparse.csr_matrix((np.ones(r), (seg_id, np.arange(r))), shape=(len(posys), r))
        return cls(
            A=A,
            b=np.asarray(b, dtype=float),
            starts=np.asarray(starts, dtype=np.int64),
            seg_id=np.asarray(seg_id, dtype=np.int64),
            count=len(posys),
            rollup=rollup,
        )

    def lse(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Per-segment log-sum-exp values and softmax weights per row."""
        if self.count == 0:
            return np.zeros(0), np.zeros(0)
        z = self.A @ y + self.b
        zmax = np.maximum.reduceat(z, self.starts)
        e = np.exp(z - zmax[self.seg_id])
        total = np.add.reduceat(e, self.starts)
        return zmax + np.log(total), e / total[self.seg_id]

    def jacobian(self, w: np.ndarray) -> np.ndarray:
        """Row k is the gradient of LSE_k."""
        return (self.rollup @ sparse.csr_matrix(self.A.multiply(w[:, None]))).toarray()

    def weighted_hessian(self, w: np.ndarray, jac: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Σ_k c_k ∇²LSE_k."""
        if self.count == 0:
            return 0.0
        scaled = sparse.csr_matrix(self.A.multiply((c[self.seg_id] * w)[:, None]))
        return (self.A.T @ scaled).toarray() - jac.T @ (c[:, None] * jac)
