"""Covar matrices, ridge regression by batch gradient descent, polynomial batches."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..executor import BatchResult, ResultTable
from ..query import AggregateExpr, AggregateQuery, Factor, constant, identity, power

INTERCEPT = "1"


def _product(attrs: Sequence[str], categorical) -> tuple[tuple[str, ...], tuple[Factor, ...]]:
    """Group-by and factors of a product of attributes (one-hot categoricals)."""
    gb, exps = [], {}
    for a in attrs:
        if a == INTERCEPT:
            continue
        if categorical(a):
            if a not in gb:
                gb.append(a)
        else:
            exps[a] = exps.get(a, 0) + 1
    factors = tuple(identity(a) if e == 1 else power(a, e) for a, e in exps.items())
    return tuple(gb), factors or (constant(1.0),)


# linear regression

def covar_items(features: Sequence[str], label: str | None) -> list[str]:
    return [INTERCEPT] + list(features) + ([label] if label is not None else [])


def covar_batch(features: Sequence[str], label: str | None, categorical=lambda a: False
                ) -> list[AggregateQuery]:
    """One query per unordered pair of {1, features, label}.

    With n = len(features) + 1 (the intercept counts as a feature) this is
    (n+1)(n+2)/2 queries of one aggregate each.
    """
    items = covar_items(features, label)
    out = []
    for i, j in itertools.combinations_with_replacement(range(len(items)), 2):
        gb, factors = _product([items[i], items[j]], categorical)
        out.append(AggregateQuery(f"covar_{i}_{j}", gb, (AggregateExpr((factors,)),)))
    return out


@dataclass
class CovarMatrix:
    items: list[str]
    categorical: dict[str, bool]
    entries: dict[tuple[int, int], ResultTable]

    @classmethod
    def from_results(cls, features, label, categorical, results: Mapping[str, ResultTable]):
        items = covar_items(features, label)
        entries = {}
        for i, j in itertools.combinations_with_replacement(range(len(items)), 2):
            entries[(i, j)] = results[f"covar_{i}_{j}"]
        cat = {a: bool(categorical(a)) for a in items if a != INTERCEPT}
        cat[INTERCEPT] = False
        return cls(items, cat, entries)

    @property
    def count(self) -> float:
        return self.entries[(0, 0)].scalar()

    def entry(self, j: int, k: int) -> ResultTable:
        return self.entries[(min(j, k), max(j, k))]

    def columns(self) -> list[tuple[str, object]]:
        """Design columns: (item, None) or (categorical item, code) per category."""
        cols = []
        for i, a in enumerate(self.items):
            if self.categorical[a]:
                codes = self.entry(0, i).keys[a]
                cols += [(a, c.item()) for c in codes]
            else:
                cols.append((a, None))
        return cols

    def sigma(self) -> tuple[np.ndarray, list[tuple[str, object]]]:
        """Dense non-centered covariance over the one-hot design columns."""
        cols = self.columns()
        pos = {a: i for i, a in enumerate(self.items)}
        lookup: dict[tuple[int, int], dict] = {}
        m = len(cols)
        S = np.zeros((m, m))
        for r, (a, ca) in enumerate(cols):
            for c in range(r, m):
                b, cb = cols[c]
                i, j = pos[a], pos[b]
                key = (min(i, j), max(i, j))
                if key not in lookup:
                    lookup[key] = self.entry(i, j).to_dict()
                d = lookup[key]
                t = self.entry(i, j)
                if a == b and self.categorical[a]:
                    v = d.get((ca,), (0.0,))[0] if ca == cb else 0.0
                else:
                    kv = {}
                    if ca is not None:
                        kv[a] = ca
                    if cb is not None:
                        kv[b] = cb
                    k = tuple(kv[g] for g in t.group_by)
                    v = d.get(k, (0.0,))[0]
                S[r, c] = S[c, r] = v
        return S, cols


def covar_matrix(engine, features, label, categorical=None, threads=None) -> CovarMatrix:
    cat = categorical or engine.db.catalog.is_categorical
    batch = covar_batch(features, label, cat)
    res = engine.run(batch) if threads is None else engine.compile(batch).run(threads)
    return CovarMatrix.from_results(features, label, cat, res.results)


@dataclass
class ModelParams:
    theta: np.ndarray
    columns: list
    lam: float
    trace: list[float] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    singular: bool = False

    def coefficients(self) -> dict:
        return {c: float(t) for c, t in zip(self.columns, self.theta)}


def objective(S: np.ndarray, N: float, theta: np.ndarray, lam: float, label_idx: int) -> float:
    pen = theta.copy()
    pen[label_idx] = 0.0
    return float(theta @ S @ theta) / (2 * N) + lam / 2 * float(pen @ pen)


def gradient(S: np.ndarray, N: float, theta: np.ndarray, lam: float, label_idx: int) -> np.ndarray:
    """(1/N) sum_j theta_j Sigma_jk + lam theta_k; zero at the fixed label slot."""
    g = S @ theta / N + lam * theta
    g[label_idx] = 0.0
    return g


def bgd_train(covar: CovarMatrix, lam: float = 0.0, theta0: np.ndarray | None = None,
              max_iter: int = 10000, tol: float = 1e-8, sigma: float = 1e-4,
              gtol: float = 1e-8) -> ModelParams:
    """Ridge regression from the covar matrix alone (no pass over the data).

    Armijo backtracking on J, Barzilai-Borwein initial step after the first
    iteration. The label parameter is fixed at -1 and not penalized.

    Stops once the relative decrease of J drops below `tol` and the gradient
    norm has shrunk below `gtol` times its initial value. J alone flattens out
    (it is quadratic in the error) long before theta settles.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    S, cols = covar.sigma()
    N = covar.count
    label_idx = len(cols) - 1
    m = len(cols)
    theta = np.zeros(m) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    theta[label_idx] = -1.0
    feat = S[:label_idx, :label_idx]
    singular = bool(N <= 0 or np.linalg.matrix_rank(feat / max(N, 1.0) + lam * np.eye(label_idx))
                    < label_idx)
    if N <= 0:
        return ModelParams(theta, cols, lam, singular=True)
    J = objective(S, N, theta, lam, label_idx)
    g = gradient(S, N, theta, lam, label_idx)
    out = ModelParams(theta, cols, lam, [J], singular=singular)
    g0 = math.sqrt(float(g @ g))
    prev_theta = prev_g = None
    step = 1.0
    for it in range(1, max_iter + 1):
        gg = float(g @ g)
        if gg == 0.0:
            out.converged = True
            break
        if prev_theta is not None:
            dt, dg = theta - prev_theta, g - prev_g
            denom = float(dt @ dg)
            step = float(dt @ dt) / denom if denom > 0 else 1.0
        while True:
            cand = theta - step * g
            Jc = objective(S, N, cand, lam, label_idx)
            if Jc <= J - sigma * step * gg or step < 1e-30:
                break
            step *= 0.5
        if Jc >= J:
            # no representable decrease left
            out.converged = True
            break
        prev_theta, prev_g = theta, g
        theta = cand
        g = gradient(S, N, theta, lam, label_idx)
        out.trace.append(Jc)
        out.steps.append(step)
        out.iterations = it
        dec = (J - Jc) / max(abs(J), 1e-300)
        J = Jc
        if dec < tol and math.sqrt(float(g @ g)) <= gtol * g0:
            out.converged = True
            break
    out.theta = theta
    return out


def closed_form(S: np.ndarray, N: float, lam: float) -> np.ndarray:
    """Normal-equation solution with the label slot fixed at -1."""
    k = S.shape[0] - 1
    A = S[:k, :k] / N + lam * np.eye(k)
    b = S[:k, k] / N
    return np.concatenate([np.linalg.solve(A, b), [-1.0]])


# polynomial regression

def monomials(variables: Sequence[str], degree: int) -> list[tuple[str, ...]]:
    """All monomials of total degree <= `degree`, as sorted variable multisets."""
    out = []
    for d in range(degree + 1):
        out += list(itertools.combinations_with_replacement(variables, d))
    return out


def poly_regression_batch(features: Sequence[str], label: str, degree: int,
                          categorical=lambda a: False) -> list[AggregateQuery]:
    """One aggregate per unordered pair of monomials of degree <= d.

    Variables are the features and the label (n of them); there are
    C(n+d, d) monomials and hence C(n+d,d)(C(n+d,d)+1)/2 aggregates.
    Categorical variables with a positive exponent become group-bys.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    variables = list(features) + [label]
    monos = monomials(variables, degree)
    out = []
    for i, j in itertools.combinations_with_replacement(range(len(monos)), 2):
        gb, factors = _product(list(monos[i]) + list(monos[j]), categorical)
        out.append(AggregateQuery(f"poly_{i}_{j}", gb, (AggregateExpr((factors,)),)))
    return out


def poly_aggregate_count(n: int, d: int) -> int:
    c = math.comb(n + d, d)
    return (c * c + c) // 2


def linear_aggregate_count(n: int) -> int:
    return (n + 1) * (n + 2) // 2


def batch_aggregate_count(batch: Sequence[AggregateQuery]) -> int:
    return sum(len(q.aggregates) for q in batch)


def poly_design(results: BatchResult | Mapping[str, ResultTable], features, label, degree):
    """Dense sum matrix over monomials (continuous variables only)."""
    res = results.results if isinstance(results, BatchResult) else results
    monos = monomials(list(features) + [label], degree)
    m = len(monos)
    S = np.zeros((m, m))
    for i, j in itertools.combinations_with_replacement(range(m), 2):
        S[i, j] = S[j, i] = res[f"poly_{i}_{j}"].scalar()
    return S, monos
