"""scikit-learn style wrappers around the pipeline.

``InvariantFeatures`` learns the invariant system of a problem in ``fit``
and maps jet points to invariant values in ``transform``.  ``CongruenceTester``
decides pairs of immersions.  Neither estimator learns from data; ``fit``
only runs the symbolic pipeline, so ``X`` and ``y`` are accepted and ignored.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .congruence import decide_congruence
from .expr import batch_evaluator
from .pipeline import run_pipeline
from .problem import Problem, load_problem


def _problem(p) -> Problem:
    return p if isinstance(p, Problem) else load_problem(p)


def _run(prob: Problem, seed):
    res = run_pipeline(prob, seed=seed)
    if not res.frame_report.passed:
        raise ValueError("moving frame failed verification: " + "; ".join(res.frame_report.messages))
    return res


class InvariantFeatures(TransformerMixin, BaseEstimator):
    """Nonconstant congruence invariants as features of jet points.

    Parameters
    ----------
    problem : Problem or str
        A loaded problem or a problem file / shipped name.
    seed : int or None
        Overrides the problem seed.
    """

    def __init__(self, problem="se2", seed=None):
        self.problem = problem
        self.seed = seed

    def fit(self, X=None, y=None):
        prob = _problem(self.problem)
        self.result_ = _run(prob, self.seed)
        inv = self.result_.invariants
        self.invariants_ = inv.nonconstant
        self.coordinates_ = list(inv.space.coordinates)
        self.n_features_in_ = len(self.coordinates_)
        self._eval = batch_evaluator([e.expr for e in self.invariants_], self.coordinates_)
        return self

    def transform(self, X):
        """``X`` has one row per point of ``J^(k+1)``, columns in ``coordinates_`` order."""
        check_is_fitted(self, "result_")
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected shape (n, {self.n_features_in_}), got {X.shape}")
        return self._eval(X)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "result_")
        base = self.result_.invariants.space.base
        return np.array([f"{e.label}/d{base[e.base]}" for e in self.invariants_], dtype=object)


class CongruenceTester(BaseEstimator):
    """Local congruence decisions for pairs ``(psi1, psi2, x0)``.

    ``predict`` returns the decision strings; ``verdicts_`` keeps the full
    verdicts of the last call.
    """

    def __init__(self, problem="se2", tol=None, half_width=None, seed=None):
        self.problem = problem
        self.tol = tol
        self.half_width = half_width
        self.seed = seed

    def fit(self, X=None, y=None):
        self.problem_ = _problem(self.problem)
        self.result_ = _run(self.problem_, self.seed)
        return self

    def decide(self, psi1, psi2, x0):
        check_is_fitted(self, "result_")
        p = self.problem_
        return decide_congruence(
            self.result_.prolonged, self.result_.invariants, psi1, psi2, x0,
            tol=p.tolerances["congruence"] if self.tol is None else self.tol,
            half_width=p.half_width if self.half_width is None else self.half_width,
            seed=p.seed if self.seed is None else self.seed, complex_mode=p.complex_mode,
            constant_structure=self.result_.constant_structure)

    def predict(self, pairs):
        self.verdicts_ = [self.decide(a, b, x0) for a, b, x0 in pairs]
        return np.array([v.decision for v in self.verdicts_], dtype=object)
