"""scikit-learn transformer front end for the attack driver."""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..featimp import AggregationConfig
from .config import AttackConfig
from .runner import run_attack


class AttackTransformer(TransformerMixin, BaseEstimator):
    """Maps clean images to adversarial images crafted on ``source``.

    ``transform(X, y)`` attacks the true labels ``y``; with ``y=None`` the
    source's own predictions are used. ``extra`` holds any further
    :class:`AttackConfig` fields (e.g. ``{"diverse_inputs": True}``).
    The result of the last call is kept in ``last_result_``.
    """

    def __init__(self, source=None, method="FIA", epsilon=16.0, iterations=10, tap=None,
                 drop_prob=0.3, ensemble_number=30, seed=0, extra=None):
        self.source = source
        self.method = method
        self.epsilon = epsilon
        self.iterations = iterations
        self.tap = tap
        self.drop_prob = drop_prob
        self.ensemble_number = ensemble_number
        self.seed = seed
        self.extra = extra

    def _config(self):
        return AttackConfig(method=self.method, epsilon=self.epsilon, iterations=self.iterations,
                            tap=self.tap, seed=self.seed,
                            aggregation=AggregationConfig(self.drop_prob, self.ensemble_number),
                            **(self.extra or {}))

    def fit(self, X=None, y=None):
        if self.source is None:
            raise ValueError("AttackTransformer needs a fitted source model")
        check_is_fitted(self.source)
        self.config_ = self._config()
        return self

    def transform(self, X, y=None):
        check_is_fitted(self, "config_")
        self.last_result_ = run_attack(self.source, X, y, self.config_)
        return self.last_result_.adversarial.numpy()

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).transform(X, y)
