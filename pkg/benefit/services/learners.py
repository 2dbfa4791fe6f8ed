"""
Regression backends for nuisance and second-stage fits.
Four interchangeable learners behind one fit/predict surface:
global linear (least squares or ridge), k-nearest neighbours,
Gaussian kernel smoother (local constant) and local linear smoother.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.linear_model import LinearRegression, Ridge
from sklearn.neighbors import KNeighborsRegressor, NearestNeighbors
from statsmodels.nonparametric.kernel_regression import KernelReg

from benefit.pipeline.errors import ArgumentError, NumericError
from config.settings import LEARNER_PRESETS, get_learner_preset

logger = logging.getLogger("learners")

KINDS = ("linear", "knn", "kernel", "local_linear")

_ALIASES = {
    "linear": "linear",
    "global-linear": "linear",
    "global_linear": "linear",
    "ridge": "linear",
    "knn": "knn",
    "k-nearest-neighbors": "knn",
    "kernel": "kernel",
    "kernel-smoother": "kernel",
    "kernel_smoother": "kernel",
    "nw": "kernel",
    "local_linear": "local_linear",
    "local-linear": "local_linear",
    "ll": "local_linear",
}

# Half squared scaled distance past which exp() underflows to zero
_UNDERFLOW = 700.0


@dataclass(frozen=True)
class LearnerSpec:
    """
    kind: linear | knn | kernel | local_linear
    lam:  ridge penalty (linear only), >= 0
    k:    neighbour count (knn only), >= 1
    h:    bandwidth (kernel / local_linear); None selects the rule of thumb
    """

    kind: str = "kernel"
    lam: float = 0.0
    k: int = 10
    h: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"Unknown learner kind: '{self.kind}'. Available: {', '.join(KINDS)}",
                                module="nuisance")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ArgumentError(f"Ridge penalty must be >= 0, got {self.lam}", module="nuisance")
        if int(self.k) != self.k or self.k < 1:
            raise ArgumentError(f"knn requires an integer k >= 1, got {self.k}", module="nuisance")
        if self.h is not None and (not np.isfinite(self.h) or self.h <= 0):
            raise ArgumentError(f"Bandwidth must be > 0, got {self.h}", module="nuisance")

    def to_string(self) -> str:
        if self.kind == "linear":
            return f"linear:lambda={self.lam:g}"
        if self.kind == "knn":
            return f"knn:k={int(self.k)}"
        return self.kind if self.h is None else f"{self.kind}:h={self.h:g}"

    def __str__(self):
        return self.to_string()


def parse_learner_spec(text) -> LearnerSpec:
    """
    Parse "kind[:key=value,...]" (e.g. "kernel:h=0.3", "knn:k=25",
    "linear:lambda=0.1") or a preset name from config.settings.
    """
    if isinstance(text, LearnerSpec):
        return text
    raw = str(text).strip()
    if not raw:
        raise ArgumentError("Empty learner spec", module="nuisance")

    head, _, tail = raw.partition(":")
    head = head.strip().lower()
    if head not in _ALIASES:
        if head in LEARNER_PRESETS and not tail:
            return parse_learner_spec(get_learner_preset(head))
        available = ", ".join(sorted(set(_ALIASES) | set(LEARNER_PRESETS)))
        raise ArgumentError(f"Unknown learner: '{head}'. Available: {available}", module="nuisance")

    kind = _ALIASES[head]
    kwargs = {}
    for item in filter(None, (p.strip() for p in tail.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip().lower()
        if not sep:
            raise ArgumentError(f"Malformed learner option '{item}' in '{raw}'", module="nuisance")
        try:
            if key in ("lambda", "lam", "alpha"):
                kwargs["lam"] = float(value)
            elif key == "k":
                kwargs["k"] = int(value)
            elif key in ("h", "bandwidth"):
                kwargs["h"] = None if value.strip().lower() == "auto" else float(value)
            else:
                raise ArgumentError(f"Unknown learner option '{key}' in '{raw}'", module="nuisance")
        except ValueError as e:
            if isinstance(e, ArgumentError):
                raise
            raise ArgumentError(f"Bad value for '{key}' in learner spec '{raw}'", module="nuisance")
    if head == "ridge" and "lam" not in kwargs:
        kwargs["lam"] = 1.0
    return LearnerSpec(kind=kind, **kwargs)


def silverman_bandwidth(features: np.ndarray) -> np.ndarray:
    """Per-dimension rule of thumb 1.06 * sd * n^(-1/5)."""
    n = features.shape[0]
    sd = features.std(axis=0, ddof=1) if n > 1 else np.zeros(features.shape[1])
    h = 1.06 * sd * n ** (-0.2)
    # Constant columns carry no information; any positive width works
    return np.where(h > 0, h, 1.0)


def _as_matrix(features, name="features") -> np.ndarray:
    arr = np.asarray(features, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ArgumentError(f"{name} must be a 2-D array, got shape {arr.shape}", module="nuisance")
    return arr


class FittedRegression:
    """Immutable fitted model. Subclasses implement `_predict`."""

    def __init__(self, spec: LearnerSpec, features: np.ndarray, targets: np.ndarray):
        self.spec = spec
        self.n_train, self.n_features = features.shape
        self._x = features.copy()
        self._y = targets.copy()
        self._x.setflags(write=False)
        self._y.setflags(write=False)

    def predict(self, features) -> np.ndarray:
        x = _as_matrix(features)
        if x.shape[1] != self.n_features:
            raise ArgumentError(
                f"Expected {self.n_features} covariate column(s), got {x.shape[1]}", module="nuisance"
            )
        if x.shape[0] == 0:
            return np.zeros(0)
        return np.asarray(self._predict(x), dtype=float).reshape(-1)

    def _predict(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.spec}, n_train={self.n_train})"


class ConstantRegression(FittedRegression):
    """Intercept-only fit: the training mean."""

    def __init__(self, spec, features, targets):
        super().__init__(spec, features, targets)
        self.value = float(np.mean(targets))

    def _predict(self, x):
        return np.full(x.shape[0], self.value)


class LinearFit(FittedRegression):
    def __init__(self, spec, features, targets):
        super().__init__(spec, features, targets)
        if spec.lam > 0:
            self.model = Ridge(alpha=spec.lam)
        else:
            centered = features - features.mean(axis=0)
            rank = np.linalg.matrix_rank(centered) if features.shape[0] > 1 else 0
            if rank < features.shape[1]:
                raise NumericError(
                    f"Singular design for unpenalized linear fit (rank {rank} < {features.shape[1]} "
                    f"on {features.shape[0]} rows); use a ridge penalty lambda > 0",
                    module="nuisance",
                )
            self.model = LinearRegression()
        self.model.fit(features, targets)

    def _predict(self, x):
        return self.model.predict(x)


class KnnFit(FittedRegression):
    def __init__(self, spec, features, targets):
        super().__init__(spec, features, targets)
        if spec.k > features.shape[0]:
            raise ArgumentError(
                f"knn requires k <= training size ({spec.k} > {features.shape[0]})", module="nuisance"
            )
        self.model = KNeighborsRegressor(n_neighbors=int(spec.k), algorithm="brute")
        self.model.fit(features, targets)

    def _predict(self, x):
        return self.model.predict(x)


class _SmootherFit(FittedRegression):
    """Gaussian product-kernel smoother backed by statsmodels KernelReg."""

    REG_TYPE = "lc"

    def __init__(self, spec, features, targets):
        super().__init__(spec, features, targets)
        if spec.h is None:
            self.bandwidth = silverman_bandwidth(features)
            logger.debug(f"🧠 Rule-of-thumb bandwidth {np.round(self.bandwidth, 4).tolist()} ({spec.kind})")
        else:
            self.bandwidth = np.full(features.shape[1], float(spec.h))
        self.model = KernelReg(endog=self._y, exog=self._x, var_type="c" * self.n_features,
                               reg_type=self.REG_TYPE, bw=self.bandwidth)
        self._nearest = NearestNeighbors(n_neighbors=1).fit(self._x / self.bandwidth)

    def _predict(self, x):
        dist, idx = self._nearest.kneighbors(x / self.bandwidth)
        # every kernel weight underflows: the smoother's limit is the nearest target
        far = 0.5 * dist[:, 0] ** 2 > _UNDERFLOW
        out = self._y[idx[:, 0]].astype(float)
        if not far.all():
            with np.errstate(all="ignore"):
                out[~far] = self.model.fit(x[~far])[0]
        return out


class KernelFit(_SmootherFit):
    """Nadaraya-Watson (local constant) smoother."""

    REG_TYPE = "lc"


class LocalLinearFit(_SmootherFit):
    REG_TYPE = "ll"


_BACKENDS = {
    "linear": LinearFit,
    "knn": KnnFit,
    "kernel": KernelFit,
    "local_linear": LocalLinearFit,
}


def fit_regression(spec, features, targets) -> FittedRegression:
    """
    Fit `spec` on (features, targets). A zero-column design always yields
    the intercept-only fit, whatever the learner.
    """
    spec = parse_learner_spec(spec)
    x = _as_matrix(features)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if x.shape[0] == 0 or y.size == 0:
        raise ArgumentError("Cannot fit a regression on an empty training set", module="nuisance")
    if x.shape[0] != y.size:
        raise ArgumentError(f"features/targets length mismatch: {x.shape[0]} vs {y.size}", module="nuisance")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise NumericError("Non-finite values in regression inputs", module="nuisance")

    if x.shape[1] == 0:
        return ConstantRegression(spec, x, y)
    return _BACKENDS[spec.kind](spec, x, y)
