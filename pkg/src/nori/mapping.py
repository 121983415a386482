"""Neural-network mapping stage: measures -> predicted listener outcome.

Small fully-connected nets (one tanh hidden layer, 10 units) trained by
full-batch gradient descent with momentum, step halving on loss increase
and early stopping on a validation split. MlpClassifier predicts binary
keyword recognition (cross-entropy); MlpRegressor maps averaged measures to
word-correct scores (mean squared error). Both follow the scikit-learn
estimator conventions (fit/predict/get_params/set_params).
"""

import inspect
import json
from dataclasses import dataclass

import numpy as np

from .validation import as_float_array, rng_for

SCHEMA_VERSION = 1


def init_params(dim, hidden, seed):
    rng = rng_for("mlp-init", dim, hidden, seed)
    w1 = rng.normal(0.0, 1.0 / np.sqrt(dim), (dim, hidden))
    b1 = np.zeros(hidden)
    # small output layer: the model starts near the bias-only solution
    w2 = rng.normal(0.0, 0.1 / np.sqrt(hidden), hidden)
    b2 = np.zeros(1)
    return pack_params(w1, b1, w2, b2)


def pack_params(w1, b1, w2, b2):
    return np.concatenate([w1.ravel(), b1, w2, np.atleast_1d(b2)])


def unpack_params(flat, dim, hidden):
    i = 0
    w1 = flat[i:i + dim * hidden].reshape(dim, hidden); i += dim * hidden
    b1 = flat[i:i + hidden]; i += hidden
    w2 = flat[i:i + hidden]; i += hidden
    b2 = flat[i]
    return w1, b1, w2, b2


def _forward(flat, x, hidden):
    w1, b1, w2, b2 = unpack_params(flat, x.shape[1], hidden)
    z1 = x @ w1 + b1
    a1 = np.tanh(z1)
    out = a1 @ w2 + b2
    return out, a1


def loss_and_grad(flat, x, y, hidden, kind):
    """Loss and flat gradient; kind is 'classifier' (cross-entropy on a
    logistic output) or 'regressor' (mean squared error, linear output)."""
    n = x.shape[0]
    w1, b1, w2, b2 = unpack_params(flat, x.shape[1], hidden)
    out, a1 = _forward(flat, x, hidden)
    if kind == "classifier":
        # stable cross-entropy via log(1 + exp(-|out|))
        p = 1.0 / (1.0 + np.exp(-out))
        loss = float(np.mean(
            np.logaddexp(0.0, out) - y * out
        ))
        dout = (p - y) / n
    elif kind == "regressor":
        err = out - y
        loss = float(np.mean(err**2))
        dout = 2.0 * err / n
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    dw2 = a1.T @ dout
    db2 = np.sum(dout)
    da1 = np.outer(dout, w2)
    dz1 = da1 * (1.0 - a1**2)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return loss, pack_params(dw1, db1, dw2, db2)


def predict_output(flat, x, hidden, kind):
    out, _ = _forward(flat, x, hidden)
    if kind == "classifier":
        return 1.0 / (1.0 + np.exp(-out))
    return out


class _EstimatorMixin:
    """get_params/set_params over the constructor signature."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(f"unknown parameter {name!r} for {type(self).__name__}")
            setattr(self, name, value)
        return self


class _MlpBase(_EstimatorMixin):
    kind = None

    def __init__(self, hidden_units=10, learning_rate=0.01, momentum=0.9,
                 lr_growth=1.05, max_epochs=500, patience=20, min_epochs=150,
                 val_fraction=0.15, seed=0):
        self.hidden_units = hidden_units
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.lr_growth = lr_growth   # bold-driver growth on improving epochs
        self.max_epochs = max_epochs
        self.patience = patience
        # the small output-layer init fits the bias first and only then grows
        # the feature pathway; stopping must not fire during that plateau
        self.min_epochs = min_epochs
        self.val_fraction = val_fraction
        self.seed = seed

    def _standardize_fit(self, x):
        self.mean_ = x.mean(axis=0)
        std = x.std(axis=0)
        self.std_ = np.where(std > 0, std, 1.0)

    def _standardize(self, x):
        return (x - self.mean_) / self.std_

    def _check_x(self, x, fitted=False):
        x = as_float_array(x, "X")
        if x.ndim == 1:
            x = x[:, None]
        if fitted and x.shape[1] != len(self.mean_):
            raise ValueError(f"dimension mismatch: {x.shape[1]} vs {len(self.mean_)}")
        return x

    def fit(self, x, y, x_val=None, y_val=None):
        x = self._check_x(x)
        y = as_float_array(y, "y", ndim=1)
        if len(x) != len(y):
            raise ValueError("X and y length mismatch")
        self._validate_targets(y)

        if x_val is None:
            rng = rng_for("mlp-valsplit", self.seed, len(x))
            order = rng.permutation(len(x))
            n_val = max(1, int(round(self.val_fraction * len(x))))
            val_idx, tr_idx = order[:n_val], order[n_val:]
            if len(tr_idx) == 0:
                raise ValueError("not enough data to carve out a validation split")
            x_val, y_val = x[val_idx], y[val_idx]
            x, y = x[tr_idx], y[tr_idx]
        else:
            x_val = self._check_x(x_val)
            y_val = as_float_array(y_val, "y_val", ndim=1)

        self._standardize_fit(x)
        xs = self._standardize(x)
        xvs = self._standardize(x_val)

        params = init_params(xs.shape[1], self.hidden_units, self.seed)
        velocity = np.zeros_like(params)
        lr = self.learning_rate
        prev_loss = np.inf
        best_val = np.inf
        best_params = params.copy()
        stall = 0
        for epoch in range(self.max_epochs):
            loss, grad = loss_and_grad(params, xs, y, self.hidden_units, self.kind)
            if not np.isfinite(loss):
                raise ValueError("training diverged: non-finite loss")
            if loss > prev_loss:
                lr = max(lr * 0.5, 1e-7)
                velocity[:] = 0.0
            else:
                lr = min(lr * self.lr_growth, 10.0)
            prev_loss = loss
            velocity = self.momentum * velocity - lr * grad
            params = params + velocity
            val_loss, _ = loss_and_grad(params, xvs, y_val, self.hidden_units, self.kind)
            if val_loss < best_val:
                best_val = val_loss
                best_params = params.copy()
                stall = 0
            else:
                stall += 1
                if stall >= self.patience and epoch + 1 >= self.min_epochs:
                    break
        self.params_ = best_params
        self.val_loss_ = float(best_val)
        self.final_val_loss_ = float(val_loss)
        self.epochs_ = epoch + 1
        return self

    def _validate_targets(self, y):
        raise NotImplementedError

    def _raw_output(self, x):
        if not hasattr(self, "params_"):
            raise ValueError("model is not fitted")
        x = self._check_x(x, fitted=True)
        return predict_output(self.params_, self._standardize(x), self.hidden_units, self.kind)


class MlpClassifier(_MlpBase):
    kind = "classifier"

    def _validate_targets(self, y):
        if np.any((y < 0.0) | (y > 1.0)):
            raise ValueError("classifier targets must lie in [0, 1]")
        if len(np.unique(y)) < 2:
            raise ValueError("training data contains a single class")
        # fractional targets are allowed: rows sharing one input can be
        # collapsed to their empirical rate, which has the same full-batch
        # cross-entropy gradient as the expanded 0/1 rows

    def predict_prob(self, x):
        return self._raw_output(x)

    predict_proba = predict_prob

    def predict(self, x):
        """Binary decisions at threshold 0.5; ties count as recognized."""
        return self.predict_prob(x) >= 0.5


class MlpRegressor(_MlpBase):
    kind = "regressor"

    def _validate_targets(self, y):
        if len(y) < 2:
            raise ValueError("regressor needs at least 2 points")

    def predict(self, x):
        return self._raw_output(x)


def save_model(path, model):
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": model.kind,
        "hidden_units": model.hidden_units,
        "dim": int(len(model.mean_)),
        "activation": "tanh",
        "weights": [float(v) for v in model.params_],
        "standardization": {
            "mean": [float(v) for v in model.mean_],
            "std": [float(v) for v in model.std_],
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported model schema version")
    cls = MlpClassifier if payload["kind"] == "classifier" else MlpRegressor
    model = cls(hidden_units=payload["hidden_units"])
    model.params_ = np.asarray(payload["weights"], dtype=np.float64)
    model.mean_ = np.asarray(payload["standardization"]["mean"], dtype=np.float64)
    model.std_ = np.asarray(payload["standardization"]["std"], dtype=np.float64)
    return model


@dataclass(frozen=True)
class CvPlan:
    """k-way partition: per fold, test = 1 group, validation = next group,
    train = the rest (70/15/15 for k=7 after rounding)."""

    k: int = 7
    seed: int = 0

    def __post_init__(self):
        if self.k < 3:
            raise ValueError("CvPlan needs k >= 3 (train/val/test must be disjoint)")


def cv_folds(n, plan: CvPlan, groups=None):
    """Index folds [(train, val, test)]; groups keep tied rows together."""
    if groups is None:
        groups = np.arange(n)
    groups = np.asarray(groups)
    unique = np.unique(groups)
    if len(unique) < plan.k:
        raise ValueError(f"only {len(unique)} groups for {plan.k} folds")
    order = rng_for("cv", plan.seed, plan.k, len(unique)).permutation(len(unique))
    assignment = {g: i % plan.k for i, g in enumerate(unique[order])}
    group_of_row = np.asarray([assignment[g] for g in groups])
    folds = []
    for fold in range(plan.k):
        test = np.nonzero(group_of_row == fold)[0]
        val = np.nonzero(group_of_row == (fold + 1) % plan.k)[0]
        train = np.nonzero((group_of_row != fold) & (group_of_row != (fold + 1) % plan.k))[0]
        if len(test) == 0 or len(val) == 0 or len(train) == 0:
            raise ValueError("fold too small: empty train/val/test portion")
        folds.append((train, val, test))
    return folds


@dataclass
class CvResult:
    fold_metrics: list          # one dict per fold
    oof_prediction: np.ndarray  # out-of-fold prediction per input row
    models: list

    def mean_ci(self, name):
        vals = np.asarray([m[name] for m in self.fold_metrics], dtype=np.float64)
        mean = float(vals.mean())
        if len(vals) < 2:
            return mean, 0.0
        half = 1.96 * vals.std(ddof=1) / np.sqrt(len(vals))
        return mean, float(half)


def run_cv(x, y, plan: CvPlan, make_model, metric_fn, groups=None) -> CvResult:
    """Train per fold, evaluate on its test portion, collect out-of-fold
    predictions; metric_fn(model, x_test, y_test) -> dict of floats."""
    x = as_float_array(x, "X")
    if x.ndim == 1:
        x = x[:, None]
    y = as_float_array(y, "y", ndim=1)
    folds = cv_folds(len(x), plan, groups=groups)
    oof = np.full(len(x), np.nan)
    fold_metrics = []
    models = []
    for fold_idx, (train, val, test) in enumerate(folds):
        model = make_model(fold_idx)
        model.fit(x[train], y[train], x_val=x[val], y_val=y[val])
        pred = model.predict_prob(x[test]) if hasattr(model, "predict_prob") \
            else model.predict(x[test])
        oof[test] = pred
        fold_metrics.append(metric_fn(model, x[test], y[test]))
        models.append(model)
    return CvResult(fold_metrics=fold_metrics, oof_prediction=oof, models=models)
