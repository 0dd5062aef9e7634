"""Desk-scale differentiable objectives with closed-form gradients.

Four problem families: diagonal quadratics, underdetermined least
squares (with min-norm diagnostics), logistic regression, and a small
MLP classifier with hand-written backpropagation. Datasets are
synthetic Gaussian blobs; everything is seeded and hermetic.

All problems share one calling convention: ``loss(w, idx)`` and
``gradient(w, idx)`` evaluate on the training rows listed in ``idx``
(the full training set when idx is None), scaled so that the average
of minibatch gradients over one epoch reproduces the full-batch
gradient when the batch size divides the sample count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .numkit import param_vector, rng_stream
from .optim import ConfigError

# per-purpose RNG stream ids (stream 10 is the harness shuffle)
_STREAM_BLOBS = 1
_STREAM_INIT = 2
_STREAM_LSQ = 3
_STREAM_MLP_INIT = 4


class RankDeficientError(ValueError):
    """The design matrix does not have full row rank."""


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Feature matrix plus targets, partitioned into train/test rows."""

    inputs: np.ndarray
    targets: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"row counts differ: {self.inputs.shape[0]} inputs vs "
                f"{self.targets.shape[0]} targets"
            )
        combined = np.sort(np.concatenate([self.train_idx, self.test_idx]))
        if not np.array_equal(combined, np.arange(self.inputs.shape[0])):
            raise ValueError("train/test tags must partition the samples")

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    @property
    def X_train(self) -> np.ndarray:
        return self.inputs[self.train_idx]

    @property
    def y_train(self) -> np.ndarray:
        return self.targets[self.train_idx]

    @property
    def X_test(self) -> np.ndarray:
        return self.inputs[self.test_idx]

    @property
    def y_test(self) -> np.ndarray:
        return self.targets[self.test_idx]


def make_blobs(
    n_per_class: int,
    n_features: int,
    class_separation: float,
    seed: int,
) -> Dataset:
    """Two Gaussian blobs (unit variance) separated along the first axis,
    with a seeded shuffle and a deterministic 80/20 train/test split."""
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be positive, got {n_per_class}")
    if n_features < 1:
        raise ConfigError(f"n_features must be positive, got {n_features}")
    if class_separation < 0:
        raise ConfigError(
            f"class_separation must be nonnegative, got {class_separation}"
        )
    rng = rng_stream(seed, _STREAM_BLOBS)
    n = 2 * n_per_class
    X = rng.standard_normal((n, n_features))
    X[:n_per_class, 0] -= class_separation / 2.0
    X[n_per_class:, 0] += class_separation / 2.0
    y = np.concatenate([np.zeros(n_per_class), np.ones(n_per_class)])
    perm = rng.permutation(n)
    n_train = (8 * n) // 10
    return Dataset(
        inputs=X[perm],
        targets=y[perm],
        train_idx=np.arange(n_train),
        test_idx=np.arange(n_train, n),
    )


def dataset_to_csv(ds: Dataset, path) -> None:
    """Write the dataset (train rows first, then test rows) as CSV with
    a header row: feature columns then the target column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(ds.n_features)] + ["target"])
        for idx in (ds.train_idx, ds.test_idx):
            for i in idx:
                writer.writerow(
                    [repr(v) for v in ds.inputs[i]] + [repr(float(ds.targets[i]))]
                )


def dataset_from_csv(path) -> Dataset:
    """Read a dataset written by dataset_to_csv; the first 80% of rows
    (rounded down to the written train count convention) become train."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    if not header or header[-1] != "target":
        raise ValueError("expected a header row ending in 'target'")
    data = np.asarray(rows, dtype=np.float64)
    n = data.shape[0]
    n_train = (8 * n) // 10
    return Dataset(
        inputs=data[:, :-1],
        targets=data[:, -1],
        train_idx=np.arange(n_train),
        test_idx=np.arange(n_train, n),
    )


# ---------------------------------------------------------------------------
# problems
# ---------------------------------------------------------------------------


class Problem:
    """Shared surface: dimension, seeded start point, loss/gradient on
    training rows, and a scalar test metric."""

    dim: int
    n_train: int
    metric_name: str = "loss"
    higher_is_better: bool = False

    def initial_point(self) -> np.ndarray:
        raise NotImplementedError

    def loss(self, w: np.ndarray, idx=None) -> float:
        raise NotImplementedError

    def gradient(self, w: np.ndarray, idx=None) -> np.ndarray:
        raise NotImplementedError

    def test_metric(self, w: np.ndarray) -> float:
        return self.loss(w)


class QuadraticProblem(Problem):
    """f(w) = 0.5 * w^T D w with log-spaced diagonal eigenvalues."""

    def __init__(self, dim: int, condition_number: float, seed: int):
        if dim < 1:
            raise ConfigError(f"dim must be positive, got {dim}")
        if condition_number < 1:
            raise ConfigError(
                f"condition_number must be >= 1, got {condition_number}"
            )
        self.dim = dim
        self.n_train = 1
        self.seed = seed
        self.eigenvalues = np.logspace(0.0, np.log10(condition_number), dim)

    def initial_point(self) -> np.ndarray:
        return rng_stream(self.seed, _STREAM_INIT).standard_normal(self.dim)

    def loss(self, w, idx=None) -> float:
        return float(0.5 * np.dot(w, self.eigenvalues * w))

    def gradient(self, w, idx=None) -> np.ndarray:
        return self.eigenvalues * w


def quadratic(dim: int, condition_number: float, seed: int = 0) -> QuadraticProblem:
    return QuadraticProblem(dim, condition_number, seed)


class LeastSquaresProblem(Problem):
    """f(w) = ||Xw - y||^2 with minimum-norm and row-space diagnostics.

    Minibatch gradients over row subsets are rescaled by n/|B| so they
    are unbiased for the full sum-of-squares gradient; every such
    gradient lies in the row space of X, which is what keeps iterates
    started at zero inside that subspace.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError(
                f"shape mismatch: X is {X.shape}, y has {y.shape[0]} rows"
            )
        self.X = X
        self.y = y
        self.dim = X.shape[1]
        self.n_train = X.shape[0]
        self._gram = X @ X.T  # n x n, small by construction

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    def loss(self, w, idx=None) -> float:
        if idx is None:
            r = self.X @ w - self.y
            return float(np.dot(r, r))
        r = self.X[idx] @ w - self.y[idx]
        return float(np.dot(r, r)) * (self.n_train / len(idx))

    def gradient(self, w, idx=None) -> np.ndarray:
        if idx is None:
            return 2.0 * (self.X.T @ (self.X @ w - self.y))
        Xb = self.X[idx]
        scale = self.n_train / len(idx)
        return (2.0 * scale) * (Xb.T @ (Xb @ w - self.y[idx]))

    def min_norm_solution(self) -> np.ndarray:
        """X^T (X X^T)^{-1} y; the least-norm minimizer for full row rank X."""
        if np.linalg.matrix_rank(self.X) < self.X.shape[0]:
            raise RankDeficientError(
                "design matrix must have full row rank for the min-norm solution"
            )
        return self.X.T @ np.linalg.solve(self._gram, self.y)

    def row_space_residual(self, w: np.ndarray) -> float:
        """Euclidean distance from w to the row space of X."""
        t, *_ = np.linalg.lstsq(self.X.T, w, rcond=None)
        return float(np.linalg.norm(w - self.X.T @ t))


def least_squares(X: np.ndarray, y: np.ndarray) -> LeastSquaresProblem:
    return LeastSquaresProblem(X, y)


def random_least_squares(n_rows: int, n_cols: int, seed: int) -> LeastSquaresProblem:
    """Seeded underdetermined instance (n_rows < n_cols, Gaussian entries);
    full row rank with probability one."""
    if not 1 <= n_rows < n_cols:
        raise ConfigError(
            f"need 1 <= n_rows < n_cols for an underdetermined instance, "
            f"got {n_rows} x {n_cols}"
        )
    rng = rng_stream(seed, _STREAM_LSQ)
    X = rng.standard_normal((n_rows, n_cols))
    y = rng.standard_normal(n_rows)
    return LeastSquaresProblem(X, y)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LogisticRegressionProblem(Problem):
    """Mean binary cross-entropy over the train split, optional l2 penalty.

    The weight vector carries a trailing bias coordinate; the penalty
    applies to the whole vector.
    """

    metric_name = "accuracy"
    higher_is_better = True

    def __init__(self, dataset: Dataset, l2: float = 0.0):
        if l2 < 0:
            raise ConfigError(f"l2 must be nonnegative, got {l2}")
        labels = np.unique(dataset.targets)
        if not np.all(np.isin(labels, (0.0, 1.0))):
            raise ValueError(f"targets must be binary 0/1, found {labels}")
        self.dataset = dataset
        self.l2 = l2
        self.dim = dataset.n_features + 1
        self.n_train = dataset.train_idx.shape[0]

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    def _batch(self, idx):
        X = self.dataset.X_train if idx is None else self.dataset.X_train[idx]
        y = self.dataset.y_train if idx is None else self.dataset.y_train[idx]
        return X, y

    def loss(self, w, idx=None) -> float:
        X, y = self._batch(idx)
        z = X @ w[:-1] + w[-1]
        # softplus(z) - y*z, computed stably
        ce = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - y * z
        return float(np.mean(ce) + 0.5 * self.l2 * np.dot(w, w))

    def gradient(self, w, idx=None) -> np.ndarray:
        X, y = self._batch(idx)
        err = _sigmoid(X @ w[:-1] + w[-1]) - y
        g = np.empty_like(w)
        g[:-1] = X.T @ err / len(err)
        g[-1] = np.mean(err)
        return g + self.l2 * w

    def test_metric(self, w) -> float:
        z = self.dataset.X_test @ w[:-1] + w[-1]
        return float(np.mean((z > 0) == (self.dataset.y_test > 0.5)))


def logistic_regression(dataset: Dataset, l2: float = 0.0) -> LogisticRegressionProblem:
    return LogisticRegressionProblem(dataset, l2)


class MlpClassifierProblem(Problem):
    """Small dense classifier, softmax cross-entropy, manual backprop.

    All weights and biases live flattened in one parameter vector,
    layer by layer (W then b). Weights start scaled-uniform in
    [-1/sqrt(fan_in), 1/sqrt(fan_in)] from the problem seed; biases
    start at zero.
    """

    metric_name = "accuracy"
    higher_is_better = True

    def __init__(self, layer_widths, activation: str, dataset: Dataset, seed: int):
        widths = [int(v) for v in layer_widths]
        if len(widths) < 3:
            raise ConfigError(
                f"need at least one hidden layer, got widths {widths}"
            )
        if any(v < 1 for v in widths):
            raise ConfigError(f"layer widths must be positive, got {widths}")
        if activation not in ("tanh", "relu"):
            raise ConfigError(f"activation must be tanh or relu, got {activation!r}")
        if widths[0] != dataset.n_features:
            raise ValueError(
                f"first layer width {widths[0]} != dataset features "
                f"{dataset.n_features}"
            )
        self.widths = widths
        self.activation = activation
        self.dataset = dataset
        self.seed = seed
        self.n_train = dataset.train_idx.shape[0]
        self._shapes = [
            (widths[i], widths[i + 1]) for i in range(len(widths) - 1)
        ]
        self.dim = sum(nin * nout + nout for nin, nout in self._shapes)
        self._classes = widths[-1]

    def initial_point(self) -> np.ndarray:
        rng = rng_stream(self.seed, _STREAM_MLP_INIT)
        chunks = []
        for nin, nout in self._shapes:
            s = 1.0 / np.sqrt(nin)
            chunks.append(rng.uniform(-s, s, size=nin * nout))
            chunks.append(np.zeros(nout))
        return np.concatenate(chunks)

    def _unpack(self, w):
        params = []
        off = 0
        for nin, nout in self._shapes:
            W = w[off : off + nin * nout].reshape(nin, nout)
            off += nin * nout
            b = w[off : off + nout]
            off += nout
            params.append((W, b))
        return params

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)

    def _act_grad(self, z, a):
        return 1.0 - a * a if self.activation == "tanh" else (z > 0).astype(np.float64)

    def _forward(self, w, X):
        params = self._unpack(w)
        pre, post = [], [X]
        h = X
        for W, b in params[:-1]:
            z = h @ W + b
            h = self._act(z)
            pre.append(z)
            post.append(h)
        W, b = params[-1]
        logits = h @ W + b
        return params, pre, post, logits

    @staticmethod
    def _log_softmax(logits):
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def _batch(self, idx):
        X = self.dataset.X_train if idx is None else self.dataset.X_train[idx]
        y = self.dataset.y_train if idx is None else self.dataset.y_train[idx]
        return X, y.astype(np.int64)

    def loss(self, w, idx=None) -> float:
        X, y = self._batch(idx)
        _, _, _, logits = self._forward(w, X)
        logp = self._log_softmax(logits)
        return float(-np.mean(logp[np.arange(len(y)), y]))

    def gradient(self, w, idx=None) -> np.ndarray:
        X, y = self._batch(idx)
        n = len(y)
        params, pre, post, logits = self._forward(w, X)
        probs = np.exp(self._log_softmax(logits))
        delta = probs
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads = [None] * len(params)
        for layer in range(len(params) - 1, -1, -1):
            W, _ = params[layer]
            grads[layer] = (post[layer].T @ delta, delta.sum(axis=0))
            if layer > 0:
                delta = (delta @ W.T) * self._act_grad(pre[layer - 1], post[layer])
        return np.concatenate(
            [np.concatenate([gW.ravel(), gb]) for gW, gb in grads]
        )

    def test_metric(self, w) -> float:
        _, _, _, logits = self._forward(w, self.dataset.X_test)
        pred = logits.argmax(axis=1)
        return float(np.mean(pred == self.dataset.y_test.astype(np.int64)))


def mlp_classifier(layer_widths, activation: str, dataset: Dataset, seed: int = 0):
    return MlpClassifierProblem(layer_widths, activation, dataset, seed)


# ---------------------------------------------------------------------------
# spec factory (the JSON wire format)
# ---------------------------------------------------------------------------


def make_problem(spec: dict) -> Problem:
    """Build a problem from a tagged config dict."""
    if not isinstance(spec, dict):
        raise ConfigError(f"problem spec must be a mapping, got {type(spec).__name__}")
    spec = dict(spec)
    kind = spec.pop("kind", None)
    known = ("quadratic", "least_squares", "logistic", "mlp")
    if kind not in known:
        raise ConfigError(f"unknown problem kind {kind!r}; expected one of {known}")
    try:
        if kind == "quadratic":
            prob = quadratic(
                dim=int(spec.pop("dim")),
                condition_number=float(spec.pop("condition_number")),
                seed=int(spec.pop("seed", 0)),
            )
        elif kind == "least_squares":
            prob = random_least_squares(
                n_rows=int(spec.pop("n_rows")),
                n_cols=int(spec.pop("n_cols")),
                seed=int(spec.pop("seed", 0)),
            )
        elif kind == "logistic":
            ds = make_blobs(
                n_per_class=int(spec.pop("n_per_class")),
                n_features=int(spec.pop("n_features")),
                class_separation=float(spec.pop("class_separation")),
                seed=int(spec.pop("seed", 0)),
            )
            prob = logistic_regression(ds, l2=float(spec.pop("l2", 0.0)))
        else:
            seed = int(spec.pop("seed", 0))
            ds = make_blobs(
                n_per_class=int(spec.pop("n_per_class")),
                n_features=int(spec.pop("n_features")),
                class_separation=float(spec.pop("class_separation")),
                seed=seed,
            )
            prob = mlp_classifier(
                layer_widths=spec.pop("layer_widths"),
                activation=str(spec.pop("activation", "tanh")),
                dataset=ds,
                seed=seed,
            )
    except KeyError as exc:
        raise ConfigError(f"problem.{exc.args[0]} is required for kind {kind!r}")
    if spec:
        raise ConfigError(f"unknown field(s) for problem {kind}: {sorted(spec)}")
    return prob
