"""Product-unit networks: representation, forward pass, error and metrics.

A network has one hidden layer of product units and a linear output layer
fed to softmax.  Hidden node ``m`` computes ``prod_i x_i ** w[m, i]`` over its
connected inputs; output ``j`` computes ``bias[j] + sum_m beta[j, m] * h_m``.
With the default reference-class layout only ``n_classes - 1`` outputs are
stored and the last class has a constant output of zero.

Connectivity is kept as dense arrays plus boolean masks.  Unconnected entries
are always exactly zero, so a network evaluates with two matrix products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """Raised when a product unit would see a non-positive input."""


@dataclass(frozen=True, eq=False)
class PUNetwork:
    exponents: np.ndarray      # (hidden, inputs), input -> hidden
    input_mask: np.ndarray     # (hidden, inputs) bool
    coefficients: np.ndarray   # (outputs, hidden), hidden -> output
    output_mask: np.ndarray    # (outputs, hidden) bool
    bias: np.ndarray           # (outputs,)
    n_classes: int

    @property
    def n_inputs(self) -> int:
        return self.exponents.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.exponents.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.coefficients.shape[0]

    @property
    def reference_class(self) -> bool:
        """True when the last class is the implicit zero output."""
        return self.n_outputs == self.n_classes - 1

    @property
    def hidden(self) -> list[dict[int, float]]:
        """Sparse view: one ``{input_index: exponent}`` map per hidden node."""
        return [
            {int(i): float(self.exponents[m, i]) for i in np.flatnonzero(self.input_mask[m])}
            for m in range(self.n_hidden)
        ]

    @property
    def outputs(self) -> list[tuple[float, dict[int, float]]]:
        """Sparse view: ``(bias, {hidden_index: coefficient})`` per output node."""
        return [
            (
                float(self.bias[j]),
                {int(m): float(self.coefficients[j, m]) for m in np.flatnonzero(self.output_mask[j])},
            )
            for j in range(self.n_outputs)
        ]

    @property
    def topology(self) -> str:
        return f"{self.n_inputs}:{self.n_hidden}:{self.n_outputs}"

    @classmethod
    def from_sparse(
        cls,
        n_inputs: int,
        hidden: list[dict[int, float]],
        outputs: list[tuple[float, dict[int, float]]],
        n_classes: int,
    ) -> PUNetwork:
        h, o = len(hidden), len(outputs)
        w = np.zeros((h, n_inputs))
        wm = np.zeros((h, n_inputs), dtype=bool)
        b = np.zeros((o, h))
        bm = np.zeros((o, h), dtype=bool)
        bias = np.zeros(o)
        for m, links in enumerate(hidden):
            for i, value in links.items():
                w[m, i] = value
                wm[m, i] = True
        for j, (b0, links) in enumerate(outputs):
            bias[j] = b0
            for m, value in links.items():
                b[j, m] = value
                bm[j, m] = True
        net = cls(w, wm, b, bm, bias, n_classes)
        net.validate()
        return net

    def validate(self, max_hidden: int | None = None) -> None:
        """Check the structural invariants; raise ValueError on violation."""
        h, k = self.exponents.shape
        if self.input_mask.shape != (h, k):
            raise ValueError("input mask shape does not match exponents")
        if self.coefficients.shape != self.output_mask.shape:
            raise ValueError("output mask shape does not match coefficients")
        if self.coefficients.shape[1] != h or self.bias.shape != (self.n_outputs,):
            raise ValueError("output layer does not match hidden layer")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.n_outputs not in (self.n_classes - 1, self.n_classes):
            raise ValueError(f"{self.n_outputs} outputs for {self.n_classes} classes")
        if h < 1 or (max_hidden is not None and h > max_hidden):
            raise ValueError(f"hidden node count {h} out of range")
        if not self.input_mask.any(axis=1).all():
            raise ValueError("hidden node without input connections")
        if np.any(self.exponents[~self.input_mask]) or np.any(self.coefficients[~self.output_mask]):
            raise ValueError("non-zero weight on an absent link")
        for arr in (self.exponents, self.coefficients, self.bias):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite weight")


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _log_inputs(x: np.ndarray) -> np.ndarray:
    if not np.all(x > 0):
        raise DomainError("product units need strictly positive inputs; was the data normalized?")
    return np.log(x)


def hidden_outputs(net: PUNetwork, x, *, log_x: np.ndarray | None = None) -> np.ndarray:
    """Product-unit activations for one pattern (1-D) or a batch (2-D).

    ``log_x`` may carry precomputed ``log(x)`` for the batch to skip the
    domain check and logarithm.
    """
    xb, single = _as_batch(x)
    lx = _log_inputs(xb) if log_x is None else log_x
    h = np.exp(lx @ net.exponents.T)
    return h[0] if single else h


def raw_outputs(net: PUNetwork, x, *, log_x: np.ndarray | None = None) -> np.ndarray:
    """Linear outputs ``f``, one column per class (reference class appended as 0)."""
    xb, single = _as_batch(x)
    h = hidden_outputs(net, xb, log_x=log_x)
    f = h @ net.coefficients.T + net.bias
    if net.reference_class:
        f = np.concatenate([f, np.zeros((f.shape[0], 1))], axis=1)
    return f[0] if single else f


def softmax(f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    z = np.exp(f - f.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def logsumexp(f: np.ndarray) -> np.ndarray:
    m = f.max(axis=-1)
    return m + np.log(np.exp(f - m[..., None]).sum(axis=-1))


def cross_entropy_from_outputs(f: np.ndarray, targets: np.ndarray) -> float:
    """Mean cross-entropy in the log-sum-exp form; ``inf`` for divergent outputs."""
    if f.shape[0] == 0:
        raise ValueError("cross-entropy of an empty partition")
    with np.errstate(over="ignore", invalid="ignore"):
        per_pattern = logsumexp(f) - np.einsum("ij,ij->i", targets, f)
        value = float(per_pattern.mean())
    if not math.isfinite(value):
        return math.inf
    return max(value, 0.0)


def cross_entropy(net: PUNetwork, data) -> float:
    """Mean cross-entropy error of ``net`` on a data partition.

    ``data`` is anything with ``features`` and ``targets`` arrays (and
    optionally a cached ``log_features``), e.g. :class:`evopunn.data.Partition`.
    """
    if len(data.targets) == 0:
        raise ValueError("cross-entropy of an empty partition")
    with np.errstate(over="ignore", invalid="ignore"):
        f = raw_outputs(net, data.features, log_x=getattr(data, "log_features", None))
    return cross_entropy_from_outputs(f, data.targets)


def fitness(error: float) -> float:
    if error < 0 or math.isnan(error):
        raise ValueError(f"error must be non-negative, got {error}")
    return 1.0 / (1.0 + error)


def predict(net: PUNetwork, x, *, log_x: np.ndarray | None = None) -> np.ndarray:
    """Class indices; ``argmax`` keeps the lowest index on ties."""
    xb, _ = _as_batch(x)
    with np.errstate(over="ignore", invalid="ignore"):
        f = raw_outputs(net, xb, log_x=log_x)
    f = np.where(np.isnan(f), -np.inf, f)
    return np.argmax(f, axis=1)


def ccr(net: PUNetwork, data) -> float:
    """Correct classification rate in percent."""
    labels = np.asarray(data.labels)
    if labels.size == 0:
        raise ValueError("CCR of an empty partition")
    pred = predict(net, data.features, log_x=getattr(data, "log_features", None))
    return 100.0 * float(np.count_nonzero(pred == labels)) / labels.size


def count_connections(net: PUNetwork) -> int:
    return int(net.input_mask.sum() + net.output_mask.sum() + net.n_outputs)
