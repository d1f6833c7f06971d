"""Parameter bundles, gradient evaluation and first-order optimizers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import ContractError, Tensor, backward


@dataclass(frozen=True)
class ParamBundle:
    """Named arrays, each either trainable or frozen.

    Bundles behave as values: every mutating helper returns a new bundle and
    the stored arrays are never written in place.
    """

    values: Mapping[str, np.ndarray]
    frozen: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "values", {k: np.asarray(v, dtype=np.float64)
                                            for k, v in self.values.items()})
        object.__setattr__(self, "frozen", frozenset(self.frozen))
        unknown = self.frozen - set(self.values)
        if unknown:
            raise ContractError(f"frozen names not in bundle: {sorted(unknown)}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __len__(self) -> int:
        return len(self.values)

    def names(self) -> list[str]:
        return list(self.values)

    def trainable(self) -> list[str]:
        return [k for k in self.values if k not in self.frozen]

    def replace(self, updates: Mapping[str, np.ndarray]) -> "ParamBundle":
        vals = dict(self.values)
        vals.update(updates)
        return ParamBundle(vals, self.frozen)

    def merge(self, other: "ParamBundle") -> "ParamBundle":
        clash = set(self.values) & set(other.values)
        if clash:
            raise ContractError(f"duplicate parameter names: {sorted(clash)}")
        return ParamBundle({**self.values, **other.values}, self.frozen | other.frozen)

    def with_frozen(self, names) -> "ParamBundle":
        """Bundle whose frozen set is exactly ``names``."""
        return ParamBundle(self.values, frozenset(names))

    def freeze_all_except(self, predicate: Callable[[str], bool]) -> "ParamBundle":
        return self.with_frozen(k for k in self.values if not predicate(k))

    def subset(self, predicate: Callable[[str], bool]) -> "ParamBundle":
        keep = {k: v for k, v in self.values.items() if predicate(k)}
        return ParamBundle(keep, self.frozen & set(keep))

    def map(self, fn: Callable[[str, np.ndarray], np.ndarray]) -> "ParamBundle":
        return ParamBundle({k: fn(k, v) for k, v in self.values.items()}, self.frozen)

    def equal(self, other: "ParamBundle") -> bool:
        return (self.frozen == other.frozen and list(self.values) == list(other.values)
                and all(np.array_equal(self.values[k], other.values[k]) for k in self.values))


def as_tensors(params: ParamBundle, track: bool = False) -> dict[str, Tensor]:
    """Tensor view of a bundle; trainable entries become tape leaves when ``track``."""
    return {k: Tensor(v, requires_grad=track and k not in params.frozen)
            for k, v in params.values.items()}


def grad(loss_fn: Callable[..., Tensor], params: ParamBundle, *inputs):
    """Evaluate ``loss_fn(tensors, *inputs)`` and its exact reverse-mode gradient.

    Returns ``(loss, grads)`` where ``grads`` maps every trainable name to an
    array of the parameter's shape.  Frozen names get no entry.
    """
    tensors = as_tensors(params, track=True)
    loss = loss_fn(tensors, *inputs)
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = getattr(loss, "shape", type(loss).__name__)
        raise ContractError(f"loss_fn must return a scalar Tensor, got {shape}")
    if loss.requires_grad:
        backward(loss)
    grads = {}
    for name in params.trainable():
        g = tensors[name].grad
        grads[name] = np.zeros_like(params[name]) if g is None else g
    return float(loss.data.reshape(())), grads


def _check_aligned(params: ParamBundle, grads: Mapping[str, np.ndarray]) -> None:
    expected = set(params.trainable())
    if set(grads) != expected:
        raise ContractError(
            f"gradients misaligned with trainable params: missing "
            f"{sorted(expected - set(grads))}, unexpected {sorted(set(grads) - expected)}")
    for k, g in grads.items():
        if np.shape(g) != params[k].shape:
            raise ContractError(f"gradient for {k!r} has shape {np.shape(g)}, "
                                f"parameter has {params[k].shape}")


def sgd_step(params: ParamBundle, grads: Mapping[str, np.ndarray], lr: float) -> ParamBundle:
    _check_aligned(params, grads)
    return params.replace({k: params[k] - lr * g for k, g in grads.items()})


@dataclass(frozen=True)
class AdamState:
    step: int = 0
    m: Mapping[str, np.ndarray] = field(default_factory=dict)
    v: Mapping[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamBundle, grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update.

    With a zero gradient the update is exactly zero, since both moment
    estimates stay zero.  Returns ``(params, state)``.
    """
    _check_aligned(params, grads)
    t = state.step + 1
    m, v, updates = dict(state.m), dict(state.v), {}
    for k, g in grads.items():
        mk = beta1 * m.get(k, 0.0) + (1 - beta1) * g
        vk = beta2 * v.get(k, 0.0) + (1 - beta2) * g * g
        m[k], v[k] = mk, vk
        m_hat = mk / (1 - beta1 ** t)
        v_hat = vk / (1 - beta2 ** t)
        updates[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params.replace(updates), AdamState(t, m, v)
