"""Pilot optimization against receiver-noise amplification ``E ||S~^+ Z~||_F``.

The trainable parameters are the real and imaginary L x N parts of the
complex pilot; the lifted operator is rebuilt from them every step, so the
block structure holds by construction.  After each step the pilot is
rescaled to the Frobenius power budget ``rho`` (the loss is otherwise
unbounded below: scaling S up shrinks S^+).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .container import ShapeMismatchError, load_arrays, save_arrays
from .complexlift import TRAINING_EPS, ComplexMat, lift_blocks, lift_operator, pseudoinverse
from .numerics import AdamState, ContractError, ParamBundle, SingularMatrixError, Tensor


def default_power(L: int, N: int) -> float:
    """Expected ``||S~||_F`` of a CN(0, 1) pilot: sqrt(2 L N)."""
    return math.sqrt(2.0 * L * N)


@dataclass(frozen=True)
class PilotParams:
    pilot: ComplexMat
    rho: float | None

    @property
    def lifted(self) -> np.ndarray:
        return lift_operator(self.pilot)


@dataclass
class PilotHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_step: int = 0
    aborted: str | None = None


def pilot_loss(re, im, noise_batch, eps: float = TRAINING_EPS) -> Tensor:
    """Mean over the batch of ``||S~^+ Z~_i||_F``; ``noise_batch`` is (B, 2L, M)."""
    Z = nx.value(noise_batch)
    if Z.ndim == 2:
        Z = Z[None]
    if Z.shape[0] == 0:
        raise ContractError("pilot_loss on an empty noise batch")
    S = lift_blocks(nx.as_tensor(re), nx.as_tensor(im))
    if Z.shape[1] != S.shape[0]:
        raise nx.DimensionError(f"noise {Z.shape} incompatible with lifted pilot {S.shape}")
    try:
        pinv = pseudoinverse(S, eps)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"{exc}; increase eps") from None
    return nx.mean(nx.frobenius(nx.matmul(pinv, Z), axis=(1, 2)))


def evaluate(pilot: ComplexMat, noise, eps: float = TRAINING_EPS) -> float:
    return pilot_loss(pilot.re, pilot.im, noise, eps).item()


def rescale(pilot: ComplexMat, rho: float | None) -> ComplexMat:
    """Scale so the lifted operator has Frobenius norm ``rho`` (no-op for ``None``)."""
    if rho is None:
        return pilot
    lifted_norm = math.sqrt(2.0 * (np.sum(pilot.re ** 2) + np.sum(pilot.im ** 2)))
    if lifted_norm == 0.0:
        raise ContractError("cannot rescale an all-zero pilot")
    c = rho / lifted_norm
    return ComplexMat(pilot.re * c, pilot.im * c)


def noise_batch(L: int, M: int, n: int, seed, var: float = 1.0) -> np.ndarray:
    """Lifted CN(0, var) noise matrices, shape (n, 2L, M)."""
    rng = np.random.default_rng(seed)
    return math.sqrt(var / 2.0) * rng.standard_normal((n, 2 * L, M))


def optimize_pilot(S_init: ComplexMat, noise_train: np.ndarray, noise_val: np.ndarray,
                   lr: float = 1e-2, steps: int = 300, rho: float | None = "default",
                   batch_size: int = 64, seed: int = 0, eps: float = TRAINING_EPS,
                   return_history: bool = False):
    """Adam on the noise-amplification loss through the differentiable pseudoinverse.

    ``rho="default"`` uses :func:`default_power`; ``rho=None`` runs the
    unconstrained variant.  Returns the iterate with the lowest validation
    loss, the (rescaled) initialization included.
    """
    L, N = S_init.shape
    if rho == "default":
        rho = default_power(L, N)
    noise_train = np.asarray(noise_train)
    if len(noise_train) == 0:
        raise ContractError("optimize_pilot needs training noise samples")
    current = rescale(S_init, rho)
    hist = PilotHistory()
    best, best_val = current, evaluate(current, noise_val, eps)
    hist.val_loss.append(best_val)
    params = ParamBundle({"re": current.re, "im": current.im})
    state = AdamState()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    bs = min(batch_size, len(noise_train))
    for step in range(1, steps + 1):
        idx = rng.choice(len(noise_train), bs, replace=False)
        try:
            loss, g = nx.grad(lambda t, Z: pilot_loss(t["re"], t["im"], Z, eps), params,
                              noise_train[idx])
        except SingularMatrixError as exc:
            hist.aborted = f"step {step}: {exc}"
            break
        if not math.isfinite(loss):
            hist.aborted = f"step {step}: non-finite loss"
            break
        params, state = nx.adam_step(params, g, state, lr)
        current = rescale(ComplexMat(params["re"], params["im"]), rho)
        params = params.replace({"re": current.re, "im": current.im})
        hist.train_loss.append(loss)
        val = evaluate(current, noise_val, eps)
        hist.val_loss.append(val)
        if val < best_val:
            best, best_val, hist.best_step = current, val, step
    result = PilotParams(best, rho)
    return (result, hist) if return_history else result


def save_pilot(path, params: PilotParams, meta: dict | None = None) -> None:
    save_arrays(path, {"pilot_re": params.pilot.re, "pilot_im": params.pilot.im}, "pilot",
                {"rho": params.rho, **(meta or {})})


def load_pilot(path) -> PilotParams:
    arrays, meta = load_arrays(path, kind="pilot")
    if "pilot_re" not in arrays or "pilot_im" not in arrays:
        raise ShapeMismatchError(f"{path}: pilot container lacks pilot_re/pilot_im")
    return PilotParams(ComplexMat(arrays["pilot_re"], arrays["pilot_im"]), meta.get("rho"))
