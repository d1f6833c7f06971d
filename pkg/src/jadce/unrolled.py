"""Group-sparse LISTA: ISTA unrolled into T layers with untied learned weights.

Layer t computes ``X_t = shrink(W1_t Y + W2_t X_{t-1}, theta_t)`` from
``X_0 = 0``, where ``shrink`` is the groupwise soft threshold over the lifted
(real, imaginary) row pairs.  Initialized from ISTA
(``W1 = step S^T``, ``W2 = I - step S^T S``, ``theta = step lam``) the network
reproduces T ISTA iterations exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .classic_solvers import default_step
from .metrics import nmse_db
from .numerics import AdamState, ContractError, ParamBundle, Tensor

log = logging.getLogger(__name__)

DEFAULT_DECAY = (0.2, 0.02)


class TrainingDivergedError(RuntimeError):
    pass


def _names(t: int) -> tuple[str, str, str]:
    return f"l{t}.W1", f"l{t}.W2", f"l{t}.theta"


def n_layers(params) -> int:
    t = 0
    while _names(t)[0] in params:
        t += 1
    return t


def init_lista(S: np.ndarray, T: int, lam: float, step: float | None = None) -> ParamBundle:
    """ISTA-equivalent parameters for a lifted operator ``S`` (2L x 2N)."""
    if T < 1:
        raise ContractError(f"LISTA needs T >= 1 layers, got {T}")
    step = default_step(S) if step is None else step
    W1 = step * S.T
    W2 = np.eye(S.shape[1]) - step * (S.T @ S)
    values = {}
    for t in range(T):
        n1, n2, nt = _names(t)
        values[n1], values[n2], values[nt] = W1.copy(), W2.copy(), np.array(step * lam)
    return ParamBundle(values)


def lista_forward(params, Yt, n_active: int | None = None) -> Tensor:
    """Estimate (B, 2N, M) from observations (B, 2L, M) or (2L, M)."""
    Yt = nx.as_tensor(Yt)
    squeeze = Yt.ndim == 2
    if squeeze:
        Yt = nx.reshape(Yt, (1,) + Yt.shape)
    T = n_layers(params) if n_active is None else n_active
    if T < 1:
        raise ContractError("no LISTA layers in params")
    W1 = params[_names(0)[0]]
    if nx.value(W1).shape[1] != Yt.shape[1]:
        raise nx.DimensionError(f"W1 {nx.value(W1).shape} incompatible with observation {Yt.shape}")
    B, _, M = Yt.shape
    N2 = nx.value(W1).shape[0]
    X = None
    for t in range(T):
        n1, n2, nt = _names(t)
        pre = nx.matmul(params[n1], Yt)
        if X is not None:
            pre = nx.add(pre, nx.matmul(params[n2], X))
        grouped = nx.reshape(pre, (B, 2, N2 // 2, M))
        X = nx.reshape(nx.group_shrink(grouped, params[nt], axis=(1, 3)), (B, N2, M))
    return nx.reshape(X, X.shape[1:]) if squeeze else X


def lista_predict(params: ParamBundle, Yt) -> np.ndarray:
    return lista_forward(params.values, np.asarray(Yt)).data


def mse_loss(params, Yt, Xt, n_active=None) -> Tensor:
    return nx.mean(nx.square(nx.sub(lista_forward(params, Yt, n_active), Xt)))


@dataclass
class ListaTrainLog:
    stage_losses: list = field(default_factory=list)  # [(stage_name, [loss per step])]
    val_nmse: list = field(default_factory=list)       # [(stage_name, dB)]


def _clamp_thresholds(params: ParamBundle) -> ParamBundle:
    return params.replace({k: np.maximum(v, 0.0) for k, v in params.values.items()
                           if k.endswith(".theta")})


def train_lista(train, val, S: np.ndarray, T: int, epochs: int, lr: float = 5e-4,
                seed: int = 0, lam: float | None = None, batch_size: int = 64,
                decay=DEFAULT_DECAY, return_log: bool = False):
    """Layer-wise training followed by decayed fine-tuning.

    For each t: layer t alone at ``lr`` (earlier layers frozen, network
    truncated at t), then layers 1..t at ``lr * d`` for each ``d`` in
    ``decay``.  Every stage runs ``epochs`` epochs of minibatch Adam on the
    MSE.  The returned parameters are the best on ``val`` among the
    initialization and the end of every stage.

    ``train``/``val`` are ``(Yt, Xt)`` lifted batches.
    """
    Y_tr, X_tr = (np.asarray(a) for a in train)
    Y_va, X_va = (np.asarray(a) for a in val)
    if len(Y_tr) == 0:
        raise ContractError("train_lista needs a nonempty training set")
    if lam is None:
        from .classic_solvers import lambda_max
        lam = 0.1 * float(np.median(lambda_max(S, Y_tr)))
    params = init_lista(S, T, lam)
    tlog = ListaTrainLog()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    bs = min(batch_size, len(Y_tr))

    def val_db(p, t_active):
        if len(Y_va) == 0:
            return float("nan")
        return nmse_db(lista_forward(p.values, Y_va, n_active=t_active).data, X_va)

    best_db = val_db(params, T)
    best = params
    if epochs <= 0:
        return (params, tlog) if return_log else params
    for t in range(T):
        stages = [(f"layer{t}", lr, lambda k, t=t: k.startswith(f"l{t}."))]
        stages += [(f"layer{t}-ft{j}", lr * d, lambda k, t=t: int(k[1:k.index(".")]) <= t)
                   for j, d in enumerate(decay)]
        for name, rate, trainable in stages:
            p = params.freeze_all_except(trainable)
            state = AdamState()
            losses = []
            for _ in range(epochs):
                order = rng.permutation(len(Y_tr))
                for i in range(0, len(order) - bs + 1, bs):
                    idx = order[i:i + bs]
                    loss, g = nx.grad(mse_loss, p, Y_tr[idx], X_tr[idx], t + 1)
                    if not math.isfinite(loss):
                        raise TrainingDivergedError(
                            f"non-finite loss in stage {name} after {len(losses)} steps; "
                            f"last finite loss {losses[-1] if losses else None}")
                    p, state = nx.adam_step(p, g, state, rate)
                    p = _clamp_thresholds(p)
                    losses.append(loss)
            params = p.with_frozen(())
            tlog.stage_losses.append((name, losses))
            db = val_db(params, t + 1)
            tlog.val_nmse.append((name, db))
            log.info("LISTA stage %s: val NMSE %.2f dB (over %d layers)", name, db, t + 1)
    final_db = val_db(params, T)
    if not final_db > best_db:
        best, best_db = params, final_db
    return (best, tlog) if return_log else best
