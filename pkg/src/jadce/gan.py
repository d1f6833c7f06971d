"""U-net generator with data-consistency blocks and a WGAN critic.

Layout: a lifted estimate ``X~`` (2N x M) enters the networks transposed, as
M channels over a length-2N device axis, batched as (B, M, 2N).  Each
fundamental block maps ``X_k -> X_k + P @ U_k(X_k)`` where ``P`` projects onto
the nullspace of the lifted pilot, so ``S~ X`` never changes across blocks.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numerics as nx
from .complexlift import Projector
from .metrics import nmse_db
from .numerics import AdamState, ContractError, ParamBundle, Tensor

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; ``checkpoint`` holds the last finite parameters."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class GANConfig:
    n_blocks: int = 3
    widths: tuple[int, ...] = (32, 64, 128)
    disc_widths: tuple[int, ...] = (16, 32, 64)
    clip: float = 0.01
    n_critic: int = 5
    alpha: float = 1.0
    lr0: float = 5e-4
    decay: tuple[float, ...] = (0.2, 0.02)
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    min_improve_db: float = 0.01
    use_projection: bool = True
    head_init_scale: float = 1.0

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ContractError("n_blocks must be >= 1")
        if not self.widths or not self.disc_widths:
            raise ContractError("widths and disc_widths must be nonempty")
        object.__setattr__(self, "widths", tuple(self.widths))
        object.__setattr__(self, "disc_widths", tuple(self.disc_widths))
        object.__setattr__(self, "decay", tuple(self.decay))

    @property
    def learning_rates(self) -> tuple[float, ...]:
        """Block-training rate followed by the decayed fine-tuning rates."""
        return (self.lr0,) + tuple(self.lr0 * d for d in self.decay)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GANConfig":
        return cls(**d)


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------

def _kaiming(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    bound = gain * math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def check_length(length: int, n_stages: int) -> None:
    if length % (2 ** n_stages):
        raise nx.DimensionError(
            f"device axis length {length} is not divisible by 2**{n_stages}; "
            f"choose N so that 2N is a multiple of {2 ** n_stages}")


def init_unet(rng: np.random.Generator, channels: int, length: int, widths,
              prefix: str, head_scale: float = 1.0) -> dict[str, np.ndarray]:
    check_length(length, len(widths))
    p: dict[str, np.ndarray] = {}

    def conv(name, c_out, c_in, k, gain=1.0):
        p[f"{prefix}.{name}.w"] = _kaiming(rng, (c_out, c_in, k), c_in * k, gain)
        p[f"{prefix}.{name}.b"] = np.zeros(c_out)

    skip_ch = [channels]
    c_prev = channels
    for s, w in enumerate(widths):
        conv(f"enc{s}.down", w, c_prev, 3)
        conv(f"enc{s}.f1", w, w, 3)
        conv(f"enc{s}.f2", w, w, 3)
        skip_ch.append(w)
        c_prev = w
    for s in reversed(range(len(widths))):
        c_out = widths[s - 1] if s > 0 else widths[0]
        # transpose-conv kernels are (C_in, C_out, k)
        p[f"{prefix}.dec{s}.up.w"] = _kaiming(rng, (c_prev, c_out, 2), c_prev * 2)
        p[f"{prefix}.dec{s}.up.b"] = np.zeros(c_out)
        conv(f"dec{s}.f1", c_out, c_out + skip_ch[s], 3)
        conv(f"dec{s}.f2", c_out, c_out, 3)
        c_prev = c_out
    conv("head", channels, c_prev, 1, gain=head_scale)
    return p


def unet_stages(params, prefix: str) -> int:
    n = 0
    while f"{prefix}.enc{n}.down.w" in params:
        n += 1
    return n


def unet_forward(params, x, prefix: str = "u") -> Tensor:
    """U-net on a (B, C, Len) or (C, Len) input; output has the input's shape."""
    x = nx.as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = nx.reshape(x, (1,) + x.shape)
    n_stages = unet_stages(params, prefix)
    if n_stages == 0:
        raise ContractError(f"no U-net parameters under prefix {prefix!r}")
    check_length(x.shape[2], n_stages)

    def conv(name, h, stride=1, padding=1):
        return nx.conv1d(h, params[f"{prefix}.{name}.w"], params[f"{prefix}.{name}.b"],
                         stride=stride, padding=padding)

    skips = [x]
    h = x
    for s in range(n_stages):
        h = conv(f"enc{s}.down", h, stride=2)
        h = nx.relu(conv(f"enc{s}.f1", h))
        h = nx.relu(conv(f"enc{s}.f2", h))
        skips.append(h)
    for s in reversed(range(n_stages)):
        h = nx.convtranspose1d(h, params[f"{prefix}.dec{s}.up.w"],
                               params[f"{prefix}.dec{s}.up.b"], stride=2)
        h = nx.concat([h, skips[s]], axis=1)
        h = nx.relu(conv(f"dec{s}.f1", h))
        h = nx.relu(conv(f"dec{s}.f2", h))
    out = conv("head", h, padding=0)
    return nx.reshape(out, out.shape[1:]) if squeeze else out


# --------------------------------------------------------------------------
# generator
# --------------------------------------------------------------------------

def block_prefix(k: int) -> str:
    return f"g{k}"


def n_blocks(gparams) -> int:
    k = 0
    while f"{block_prefix(k)}.head.w" in gparams:
        k += 1
    return k


def init_generator(config: GANConfig, N: int, M: int, seed: int, n_blocks: int | None = None
                   ) -> ParamBundle:
    values = {}
    for k in range(config.n_blocks if n_blocks is None else n_blocks):
        values.update(init_block(config, N, M, seed, k))
    return ParamBundle(values)


def init_block(config: GANConfig, N: int, M: int, seed: int, k: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1, k]))
    return init_unet(rng, M, 2 * N, config.widths, block_prefix(k), config.head_init_scale)


def to_channels(Xt):
    """(B, 2N, M) stack form -> (B, M, 2N) channel form (and back: same op)."""
    return nx.transpose(Xt, (0, 2, 1))


def fundamental_block(params, Xt, P, k: int = 0) -> Tensor:
    """``X + P @ U_k(X)`` on a batched stack ``Xt`` of shape (B, 2N, M).

    ``P=None`` drops the projection (``P = I``), used for the ablation.
    """
    Xt = nx.as_tensor(Xt)
    if Xt.ndim != 3:
        raise nx.DimensionError(f"fundamental_block expects (B, 2N, M), got {Xt.shape}")
    U = to_channels(unet_forward(params, to_channels(Xt), block_prefix(k)))
    if P is not None:
        if np.shape(P) != (Xt.shape[1], Xt.shape[1]):
            raise nx.DimensionError(f"projector {np.shape(P)} does not match stack {Xt.shape}")
        U = nx.matmul(P, U)
    return nx.add(Xt, U)


def generator_forward(gparams, Yt, proj: Projector, use_projection: bool = True,
                      n_active: int | None = None) -> Tensor:
    """``X_0 = S~^+ Y~`` followed by the fundamental blocks; ``Yt`` is (B, 2L, M)."""
    Yt = nx.value(Yt)
    if Yt.ndim == 2:
        Yt = Yt[None]
    X = nx.Tensor(proj.estimate(Yt))
    P = proj.P if use_projection else None
    for k in range(n_blocks(gparams) if n_active is None else n_active):
        X = fundamental_block(gparams, X, P, k)
    return X


def generate(gparams, Yt, proj: Projector, use_projection: bool = True) -> np.ndarray:
    """Array-in, array-out generator evaluation in chunks."""
    Yt = np.asarray(Yt)
    single = Yt.ndim == 2
    if single:
        Yt = Yt[None]
    values = gparams.values if isinstance(gparams, ParamBundle) else gparams
    out = [generator_forward(values, Yt[i:i + 256], proj, use_projection).data
           for i in range(0, len(Yt), 256)]
    res = np.concatenate(out) if out else np.zeros((0, proj.lifted.shape[1], Yt.shape[2]))
    return res[0] if single else res


# --------------------------------------------------------------------------
# discriminator
# --------------------------------------------------------------------------

def init_discriminator(config: GANConfig, N: int, M: int, seed: int) -> ParamBundle:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    check_length(2 * N, len(config.disc_widths))
    p = {}
    c_prev = M
    for s, w in enumerate(config.disc_widths):
        p[f"d.s{s}.feat.w"] = _kaiming(rng, (w, c_prev, 3), c_prev * 3)
        p[f"d.s{s}.feat.b"] = np.zeros(w)
        p[f"d.s{s}.down.w"] = _kaiming(rng, (w, w, 3), w * 3)
        p[f"d.s{s}.down.b"] = np.zeros(w)
        c_prev = w
    p["d.out.w"] = _kaiming(rng, (1, c_prev, 3), c_prev * 3)
    p["d.out.b"] = np.zeros(1)
    return clip_weights(ParamBundle(p), config.clip)


def discriminator_forward(dparams, Xt) -> Tensor:
    """Critic scores of shape (B,) for a stack batch (B, 2N, M); no sigmoid."""
    Xt = nx.as_tensor(Xt)
    if Xt.ndim == 2:
        Xt = nx.reshape(Xt, (1,) + Xt.shape)
    h = to_channels(Xt)
    s = 0
    while f"d.s{s}.feat.w" in dparams:
        if dparams[f"d.s{s}.feat.w"].shape[1] != h.shape[1]:
            raise nx.DimensionError(
                f"critic expects {dparams[f'd.s{s}.feat.w'].shape[1]} channels, got {h.shape[1]}")
        h = nx.relu(nx.conv1d(h, dparams[f"d.s{s}.feat.w"], dparams[f"d.s{s}.feat.b"],
                              stride=1, padding=1))
        h = nx.relu(nx.conv1d(h, dparams[f"d.s{s}.down.w"], dparams[f"d.s{s}.down.b"],
                              stride=2, padding=1))
        s += 1
    h = nx.conv1d(h, dparams["d.out.w"], dparams["d.out.b"], stride=1, padding=1)
    # (B, 1, len) -> mean over the remaining positions
    return nx.mean(h, axis=(1, 2))


def clip_weights(dparams: ParamBundle, c: float) -> ParamBundle:
    return ParamBundle({k: np.clip(v, -c, c) for k, v in dparams.values.items()},
                       dparams.frozen)


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------

def generator_loss(g_out, X_true, d_fake, alpha: float = 1.0) -> Tensor:
    """``mean_i ||X_i - G_i||_F - alpha * mean_i D(G_i)``."""
    X_true = nx.value(X_true)
    if X_true.shape[0] == 0:
        raise ContractError("generator_loss on an empty batch")
    err = nx.sub(g_out, X_true)
    l2 = nx.mean(nx.frobenius(err, axis=(1, 2)))
    if d_fake is None:
        return l2
    return nx.sub(l2, nx.scale(nx.mean(d_fake), alpha))


def discriminator_loss(d_real, d_fake) -> Tensor:
    """``-mean D(X) + mean D(G)``."""
    if nx.value(d_real).size == 0:
        raise ContractError("discriminator_loss on an empty batch")
    return nx.sub(nx.mean(d_fake), nx.mean(d_real))


def _g_objective(gen, disc, Yt, Xt, proj, use_projection, alpha):
    g_out = generator_forward(gen, Yt, proj, use_projection)
    d_fake = discriminator_forward(disc, g_out) if alpha else None
    return generator_loss(g_out, Xt, d_fake, alpha)


def _d_objective(disc, Xt, fake):
    return discriminator_loss(discriminator_forward(disc, Xt), discriminator_forward(disc, fake))


def gan_losses(gparams: ParamBundle, dparams: ParamBundle, Yt, Xt, proj: Projector,
               use_projection: bool = True, alpha: float = 1.0) -> tuple[float, float]:
    """Generator and discriminator costs on one batch (no gradients)."""
    g_out = generator_forward(gparams.values, Yt, proj, use_projection)
    d_fake = discriminator_forward(dparams.values, g_out)
    g = generator_loss(g_out, Xt, d_fake, alpha)
    d = discriminator_loss(discriminator_forward(dparams.values, Xt), d_fake)
    return g.item(), d.item()


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)

    def step(self, step, g_loss, d_loss):
        self.rows.append((step, g_loss, d_loss, None))

    def epoch(self, step, val_nmse):
        self.rows.append((step, None, None, val_nmse))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "g_loss", "d_loss", "val_nmse_db"])
            for step, g, d, v in self.rows:
                w.writerow([step] + ["" if x is None else repr(float(x)) for x in (g, d, v)])

    @property
    def val_nmse(self) -> list[float]:
        return [r[3] for r in self.rows if r[3] is not None]


@dataclass
class GANResult:
    generator: ParamBundle
    discriminator: ParamBundle
    log: TrainingLog
    config: GANConfig
    val_nmse_db: float


def evaluate_nmse(gparams, Yt, Xt, proj, use_projection=True) -> float:
    return nmse_db(generate(gparams, Yt, proj, use_projection), Xt)


def train_gan(train, val, proj: Projector, config: GANConfig = GANConfig(), seed: int = 0,
              max_epochs: int | None = None) -> GANResult:
    """Block-wise adversarial training.

    ``train`` and ``val`` are ``(Yt, Xt)`` pairs of lifted batches with shapes
    (n, 2L, M) and (n, 2N, M).  For each new block: train it alone at
    ``lr0`` with earlier blocks frozen, then fine-tune every block at each
    decayed rate.  Each stage runs until validation NMSE stops improving by
    more than ``min_improve_db`` for ``patience`` epochs (or ``max_epochs``)
    and ends on its best-validation parameters.
    """
    Y_tr, X_tr = (np.asarray(a) for a in train)
    Y_va, X_va = (np.asarray(a) for a in val)
    if len(Y_tr) == 0 or len(Y_va) == 0:
        raise ContractError("train_gan needs nonempty train and validation sets")
    if max_epochs is not None:
        config = replace(config, max_epochs=max_epochs)
    N2, M = X_tr.shape[1], X_tr.shape[2]
    N = N2 // 2
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    gen = ParamBundle({})
    disc = init_discriminator(config, N, M, seed)
    tlog = TrainingLog()
    state = {"step": 0}
    bs = min(config.batch_size, len(Y_tr))

    def run_stage(gen, disc, lr, trainable_prefix):
        gen = gen.freeze_all_except(
            lambda k: trainable_prefix is None or k.startswith(trainable_prefix + "."))
        g_state, d_state = AdamState(), AdamState()
        best = evaluate_nmse(gen, Y_va, X_va, proj, config.use_projection)
        best_params = (gen, disc)
        stale = 0
        for _ in range(config.max_epochs):
            order = rng.permutation(len(Y_tr))
            for i in range(0, len(order) - bs + 1, bs):
                idx = order[i:i + bs]
                g_loss = d_loss = float("nan")
                if config.alpha:
                    for _ in range(config.n_critic):
                        cidx = rng.choice(len(Y_tr), bs, replace=False)
                        fake = generate(gen, Y_tr[cidx], proj, config.use_projection)
                        d_loss, d_grads = nx.grad(_d_objective, disc, X_tr[cidx], fake)
                        disc, d_state = nx.adam_step(disc, d_grads, d_state, lr)
                        disc = clip_weights(disc, config.clip)
                g_loss, g_grads = nx.grad(
                    lambda g, Y, X: _g_objective(g, disc.values, Y, X, proj,
                                                 config.use_projection, config.alpha),
                    gen, Y_tr[idx], X_tr[idx])
                if not (math.isfinite(g_loss) and (not config.alpha or math.isfinite(d_loss))):
                    raise TrainingDivergedError(
                        f"non-finite loss at step {state['step']}: g={g_loss}, d={d_loss}",
                        checkpoint=best_params)
                gen, g_state = nx.adam_step(gen, g_grads, g_state, lr)
                state["step"] += 1
                tlog.step(state["step"], g_loss, d_loss if config.alpha else 0.0)
            val_nmse = evaluate_nmse(gen, Y_va, X_va, proj, config.use_projection)
            tlog.epoch(state["step"], val_nmse)
            if val_nmse < best - config.min_improve_db:
                best, best_params, stale = val_nmse, (gen, disc), 0
            else:
                if val_nmse < best:
                    best, best_params = val_nmse, (gen, disc)
                stale += 1
                if stale >= config.patience:
                    break
        return best_params[0].with_frozen(()), best_params[1], best

    best = float("nan")
    for k in range(config.n_blocks):
        gen = gen.merge(ParamBundle(init_block(config, N, M, seed, k)))
        lrs = config.learning_rates
        gen, disc, best = run_stage(gen, disc, lrs[0], block_prefix(k))
        log.info("block %d trained alone: val NMSE %.2f dB", k, best)
        for lr in lrs[1:]:
            gen, disc, best = run_stage(gen, disc, lr, None)
            log.info("block %d fine-tune lr=%.1e: val NMSE %.2f dB", k, lr, best)
    return GANResult(gen, disc, tlog, config, best)
