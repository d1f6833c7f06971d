import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jadce import numerics as nx
from jadce.complexlift import Projector
from jadce.gan import (
    GANConfig, clip_weights, discriminator_forward, discriminator_loss, fundamental_block,
    generate, generator_forward, generator_loss, init_discriminator, init_generator, init_unet,
    n_blocks, train_gan, unet_forward, _d_objective, _g_objective,
)
from jadce.numerics import ContractError, DimensionError
from jadce.scenario import ScenarioConfig, gen_dataset
from gradcheck import check_bundle

TINY = GANConfig(n_blocks=2, widths=(2, 3), disc_widths=(2, 2), batch_size=8)


@pytest.fixture(scope="module")
def toy():
    ds = gen_dataset(ScenarioConfig(N=16, L=8, M=2, p=0.2, seed=3), 40)
    Y, X = ds.lifted
    return Projector.from_pilot(ds.pilot), Y, X


def noiseless_Y(proj, seed, n=6, M=2):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, proj.lifted.shape[1], M))
    return proj.lifted @ X


# -- oracle ----------------------------------------------------------------

def conv_ref(x, w, b, stride, pad):
    c_out, c_in, k = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad)))
    n_out = (x.shape[1] + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, n_out))
    for o in range(c_out):
        for i in range(n_out):
            out[o, i] = b[o] + np.sum(w[o] * xp[:, i * stride:i * stride + k])
    return out


def convT_ref(x, w, b, stride):
    c_in, c_out, k = w.shape
    out = np.zeros((c_out, (x.shape[1] - 1) * stride + k))
    for ci in range(c_in):
        for i in range(x.shape[1]):
            out[:, i * stride:i * stride + k] += x[ci, i] * w[ci]
    return out + b[:, None]


def unet_ref(p, x, prefix, stages):
    relu = lambda a: np.maximum(a, 0)
    g = lambda n: (p[f"{prefix}.{n}.w"], p[f"{prefix}.{n}.b"])
    skips, h = [x], x
    for s in range(stages):
        h = conv_ref(h, *g(f"enc{s}.down"), 2, 1)
        h = relu(conv_ref(h, *g(f"enc{s}.f1"), 1, 1))
        h = relu(conv_ref(h, *g(f"enc{s}.f2"), 1, 1))
        skips.append(h)
    for s in reversed(range(stages)):
        h = np.concatenate([convT_ref(h, *g(f"dec{s}.up"), 2), skips[s]])
        h = relu(conv_ref(h, *g(f"dec{s}.f1"), 1, 1))
        h = relu(conv_ref(h, *g(f"dec{s}.f2"), 1, 1))
    return conv_ref(h, *g("head"), 1, 0)


def test_unet_hand_example():
    ident = np.array([[[0.0, 1.0, 0.0]]])
    p = {f"u.{n}.b": np.zeros(1) for n in ("enc0.down", "enc0.f1", "enc0.f2", "dec0.up",
                                            "dec0.f1", "dec0.f2")}
    p.update({"u.enc0.down.w": ident, "u.enc0.f1.w": ident, "u.enc0.f2.w": ident,
              "u.dec0.up.w": np.array([[[1.0, 0.0]]]),
              "u.dec0.f1.w": np.array([[[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]]]),
              "u.dec0.f2.w": ident, "u.head.w": np.array([[[0.5]]]), "u.head.b": np.array([-1.0])})
    x = np.array([[1.0, -2, 3, -4, 5, -6, 7, -8]])
    out = unet_forward(p, x, "u").data
    np.testing.assert_array_equal(out, [[0.0, -1, 2, -1, 4, -1, 6, -1]])


@pytest.mark.parametrize("widths", [(3,), (2, 4), (2, 3, 4)])
def test_unet_matches_loop_oracle(widths):
    rng = np.random.default_rng(len(widths))
    p = init_unet(rng, 2, 16, widths, "u")
    p = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in p.items()}
    x = rng.standard_normal((2, 16))
    np.testing.assert_allclose(unet_forward(p, x, "u").data, unet_ref(p, x, "u", len(widths)),
                               atol=1e-12)


def test_unet_shape_and_zero_input():
    rng = np.random.default_rng(0)
    p = init_unet(rng, 4, 64, (4, 8, 16), "u")  # N=32, M=4, 3 stages
    x = rng.standard_normal((5, 4, 64))
    assert unet_forward(p, x, "u").shape == x.shape
    assert not unet_forward(p, np.zeros_like(x), "u").data.any()
    with pytest.raises(DimensionError):
        init_unet(rng, 4, 60, (4, 8, 16), "u")


# -- data consistency --------------------------------------------------------

def test_block_with_zero_unet_is_identity(toy):
    proj, Y, _ = toy
    cfg = GANConfig(n_blocks=3, widths=(2, 3), head_init_scale=0.0)
    gen = init_generator(cfg, 16, 2, seed=0)
    X0 = proj.estimate(Y[:4])
    np.testing.assert_array_equal(fundamental_block(gen.values, X0, proj.P, 1).data, X0)
    np.testing.assert_array_equal(generate(gen, Y[:4], proj), X0)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), spread=st.floats(0.0, 1.0))
def test_residual_invariance(toy, seed, spread):
    proj, _, _ = toy
    rng = np.random.default_rng(seed)
    gen = init_generator(TINY, 16, 2, seed)
    gen = gen.map(lambda k, v: v * (1 + spread * rng.standard_normal(v.shape))
                  + 0.1 * spread * rng.standard_normal(v.shape))
    Y = noiseless_Y(proj, seed)
    X = proj.estimate(Y) + rng.standard_normal((6, 32, 2))
    before = np.linalg.norm(proj.lifted @ X - Y)
    after = fundamental_block(gen.values, X, proj.P, 0).data
    assert abs(np.linalg.norm(proj.lifted @ after - Y) - before) < 1e-8 * max(1.0, before)
    out = generate(gen, Y, proj)
    assert np.linalg.norm(proj.lifted @ out - Y) < 1e-8 * np.linalg.norm(Y)


def test_projected_update_lies_in_nullspace(toy):
    proj, _, _ = toy
    U = np.random.default_rng(1).standard_normal((32, 2))
    assert np.linalg.norm(proj.lifted @ (proj.P @ U)) < 1e-8 * np.linalg.norm(U)


def test_ablation_breaks_consistency(toy):
    proj, _, _ = toy
    gen = init_generator(TINY, 16, 2, seed=0)
    Y = noiseless_Y(proj, 0)
    out = generate(gen, Y, proj, use_projection=False)
    assert np.linalg.norm(proj.lifted @ out - Y) > 1e-3 * np.linalg.norm(Y)


def test_generator_shapes(toy):
    proj, Y, _ = toy
    gen = init_generator(TINY, 16, 2, seed=0)
    assert n_blocks(gen) == 2
    assert generate(gen, Y[0], proj).shape == (32, 2)
    assert generate(gen, Y[:3], proj).shape == (3, 32, 2)
    assert generator_forward(gen.values, Y[:3], proj, n_active=1).shape == (3, 32, 2)
    with pytest.raises(DimensionError):
        fundamental_block(gen.values, proj.estimate(Y[:2]), np.eye(30), 0)


# -- critic ------------------------------------------------------------------

def test_critic_contract(toy):
    _, _, X = toy
    d = init_discriminator(GANConfig(disc_widths=(4, 4)), 16, 2, seed=0)
    scores = discriminator_forward(d.values, X[:7]).data
    assert scores.shape == (7,)
    twin = discriminator_forward(d.values, np.stack([X[0], X[0]])).data
    assert twin[0] == twin[1]
    assert all(np.abs(v).max() <= 0.01 for v in d.values.values())
    wide = d.map(lambda k, v: 5 * v)
    assert all(np.abs(v).max() <= 0.003 for v in clip_weights(wide, 0.003).values.values())


# -- losses ------------------------------------------------------------------

def test_loss_trivial_cases(toy):
    _, _, X = toy
    d_vals = nx.Tensor(np.array([0.3, -0.1, 0.4]))
    g = generator_loss(nx.Tensor(X[:3]), X[:3], d_vals, alpha=1.0).item()
    assert g == pytest.approx(-0.2)
    zero = nx.Tensor(np.zeros(3))
    G = X[:3] + 1.0
    l2 = np.mean(np.linalg.norm((G - X[:3]).reshape(3, -1), axis=1))
    assert generator_loss(nx.Tensor(G), X[:3], zero).item() == pytest.approx(l2)
    assert discriminator_loss(zero, zero).item() == 0.0
    assert discriminator_loss(nx.Tensor(np.array([1.0, 3.0])),
                              nx.Tensor(np.array([0.5, 0.5]))).item() == pytest.approx(-1.5)
    with pytest.raises(ContractError):
        generator_loss(nx.Tensor(np.zeros((0, 4, 2))), np.zeros((0, 4, 2)), None)


def test_loss_gradients(toy):
    proj, Y, X = toy
    rng = np.random.default_rng(0)
    gen = init_generator(TINY, 16, 2, seed=1)
    # perturb away from ReLU kinks and give the head some weight
    gen = gen.map(lambda k, v: v + 0.2 * rng.standard_normal(v.shape))
    # sparse truths and zero biases put preactivations exactly on the ReLU kink
    disc = init_discriminator(TINY, 16, 2, seed=1).map(
        lambda k, v: 20 * v + 0.1 * rng.standard_normal(v.shape))
    err_g = check_bundle(lambda g, Yb, Xb: _g_objective(g, disc.values, Yb, Xb, proj, True, 1.0),
                         gen, Y[:3], X[:3], max_entries=6, rng=rng)
    fake = generate(gen, Y[:3], proj)
    real = X[:3] + 0.1 * rng.standard_normal(X[:3].shape)
    err_d = check_bundle(_d_objective, disc, real, fake, max_entries=6, rng=rng)
    assert err_g < 1e-4 and err_d < 1e-4


# -- training ----------------------------------------------------------------

def test_schedule_values():
    assert GANConfig().learning_rates == pytest.approx((5e-4, 1e-4, 1e-5))
    assert GANConfig.from_dict(TINY.to_dict()) == TINY


def test_short_run_reproducible(toy):
    proj, Y, X = toy
    cfg = GANConfig(n_blocks=1, widths=(2, 2), disc_widths=(2, 2), batch_size=8, n_critic=2,
                    max_epochs=2, patience=2)
    tr, va = (Y[:32], X[:32]), (Y[32:], X[32:])
    a = train_gan(tr, va, proj, cfg, seed=5)
    b = train_gan(tr, va, proj, cfg, seed=5)
    assert a.generator.equal(b.generator) and a.discriminator.equal(b.discriminator)
    assert a.log.rows == b.log.rows
    assert all(np.abs(v).max() <= cfg.clip for v in a.discriminator.values.values())
    assert np.isfinite(a.val_nmse_db)


def test_train_rejects_empty(toy):
    proj, Y, X = toy
    with pytest.raises(ContractError):
        train_gan((Y[:0], X[:0]), (Y, X), proj, TINY)
