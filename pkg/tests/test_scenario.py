import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jadce.container import (
    MAGIC, ShapeMismatchError, VersionMismatchError, ContainerIOError, load_arrays, save_arrays,
)
from jadce.scenario import (
    ScenarioConfig, ScenarioError, gen_dataset, gen_pilot, gen_sample, load_dataset,
    sample_seed, save_dataset,
)


def test_pilot_determinism_and_moments():
    a, b = gen_pilot(64, 32, 7), gen_pilot(64, 32, 7)
    assert a == b and a != gen_pilot(64, 32, 8)
    z = gen_pilot(500, 200, 1).to_complex()  # 1e5 entries
    assert abs(np.mean(np.abs(z) ** 2) - 1.0) < 0.02
    assert abs(z.mean()) < 0.02


def test_config_validation():
    with pytest.raises(ScenarioError):
        ScenarioConfig(N=8, L=8)
    with pytest.raises(ScenarioError):
        ScenarioConfig(p=0.0)
    with pytest.raises(ScenarioError):
        ScenarioConfig.from_dict({"N": 8, "bogus": 1})
    c = ScenarioConfig(snr_db="noiseless")
    assert c.noiseless and c.noise_var == 0.0
    assert ScenarioConfig.from_dict(c.with_snr(10).to_dict()) == c.with_snr(10)


def test_activity_rate():
    cfg = ScenarioConfig(N=100, L=8, M=1, p=0.1, seed=3)
    pilot = gen_pilot(100, 8, 0)
    rate = np.mean([gen_sample(cfg, pilot, sample_seed(3, i)).activity.mean()
                    for i in range(100)])  # 1e4 device draws
    assert abs(rate - 0.1) < 0.01


def test_noiseless_and_degenerate_draws():
    cfg = ScenarioConfig(N=16, L=8, M=3, p=0.05, seed=0)
    ds = gen_dataset(cfg, 60)
    S = ds.pilot.to_complex()
    for s in ds.samples:
        np.testing.assert_array_equal(s.Y.to_complex(), S @ s.X.to_complex())
    empty = [s for s in ds.samples if not s.activity.any()]
    assert empty, "expected at least one all-inactive draw"
    assert not empty[0].Y.to_complex().any()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), snr=st.one_of(st.none(), st.floats(-10, 40)))
def test_group_sparsity(seed, snr):
    ds = gen_dataset(ScenarioConfig(N=16, L=8, M=3, p=0.3, snr_db=snr, seed=seed), 5)
    for s in ds.samples:
        nonzero = np.abs(s.X.to_complex()).sum(axis=1) > 0
        np.testing.assert_array_equal(nonzero, s.activity)


@pytest.mark.parametrize("snr", [0.0, 10.0, 25.0])
def test_snr_calibration(snr):
    cfg = ScenarioConfig(N=64, L=32, M=4, p=0.1, snr_db=snr, seed=11)
    ds = gen_dataset(cfg, 2000)
    S = ds.pilot.to_complex()
    sig = sum(np.sum(np.abs(S @ s.X.to_complex()) ** 2) for s in ds.samples)
    noise = sum(np.sum(np.abs(s.Y.to_complex() - S @ s.X.to_complex()) ** 2) for s in ds.samples)
    assert abs(10 * np.log10(sig / noise) - snr) < 0.5


def test_snr_only_changes_noise():
    a = gen_dataset(ScenarioConfig(N=16, L=8, snr_db=0, seed=2), 3)
    b = gen_dataset(ScenarioConfig(N=16, L=8, snr_db=20, seed=2), 3)
    S = a.pilot.to_complex()
    for x, y in zip(a.samples, b.samples):
        assert x.X == y.X
        za = x.Y.to_complex() - S @ x.X.to_complex()
        zb = y.Y.to_complex() - S @ y.X.to_complex()
        np.testing.assert_allclose(zb, 0.1 * za, atol=1e-12)


def test_dataset_determinism_and_offsets():
    cfg = ScenarioConfig(N=16, L=8, snr_db=5, seed=4)
    assert gen_dataset(cfg, 4) == gen_dataset(cfg, 4)
    tail = gen_dataset(cfg, 2, offset=2)
    assert gen_dataset(cfg, 4).samples[2:] == tail.samples


@pytest.mark.parametrize("n", [0, 1, 7])
def test_dataset_round_trip(tmp_path, n):
    ds = gen_dataset(ScenarioConfig(N=16, L=8, M=2, snr_db=12.5, seed=9), n)
    path = tmp_path / "ds.bin"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back == ds
    for a, b in zip(back.lifted, ds.lifted):
        np.testing.assert_array_equal(a, b)


def test_truncated_file(tmp_path):
    path = tmp_path / "ds.bin"
    save_dataset(gen_dataset(ScenarioConfig(N=16, L=8), 3), path)
    raw = path.read_bytes()
    for cut in (len(raw) - 8, 20, 10):
        path.write_bytes(raw[:cut])
        with pytest.raises(ShapeMismatchError):
            load_dataset(path)


def test_container_version_and_kind(tmp_path):
    path = tmp_path / "c.bin"
    save_arrays(path, {"a": np.arange(3.0)}, "thing", {"k": 1})
    arrays, meta = load_arrays(path, "thing")
    np.testing.assert_array_equal(arrays["a"], [0.0, 1.0, 2.0])
    assert meta == {"k": 1}
    with pytest.raises(ShapeMismatchError):
        load_arrays(path, "dataset")
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    header["version"] = 99
    new = json.dumps(header).encode()
    path.write_bytes(MAGIC + struct.pack("<Q", len(new)) + new + raw[16 + hlen:])
    with pytest.raises(VersionMismatchError):
        load_arrays(path)
    path.write_bytes(b"NOTMAGIC" + raw[8:])
    with pytest.raises(VersionMismatchError):
        load_arrays(path)
    with pytest.raises(ContainerIOError):
        load_arrays(tmp_path / "missing.bin")
