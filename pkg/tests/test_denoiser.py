import numpy as np
import pytest

from maskedit.denoiser import ConvDenoiser, StackSpec, time_embedding
from maskedit.errors import ConfigurationError, ModelError


def param_count(model: ConvDenoiser) -> int:
    return sum(p.size for p in model.stack.params.values())


def test_tiny_spec_stays_under_1k_params(tiny_setup):
    base, _, _, _ = tiny_setup
    assert param_count(base) < 1000


def test_predict_shape_and_layer_features(tiny_setup):
    base, _, _, embedder = tiny_setup
    z = np.random.default_rng(0).standard_normal((2, 8, 8))
    cond = embedder.embed("a blue square")
    out = base.predict(z, 10, cond)
    assert out.shape == z.shape
    feats = base.layer_features(z, 10, cond)
    assert [f.shape[0] for f in feats] == [4, 4, 2]
    assert all(f.shape[1:] == (8, 8) for f in feats)


def test_eval_count_increments(tiny_setup):
    base, _, _, embedder = tiny_setup
    z = np.zeros((2, 6, 6))
    start = base.eval_count
    base.predict(z, 3, embedder.embed("x"))
    base.predict(z, 4, embedder.embed("y"))
    assert base.eval_count == start + 2


def test_init_deterministic_by_seed():
    spec = StackSpec(3, (6, 6, 3), time_dim=8, cond_dim=8)
    a = ConvDenoiser(spec, seed=5)
    b = ConvDenoiser(spec, seed=5)
    assert a.param_checksum() == b.param_checksum()
    c = ConvDenoiser(spec, seed=6)
    assert a.param_checksum() != c.param_checksum()


def test_save_load_round_trip(tmp_path, tiny_setup):
    base, _, _, embedder = tiny_setup
    path = tmp_path / "base.npz"
    base.save(path)
    loaded = ConvDenoiser.load(path)
    assert loaded.param_checksum() == base.param_checksum()
    z = np.random.default_rng(1).standard_normal((2, 8, 8))
    cond = embedder.embed("check")
    assert np.array_equal(loaded.predict(z, 7, cond), base.predict(z, 7, cond))


def test_load_rejects_wrong_kind(tmp_path, tiny_setup):
    base, branch, _, _ = tiny_setup
    path = tmp_path / "branch.npz"
    branch.save(path)
    with pytest.raises(ModelError):
        ConvDenoiser.load(path)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        StackSpec(0, (4, 4))
    with pytest.raises(ConfigurationError):
        StackSpec(3, (4,))
    with pytest.raises(ConfigurationError):
        StackSpec(3, (4, 3), time_dim=5)
    with pytest.raises(ConfigurationError):
        ConvDenoiser(StackSpec(3, (4, 3), cond_dim=None))


def test_time_embedding_shape_and_determinism():
    emb = time_embedding(np.array([0, 10, 999]), 8)
    assert emb.shape == (3, 8)
    assert np.array_equal(emb, time_embedding(np.array([0, 10, 999]), 8))
    assert not np.allclose(emb[0], emb[2])


def test_base_gradients_match_finite_differences(tiny_setup):
    base, _, sched, embedder = tiny_setup
    rng = np.random.default_rng(2)
    batch = 2
    z0 = rng.uniform(0, 1, (batch, 2, 8, 8))
    eps = rng.standard_normal(z0.shape)
    tvec = np.array([13, 37])
    cembs = np.stack([embedder.embed("a red circle"), embedder.embed("a dog")])
    from maskedit.diffusion import forward_noise

    z_t = np.stack([forward_noise(z0[i], eps[i], int(tvec[i]), sched)
                    for i in range(batch)])
    _, grads = base.loss_and_grads(z_t, tvec, cembs, eps)

    h = 1e-6
    worst = 0.0
    for key, arr in base.stack.params.items():
        flat = arr.reshape(-1)
        stride = max(1, flat.size // 8)  # probe a spread of entries per tensor
        for i in range(0, flat.size, stride):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = base.loss_and_grads(z_t, tvec, cembs, eps)
            flat[i] = orig - h
            lm, _ = base.loss_and_grads(z_t, tvec, cembs, eps)
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            got = grads[key].reshape(-1)[i]
            worst = max(worst, abs(fd - got) / max(abs(fd), abs(got), 1e-8))
    assert worst < 1e-4
