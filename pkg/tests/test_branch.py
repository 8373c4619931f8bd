import numpy as np
import pytest

from maskedit.branch import (
    BranchNetwork,
    InjectedDenoiser,
    InjectionConfig,
    ZeroLink,
    assemble_branch_input,
    branch_loss_and_grads,
    injected_layers,
    inject,
    inpaint_sample,
)
from maskedit.conductor import IdentityCodec
from maskedit.denoiser import ConvDenoiser, StackSpec
from maskedit.diffusion import SamplerConfig, forward_noise, sample
from maskedit.errors import ModelError, ShapeError, ValidationError


def _mask(h, w, filled):
    m = np.zeros((h, w))
    m[filled] = 1.0
    return m


# -- assemble_branch_input ----------------------------------------------------

def test_assemble_channel_layout():
    rng = np.random.default_rng(0)
    z_t = rng.standard_normal((4, 8, 8))
    z0m = rng.standard_normal((4, 8, 8))
    m = rng.uniform(0, 1, (8, 8))
    out = assemble_branch_input(z_t, z0m, m)
    assert out.shape == (9, 8, 8)
    assert np.array_equal(out[:4], z_t)
    assert np.array_equal(out[4:8], z0m)
    assert np.array_equal(out[8], m)


def test_assemble_shape_errors():
    with pytest.raises(ShapeError):
        assemble_branch_input(np.zeros((4, 8, 8)), np.zeros((4, 16, 16)),
                              np.zeros((8, 8)))
    with pytest.raises(ShapeError):
        assemble_branch_input(np.zeros((4, 8, 8)), np.zeros((4, 8, 8)),
                              np.zeros((4, 4)))
    with pytest.raises(ValidationError):
        assemble_branch_input(np.zeros((1, 4, 4)), np.zeros((1, 4, 4)),
                              np.full((4, 4), 1.5))


# -- inject -------------------------------------------------------------------

def test_inject_zero_link_is_identity():
    rng = np.random.default_rng(1)
    base_f = rng.standard_normal((6, 5, 5))
    branch_f = rng.standard_normal((6, 5, 5))
    out = inject(base_f, branch_f, ZeroLink.zeros(6), 1.0)
    assert np.array_equal(out, base_f)


def test_inject_w_zero_returns_same_object():
    rng = np.random.default_rng(2)
    base_f = rng.standard_normal((3, 4, 4))
    link = ZeroLink(rng.standard_normal((3, 3)), rng.standard_normal(3))
    out = inject(base_f, rng.standard_normal((3, 4, 4)), link, 0.0)
    assert out is base_f


def test_inject_identity_link_adds_feature():
    rng = np.random.default_rng(3)
    base_f = rng.standard_normal((4, 6, 6))
    branch_f = rng.standard_normal((4, 6, 6))
    link = ZeroLink(np.eye(4), np.zeros(4))
    out = inject(base_f, branch_f, link, 1.0)
    assert np.allclose(out, base_f + branch_f)


def test_inject_scale_out_of_range():
    with pytest.raises(ValidationError):
        inject(np.zeros((2, 3, 3)), np.zeros((2, 3, 3)), ZeroLink.zeros(2), 1.5)


def test_link_index_bounds(tiny_setup):
    _, branch, _, _ = tiny_setup
    assert isinstance(branch.link(0), ZeroLink)
    with pytest.raises(IndexError):
        branch.link(branch.n_layers)
    with pytest.raises(IndexError):
        branch.link(-1)


def test_injected_layer_selection():
    assert injected_layers("full", 4) == {0, 1, 2, 3}
    assert injected_layers("half", 4) == {2, 3}
    assert injected_layers("last", 4) == {3}


# -- injection config -----------------------------------------------------------

def test_injection_config_validation():
    InjectionConfig(0.0)
    InjectionConfig(1.0)
    with pytest.raises(ValidationError):
        InjectionConfig(1.01)
    with pytest.raises(ValidationError):
        InjectionConfig(-0.1)


# -- full-system identities -------------------------------------------------------

def _toy_system(seed=0):
    base = ConvDenoiser(StackSpec(3, (8, 8, 3), time_dim=8, cond_dim=8), seed=seed)
    branch = BranchNetwork.for_base(base, seed=seed + 1)
    return base, branch


def _run_pair(base, branch, icfg, seed, sched, embedder, codec, caption="a red circle"):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0, 1, (3, 12, 12))
    mask = _mask(12, 12, (slice(3, 9), slice(3, 9)))
    masked = img * (1 - mask[None])
    scfg = SamplerConfig(steps=4, guidance_scale=7.5, seed=seed)
    dual = inpaint_sample(base, branch, masked, mask, caption, icfg, scfg,
                          sched, codec, embedder)
    z_start = np.random.default_rng(seed).standard_normal((3, 12, 12))
    base_only = codec.decode(sample(base, z_start, embedder.embed(caption),
                                    sched, scfg, uncond=embedder.embed("")))
    return dual, base_only


def test_zero_init_branch_is_extensionally_invisible(tiny_setup):
    _, _, sched, embedder = tiny_setup
    base, branch = _toy_system(seed=7)
    codec = IdentityCodec()
    for seed in range(5):
        dual, base_only = _run_pair(base, branch, InjectionConfig(1.0), seed,
                                    sched, embedder, codec)
        assert np.max(np.abs(dual - base_only)) <= 1e-6


def test_w_zero_reproduces_base_bitwise(tiny_setup):
    _, _, sched, embedder = tiny_setup
    base, branch = _toy_system(seed=8)
    rng = np.random.default_rng(9)
    for i, link in enumerate(branch.links):  # nonzero links: w=0 must still win
        link.weight = rng.standard_normal(link.weight.shape) * 0.3
        link.bias = rng.standard_normal(link.bias.shape) * 0.3
    dual, base_only = _run_pair(base, branch, InjectionConfig(0.0), 3,
                                sched, embedder, IdentityCodec())
    assert np.array_equal(dual, base_only)


def test_output_continuous_in_scale(tiny_setup):
    _, _, sched, embedder = tiny_setup
    base, branch = _toy_system(seed=10)
    rng = np.random.default_rng(11)
    for link in branch.links:
        link.weight = rng.standard_normal(link.weight.shape) * 0.1
    codec = IdentityCodec()
    outs = {}
    for w in (0.5, 0.500001):
        outs[w], _ = _run_pair(base, branch, InjectionConfig(w), 5, sched,
                               embedder, codec)
    assert np.max(np.abs(outs[0.5] - outs[0.500001])) < 1e-3


def test_base_parameters_frozen_through_inpaint(tiny_setup):
    _, _, sched, embedder = tiny_setup
    base, branch = _toy_system(seed=12)
    before = base.param_checksum()
    _run_pair(base, branch, InjectionConfig(1.0), 1, sched, embedder,
              IdentityCodec())
    assert base.param_checksum() == before


def test_plug_and_play_base_swap(tiny_setup):
    _, _, sched, embedder = tiny_setup
    base_a, branch = _toy_system(seed=13)
    base_b = ConvDenoiser(base_a.spec, seed=99)  # same shapes, new weights
    assert branch.compatible_with(base_b)
    dual, _ = _run_pair(base_b, branch, InjectionConfig(1.0), 2, sched,
                        embedder, IdentityCodec())
    assert dual.shape == (3, 12, 12)


def test_incompatible_branch_rejected(tiny_setup):
    _, _, sched, embedder = tiny_setup
    base, _ = _toy_system(seed=14)
    other = BranchNetwork(channels=3, widths=(6, 6, 3), time_dim=8)
    with pytest.raises(ModelError):
        InjectedDenoiser(base, other, np.zeros((3, 12, 12)),
                         np.zeros((12, 12)), InjectionConfig(1.0))


def test_branch_has_no_attention_or_text_params(tiny_setup):
    _, branch, _, _ = tiny_setup
    names = set(branch.params())
    assert not any("cproj" in n or "attn" in n for n in names)
    assert branch.stack.spec.cond_dim is None


def test_branch_checkpoint_round_trip(tmp_path, tiny_setup):
    _, branch, _, _ = tiny_setup
    rng = np.random.default_rng(15)
    for link in branch.links:
        link.weight = rng.standard_normal(link.weight.shape)
    path = tmp_path / "branch.npz"
    branch.save(path)
    loaded = BranchNetwork.load(path)
    assert loaded.param_checksum() == branch.param_checksum()
    assert loaded.signature() == branch.signature()


def test_branch_checkpoint_wrong_kind(tmp_path, tiny_setup):
    base, _, _, _ = tiny_setup
    path = tmp_path / "base.npz"
    base.save(path)
    with pytest.raises(ModelError):
        BranchNetwork.load(path)


def test_composite_gradients_match_finite_differences(tiny_setup):
    base, branch, sched, embedder = tiny_setup
    rng = np.random.default_rng(16)
    for link in branch.links:  # move off the zero init so all paths carry grads
        link.weight = rng.standard_normal(link.weight.shape) * 0.05
        link.bias = rng.standard_normal(link.bias.shape) * 0.05
    batch = 2
    z0 = rng.uniform(0, 1, (batch, 2, 8, 8))
    eps = rng.standard_normal(z0.shape)
    tvec = np.array([11, 41])
    cembs = np.stack([embedder.embed("one"), embedder.embed("two")])
    z_t = np.stack([forward_noise(z0[i], eps[i], int(tvec[i]), sched)
                    for i in range(batch)])
    mask = _mask(8, 8, (slice(2, 6), slice(2, 6)))
    branch_in = np.stack([
        assemble_branch_input(z_t[i], z0[i] * (1 - mask[None]), mask)
        for i in range(batch)
    ])
    icfg = InjectionConfig(0.8)
    _, grads = branch_loss_and_grads(base, branch, icfg, z_t, tvec, cembs,
                                     branch_in, eps)
    params = branch.params()
    h = 1e-6
    worst = 0.0
    for key, arr in params.items():
        flat = arr.reshape(-1)
        stride = max(1, flat.size // 6)
        for i in range(0, flat.size, stride):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = branch_loss_and_grads(base, branch, icfg, z_t, tvec, cembs,
                                          branch_in, eps)
            flat[i] = orig - h
            lm, _ = branch_loss_and_grads(base, branch, icfg, z_t, tvec, cembs,
                                          branch_in, eps)
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            got = grads[key].reshape(-1)[i]
            worst = max(worst, abs(fd - got) / max(abs(fd), abs(got), 1e-8))
    assert worst < 1e-4


def test_composite_gradients_never_touch_base(tiny_setup):
    base, branch, sched, embedder = tiny_setup
    rng = np.random.default_rng(17)
    z0 = rng.uniform(0, 1, (1, 2, 8, 8))
    eps = rng.standard_normal(z0.shape)
    z_t = np.stack([forward_noise(z0[0], eps[0], 20, sched)])
    mask = _mask(8, 8, (slice(0, 4), slice(0, 4)))
    branch_in = np.stack([
        assemble_branch_input(z_t[0], z0[0] * (1 - mask[None]), mask)])
    before = base.param_checksum()
    _, grads = branch_loss_and_grads(base, branch, InjectionConfig(1.0), z_t,
                                     np.array([20]),
                                     np.stack([embedder.embed("x")]),
                                     branch_in, eps)
    assert base.param_checksum() == before
    assert all(key.startswith(("stack.", "link")) for key in grads)
