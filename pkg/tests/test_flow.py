import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from sewfield.flow import (
    FLOW_DTYPE,
    EmptyPatternError,
    PatternFlow,
    TokenScaler,
    VelocityNet,
    detokenize,
    interpolate,
    patchify,
    raster_iou,
    rasterize_pattern,
    split_norm_threshold,
    target_velocity,
    tokenize,
)
from sewfield.nn import NetworkConfig, seeded
from sewfield.pattern import Placement, SewingPattern, quat_from_axis_angle

from conftest import square_panel

SMALL = NetworkConfig(flow_width=32, flow_blocks=2, flow_heads=2, flow_steps=1200, flow_batch=64, flow_lr=3e-3,
                      raster_size=16, patch_size=4, warmup_frac=0.0)


def _net(conditional=False, width=6):
    with seeded(0):
        net = VelocityNet(width, SMALL, conditional).to(FLOW_DTYPE)
    # give the zero-initialized output layers some weight so equivariance is not trivial
    with torch.no_grad():
        for p in net.parameters():
            if (p == 0).all():
                p.normal_(0, 0.1)
    return net


def test_path_endpoints_and_velocity():
    X0 = torch.randn(3, 4, 5)
    X1 = torch.randn(3, 4, 5)
    assert torch.allclose(interpolate(X0, X1, torch.zeros(3)), X0)
    assert torch.allclose(interpolate(X0, X1, torch.ones(3)), X1)
    t = torch.full((3,), 0.3, dtype=torch.float64)
    h = 1e-6
    X0d, X1d = X0.double(), X1.double()
    fd = (interpolate(X0d, X1d, t + h) - interpolate(X0d, X1d, t - h)) / (2 * h)
    assert torch.allclose(fd, target_velocity(X0d, X1d), atol=1e-8)


@given(st.integers(0, 1000))
def test_velocity_is_permutation_equivariant(seed):
    net = _net()
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(2, 5, 6, generator=g)
    t = torch.rand(2, generator=g)
    perm = torch.randperm(5, generator=g)
    assert torch.allclose(net(x, t)[:, perm], net(x[:, perm], t), atol=1e-5)


def test_conditional_velocity_is_permutation_equivariant():
    net = _net(conditional=True)
    x = torch.randn(2, 5, 6)
    r = torch.rand(2, 16, 16)
    t = torch.rand(2)
    perm = torch.randperm(5)
    assert torch.allclose(net(x, t, r)[:, perm], net(x[:, perm], t, r), atol=1e-5)
    with pytest.raises(ValueError, match="raster"):
        net(x, t)


def test_zero_initialized_net_leaves_noise_unchanged():
    flow = PatternFlow(SMALL)
    flow._build(4, 6)
    flow.scaler_ = TokenScaler().fit(np.ones((1, 4, 6)))
    a = flow.sample(2, seed=3, normalized=True)
    assert np.allclose(a, flow._noise(2, 3).numpy())


def test_patchify_layout():
    r = torch.arange(16.0).reshape(1, 4, 4)
    p = patchify(r, 2)
    assert p.shape == (1, 4, 4)
    assert p[0, 0].tolist() == [0, 1, 4, 5]
    assert p[0, 1].tolist() == [2, 3, 6, 7]


def test_token_scaler_keeps_zero_rows():
    X = np.random.default_rng(0).normal(size=(3, 5, 4))
    X[:, 3:] = 0
    sc = TokenScaler().fit(X)
    Xn = sc.transform(X)
    assert np.all(Xn[:, 3:] == 0)
    assert np.allclose(sc.inverse_transform(Xn), X)
    assert np.allclose(np.sqrt((Xn[:, :3] ** 2).reshape(-1, 4).mean(0)), 1.0)
    with pytest.raises(ValueError):
        TokenScaler().fit(np.zeros((2, 3, 4)))


@given(st.floats(0.0, 0.5), st.floats(2.0, 10.0), st.integers(0, 1000))
def test_threshold_separates_clusters(pad_spread, real_level, seed):
    rng = np.random.default_rng(seed)
    pad = rng.uniform(0, pad_spread, 40)
    real = real_level + rng.uniform(0, 1, 25)
    tau = split_norm_threshold(np.r_[pad, real])
    assert pad.max() - 1e-9 <= tau <= real.min() + 1e-9 or pad.max() < tau < real.min()


def test_threshold_needs_two_values():
    with pytest.raises(ValueError):
        split_norm_threshold([1.0])


def _placed_squares(shift=0.0):
    sq = square_panel(0.5, scale=20.0)
    pls = (Placement((-15.0 + shift, 100.0, 10.0)), Placement((15.0 + shift, 100.0, 10.0)))
    return SewingPattern((sq, sq), pls, ())


def test_raster_shift_and_empty():
    a = rasterize_pattern(_placed_squares(), size=64)
    assert a.shape == (64, 64)
    assert raster_iou(a, a) == 1.0
    # a 180/64 cm shift moves the silhouette by exactly one pixel
    b = rasterize_pattern(_placed_squares(180.0 / 64), size=64)
    assert np.allclose(b[:, 1:], a[:, :-1])
    assert np.all(rasterize_pattern(None) == 0)
    assert rasterize_pattern(SewingPattern((), (), ())).sum() == 0
    assert raster_iou(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0


def test_raster_area_matches_panel_area():
    r = rasterize_pattern(_placed_squares(), size=64, supersample=8)
    pix = (180 / 64) ** 2
    assert r.sum() * pix == pytest.approx(2 * 400.0, rel=0.02)


def test_tokenize_round_trip_with_analytic_vae(analytic_vae):
    sq = square_panel(0.5, scale=20.0)
    q = quat_from_axis_angle((0, 1, 0), 0.4)
    pat = SewingPattern((sq, square_panel(0.3, 30.0)), (Placement((1, 2, 3)), Placement((4, 5, 6), q)), ())
    X = tokenize(pat, analytic_vae, n_rows=5)
    assert X.shape == (5, 12)
    assert np.all(X[2:] == 0)
    assert X[0, 11] == pytest.approx(np.log(20.0))
    sc = TokenScaler().fit(X[None])
    back = detokenize(X, analytic_vae, sc, tau=0.5, grid_n=64)
    assert back.n_panels == 2
    assert back.placements[1].T == pytest.approx((4, 5, 6))
    assert np.allclose(back.placements[1].R, q, atol=1e-12)
    assert back.panels[0].n_edges == 4
    assert back.panels[1].scale == pytest.approx(30.0)
    with pytest.raises(EmptyPatternError):
        detokenize(np.zeros((5, 12)), analytic_vae, sc, tau=0.5)


# ------------------------------------------------------------------ toy training


MODES = np.array([[2.0, 0.0], [-2.0, 0.0]])


@pytest.fixture(scope="module")
def toy_flow(tmp_path_factory):
    rng = np.random.default_rng(0)
    lab = rng.integers(0, 2, 512)
    X = MODES[lab] + 0.1 * rng.normal(size=(512, 2))
    tokens = np.zeros((512, 3, 2))
    tokens[:, 0] = X
    log = tmp_path_factory.mktemp("flow") / "flow.csv"
    return PatternFlow(SMALL, log_path=log).fit(tokens), log


def test_toy_mixture_samples_land_on_modes(toy_flow):
    flow, log = toy_flow
    assert log.read_text().splitlines()[0] == "step,loss"
    X = flow.sample(200, seed=1)
    # rows are an unordered set, so the real token may come out in any row
    norms = np.linalg.norm(X, axis=-1)
    order = np.argsort(-norms, axis=1)
    row = X[np.arange(len(X)), order[:, 0]]
    d = np.linalg.norm(row[:, None] - MODES[None], axis=-1).min(1)
    assert np.median(d) < 0.3
    frac = (row[:, 0] > 0).mean()
    assert 0.25 < frac < 0.75
    assert np.median(np.sort(norms, axis=1)[:, :2]) < 0.3


def test_sampling_is_deterministic(toy_flow):
    flow, _ = toy_flow
    assert np.array_equal(flow.sample(3, seed=5), flow.sample(3, seed=5))
    assert not np.array_equal(flow.sample(3, seed=5), flow.sample(3, seed=6))


def test_completion_without_targets_equals_sampling(toy_flow):
    flow, _ = toy_flow
    assert np.array_equal(flow.complete(np.zeros((0, 2)), n=4, seed=2), flow.sample(4, seed=2))


def test_completion_steers_rows_to_targets(toy_flow):
    flow, _ = toy_flow
    out = flow.complete(np.array([[2.0, 0.0]]), n=20, seed=0, guidance_iters=20, guidance_lr=0.05)
    assert np.median(np.linalg.norm(out[:, 0] - [2.0, 0.0], axis=-1)) < 0.3
    with pytest.raises(ValueError, match="no free token row"):
        flow.complete(np.zeros((3, 2)))


def test_calibrate_and_persist(toy_flow, tmp_path):
    flow, _ = toy_flow
    tau = flow.calibrate(n=32, steps=20)
    assert 0 < tau < 1.5
    flow.save(tmp_path / "f.ckpt")
    back = PatternFlow.load(tmp_path / "f.ckpt")
    assert back.tau_ == tau
    assert np.allclose(back.sample(2, seed=1), flow.sample(2, seed=1), atol=1e-5)


def test_decode_needs_calibration():
    flow = PatternFlow(SMALL)
    flow.tau_ = None
    with pytest.raises(ValueError, match="calibrate"):
        flow.decode(np.zeros((2, 4)), None)


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        PatternFlow(SMALL).fit(np.zeros((0, 3, 2)))
    with pytest.raises(ValueError, match="raster"):
        PatternFlow(SMALL, conditional=True).fit(np.ones((2, 3, 2)))
