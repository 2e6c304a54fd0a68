import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from noisyrc.dynsys import Dataset, NormStats, Split, build_dataset
from noisyrc.errors import (ConfigError, DegenerateMatrixError, DimensionError, RankDeficientError,
                            ReservoirDiverged)
from noisyrc.reservoir import (PUBLISHED_OPTIMA, Hyperparams, Reservoir, TrainedModel, add_noise, augment,
                               build_reservoir, drive, predict, spectral_radius, train, train_readout)


def hp(**kw):
    base = dict(rho=0.9, gamma=0.5, alpha=0.6, beta=1e-6, p=0.1, sigma=0.0, n_nodes=100)
    base.update(kw)
    return Hyperparams(**base)


@pytest.fixture(scope="module")
def mg17():
    from noisyrc.dynsys import MGConfig, MGParams
    return build_dataset("MG", MGConfig(params=MGParams(tau=17)), train_len=12_000, test_len=1_000)


def ar1_dataset(n=4000, phi=0.9, seed=0):
    rng = np.random.default_rng(seed)
    x = np.empty(n)
    x[0] = 0.0
    eps = rng.standard_normal(n)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + 0.1 * eps[t]
    z = (x - x.mean()) / x.std()
    return Dataset(z[None, :], 1.0, NormStats(np.array([x.mean()]), np.array([x.std()])),
                   Split(0, n - 200, n - 200, 200), system="AR1")


# -- hyperparameters ------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(alpha=1.5), dict(rho=0.0), dict(gamma=0.0),
                                dict(p=0.0), dict(p=1.1), dict(beta=-1.0), dict(sigma=-1e-3),
                                dict(n_nodes=0)])
def test_hyperparam_invariants(kw):
    with pytest.raises(ConfigError):
        hp(**kw)


def test_table_values():
    t = PUBLISHED_OPTIMA["MG30"]
    assert (t.rho, t.gamma, t.alpha, t.p) == (1.27, 0.23, 0.57, 0.09)
    assert t.beta == pytest.approx(10 ** -6.4) and t.sigma == pytest.approx(10 ** -1.97)
    assert PUBLISHED_OPTIMA["KS"].sigma == pytest.approx(10 ** -2.35)
    assert PUBLISHED_OPTIMA["MG17"].sigma == pytest.approx(10 ** -3.42)


# -- construction ---------------------------------------------------------------

def test_diagonal_rescaling():
    res = build_reservoir(hp(n_nodes=2, rho=1.0), 1, seed=0, A=np.diag([1.0, 2.0]))
    np.testing.assert_allclose(res.A, np.diag([0.5, 1.0]), rtol=1e-9)


def test_dense_spectral_radius_against_eigensolver():
    res = build_reservoir(hp(p=1.0, rho=0.9, n_nodes=100), 1, seed=3)
    true = np.abs(np.linalg.eigvals(res.A)).max()
    assert 0.891 <= true <= 0.909


@pytest.mark.parametrize("p", [0.05, 0.2, 1.0])
def test_power_iteration_matches_eigvals(p):
    rng = np.random.default_rng(int(p * 100))
    n = 200
    M = np.where(rng.random((n, n)) < p, rng.uniform(-1, 1, (n, n)), 0.0)
    true = np.abs(np.linalg.eigvals(M)).max()
    assert spectral_radius(M, seed=1) == pytest.approx(true, rel=0.01)
    assert spectral_radius(sp.csr_matrix(M), seed=1) == pytest.approx(true, rel=0.01)


def test_power_iteration_complex_pair():
    # rotation-scaling block: eigenvalues 0.8 +- 0.6i (|lambda| = 1) dominate
    A = np.zeros((4, 4))
    A[:2, :2] = [[0.8, -0.6], [0.6, 0.8]]
    A[2:, 2:] = np.diag([0.5, -0.3])
    assert spectral_radius(A, seed=0) == pytest.approx(1.0, rel=1e-3)


def test_win_structure():
    res = build_reservoir(hp(n_nodes=90, gamma=0.7), 3, seed=1)
    W = res.W_in
    assert np.all((W != 0).sum(axis=1) == 1)
    assert np.all(np.abs(W) <= 0.7)
    np.testing.assert_array_equal(np.bincount(res.win_channel), [30, 30, 30])


def test_tiny_gamma_bound():
    res = build_reservoir(hp(gamma=1e-9), 1, seed=0)
    assert np.all(np.abs(res.W_in) <= 1e-9)


def test_no_edges_is_degenerate():
    with pytest.raises(DegenerateMatrixError):
        build_reservoir(hp(n_nodes=3, p=1e-9), 1, seed=0)


def test_nodes_must_cover_inputs():
    with pytest.raises(ConfigError):
        build_reservoir(hp(n_nodes=2), 3, seed=0)


def test_sparse_storage_below_threshold():
    assert sp.issparse(build_reservoir(hp(p=0.05), 1, seed=0).A)
    assert isinstance(build_reservoir(hp(p=0.5), 1, seed=0).A, np.ndarray)


# -- noise ----------------------------------------------------------------------

def test_zero_noise_identity():
    x = np.random.default_rng(0).standard_normal((2, 50))
    np.testing.assert_array_equal(add_noise(x, 0.0, seed=1), x)


def test_noise_amplitude_statistics():
    sigma = 10 ** -1.97
    x = np.zeros((1, 100_000))
    d = add_noise(x, sigma, seed=4) - x
    assert np.std(d) == pytest.approx(sigma, rel=0.02)
    assert abs(np.mean(d)) < 5 * sigma / np.sqrt(x.size)


def test_noise_deterministic():
    x = np.ones((3, 10))
    np.testing.assert_array_equal(add_noise(x, 0.1, seed=9), add_noise(x, 0.1, seed=9))


# -- driving --------------------------------------------------------------------

@pytest.mark.parametrize("p", [0.1, 1.0])
def test_zero_input_zero_state(p):
    res = build_reservoir(hp(p=p), 1, seed=0)
    states = drive(res, np.zeros((1, 50)))
    assert np.all(states == 0) and np.all(res.state == 0)


def test_drive_closed_form():
    n = 3
    res = Reservoir(np.zeros((n, n)), np.arange(n), np.ones(n), n, alpha=1.0)
    U = np.random.default_rng(0).standard_normal((n, 20))
    np.testing.assert_allclose(drive(res, U), np.tanh(U), rtol=1e-15)


def test_drive_matches_reference_loop():
    res = build_reservoir(hp(p=0.1, n_nodes=50), 2, seed=5)
    U = np.random.default_rng(1).standard_normal((2, 40))
    A = res.A.toarray()
    W = res.W_in
    r = np.zeros(50)
    expected = []
    for t in range(40):
        r = (1 - res.alpha) * r + res.alpha * np.tanh(A @ r + W @ U[:, t])
        expected.append(r)
    np.testing.assert_allclose(drive(res, U), np.array(expected).T, atol=1e-13)
    np.testing.assert_allclose(res.state, expected[-1], atol=1e-13)


def test_echo_state_property():
    res = build_reservoir(hp(rho=0.9, p=0.1, n_nodes=100), 1, seed=2)
    U = np.sin(0.3 * np.arange(1000))[None, :]
    a = res.copy()
    b = res.copy()
    b.state = np.random.default_rng(0).uniform(-1, 1, 100)
    sa, sb = drive(a, U), drive(b, U)
    assert np.linalg.norm(sa[:, 0] - sb[:, 0]) > 0.1
    assert np.linalg.norm(sa[:, -1] - sb[:, -1]) < 1e-6


def test_drive_shape_checked():
    res = build_reservoir(hp(), 1, seed=0)
    with pytest.raises(DimensionError):
        drive(res, np.zeros((2, 5)))


# -- readout regression ---------------------------------------------------------

def normal_equation_oracle(states, Y, beta):
    X = np.vstack([states, states ** 2])
    return Y @ X.T @ np.linalg.inv(X @ X.T + beta * np.eye(X.shape[0]))


def test_ridge_interpolation_beta_zero():
    rng = np.random.default_rng(0)
    n = 5
    states = rng.uniform(-1, 1, (n, 2 * n))
    X = augment(states)
    Y = X[[1, 7]]
    W = train_readout(states, Y, 0.0)
    np.testing.assert_allclose(W @ X, Y, atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_ridge_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    states = rng.uniform(-1, 1, (10, 50))
    Y = rng.standard_normal((2, 50))
    W = train_readout(states, Y, 1e-3)
    np.testing.assert_allclose(W, normal_equation_oracle(states, Y, 1e-3), atol=1e-8)


def test_ridge_heavy_shrinkage():
    rng = np.random.default_rng(1)
    states = rng.uniform(-1, 1, (10, 60))
    Y = rng.standard_normal((1, 60))
    W = train_readout(states, Y, 1e12)
    assert np.linalg.norm(W) < 1e-6 * np.linalg.norm(Y @ augment(states).T)


def test_ridge_singular_without_regularization():
    states = np.ones((4, 30))
    with pytest.raises(RankDeficientError):
        train_readout(states, np.ones((1, 30)), 0.0)


def test_ridge_shape_mismatch():
    with pytest.raises(DimensionError):
        train_readout(np.ones((4, 30)), np.ones((1, 29)), 1e-3)


# -- training and prediction ----------------------------------------------------

def test_learns_ar1():
    ds = ar1_dataset()
    model = train(ds, hp(rho=0.5, gamma=0.1, alpha=1.0, beta=1e-8, n_nodes=50), seed=0, washout=100)
    # one-step noise floor of the AR(1) series in normalized units
    floor = 0.1 / np.std(ds.raw()) / np.sqrt(1)
    assert model.fit_rmse < floor * 1.05
    tiny = ar1_dataset(phi=0.9)
    tiny.data = np.sin(0.05 * np.arange(tiny.data.shape[1]))[None, :]
    m2 = train(tiny, hp(rho=0.5, gamma=0.1, alpha=1.0, beta=1e-10, n_nodes=50), seed=0, washout=100)
    assert m2.fit_rmse < 1e-3


def test_train_deterministic(mg17):
    h = hp(n_nodes=80, sigma=1e-3)
    a = train(mg17, h, seed=11)
    b = train(mg17, h, seed=11)
    np.testing.assert_array_equal(a.W_out, b.W_out)
    c = train(mg17, h, seed=12)
    assert not np.array_equal(a.W_out, c.W_out)


def test_sigma_continuity_at_zero(mg17):
    a = train(mg17, hp(n_nodes=80, sigma=0.0), seed=3)
    b = train(mg17, hp(n_nodes=80, sigma=1e-12), seed=3)
    assert abs(a.fit_rmse - b.fit_rmse) < 1e-6


def test_noise_modes_differ(mg17):
    a = train(mg17, hp(n_nodes=80, sigma=0.05), seed=3, noise_mode="series")
    b = train(mg17, hp(n_nodes=80, sigma=0.05), seed=3, noise_mode="input-only")
    # series mode regresses onto noisy targets, so its residual carries the noise
    assert a.fit_rmse > b.fit_rmse
    with pytest.raises(ConfigError):
        train(mg17, hp(n_nodes=80), seed=3, noise_mode="state")


def test_table_mg30_trains(mg17):
    from noisyrc.dynsys import MGConfig, MGParams
    ds = build_dataset("MG", MGConfig(params=MGParams(tau=30)), train_len=8000, test_len=500)
    h = Hyperparams(**{**PUBLISHED_OPTIMA["MG30"].to_dict(), "n_nodes": 200})
    model = train(ds, h, seed=0)
    assert np.isfinite(model.fit_rmse) and np.all(np.isfinite(model.W_out))


def test_predict_zero_horizon(mg17):
    model = train(mg17, hp(n_nodes=60), seed=0)
    assert predict(model, mg17.warmup(100), 0).shape == (1, 0)


def test_zero_readout_predicts_zero(mg17):
    model = train(mg17, hp(n_nodes=60), seed=0)
    model.W_out = np.zeros_like(model.W_out)
    np.testing.assert_array_equal(predict(model, mg17.warmup(100), 25), np.zeros((1, 25)))


def test_first_step_equals_open_loop_readout(mg17):
    model = train(mg17, hp(n_nodes=60), seed=0)
    warm = mg17.warmup(100)
    res = model.reservoir.copy()
    res.reset()
    states = drive(res, warm)
    open_loop = model.W_out @ augment(states[:, -1:])
    assert predict(model, warm, 5)[:, 0] == pytest.approx(open_loop[:, 0], abs=1e-12)


def test_first_step_error_near_fit_error(mg17):
    h = hp(rho=0.9, gamma=0.5, alpha=0.6, beta=1e-6, p=0.05, sigma=1e-4, n_nodes=300)
    model = train(mg17, h, seed=0)
    pred = predict(model, mg17.warmup(100), 5)
    err = abs(pred[0, 0] - mg17.test[0, 0])
    assert err < 20 * model.fit_rmse


def test_predict_divergence_reported(mg17):
    model = train(mg17, hp(n_nodes=60), seed=0)
    model.W_out = np.full_like(model.W_out, np.nan)
    with pytest.raises(ReservoirDiverged) as info:
        predict(model, mg17.warmup(100), 10)
    assert info.value.partial.shape[1] == 1


def test_model_roundtrip(tmp_path, mg17):
    model = train(mg17, hp(n_nodes=60, p=0.1), seed=0)
    model.save(tmp_path / "m.npz")
    back = TrainedModel.load(tmp_path / "m.npz")
    np.testing.assert_array_equal(back.W_out, model.W_out)
    np.testing.assert_array_equal(back.reservoir.W_in, model.reservoir.W_in)
    warm = mg17.warmup(100)
    np.testing.assert_allclose(predict(back, warm, 20), predict(model, warm, 20), rtol=0, atol=0)
    assert back.hyperparams == model.hyperparams


@settings(max_examples=15, deadline=None)
@given(rho=st.floats(0.1, 2.0), p=st.sampled_from([0.05, 0.2, 1.0]), seed=st.integers(0, 2 ** 31))
def test_spectral_radius_invariant(rho, p, seed):
    res = build_reservoir(hp(rho=rho, p=p, n_nodes=80), 1, seed=seed)
    est = spectral_radius(res.A, seed=seed)
    assert 0.99 * rho <= est <= 1.01 * rho
