import numpy as np
import pytest

from ssvm.connectome import GridParcellation, build_augmentation
from ssvm._kernels import K
from ssvm.exceptions import (
    DomainError,
    NumericalConsistencyError,
    NumericalDivergenceError,
    StructuralError,
)
from ssvm.prox import LossKind
from ssvm.solver import (
    Model,
    SolverConfig,
    TrainingSet,
    decision_value,
    fit,
    fit_elasticnet,
    fit_structured,
    inverse_apply,
    load_model,
    objective,
    precompute_h,
    predict,
    save_model,
)

from oracles import incidence_matrix, lp_hinge_optimum, subgradient_residual

TIGHT = dict(eps=1e-9, max_iters=20000)


def tiny_problem(seed, dims=(2, 2, 1), n=6):
    rng = np.random.default_rng(seed)
    parc = GridParcellation.full(dims)
    X = rng.normal(size=(n, parc.n_features))
    y = np.where(np.arange(n) % 2 == 0, 1, -1)
    return TrainingSet(X, y), parc


# ---------------------------------------------------------------------------
# configuration and containers
# ---------------------------------------------------------------------------

def test_config_validation_and_aliases():
    assert SolverConfig("enet").regularizer == "elastic_net"
    assert SolverConfig("flasso").q == 1
    assert SolverConfig("graphnet").q == 2
    assert SolverConfig("lasso", gamma=3.0).gamma == 0.0
    for bad in (dict(lam=-1), dict(gamma=-1), dict(rho=0), dict(eps=0), dict(max_iters=0)):
        with pytest.raises(DomainError):
            SolverConfig("graphnet", **bad)
    with pytest.raises(DomainError):
        SolverConfig("ridge")


def test_config_defaults():
    cfg = SolverConfig()
    assert (cfg.rho, cfg.eps, cfg.max_iters) == (1.0, 4e-3, 400)
    assert SolverConfig.from_dict(cfg.to_dict()) == cfg


def test_training_set_validation():
    with pytest.raises(StructuralError):
        TrainingSet(np.zeros((3, 2)), [1, -1])
    with pytest.raises(StructuralError):
        TrainingSet(np.zeros((2, 2)), [1, 0])
    data = TrainingSet(np.arange(6.0).reshape(3, 2), [1, -1, 1])
    assert (data.n, data.p) == (3, 2)
    assert data.subset([0, 2]).n == 2


def test_single_class_warns():
    data = TrainingSet(np.ones((3, 3)), [1, 1, 1])
    with pytest.warns(RuntimeWarning):
        fit(data, SolverConfig("lasso", max_iters=5))


# ---------------------------------------------------------------------------
# inversion lemma
# ---------------------------------------------------------------------------

def test_h_zero_design():
    X = np.zeros((3, 5))
    H = precompute_h(X)
    assert not H.any()
    v = np.arange(5.0)
    np.testing.assert_array_equal(inverse_apply(H, X, v), 0.5 * v)


def test_h_matches_dense_inverse():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(3, 5))
    v = rng.normal(size=5)
    H = precompute_h(X)
    ref = np.linalg.solve(X.T @ X + 2 * np.eye(5), v)
    np.testing.assert_allclose(0.5 * v - H @ (X @ v), ref, atol=1e-10)
    np.testing.assert_allclose(H, 0.25 * X.T @ np.linalg.inv(np.eye(3) + 0.5 * X @ X.T),
                               atol=1e-12)


def test_h_sherman_morrison():
    X = np.ones((1, 4))
    v = np.array([1.0, -2.0, 0.5, 3.0])
    # (1 1^T + 2 I)^-1 = I/2 - 1 1^T / (2 (2 + 4))
    ref = v / 2 - np.sum(v) / 12.0
    np.testing.assert_allclose(inverse_apply(precompute_h(X), X, v), ref, atol=1e-12)


def test_h_general_shift():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(4, 7))
    v = rng.normal(size=7)
    c = 1.37
    ref = np.linalg.solve(X.T @ X + c * np.eye(7), v)
    np.testing.assert_allclose(inverse_apply(precompute_h(X, c), X, v, c), ref, atol=1e-10)


# ---------------------------------------------------------------------------
# objective and prediction
# ---------------------------------------------------------------------------

def test_objective_examples():
    data, parc = tiny_problem(0)
    for reg in ("lasso", "elastic_net", "graphnet", "fused_lasso"):
        cfg = SolverConfig(reg, lam=0.3, gamma=0.2)
        assert objective(np.zeros(parc.n_features), data, cfg, parc) == pytest.approx(1.0)
    w = np.random.default_rng(1).normal(size=parc.n_features)
    margins = data.y * (data.X @ w)
    risk = np.mean(np.maximum(0, 1 - margins))
    cfg = SolverConfig("graphnet", lam=0.0, gamma=0.0)
    assert objective(w, data, cfg, parc) == pytest.approx(risk)
    D = incidence_matrix(parc)
    cfg = SolverConfig("graphnet", lam=0.1, gamma=0.4)
    expect = risk + 0.1 * np.abs(w).sum() + 0.4 / 2 * np.sum((D @ w) ** 2)
    assert objective(w, data, cfg, parc) == pytest.approx(expect, rel=1e-12)
    cfg = SolverConfig("fused_lasso", lam=0.1, gamma=0.4)
    expect = risk + 0.1 * np.abs(w).sum() + 0.4 * np.sum(np.abs(D @ w))
    assert objective(w, data, cfg, parc) == pytest.approx(expect, rel=1e-12)
    cfg = SolverConfig("elastic_net", lam=0.1, gamma=0.4)
    expect = risk + 0.1 * np.abs(w).sum() + 0.2 * w @ w
    assert objective(w, data, cfg, parc) == pytest.approx(expect, rel=1e-12)


def _model(w):
    return Model(w=np.asarray(w, dtype=float), config=SolverConfig(), iterations_run=0,
                 objective_trace=[], converged=True)


def test_predict_conventions():
    m = _model(np.zeros(3))
    assert predict(m, np.array([1.0, -2.0, 0.0])) == 1
    m = _model([1.0, 0.0, 0.0])
    assert predict(m, np.array([-3.0, 5.0, 5.0])) == -1
    assert decision_value(m, np.array([-3.0, 5.0, 5.0])) == -3.0
    np.testing.assert_array_equal(predict(m, np.array([[1.0, 0, 0], [-1.0, 0, 0]])), [1, -1])
    with pytest.raises(StructuralError):
        predict(m, np.zeros(4))


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("reg", ["lasso", "elastic_net", "graphnet", "fused_lasso"])
def test_large_lambda_gives_zero_model(reg):
    data, parc = tiny_problem(2, dims=(2, 3, 1), n=8)
    m = fit(data, SolverConfig(reg, lam=2.0 ** 3, gamma=0.1), parc=parc)
    assert m.nnz == 0
    assert not m.w.any()


def test_dispatch_errors():
    data, parc = tiny_problem(3)
    with pytest.raises(StructuralError):
        fit(data, SolverConfig("graphnet"))
    with pytest.raises(DomainError):
        fit_structured(data, parc, SolverConfig("lasso"))
    with pytest.raises(DomainError):
        fit_elasticnet(data, SolverConfig("fused_lasso"))
    wrong = TrainingSet(np.zeros((4, 10)), [1, -1, 1, -1])
    with pytest.raises(StructuralError):
        fit(wrong, SolverConfig("graphnet"), parc=parc)
    with pytest.raises(StructuralError):
        fit(data, SolverConfig("graphnet"), parc=parc, H=np.zeros((2, 2)))


def test_non_finite_design_is_rejected():
    data, parc = tiny_problem(4)
    X = data.X.copy()
    X[0, 0] = np.inf
    with pytest.raises(NumericalConsistencyError):
        fit(TrainingSet(X, data.y), SolverConfig("graphnet", lam=0.1, gamma=0.1), parc=parc)


@pytest.mark.parametrize("reg", ["elastic_net", "graphnet"])
def test_divergence_reports_iteration(reg, monkeypatch):
    data, parc = tiny_problem(4)
    real = K["soft_threshold"]
    calls = []

    def poisoned(t, tau):
        calls.append(1)
        out = real(t, tau)
        return out * np.nan if len(calls) == 3 else out

    monkeypatch.setitem(K, "soft_threshold", poisoned)
    with pytest.raises(NumericalDivergenceError) as info:
        fit(data, SolverConfig(reg, lam=0.1, gamma=0.1), parc=parc)
    # the guard runs after every iterate update, so the bad v_b is caught at once
    assert info.value.iteration == 3


@pytest.mark.parametrize("reg", ["lasso", "elastic_net", "graphnet", "fused_lasso"])
def test_kkt_on_tiny_instance(reg):
    data, parc = tiny_problem(5, dims=(2, 2, 1), n=6)
    cfg = SolverConfig(reg, lam=0.05, gamma=0.05, **TIGHT)
    m = fit(data, cfg, parc=parc)
    assert m.converged
    assert subgradient_residual(m.w, data, cfg, parc) <= 1e-3


@pytest.mark.parametrize("reg", ["lasso", "fused_lasso"])
def test_objective_matches_lp_optimum(reg):
    data, parc = tiny_problem(6, dims=(2, 3, 1), n=8)
    cfg = SolverConfig(reg, lam=0.04, gamma=0.02, **TIGHT)
    m = fit(data, cfg, parc=parc)
    ref, _ = lp_hinge_optimum(data, cfg.lam, cfg.gamma, incidence_matrix(parc))
    assert objective(m.w, data, cfg, parc) == pytest.approx(ref, rel=1e-4)


@pytest.mark.parametrize("reg", ["graphnet", "fused_lasso"])
def test_zero_gamma_reduces_to_lasso(reg):
    data, parc = tiny_problem(7, dims=(2, 3, 1), n=8)
    lasso = SolverConfig("lasso", lam=0.03, **TIGHT)
    ref = objective(fit(data, lasso).w, data, lasso)
    cfg = SolverConfig(reg, lam=0.03, gamma=0.0, **TIGHT)
    got = objective(fit(data, cfg, parc=parc).w, data, lasso)
    assert got == pytest.approx(ref, rel=1e-4)


def test_rho_changes_speed_not_solution():
    data, parc = tiny_problem(8, dims=(2, 3, 1), n=8)
    vals, iters = [], []
    for rho in (0.5, 1.0, 2.0):
        cfg = SolverConfig("graphnet", lam=0.03, gamma=0.05, rho=rho, **TIGHT)
        m = fit(data, cfg, parc=parc)
        vals.append(objective(m.w, data, cfg, parc))
        iters.append(m.iterations_run)
    assert max(vals) - min(vals) <= 1e-3 * min(vals)


def test_feasibility_residuals_at_termination():
    data, parc = tiny_problem(9, dims=(2, 3, 1), n=8)
    for reg in ("graphnet", "fused_lasso", "elastic_net"):
        m = fit(data, SolverConfig(reg, lam=0.03, gamma=0.05, eps=1e-6, max_iters=5000),
                parc=parc)
        bound = 1e-3 * (1 + np.linalg.norm(m.w))
        assert all(v <= bound for v in m.residuals.values()), (reg, m.residuals)


def test_ridge_like_enet_is_dense():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(12, 6))
    data = TrainingSet(X, np.where(X[:, 0] > 0, 1, -1))
    m = fit(data, SolverConfig("elastic_net", lam=0.0, gamma=0.5, loss="tls", **TIGHT))
    assert m.nnz == 6


@pytest.mark.parametrize("loss", ["tls", "huber:0.5"])
def test_smooth_losses_reach_kkt(loss):
    data, parc = tiny_problem(11, dims=(2, 2, 1), n=8)
    for reg in ("graphnet", "fused_lasso", "elastic_net"):
        cfg = SolverConfig(reg, lam=0.05, gamma=0.05, loss=loss, **TIGHT)
        m = fit(data, cfg, parc=parc)
        assert subgradient_residual(m.w, data, cfg, parc) <= 1e-3


def test_determinism_and_trace():
    data, parc = tiny_problem(12, dims=(2, 3, 1), n=8)
    cfg = SolverConfig("fused_lasso", lam=0.02, gamma=0.01)
    a = fit(data, cfg, parc=parc)
    b = fit(data, cfg, parc=parc)
    assert a.objective_trace == b.objective_trace
    assert np.array_equal(a.w, b.w)
    assert len(a.objective_trace) == a.iterations_run
    assert np.all(np.isfinite(a.objective_trace))
    amap = build_augmentation(parc)
    assert a.objective_trace[-1] == objective(a.w, data, cfg, parc, amap)


def test_termination_rule_is_relative_change():
    data, parc = tiny_problem(13, dims=(2, 3, 1), n=8)
    loose = fit(data, SolverConfig("graphnet", lam=0.02, gamma=0.01, eps=1e-2), parc=parc)
    tight = fit(data, SolverConfig("graphnet", lam=0.02, gamma=0.01, eps=1e-5,
                                                max_iters=20000), parc=parc)
    assert loose.converged and tight.converged
    assert 2 <= loose.iterations_run < tight.iterations_run
    capped = fit(data, SolverConfig("graphnet", lam=0.02, gamma=0.01, eps=1e-12, max_iters=7),
                 parc=parc)
    assert capped.iterations_run == 7 and not capped.converged


def test_model_json_roundtrip(tmp_path):
    data, parc = tiny_problem(14)
    m = fit(data, SolverConfig("fused_lasso", lam=0.02, gamma=0.01, loss=LossKind("huber", 0.3)),
            parc=parc)
    path = tmp_path / "model.json"
    save_model(m, path)
    back = load_model(path)
    assert np.array_equal(back.w, m.w)
    assert back.config == m.config
    assert (back.nnz, back.iterations_run, back.converged) == (m.nnz, m.iterations_run,
                                                                m.converged)
