"""Both kernel backends must agree; the solver must give the same model on either."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ssvm import _kernels
from ssvm._kernels import HINGE, HUBER, NUMBA_KERNELS, NUMPY_KERNELS, TRUNCATED_LS, kernels

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")

SHAPES = [(1, 1, 1, 1, 1, 1), (2, 1, 1, 2, 1, 1), (2, 3, 1, 2, 3, 1), (3, 2, 2, 3, 2, 2)]


def test_backend_selection():
    assert kernels("numpy") is NUMPY_KERNELS
    with pytest.raises(ValueError):
        kernels("fortran")
    assert _kernels.BACKEND in ("numpy", "numba")


@pytest.mark.parametrize("value, expect", [("0", False), ("off", False), ("1", True), ("", True)])
def test_env_flag_parsing(monkeypatch, value, expect):
    monkeypatch.setenv("SSVM_NUMBA", value)
    assert _kernels._env_wants_numba() is expect


@needs_numba
def test_elementwise_kernels_agree():
    rng = np.random.default_rng(0)
    t = rng.uniform(-3, 3, 1000)
    nb, np_ = NUMBA_KERNELS, NUMPY_KERNELS
    np.testing.assert_array_equal(nb["soft_threshold"](t, 0.4), np_["soft_threshold"](t, 0.4))
    for code, delta in ((HINGE, 0.0), (TRUNCATED_LS, 0.0), (HUBER, 0.5)):
        np.testing.assert_allclose(nb["loss_prox"](code, t, 0.7, delta),
                                   np_["loss_prox"](code, t, 0.7, delta), rtol=0, atol=1e-15)
    mask = rng.random(1000) < 0.6
    np.testing.assert_array_equal(nb["vc_fused"](t, mask, 0.3), np_["vc_fused"](t, mask, 0.3))
    np.testing.assert_allclose(nb["vc_graphnet"](t, mask, 0.5, 2.0),
                               np_["vc_graphnet"](t, mask, 0.5, 2.0), atol=1e-15)


@pytest.mark.parametrize("backend", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_scalar_shapes_are_kept(backend):
    k = kernels(backend)
    assert np.shape(k["loss_prox"](HINGE, np.float64(0.3), 1.0, 0.0)) == ()
    assert k["loss_prox"](HUBER, np.ones((2, 3)), 0.5, 0.5).shape == (2, 3)


@needs_numba
@pytest.mark.parametrize("shape", SHAPES)
def test_stencil_kernels_agree(shape):
    rng = np.random.default_rng(1)
    P = int(np.prod(shape))
    w = rng.normal(size=P)
    z = rng.normal(size=12 * P)
    np.testing.assert_array_equal(NUMBA_KERNELS["diff_forward"](w, shape),
                                  NUMPY_KERNELS["diff_forward"](w, shape))
    np.testing.assert_allclose(NUMBA_KERNELS["diff_adjoint"](z, shape),
                               NUMPY_KERNELS["diff_adjoint"](z, shape), atol=1e-13)


_FIT_SCRIPT = """
import json, sys
import numpy as np
from ssvm import GridParcellation, SolverConfig, TrainingSet, fit, BACKEND
rng = np.random.default_rng(3)
parc = GridParcellation.full((2, 3, 1))
X = rng.normal(size=(10, parc.n_features))
y = np.where(np.arange(10) % 2 == 0, 1, -1)
out = {"backend": BACKEND}
for reg in ("graphnet", "fused_lasso", "elastic_net"):
    m = fit(TrainingSet(X, y), SolverConfig(reg, lam=0.03, gamma=0.05), parc=parc)
    out[reg] = [m.iterations_run, m.w.tolist()]
print(json.dumps(out))
"""


def _fit_in_subprocess(flag):
    env = dict(os.environ, SSVM_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", _FIT_SCRIPT], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(res.stdout)


@needs_numba
def test_solver_is_backend_independent():
    a = _fit_in_subprocess("1")
    b = _fit_in_subprocess("0")
    assert (a.pop("backend"), b.pop("backend")) == ("numba", "numpy")
    for reg in a:
        assert a[reg][0] == b[reg][0]
        np.testing.assert_allclose(a[reg][1], b[reg][1], atol=1e-9)
