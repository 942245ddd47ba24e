"""ADMM solvers for spatially regularised and elastic-net margin classifiers.

Two splittings are implemented.

``fit_structured`` (fused Lasso, ``q = 1``; GraphNet, ``q = 2``) minimises::

    (1/n) sum_i loss(y_i <w, x_i>) + lam ||w||_1 + (gamma/q) ||B C~ A w||_q^q

with the constraints ``Y X w = v_a``, ``w = v_b``, ``C~ v_d = v_c`` and
``A w = v_d``.  Every subproblem is closed form: the ``w`` step through the
matrix inversion lemma, ``v_c`` elementwise, ``v_a``/``v_b`` by scalar prox
maps and ``v_d`` by an FFT solve.

``fit_elasticnet`` (elastic net; lasso when ``gamma == 0``) minimises::

    (1/n) sum_i loss(y_i <w, x_i>) + lam ||w||_1 + (gamma/2) ||w||^2

with only the ``v_a`` and ``v_b`` splits.

Splitting ``w = v_d`` directly against the unpadded differencing matrix would
need a ``p x p`` solve with an irregular Laplacian at every iteration; the
zero padding onto the full lattice is what makes that solve an FFT.
"""

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from ._kernels import K
from .connectome import augment, build_augmentation, spatial_penalty
from .exceptions import (
    DomainError,
    NumericalConsistencyError,
    NumericalDivergenceError,
    StructuralError,
)
from .prox import LossKind, loss_value
from .spectral import build_kernel, solve_laplacian

NNZ_TOL = 1e-8
BLOWUP = 1e12

_REGULARIZERS = {
    "lasso": "lasso",
    "elastic_net": "elastic_net",
    "enet": "elastic_net",
    "graphnet": "graphnet",
    "fused_lasso": "fused_lasso",
    "flasso": "fused_lasso",
}
STRUCTURED = ("graphnet", "fused_lasso")


def canonical_regularizer(name):
    try:
        return _REGULARIZERS[name]
    except KeyError:
        raise DomainError(f"unknown regularizer {name!r}") from None


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Design matrix ``X`` (subjects by edges) and labels ``y`` in {-1, +1}."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.asarray(self.y)
        if X.ndim != 2:
            raise StructuralError(f"X must be two dimensional, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise StructuralError(f"{X.shape[0]} rows but {y.size} labels")
        if not np.all((y == 1) | (y == -1)):
            raise StructuralError("labels must be -1 or +1")
        y = y.astype(np.float64)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, idx):
        return TrainingSet(self.X[idx], self.y[idx])


@dataclass(frozen=True)
class SolverConfig:
    regularizer: str = "fused_lasso"
    lam: float = 2.0 ** -7
    gamma: float = 2.0 ** -10
    rho: float = 1.0
    loss: LossKind = field(default_factory=LossKind)
    eps: float = 4e-3
    max_iters: int = 400
    seed: int = 0

    def __post_init__(self):
        reg = canonical_regularizer(self.regularizer)
        object.__setattr__(self, "regularizer", reg)
        object.__setattr__(self, "loss", LossKind.parse(self.loss))
        for name in ("lam", "gamma", "rho", "eps"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "max_iters", int(self.max_iters))
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise DomainError(f"lam must be >= 0, got {self.lam}")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise DomainError(f"gamma must be >= 0, got {self.gamma}")
        if not self.rho > 0:
            raise DomainError(f"rho must be > 0, got {self.rho}")
        if not self.eps > 0:
            raise DomainError(f"eps must be > 0, got {self.eps}")
        if self.max_iters < 1:
            raise DomainError("max_iters must be at least 1")
        if reg == "lasso":
            object.__setattr__(self, "gamma", 0.0)

    @property
    def q(self):
        return {"fused_lasso": 1, "graphnet": 2}.get(self.regularizer)

    @property
    def structured(self):
        return self.regularizer in STRUCTURED

    def replace(self, **changes):
        doc = self.to_dict()
        doc.update(changes)
        return SolverConfig.from_dict(doc)

    def to_dict(self):
        doc = asdict(self)
        doc["loss"] = str(self.loss)
        return doc

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


@dataclass
class SolverState:
    """Primal split variables and scaled duals; all start at zero."""

    w: np.ndarray
    v_a: np.ndarray
    v_b: np.ndarray
    u_a: np.ndarray
    u_b: np.ndarray
    v_c: np.ndarray = None
    v_d: np.ndarray = None
    u_c: np.ndarray = None
    u_d: np.ndarray = None
    iter: int = 0

    @classmethod
    def zeros(cls, n, p, p_tilde=None, e_tilde=None):
        st = cls(w=np.zeros(p), v_a=np.zeros(n), v_b=np.zeros(p),
                 u_a=np.zeros(n), u_b=np.zeros(p))
        if p_tilde is not None:
            st.v_c = np.zeros(e_tilde)
            st.u_c = np.zeros(e_tilde)
            st.v_d = np.zeros(p_tilde)
            st.u_d = np.zeros(p_tilde)
        return st


@dataclass
class Model:
    """A fitted linear classifier ``sign(<x, w>)``.

    ``w`` is the soft-thresholded split copy ``v_b`` at termination, so its
    zeros are exact.  ``residuals`` holds the primal constraint violations
    at the last iterate.
    """

    w: np.ndarray
    config: SolverConfig
    iterations_run: int
    objective_trace: list
    converged: bool
    nnz: int = None
    residuals: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.nnz is None:
            self.nnz = count_nonzero(self.w)

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "w": [float(v) for v in self.w],
            "iterations_run": int(self.iterations_run),
            "converged": bool(self.converged),
            "nnz": int(self.nnz),
            "objective_trace": [float(v) for v in self.objective_trace],
            "residuals": {k: float(v) for k, v in self.residuals.items()},
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(
                w=np.asarray(doc["w"], dtype=np.float64),
                config=SolverConfig.from_dict(doc["config"]),
                iterations_run=int(doc["iterations_run"]),
                objective_trace=list(doc.get("objective_trace", [])),
                converged=bool(doc["converged"]),
                nnz=int(doc["nnz"]),
                residuals=dict(doc.get("residuals", {})),
            )
        except KeyError as exc:
            raise StructuralError(f"model document lacks {exc}") from None


def save_model(model, path, extra=None):
    doc = model.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return Model.from_dict(json.load(fh))


def count_nonzero(w, tol=NNZ_TOL):
    return int(np.count_nonzero(np.abs(w) > tol))


# ---------------------------------------------------------------------------
# w-step: (X^T X + c I)^{-1} through an n x n factorisation
# ---------------------------------------------------------------------------

def precompute_h(X, shift=2.0):
    """``H = X^T (I_n + X X^T / c)^{-1} / c^2`` with ``c = shift``.

    Then ``(X^T X + c I)^{-1} v = v / c - H X v``.  The default ``c = 2``
    gives ``H = X^T (I + X X^T / 2)^{-1} / 4`` used by the structured
    solvers; the elastic net uses ``c = (gamma + rho) / rho``.
    """
    X = np.asarray(X, dtype=np.float64)
    c = float(shift)
    if not c > 0:
        raise DomainError(f"shift must be positive, got {c}")
    n = X.shape[0]
    M = np.eye(n) + (X @ X.T) / c
    try:
        factor = scipy.linalg.cho_factor(M, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalConsistencyError(f"factorising I + XX^T/c failed: {exc}") from None
    return np.ascontiguousarray(scipy.linalg.cho_solve(factor, X).T) / (c * c)


def inverse_apply(H, X, v, shift=2.0):
    """``(X^T X + shift I)^{-1} v`` given ``H = precompute_h(X, shift)``."""
    return v / shift - H @ (X @ v)


# ---------------------------------------------------------------------------
# objective and prediction
# ---------------------------------------------------------------------------

def empirical_risk(w, data, loss):
    margins = data.y * (data.X @ w)
    return float(np.mean(loss_value(loss, margins))) if data.n else 0.0


def objective(w, data, config, parc=None, amap=None):
    """Full regularised risk of ``w`` under ``config``."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (data.p,):
        raise StructuralError(f"w has length {w.size}, data has {data.p} features")
    val = empirical_risk(w, data, config.loss) + config.lam * float(np.sum(np.abs(w)))
    if config.structured:
        if config.gamma:
            if amap is None:
                if parc is None:
                    raise StructuralError("structured objective needs a parcellation")
                amap = build_augmentation(parc)
            val += config.gamma / config.q * spatial_penalty(w, parc, amap, config.q)
    else:
        val += 0.5 * config.gamma * float(w @ w)
    return val


def decision_value(model, x):
    w = model.w if isinstance(model, Model) else np.asarray(model)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.size:
        raise StructuralError(f"x has {x.shape[-1]} features, model has {w.size}")
    return x @ w


def predict(model, x):
    """Labels ``sign(<x, w>)`` with ``sign(0) = +1``."""
    dv = decision_value(model, x)
    return np.where(dv >= 0, 1, -1)


# ---------------------------------------------------------------------------
# ADMM loops
# ---------------------------------------------------------------------------

def _check_data(data, p):
    if data.p != p:
        raise StructuralError(f"data has {data.p} features, geometry has {p}")
    if data.n == 0:
        raise StructuralError("cannot fit on an empty training set")
    if np.unique(data.y).size < 2:
        warnings.warn("training set has a single class", RuntimeWarning, stacklevel=3)


def _guard(it, *blocks):
    for blk in blocks:
        nrm = np.linalg.norm(blk)
        if not np.isfinite(nrm):
            raise NumericalDivergenceError("non-finite ADMM iterate", it)
        if nrm > BLOWUP:
            raise NumericalDivergenceError(f"ADMM iterate norm {nrm:.3g} exceeds {BLOWUP:g}", it)


def _stop(w_new, w_old, eps, it):
    """Relative-change rule; never tested before the second iteration."""
    if it < 2:
        return False
    old = np.linalg.norm(w_old)
    change = np.linalg.norm(w_new - w_old)
    if old == 0.0:
        return change == 0.0
    return change / old <= eps


def fit_structured(data, parc, config, amap=None, kernel=None, H=None, trace=True):
    """Fused Lasso / GraphNet ADMM.

    ``amap``, ``kernel`` and ``H`` are rebuilt from ``parc``/``data`` when
    not given; pass them in to share work across many fits.
    """
    if not config.structured:
        raise DomainError(f"fit_structured cannot solve {config.regularizer}")
    if amap is None:
        amap = build_augmentation(parc)
    if kernel is None:
        kernel = build_kernel(amap)
    _check_data(data, amap.p)
    if H is None:
        H = precompute_h(data.X)
    elif H.shape != (data.p, data.n):
        raise StructuralError("cached H does not match the design matrix")

    X = data.X
    Z = data.y[:, None] * X
    n = data.n
    lam, gamma, rho = config.lam, config.gamma, config.rho
    tau_loss = 1.0 / (n * rho)
    code, delta = config.loss.code, config.loss.delta
    mask = amap.mask
    fidx = amap.forward_index
    shape = amap.shape6
    diff, diff_t = K["diff_forward"], K["diff_adjoint"]
    vc_step = K["vc_fused"] if config.q == 1 else K["vc_graphnet"]
    vc_args = (gamma / rho,) if config.q == 1 else (gamma, rho)

    st = SolverState.zeros(n, amap.p, amap.p_tilde, amap.e_tilde)
    Cvd = np.zeros(amap.e_tilde)
    history = []
    converged = False
    for it in range(1, config.max_iters + 1):
        w_old = st.w
        # {w, v_c} block
        r = Z.T @ (st.v_a - st.u_a) + (st.v_b - st.u_b) + (st.v_d - st.u_d)[fidx]
        w = 0.5 * r - H @ (X @ r)
        v_c = vc_step(Cvd - st.u_c, mask, *vc_args)
        # {v_a, v_b, v_d} block
        Zw = Z @ w
        v_a = K["loss_prox"](code, Zw + st.u_a, tau_loss, delta)
        v_b = K["soft_threshold"](w + st.u_b, lam / rho)
        Aw = np.zeros(amap.p_tilde)
        Aw[fidx] = w
        v_d = solve_laplacian(diff_t(v_c + st.u_c, shape) + Aw + st.u_d, kernel)
        Cvd = diff(v_d, shape)
        # scaled dual ascent
        st.u_a = st.u_a + Zw - v_a
        st.u_b = st.u_b + w - v_b
        st.u_c = st.u_c + v_c - Cvd
        st.u_d = st.u_d + Aw - v_d
        st.w, st.v_a, st.v_b, st.v_c, st.v_d, st.iter = w, v_a, v_b, v_c, v_d, it

        _guard(it, w, st.u_a, st.u_b, st.u_c, st.u_d)
        if trace:
            history.append(objective(v_b, data, config, parc, amap))
        if _stop(w, w_old, config.eps, it):
            converged = True
            break

    if not trace:
        history.append(objective(st.v_b, data, config, parc, amap))
    residuals = {
        "loss": float(np.linalg.norm(Z @ st.w - st.v_a)),
        "l1": float(np.linalg.norm(st.w - st.v_b)),
        "diff": float(np.linalg.norm(Cvd - st.v_c)),
        "aug": float(np.linalg.norm(augment(st.w, amap) - st.v_d)),
    }
    return Model(w=st.v_b.copy(), config=config, iterations_run=st.iter,
                 objective_trace=history, converged=converged, residuals=residuals)


def fit_elasticnet(data, config, H=None, trace=True):
    """Elastic-net (or lasso, ``gamma = 0``) ADMM with two splits."""
    if config.structured:
        raise DomainError(f"fit_elasticnet cannot solve {config.regularizer}")
    _check_data(data, data.p)
    lam, gamma, rho = config.lam, config.gamma, config.rho
    shift = (gamma + rho) / rho
    if H is None:
        H = precompute_h(data.X, shift)
    elif H.shape != (data.p, data.n):
        raise StructuralError("cached H does not match the design matrix")

    X = data.X
    Z = data.y[:, None] * X
    n = data.n
    tau_loss = 1.0 / (n * rho)
    code, delta = config.loss.code, config.loss.delta

    st = SolverState.zeros(n, data.p)
    history = []
    converged = False
    for it in range(1, config.max_iters + 1):
        w_old = st.w
        r = Z.T @ (st.v_a - st.u_a) + (st.v_b - st.u_b)
        w = r / shift - H @ (X @ r)
        Zw = Z @ w
        v_a = K["loss_prox"](code, Zw + st.u_a, tau_loss, delta)
        v_b = K["soft_threshold"](w + st.u_b, lam / rho)
        st.u_a = st.u_a + Zw - v_a
        st.u_b = st.u_b + w - v_b
        st.w, st.v_a, st.v_b, st.iter = w, v_a, v_b, it

        _guard(it, w, st.u_a, st.u_b)
        if trace:
            history.append(objective(v_b, data, config))
        if _stop(w, w_old, config.eps, it):
            converged = True
            break

    if not trace:
        history.append(objective(st.v_b, data, config))
    residuals = {
        "loss": float(np.linalg.norm(Z @ st.w - st.v_a)),
        "l1": float(np.linalg.norm(st.w - st.v_b)),
    }
    return Model(w=st.v_b.copy(), config=config, iterations_run=st.iter,
                 objective_trace=history, converged=converged, residuals=residuals)


def fit(data, config, parc=None, amap=None, kernel=None, H=None, trace=True):
    """Dispatch to the solver matching ``config.regularizer``."""
    if config.structured:
        if parc is None:
            raise StructuralError(f"{config.regularizer} needs a parcellation")
        return fit_structured(data, parc, config, amap=amap, kernel=kernel, H=H, trace=trace)
    return fit_elasticnet(data, config, H=H, trace=trace)

