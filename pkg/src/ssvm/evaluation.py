"""Cross-validation, regularisation grid search and edge-recovery scoring.

The grid search evaluates every ``(lambda, gamma)`` cell with the same
stratified folds.  Work is split into one task per ``(fold, gamma)`` pair;
each task sweeps the whole lambda column so that the fold's inversion-lemma
factor and the spectral kernel are built once per process and reused.
Results are written into the output matrices by cell index, so they do not
depend on the number of workers.
"""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .connectome import build_augmentation, edge_nodes
from .exceptions import SSVMError, StructuralError
from .solver import NNZ_TOL, SolverConfig, count_nonzero, fit, precompute_h
from .spectral import build_kernel

REFERENCE_LAMBDA_EXP = (-11.0, -3.5, 0.25)
REFERENCE_GAMMA_EXP = {
    "elastic_net": (-16.0, 2.0, 0.5),
    "graphnet": (-16.0, 2.0, 0.5),
    "fused_lasso": (-16.0, -5.0, 0.5),
}


def log2_grid(start, stop, step):
    """``2**e`` for ``e = start, start + step, ..., stop`` (inclusive)."""
    count = int(round((stop - start) / step)) + 1
    return tuple(float(2.0 ** (start + i * step)) for i in range(count))


@dataclass(frozen=True)
class GridSpec:
    lambda_grid: tuple
    gamma_grid: tuple = (0.0,)
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_grid", "gamma_grid"):
            g = tuple(float(v) for v in np.atleast_1d(getattr(self, name)))
            if not g:
                raise StructuralError(f"{name} is empty")
            if any(b <= a for a, b in zip(g, g[1:])):
                raise StructuralError(f"{name} must be strictly increasing")
            if any(v < 0 or not np.isfinite(v) for v in g):
                raise StructuralError(f"{name} entries must be finite and >= 0")
            object.__setattr__(self, name, g)
        if int(self.folds) < 2:
            raise StructuralError(f"need at least 2 folds, got {self.folds}")
        object.__setattr__(self, "folds", int(self.folds))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def shape(self):
        return len(self.lambda_grid), len(self.gamma_grid)

    def to_dict(self):
        return {"lambda_grid": list(self.lambda_grid), "gamma_grid": list(self.gamma_grid),
                "folds": self.folds, "seed": self.seed}

    @classmethod
    def from_dict(cls, doc):
        return cls(tuple(doc["lambda_grid"]), tuple(doc.get("gamma_grid", (0.0,))),
                   doc.get("folds", 5), doc.get("seed", 0))


def reference_grid(regularizer, folds=5, seed=0, lambda_step=None, gamma_step=None):
    """The reference search ranges, optionally on a coarser exponent step."""
    lo, hi, st = REFERENCE_LAMBDA_EXP
    lam = log2_grid(lo, hi, lambda_step or st)
    reg = SolverConfig(regularizer).regularizer
    if reg == "lasso":
        gam = (0.0,)
    else:
        lo, hi, st = REFERENCE_GAMMA_EXP[reg]
        gam = log2_grid(lo, hi, gamma_step or st)
    return GridSpec(lam, gam, folds, seed)


@dataclass
class GridResult:
    lambda_grid: tuple
    gamma_grid: tuple
    accuracy: np.ndarray
    mean_nnz: np.ndarray
    best_index: tuple = field(init=False)

    def __post_init__(self):
        self.best_index = _best(self.accuracy, np.ones_like(self.accuracy, dtype=bool))

    @property
    def best_cell(self):
        i, j = self.best_index
        return self.lambda_grid[i], self.gamma_grid[j]

    def best_under_budget(self, max_nnz):
        """Most accurate cell among those with ``mean_nnz <= max_nnz``."""
        ok = self.mean_nnz <= max_nnz
        if not ok.any():
            raise StructuralError(f"no grid cell selects at most {max_nnz} features")
        i, j = _best(self.accuracy, ok)
        return self.lambda_grid[i], self.gamma_grid[j]


def _best(acc, allowed):
    """Argmax of ``acc`` over ``allowed``; ties go to larger lambda, then larger gamma."""
    best, best_ij = -np.inf, None
    n_lam, n_gam = acc.shape
    for i in range(n_lam - 1, -1, -1):
        for j in range(n_gam - 1, -1, -1):
            if allowed[i, j] and acc[i, j] > best:
                best, best_ij = acc[i, j], (i, j)
    return best_ij


def kfold_split(n, k, labels=None, seed=0):
    """Stratified ``k``-fold partition as a list of ``(train, validate)`` index arrays.

    Within each class the indices are shuffled and dealt round-robin, the
    starting fold rotating from class to class so fold sizes differ by at
    most one.
    """
    n, k = int(n), int(k)
    if k < 2:
        raise StructuralError(f"need at least 2 folds, got {k}")
    if k > n:
        raise StructuralError(f"cannot split {n} samples into {k} folds")
    labels = np.zeros(n) if labels is None else np.asarray(labels)
    if labels.shape != (n,):
        raise StructuralError(f"{labels.size} labels for {n} samples")
    rng = np.random.Generator(np.random.PCG64(seed))
    assign = np.empty(n, dtype=np.int64)
    offset = 0
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        assign[idx] = (offset + np.arange(idx.size)) % k
        offset = (offset + idx.size) % k
    all_idx = np.arange(n)
    return [(all_idx[assign != f], all_idx[assign == f]) for f in range(k)]


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

_CTX = {}


def _init_worker(ctx):
    _CTX.clear()
    _CTX.update(ctx)
    _CTX["cache"] = {}


def _geometry():
    cache = _CTX["cache"]
    if "amap" not in cache:
        amap = build_augmentation(_CTX["parc"])
        cache["amap"] = amap
        cache["kernel"] = build_kernel(amap)
    return cache["amap"], cache["kernel"]


def _fold_h(fold, train, shift):
    key = ("H", fold, shift)
    cache = _CTX["cache"]
    if key not in cache:
        cache[key] = precompute_h(train.X, shift)
    return cache[key]


def _run_column(task):
    """All lambdas of one gamma on one fold: correct counts and nnz per lambda."""
    fold, j = task
    data, base, lambdas, gammas = _CTX["data"], _CTX["base"], _CTX["lambdas"], _CTX["gammas"]
    tr_idx, va_idx = _CTX["folds"][fold]
    train, valid = data.subset(tr_idx), data.subset(va_idx)
    gamma = gammas[j]
    correct = np.zeros(len(lambdas), dtype=np.int64)
    nnz = np.zeros(len(lambdas), dtype=np.int64)
    lam = lambdas[0]
    try:
        if base.structured:
            amap, kernel = _geometry()
            kwargs = dict(parc=_CTX["parc"], amap=amap, kernel=kernel,
                          H=_fold_h(fold, train, 2.0))
        else:
            kwargs = dict(H=_fold_h(fold, train, (gamma + base.rho) / base.rho))
        for i, lam in enumerate(lambdas):
            model = fit(train, base.replace(lam=lam, gamma=gamma), trace=False, **kwargs)
            pred = np.where(valid.X @ model.w >= 0, 1.0, -1.0)
            correct[i] = int(np.sum(pred == valid.y))
            nnz[i] = model.nnz
    except SSVMError as exc:
        exc.cell = (lam, gamma)
        exc.args = (f"grid cell lambda={lam!r} gamma={gamma!r}, fold {fold}: {exc}",)
        raise
    return fold, j, correct, nnz


def resolve_threads(threads=None):
    if threads is None:
        threads = int(os.environ.get("SSVM_THREADS", "0") or 0) or os.cpu_count() or 1
    return max(1, int(threads))


def grid_search(data, grid, base_config, parc=None, threads=1):
    """``k``-fold CV accuracy (pooled over folds) and mean nnz for every grid cell."""
    if base_config.structured and parc is None:
        raise StructuralError(f"{base_config.regularizer} grid search needs a parcellation")
    gammas = (0.0,) if base_config.regularizer == "lasso" else grid.gamma_grid
    folds = kfold_split(data.n, grid.folds, data.y, grid.seed)
    ctx = {"data": data, "parc": parc, "base": base_config, "folds": folds,
           "lambdas": grid.lambda_grid, "gammas": gammas}
    tasks = [(f, j) for j in range(len(gammas)) for f in range(len(folds))]
    threads = min(resolve_threads(threads), len(tasks))
    if threads == 1:
        _init_worker(ctx)
        try:
            results = [_run_column(t) for t in tasks]
        finally:
            _CTX.clear()
    else:
        with ProcessPoolExecutor(threads, initializer=_init_worker, initargs=(ctx,)) as pool:
            results = list(pool.map(_run_column, tasks))

    shape = (len(grid.lambda_grid), len(gammas))
    correct = np.zeros(shape, dtype=np.int64)
    nnz = np.zeros(shape, dtype=np.int64)
    for _, j, c, z in results:
        correct[:, j] += c
        nnz[:, j] += z
    return GridResult(tuple(grid.lambda_grid), tuple(gammas),
                      correct / data.n, nnz / len(folds))


def cv_weights(data, config, folds=5, seed=0, parc=None):
    """Weight vectors fitted on each training split (for median aggregation)."""
    out = []
    for train_idx, _ in kfold_split(data.n, folds, data.y, seed):
        out.append(fit(data.subset(train_idx), config, parc=parc, trace=False).w)
    return out


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def roc_edge_recovery(w, truth):
    """ROC of ranking edges by ``|w|`` against the true support.

    Returns ``(thresholds, fpr, tpr, auc)``.  The curve steps through each
    distinct value of ``|w|`` from largest to smallest, starting at
    ``(0, 0)`` (threshold ``+inf``); tied scores enter together, so the
    trapezoid area counts a tie as half a correct ordering.
    """
    score = np.abs(np.asarray(w, dtype=np.float64)).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if truth.dtype != bool:
        mask = np.zeros(score.size, dtype=bool)
        mask[truth.astype(np.int64)] = True
        truth = mask
    if truth.size != score.size:
        raise StructuralError(f"truth has {truth.size} entries, w has {score.size}")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise StructuralError("edge-recovery ROC needs both true and null edges")
    order = np.argsort(-score, kind="stable")
    s, t = score[order], truth[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(t)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return thresholds, fpr, tpr, auc


def median_weight(weights):
    """Elementwise median of a non-empty list of equal-length vectors."""
    if len(weights) == 0:
        raise StructuralError("median of an empty list of weight vectors")
    rows = [np.asarray(w, dtype=np.float64).reshape(-1) for w in weights]
    if len({r.size for r in rows}) != 1:
        raise StructuralError("weight vectors differ in length")
    stack = np.vstack(rows)
    return np.median(stack, axis=0)


def node_degree(w, parc, tol=NNZ_TOL):
    """Number of selected edges (``|w| > tol``) touching each real node."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    d = parc.node_count
    if w.size != parc.n_features:
        raise StructuralError(f"expected {parc.n_features} weights, got {w.size}")
    a, b = edge_nodes(d)
    sel = np.abs(w) > tol
    return (np.bincount(a[sel], minlength=d) + np.bincount(b[sel], minlength=d)).astype(np.int64)


def accuracy(model, test):
    """Fraction of test subjects whose sign prediction matches the label."""
    if test.n == 0:
        raise StructuralError("accuracy on an empty test set")
    w = model.w if hasattr(model, "w") else np.asarray(model)
    pred = np.where(test.X @ w >= 0, 1.0, -1.0)
    return float(np.mean(pred == test.y))


# ---------------------------------------------------------------------------
# simulation protocol
# ---------------------------------------------------------------------------

@dataclass
class StudyOutcome:
    regularizer: str
    best_cell: tuple
    cv_accuracy: float
    test_accuracy: float
    auc: float
    nnz: int
    grid: GridResult = None
    w: np.ndarray = None


def tune_and_evaluate(train, test, truth, grid, base_config, parc=None, threads=1):
    """Grid search on ``train``, refit the best cell on all of ``train``, score on ``test``."""
    res = grid_search(train, grid, base_config, parc=parc, threads=threads)
    lam, gamma = res.best_cell
    model = fit(train, base_config.replace(lam=lam, gamma=gamma), parc=parc, trace=False)
    auc = roc_edge_recovery(model.w, truth)[3] if truth is not None else float("nan")
    return StudyOutcome(base_config.regularizer, (lam, gamma), float(res.accuracy[res.best_index]),
                        accuracy(model, test), auc, count_nonzero(model.w), res, model.w)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def write_grid_csv(result, stem, header=None):
    """``<stem>_accuracy.csv`` and ``<stem>_nnz.csv``: rows lambda, columns gamma."""
    paths = []
    for name, mat in (("accuracy", result.accuracy), ("nnz", result.mean_nnz)):
        path = f"{stem}_{name}.csv"
        with open(path, "w") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write("lambda," + ",".join(_fmt(g) for g in result.gamma_grid) + "\n")
            for lam, row in zip(result.lambda_grid, mat):
                fh.write(_fmt(lam) + "," + ",".join(_fmt(v) for v in row) + "\n")
        paths.append(path)
    return paths


def write_roc(thresholds, fpr, tpr, auc, csv_path, json_path, header=None, extra=None):
    with open(csv_path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write("threshold,fpr,tpr\n")
        for th, f, t in zip(thresholds, fpr, tpr):
            fh.write(f"{_fmt(th)},{_fmt(f)},{_fmt(t)}\n")
    doc = {"auc": float(auc)}
    if extra:
        doc.update(extra)
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
