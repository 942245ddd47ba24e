"""``ssvm`` command line: simulate, fit, predict, grid, roc, export.

Every command reads an optional JSON run configuration (``--config``),
applies command-line overrides, validates the result against a JSON schema
and writes its outputs into ``--out``.  Each output embeds the package
version and the SHA-256 of the resolved configuration: CSV files on a
leading ``# ssvm <version> config_sha256=<hex>`` comment line, JSON files as
top-level fields.  Floats are written with ``repr`` so reruns are
byte-identical.

Exit codes: 0 success, 2 configuration or input error, 3 I/O error,
4 numerical divergence.
"""

import argparse
import copy
import hashlib
import json
import os
import sys

import jsonschema
import numpy as np

from . import __version__
from .connectome import (
    GridParcellation,
    load_parcellation,
    matricize,
    read_connectome_csv,
    save_parcellation,
)
from .evaluation import (
    GridSpec,
    grid_search,
    log2_grid,
    median_weight,
    node_degree,
    reference_grid,
    resolve_threads,
    roc_edge_recovery,
    write_grid_csv,
    write_roc,
)
from .exceptions import NumericalDivergenceError, SSVMError
from .simulate import (
    DEFAULT_EFFECT_SIZE,
    REFERENCE_CLUSTERS,
    PROFILE_SEED,
    SimulationParams,
    default_profile,
    generate_dataset,
    reference_slice,
    write_dataset_csv,
    write_sidecar,
)
from .solver import SolverConfig, TrainingSet, fit, load_model, save_model

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGENCE = 0, 2, 3, 4

_NUM = {"type": "number"}
_NONNEG = {"type": "number", "minimum": 0}
_COUNT = {"type": "integer", "minimum": 0}
_EXP_RANGE = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_GRID_VALUES = {"type": "array", "items": _NONNEG, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer"},
                "effect_size": _NUM,
                "profile_seed": {"type": "integer"},
                "n_control": _COUNT,
                "n_patient": _COUNT,
                "n_test_control": _COUNT,
                "n_test_patient": _COUNT,
                "cluster_a": {"type": "array", "items": _COUNT},
                "cluster_b": {"type": "array", "items": _COUNT},
                "parcellation": {"type": "string"},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "regularizer": {"enum": ["lasso", "enet", "elastic_net", "graphnet",
                                         "flasso", "fused_lasso"]},
                "lam": _NONNEG,
                "gamma": _NONNEG,
                "rho": {"type": "number", "exclusiveMinimum": 0},
                "loss": {"type": "string", "pattern": r"^(hinge|tls|huber(:[0-9.eE+-]+)?)$"},
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda_grid": _GRID_VALUES,
                "gamma_grid": _GRID_VALUES,
                "lambda_exp": _EXP_RANGE,
                "gamma_exp": _EXP_RANGE,
                "folds": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer"},
            },
        },
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "string"} for k in
                           ("train", "test", "data", "model", "truth", "parcellation")},
        },
    },
}

DEFAULT_CONFIG = {
    "simulation": {
        "seed": 0,
        "effect_size": DEFAULT_EFFECT_SIZE,
        "profile_seed": PROFILE_SEED,
        "n_control": 50,
        "n_patient": 50,
        "n_test_control": 250,
        "n_test_patient": 250,
        "cluster_a": list(REFERENCE_CLUSTERS[0]),
        "cluster_b": list(REFERENCE_CLUSTERS[1]),
    },
    "solver": SolverConfig().to_dict(),
    "grid": {"folds": 5, "seed": 0},
    "paths": {},
}


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _validate(doc, where):
    errors = sorted(jsonschema.Draft7Validator(CONFIG_SCHEMA).iter_errors(doc),
                    key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{where}: {'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
                 for e in errors]
        raise ConfigError("\n".join(lines))


def load_config(path):
    """Read and validate a run configuration; returns the user document."""
    if path is None:
        return {}
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    _validate(doc, path)
    return doc


def resolve_config(args):
    """Defaults, then the config file, then command-line flags."""
    cfg = _merge(DEFAULT_CONFIG, load_config(args.config))
    sim, sol, grid = cfg["simulation"], cfg["solver"], cfg["grid"]
    if args.seed is not None:
        sim["seed"] = sol["seed"] = grid["seed"] = args.seed
    for flag, key in (("regularizer", "regularizer"), ("loss", "loss"), ("lam", "lam"),
                      ("gamma", "gamma"), ("epsilon", "eps"), ("max_iters", "max_iters"),
                      ("rho", "rho")):
        val = getattr(args, flag, None)
        if val is not None:
            sol[key] = val
    for flag in ("n_control", "n_patient"):
        val = getattr(args, flag, None)
        if val is not None:
            sim[flag] = val
    _validate(cfg, "resolved configuration")
    return cfg


def config_digest(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def solver_config(cfg):
    try:
        return SolverConfig.from_dict(cfg["solver"])
    except (TypeError, SSVMError) as exc:
        raise ConfigError(f"solver section: {exc}") from None


def grid_spec(cfg, regularizer):
    g = cfg["grid"]
    base = reference_grid(regularizer, g.get("folds", 5), g.get("seed", 0))
    lam = g.get("lambda_grid") or (log2_grid(*g["lambda_exp"]) if "lambda_exp" in g
                                   else base.lambda_grid)
    gam = g.get("gamma_grid") or (log2_grid(*g["gamma_exp"]) if "gamma_exp" in g
                                  else base.gamma_grid)
    try:
        return GridSpec(tuple(lam), tuple(gam), g.get("folds", 5), g.get("seed", 0))
    except SSVMError as exc:
        raise ConfigError(f"grid section: {exc}") from None


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

class Run:
    """Resolved configuration plus provenance stamping for outputs."""

    def __init__(self, args):
        self.args = args
        self.cfg = resolve_config(args)
        self.digest = config_digest(self.cfg)
        self.out = args.out
        os.makedirs(self.out, exist_ok=True)

    @property
    def header(self):
        return f"ssvm {__version__} config_sha256={self.digest}"

    def path(self, name):
        return os.path.join(self.out, name)

    def stamp(self, doc=None):
        doc = dict(doc or {})
        doc["ssvm_version"] = __version__
        doc["config_sha256"] = self.digest
        doc["run_config"] = self.cfg
        return doc

    def write_json(self, name, doc):
        path = self.path(name)
        with open(path, "w") as fh:
            json.dump(self.stamp(doc), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path

    def input_path(self, flag, key):
        val = getattr(self.args, flag, None) or self.cfg["paths"].get(key)
        if not val:
            raise ConfigError(f"no {key} file given (use --{flag.replace('_', '-')} "
                              f"or paths.{key} in the config)")
        return val


def _load_data(path):
    X, y = read_connectome_csv(path)
    if y is None:
        y = np.ones(X.shape[0], dtype=np.int64)
        return TrainingSet(X, y), False
    return TrainingSet(X, y), True


def _parcellation_for(run, data_path, p, required=True):
    explicit = getattr(run.args, "parcellation", None) or run.cfg["paths"].get("parcellation")
    if explicit:
        parc = load_parcellation(explicit)
    else:
        sidecar = os.path.join(os.path.dirname(os.path.abspath(data_path)), "parcellation.json")
        if os.path.exists(sidecar):
            parc = load_parcellation(sidecar)
        elif p == reference_slice().n_features:
            parc = reference_slice()
        elif required:
            raise ConfigError("structured regularizers need a parcellation (--parcellation)")
        else:
            return None
    if parc.n_features != p:
        raise ConfigError(f"parcellation has {parc.n_features} edges, data has {p} columns")
    return parc


def _simulation_params(cfg):
    sim = cfg["simulation"]
    parc = load_parcellation(sim["parcellation"]) if sim.get("parcellation") else reference_slice()
    mu, sigma = default_profile(parc.n_features, sim["profile_seed"])
    try:
        return SimulationParams(parc, mu, sigma, sim["cluster_a"], sim["cluster_b"],
                                sim["effect_size"], sim["seed"])
    except SSVMError as exc:
        raise ConfigError(f"simulation section: {exc}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(run):
    cfg = run.cfg["simulation"]
    params = _simulation_params(run.cfg)
    train, support = generate_dataset(params, cfg["n_control"], cfg["n_patient"], stream=0)
    test, _ = generate_dataset(params, cfg["n_test_control"], cfg["n_test_patient"], stream=1)
    write_dataset_csv(train, run.path("train.csv"), run.header)
    write_dataset_csv(test, run.path("test.csv"), run.header)
    save_parcellation(params.parc, run.path("parcellation.json"))
    write_sidecar(params, support, run.path("truth.json"), run.stamp())
    print(f"wrote {train.n} training and {test.n} test subjects to {run.out}")


def cmd_fit(run):
    data_path = run.input_path("data", "train")
    data, labelled = _load_data(data_path)
    if not labelled:
        raise ConfigError(f"{data_path}: training data needs a label column")
    config = solver_config(run.cfg)
    parc = _parcellation_for(run, data_path, data.p) if config.structured else None
    model = fit(data, config, parc=parc)
    save_model(model, run.path("model.json"), run.stamp())
    print(f"{config.regularizer}: {model.iterations_run} iterations, "
          f"converged={model.converged}, nnz={model.nnz}")


def cmd_predict(run):
    model = load_model(run.input_path("model", "model"))
    data_path = run.input_path("data", "test")
    data, labelled = _load_data(data_path)
    if data.p != model.w.size:
        raise ConfigError(f"model has {model.w.size} weights, data has {data.p} columns")
    score = data.X @ model.w
    pred = np.where(score >= 0, 1, -1)
    with open(run.path("predictions.csv"), "w") as fh:
        fh.write(f"# {run.header}\n")
        fh.write("index,decision,prediction" + (",label" if labelled else "") + "\n")
        for i, (s, yhat) in enumerate(zip(score, pred)):
            tail = f",{int(data.y[i])}" if labelled else ""
            fh.write(f"{i},{float(s)!r},{int(yhat)}{tail}\n")
    summary = {"n": int(data.n)}
    if labelled and data.n:
        summary["accuracy"] = float(np.mean(pred == data.y))
    run.write_json("predictions.json", summary)
    print(json.dumps(summary))


def cmd_grid(run):
    data_path = run.input_path("data", "train")
    data, labelled = _load_data(data_path)
    if not labelled:
        raise ConfigError(f"{data_path}: grid search needs a label column")
    config = solver_config(run.cfg)
    spec = grid_spec(run.cfg, config.regularizer)
    parc = _parcellation_for(run, data_path, data.p) if config.structured else None
    threads = resolve_threads(run.args.threads)
    res = grid_search(data, spec, config, parc=parc, threads=threads)
    write_grid_csv(res, run.path("grid"), run.header)
    lam, gam = res.best_cell
    run.write_json("grid.json", {
        "best_lambda": lam,
        "best_gamma": gam,
        "best_accuracy": float(res.accuracy[res.best_index]),
        "best_mean_nnz": float(res.mean_nnz[res.best_index]),
    })
    print(f"best cell lambda={lam!r} gamma={gam!r} "
          f"accuracy={float(res.accuracy[res.best_index]):.4f}")


def _load_truth(path, p):
    with open(path) as fh:
        doc = json.load(fh)
    idx = doc.get("ground_truth_support")
    if idx is None:
        raise ConfigError(f"{path}: no ground_truth_support field")
    mask = np.zeros(p, dtype=bool)
    mask[np.asarray(idx, dtype=np.int64)] = True
    return mask


def cmd_roc(run):
    paths = run.args.model or [run.input_path("model", "model")]
    weights = [load_model(p).w for p in paths]
    w = weights[0] if len(weights) == 1 else median_weight(weights)
    truth = _load_truth(run.input_path("truth", "truth"), w.size)
    th, fpr, tpr, auc = roc_edge_recovery(w, truth)
    write_roc(th, fpr, tpr, auc, run.path("roc.csv"), run.path("roc.json"), run.header,
              run.stamp({"models": [os.path.basename(p) for p in paths]}))
    print(f"AUC={auc:.6f}")


def cmd_export(run):
    model = load_model(run.input_path("model", "model"))
    explicit = run.args.parcellation or run.cfg["paths"].get("parcellation")
    parc = load_parcellation(explicit) if explicit else None
    if parc is not None and parc.n_features != model.w.size:
        raise ConfigError(f"parcellation has {parc.n_features} edges, model has {model.w.size}")
    W = matricize(model.w)
    with open(run.path("weights_matrix.csv"), "w") as fh:
        fh.write(f"# {run.header}\n")
        fh.write(",".join(f"n{j}" for j in range(W.shape[0])) + "\n")
        for row in W:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    if parc is None:
        parc = GridParcellation((W.shape[0], 1, 1), np.ones(W.shape[0], dtype=bool))
    deg = node_degree(model.w, parc)
    coords = parc.node_coords
    with open(run.path("degree.csv"), "w") as fh:
        fh.write(f"# {run.header}\n")
        fh.write("node,x,y,z,degree\n")
        for a in range(deg.size):
            x, y, z = coords[a]
            fh.write(f"{a},{x},{y},{z},{int(deg[a])}\n")
    print(f"exported {W.shape[0]}x{W.shape[0]} weight matrix, {int(deg.sum()) // 2} edges")


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "grid": cmd_grid,
    "roc": cmd_roc,
    "export": cmd_export,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory")
    common.add_argument("--seed", type=int, help="overrides every seed in the configuration")
    common.add_argument("--threads", type=int,
                        help="worker cap (default: $SSVM_THREADS or the CPU count)")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--regularizer", choices=["lasso", "enet", "graphnet", "flasso"])
    solver.add_argument("--loss", help="hinge, tls or huber:DELTA")
    solver.add_argument("--lambda", dest="lam", type=float)
    solver.add_argument("--gamma", type=float)
    solver.add_argument("--rho", type=float)
    solver.add_argument("--epsilon", type=float)
    solver.add_argument("--max-iters", type=int)

    parser = argparse.ArgumentParser(prog="ssvm", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"ssvm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate train/test cohorts")
    p.add_argument("--n-control", type=int)
    p.add_argument("--n-patient", type=int)

    p = sub.add_parser("fit", parents=[common, solver], help="train one model")
    p.add_argument("--data", help="training CSV")
    p.add_argument("--parcellation", help="parcellation JSON")

    p = sub.add_parser("predict", parents=[common], help="score a CSV with a model")
    p.add_argument("--model")
    p.add_argument("--data")

    p = sub.add_parser("grid", parents=[common, solver], help="cross-validated grid search")
    p.add_argument("--data")
    p.add_argument("--parcellation")

    p = sub.add_parser("roc", parents=[common], help="edge-recovery ROC against the truth")
    p.add_argument("--model", action="append",
                   help="model JSON; repeat to score the elementwise median weight")
    p.add_argument("--truth", help="truth.json written by simulate")

    p = sub.add_parser("export", parents=[common], help="weight matrix and node degrees")
    p.add_argument("--model")
    p.add_argument("--parcellation")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        run = Run(args)
        COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"ssvm: configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergenceError as exc:
        print(f"ssvm: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except SSVMError as exc:
        print(f"ssvm: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"ssvm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
