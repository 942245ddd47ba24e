"""Synthetic control/patient connectome cohorts with planted anomalous edges.

Each edge is generated in the Fisher (arctanh) domain as a Gaussian and
mapped back through ``tanh``.  Patients get a mean shift of ``d * sigma`` on
every edge joining the two anomalous node clusters.

Randomness uses numpy's PCG64 bit generator.  Subject ``i`` of draw stream
``s`` is seeded with ``SeedSequence([seed, s, i])``, so a cohort does not
depend on how many workers generate it or in what order.
"""

import json
from dataclasses import dataclass

import numpy as np

from .connectome import GridParcellation, edge_index
from .exceptions import DomainError, StructuralError
from .solver import TrainingSet

PROFILE_SEED = 20240917
DEFAULT_EFFECT_SIZE = 0.6

# Lattice columns occupied by each row of the 10 x 8 slice, bottom row first.
# Nodes are numbered row by row from the bottom, left to right.
_SLICE_ROWS = (
    range(2, 7),
    range(1, 7),
    range(0, 8),
    range(0, 8),
    range(0, 8),
    range(0, 8),
    range(0, 8),
    range(1, 8),
    range(1, 7),
    range(3, 5),
)

# Anomalous clusters on the 66-node slice, first as 1-based node labels.
REFERENCE_CLUSTERS_1BASED = ((8, 14, 15, 16, 23), (41, 48, 49, 50, 56))
REFERENCE_CLUSTERS = tuple(tuple(v - 1 for v in c) for c in REFERENCE_CLUSTERS_1BASED)

CONTROL_STREAM = 0
PATIENT_STREAM = 1


def reference_slice():
    """The 66-node axial slice on a 10 x 8 x 1 lattice."""
    support = np.zeros((10, 8, 1), dtype=bool)
    for row, cols in enumerate(_SLICE_ROWS):
        support[row, list(cols), 0] = True
    return GridParcellation((10, 8, 1), support)


def default_profile(p, seed=PROFILE_SEED):
    """Stand-in Fisher-domain moments: ``mu ~ N(0, 0.3^2)``, ``sigma ~ U[0.15, 0.35]``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    mu = rng.normal(0.0, 0.3, size=p)
    sigma = rng.uniform(0.15, 0.35, size=p)
    return mu, sigma


@dataclass(frozen=True, eq=False)
class SimulationParams:
    parc: GridParcellation
    mu: np.ndarray
    sigma: np.ndarray
    cluster_a: tuple
    cluster_b: tuple
    effect_size: float = DEFAULT_EFFECT_SIZE
    seed: int = 0

    def __post_init__(self):
        p = self.parc.n_features
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if mu.size != p or sigma.size != p:
            raise StructuralError(f"mu and sigma need {p} entries, got {mu.size} and {sigma.size}")
        if not np.all(sigma > 0) or not np.all(np.isfinite(sigma)):
            raise DomainError("sigma must be strictly positive and finite")
        if not np.all(np.isfinite(mu)):
            raise DomainError("mu must be finite")
        if not np.isfinite(self.effect_size):
            raise DomainError("effect size must be finite")
        d = self.parc.node_count
        clusters = []
        for c in (self.cluster_a, self.cluster_b):
            c = tuple(int(v) for v in c)
            if len(set(c)) != len(c):
                raise StructuralError(f"cluster {c} repeats a node")
            if any(v < 0 or v >= d for v in c):
                raise StructuralError(f"cluster {c} has nodes outside [0, {d})")
            clusters.append(c)
        if set(clusters[0]) & set(clusters[1]):
            raise StructuralError("anomalous clusters overlap")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "cluster_a", clusters[0])
        object.__setattr__(self, "cluster_b", clusters[1])
        object.__setattr__(self, "effect_size", float(self.effect_size))
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def reference_default(cls, effect_size=DEFAULT_EFFECT_SIZE, seed=0, profile_seed=PROFILE_SEED):
        parc = reference_slice()
        mu, sigma = default_profile(parc.n_features, profile_seed)
        return cls(parc, mu, sigma, *REFERENCE_CLUSTERS, effect_size=effect_size, seed=seed)

    def to_dict(self):
        return {
            "parcellation": self.parc.to_dict(),
            "mu": [float(v) for v in self.mu],
            "sigma": [float(v) for v in self.sigma],
            "cluster_a": list(self.cluster_a),
            "cluster_b": list(self.cluster_b),
            "effect_size": self.effect_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(GridParcellation.from_dict(doc["parcellation"]),
                       np.asarray(doc["mu"]), np.asarray(doc["sigma"]),
                       doc["cluster_a"], doc["cluster_b"],
                       doc.get("effect_size", DEFAULT_EFFECT_SIZE), doc.get("seed", 0))
        except KeyError as exc:
            raise StructuralError(f"simulation document lacks {exc}") from None


def anomalous_edges(params):
    """Sorted edge indices of the complete bipartite graph between the clusters."""
    a = np.asarray(params.cluster_a, dtype=np.int64)
    b = np.asarray(params.cluster_b, dtype=np.int64)
    if set(a.tolist()) & set(b.tolist()):
        raise StructuralError("anomalous clusters overlap")
    if a.size == 0 or b.size == 0:
        return np.zeros(0, dtype=np.int64)
    aa, bb = np.meshgrid(a, b, indexing="ij")
    return np.sort(edge_index(aa.ravel(), bb.ravel(), params.parc.node_count))


def truth_support(params):
    """Boolean length-``p`` indicator of the anomalous edges."""
    mask = np.zeros(params.parc.n_features, dtype=bool)
    mask[anomalous_edges(params)] = True
    return mask


def _draw(params, rng, shift):
    z = rng.standard_normal(params.mu.size)
    return np.tanh(params.mu + shift + params.sigma * z)


def sample_control(params, rng):
    return _draw(params, rng, 0.0)


def sample_patient(params, rng, support=None):
    if support is None:
        support = truth_support(params)
    shift = np.where(support, params.effect_size * params.sigma, 0.0)
    return _draw(params, rng, shift)


def subject_rng(seed, stream, index):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream, index])))


def generate_dataset(params, n_control, n_patient, stream=0):
    """Labelled cohort (controls first, ``y = -1``; then patients, ``y = +1``).

    ``stream`` separates independent cohorts drawn from the same parameters,
    e.g. a training set and a test set.  Returns ``(TrainingSet, support)``.
    """
    if n_control < 0 or n_patient < 0:
        raise DomainError("subject counts must be non-negative")
    support = truth_support(params)
    p = params.parc.n_features
    X = np.empty((n_control + n_patient, p))
    base = 2 * int(stream)
    for i in range(n_control):
        X[i] = sample_control(params, subject_rng(params.seed, base + CONTROL_STREAM, i))
    for i in range(n_patient):
        X[n_control + i] = sample_patient(
            params, subject_rng(params.seed, base + PATIENT_STREAM, i), support)
    y = np.concatenate([-np.ones(n_control), np.ones(n_patient)])
    return TrainingSet(X, y), support


def write_dataset_csv(data, path, header=None):
    """One row per subject: label then the ``p`` features."""
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write("label," + ",".join(f"x{j}" for j in range(data.p)) + "\n")
        for yi, row in zip(data.y, data.X):
            fh.write(f"{int(yi)}," + ",".join(repr(float(v)) for v in row) + "\n")


def write_sidecar(params, support, path, extra=None):
    doc = {"params": params.to_dict(),
           "ground_truth_support": [int(j) for j in np.flatnonzero(support)]}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
