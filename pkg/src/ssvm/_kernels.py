"""Hot elementwise and stencil kernels, with a numba path and a numpy path.

The numba path is used when numba imports cleanly and the environment
variable ``SSVM_NUMBA`` is not set to ``0``.  Both paths produce the same
numbers up to floating point reassociation in the stencil adjoint; the test
suite runs every kernel through both.

Difference layout: for a 6-D lattice of total size ``P`` the difference
operator returns ``12 * P`` rows, block ``2*a`` holding the periodic forward
difference along axis ``a`` and block ``2*a + 1`` the periodic backward
difference.
"""

import os

import numpy as np

HINGE, TRUNCATED_LS, HUBER = 0, 1, 2

N_DIRECTIONS = 12


def _env_wants_numba():
    return os.environ.get("SSVM_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


try:  # pragma: no cover - exercised implicitly by whichever path is active
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def np_soft_threshold(t, tau):
    return np.sign(t) * np.maximum(np.abs(t) - tau, 0.0)


def np_loss_prox(code, t, tau, delta):
    t = np.asarray(t, dtype=np.float64)
    if code == HINGE:
        return np.where(t > 1.0, t, np.where(t >= 1.0 - tau, 1.0, t + tau))
    if code == TRUNCATED_LS:
        return np.where(t > 1.0, t, (t + 2.0 * tau) / (1.0 + 2.0 * tau))
    if code == HUBER:
        r = tau / delta
        return np.where(
            t > 1.0,
            t,
            np.where(t >= 1.0 - delta - tau, (t + r) / (1.0 + r), t + tau),
        )
    raise ValueError(f"unknown loss code {code}")


def np_diff_forward(wt, shape):
    w6 = wt.reshape(shape)
    out = np.empty((N_DIRECTIONS,) + tuple(shape))
    for a in range(6):
        out[2 * a] = np.roll(w6, -1, axis=a) - w6
        out[2 * a + 1] = np.roll(w6, 1, axis=a) - w6
    return out.reshape(-1)


def np_diff_adjoint(z, shape):
    z6 = z.reshape((N_DIRECTIONS,) + tuple(shape))
    out = np.zeros(shape)
    for a in range(6):
        out += np.roll(z6[2 * a], 1, axis=a) - z6[2 * a]
        out += np.roll(z6[2 * a + 1], -1, axis=a) - z6[2 * a + 1]
    return out.reshape(-1)


def np_vc_fused(zeta, mask, thr):
    return np.where(mask, np_soft_threshold(zeta, thr), zeta)


def np_vc_graphnet(zeta, mask, gamma, rho):
    return zeta * (rho / (rho + gamma * mask))


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)

    @_jit
    def _nb_soft_threshold(t, tau):
        out = np.empty_like(t)
        for i in range(t.size):
            v = t[i]
            if v > tau:
                out[i] = v - tau
            elif v < -tau:
                out[i] = v + tau
            else:
                out[i] = 0.0
        return out

    @_jit
    def _nb_loss_prox(code, t, tau, delta):
        out = np.empty_like(t)
        for i in range(t.size):
            v = t[i]
            if v > 1.0:
                out[i] = v
            elif code == 0:
                out[i] = 1.0 if v >= 1.0 - tau else v + tau
            elif code == 1:
                out[i] = (v + 2.0 * tau) / (1.0 + 2.0 * tau)
            else:
                r = tau / delta
                if v >= 1.0 - delta - tau:
                    out[i] = (v + r) / (1.0 + r)
                else:
                    out[i] = v + tau
        return out

    @_jit
    def _nb_diff_forward(wt, lengths, strides):
        P = wt.size
        out = np.empty(12 * P)
        for a in range(6):
            L = lengths[a]
            s = strides[a]
            fo = 2 * a * P
            bo = fo + P
            if L == 1:
                # a periodic step along a length-1 axis returns to the same point
                out[fo:bo + P] = 0.0
                continue
            for o in range(0, P, L * s):
                for c in range(L):
                    base = o + c * s
                    fs = s if c < L - 1 else -(L - 1) * s
                    bs = -s if c > 0 else (L - 1) * s
                    for j in range(s):
                        i = base + j
                        out[fo + i] = wt[i + fs] - wt[i]
                        out[bo + i] = wt[i + bs] - wt[i]
        return out

    @_jit
    def _nb_diff_adjoint(z, lengths, strides):
        P = z.size // 12
        out = np.zeros(P)
        for a in range(6):
            L = lengths[a]
            s = strides[a]
            if L == 1:
                continue
            fo = 2 * a * P
            bo = fo + P
            for o in range(0, P, L * s):
                for c in range(L):
                    base = o + c * s
                    fs = s if c < L - 1 else -(L - 1) * s
                    bs = -s if c > 0 else (L - 1) * s
                    for j in range(s):
                        i = base + j
                        out[i] += (z[fo + i + bs] - z[fo + i]) + (z[bo + i + fs] - z[bo + i])
        return out

    @_jit
    def _nb_vc_fused(zeta, mask, thr):
        out = np.empty_like(zeta)
        for k in range(zeta.size):
            v = zeta[k]
            if mask[k]:
                if v > thr:
                    out[k] = v - thr
                elif v < -thr:
                    out[k] = v + thr
                else:
                    out[k] = 0.0
            else:
                out[k] = v
        return out

    @_jit
    def _nb_vc_graphnet(zeta, mask, gamma, rho):
        out = np.empty_like(zeta)
        shrink = rho / (rho + gamma)
        for k in range(zeta.size):
            out[k] = zeta[k] * shrink if mask[k] else zeta[k]
        return out


def _lengths_strides(shape):
    lengths = np.asarray(shape, dtype=np.int64)
    strides = np.ones(6, dtype=np.int64)
    for a in range(4, -1, -1):
        strides[a] = strides[a + 1] * lengths[a + 1]
    return lengths, strides


def nb_soft_threshold(t, tau):
    return _nb_soft_threshold(np.ascontiguousarray(t, dtype=np.float64), float(tau))


def nb_loss_prox(code, t, tau, delta):
    shape = np.shape(t)  # ascontiguousarray would promote a 0-d input to 1-d
    t = np.ascontiguousarray(t, dtype=np.float64).reshape(-1)
    return _nb_loss_prox(int(code), t, float(tau), float(delta)).reshape(shape)


def nb_diff_forward(wt, shape):
    lengths, strides = _lengths_strides(shape)
    return _nb_diff_forward(np.ascontiguousarray(wt, dtype=np.float64), lengths, strides)


def nb_diff_adjoint(z, shape):
    lengths, strides = _lengths_strides(shape)
    return _nb_diff_adjoint(np.ascontiguousarray(z, dtype=np.float64), lengths, strides)


def nb_vc_fused(zeta, mask, thr):
    return _nb_vc_fused(zeta, mask, float(thr))


def nb_vc_graphnet(zeta, mask, gamma, rho):
    return _nb_vc_graphnet(zeta, mask, float(gamma), float(rho))


NUMPY_KERNELS = {
    "soft_threshold": np_soft_threshold,
    "loss_prox": np_loss_prox,
    "diff_forward": np_diff_forward,
    "diff_adjoint": np_diff_adjoint,
    "vc_fused": np_vc_fused,
    "vc_graphnet": np_vc_graphnet,
}

NUMBA_KERNELS = {
    "soft_threshold": nb_soft_threshold,
    "loss_prox": nb_loss_prox,
    "diff_forward": nb_diff_forward,
    "diff_adjoint": nb_diff_adjoint,
    "vc_fused": nb_vc_fused,
    "vc_graphnet": nb_vc_graphnet,
} if HAVE_NUMBA else {}


def kernels(backend=None):
    """Return the kernel table for ``backend`` ('numba', 'numpy' or None=auto)."""
    if backend is None:
        backend = BACKEND
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return NUMBA_KERNELS
    if backend == "numpy":
        return NUMPY_KERNELS
    raise ValueError(f"unknown backend {backend!r}")


BACKEND = "numba" if (HAVE_NUMBA and _env_wants_numba()) else "numpy"
K = kernels(BACKEND)
