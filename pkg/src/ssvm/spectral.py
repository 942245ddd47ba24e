"""FFT diagonalisation of ``Q = C~^T C~ + I`` on the periodic 6-D lattice.

``C~`` (see :func:`ssvm.connectome.apply_difference`) stacks periodic forward
and backward differences along each of the six axes, so ``C~^T C~`` is a sum
of circulant second differences and is diagonalised by the 6-D DFT.  Its
eigenvalue at frequency ``omega`` is ``sum_a 4 (1 - cos omega_a)``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .connectome import apply_difference, apply_difference_adjoint
from .exceptions import NumericalConsistencyError, StructuralError

IMAG_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SpectralKernel:
    """DFT eigenvalues ``phi`` of ``Q`` laid out as a 6-D array.

    ``phi.reshape(-1)`` is the diagonal of the eigenvalue matrix in the
    C-order enumeration of frequencies.
    """

    dims: tuple
    phi: np.ndarray
    workers: int = 1

    def __post_init__(self):
        # Real-input FFT along the longest axis halves the work; length-1
        # axes are left out since their transform is the identity.
        real_axis = int(np.argmax(self.dims))
        axes = tuple(a for a in range(6) if a != real_axis and self.dims[a] > 1) + (real_axis,)
        half = [slice(None)] * 6
        half[real_axis] = slice(0, self.dims[real_axis] // 2 + 1)
        object.__setattr__(self, "_axes", axes)
        object.__setattr__(self, "_inv_half_phi", 1.0 / self.phi[tuple(half)])

    @property
    def size(self):
        return int(self.phi.size)


def _shape6(geometry):
    return tuple(int(v) for v in getattr(geometry, "shape6", geometry))


def analytic_eigenvalues(shape6):
    """``1 + sum_a 4 (1 - cos(2 pi k_a / L_a))`` over the frequency lattice."""
    phi = np.ones(shape6)
    for a, L in enumerate(shape6):
        omega = 2.0 * np.pi * np.arange(L) / L
        sym = 4.0 * (1.0 - np.cos(omega))
        view = [1] * 6
        view[a] = L
        phi = phi + sym.reshape(view)
    return phi


def first_column_eigenvalues(shape6):
    """Eigenvalues from the DFT of ``Q``'s first column (``Q e_0``)."""
    P = int(np.prod(shape6))
    e0 = np.zeros(P)
    e0[0] = 1.0
    col = apply_difference_adjoint(apply_difference(e0, shape6), shape6) + e0
    spec = np.fft.fftn(col.reshape(shape6))
    scale = np.max(np.abs(spec.real))
    if np.max(np.abs(spec.imag)) > IMAG_TOL * scale:
        raise NumericalConsistencyError("Q first-column spectrum is not real")
    return spec.real.copy()


def build_kernel(geometry, workers=1):
    """Spectral kernel for a parcellation, augmentation map or 6-tuple shape."""
    shape6 = _shape6(geometry)
    phi = analytic_eigenvalues(shape6)
    phi.setflags(write=False)
    return SpectralKernel(dims=shape6, phi=phi, workers=int(workers))


def solve_laplacian(b, kernel):
    """Return ``x`` with ``(C~^T C~ + I) x = b`` via one forward and one inverse FFT."""
    b = np.asarray(b, dtype=np.float64)
    if b.size != kernel.size:
        raise StructuralError(f"expected {kernel.size} entries, got {b.size}")
    axes = kernel._axes
    b6 = b.reshape(kernel.dims)
    spec = scipy.fft.rfftn(b6, axes=axes, workers=kernel.workers)
    spec *= kernel._inv_half_phi
    x = scipy.fft.irfftn(spec, s=[kernel.dims[a] for a in axes], axes=axes,
                         workers=kernel.workers)
    return x.reshape(-1)


def apply_q(x, geometry):
    """``(C~^T C~ + I) x`` by explicit stencils (used for residual checks)."""
    return apply_difference_adjoint(apply_difference(x, geometry), geometry) + x
