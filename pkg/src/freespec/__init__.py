"""freespec: spectral densities, outliers and eigenvector overlaps for
selfadjoint polynomials in spiked random matrix models.

The package predicts the limiting eigenvalue distribution of P(A_N, B_N) for a
selfadjoint noncommutative polynomial P, a deterministic spiked Hermitian
family A_N and an independent unitarily invariant (or Wigner) family B_N, by
solving an operator-valued subordination problem over a linearization pencil.
It also locates outlier eigenvalues with multiplicities and eigenvector-overlap
residues, and ships a finite-N Monte Carlo harness to validate the predictions.
"""

from .ncpoly import NCPolynomial, parse
from . import measures
from .linearize import linearize_selfadjoint, adopt_pencil, certify_pencil
from .subordination import FreeModel, solve_omega, continue_to_real
from .spectrum import density, scalar_cauchy_of_P
from .outliers import SpikeSet, detect, residues
from .rmt_sim import ModelSpec, run, run_many

__version__ = "0.1.0"
