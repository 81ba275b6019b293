"""Backward-looking multistep derivative weights and their stability screening.

The k-step schemes approximate du/dt at t0 from samples u(t0), u(t0 + dt), ...,
u(t0 + k*dt).  The weights alpha_{k,i} solve a (k+1)x(k+1) Vandermonde system
whose right-hand side selects the first-derivative Taylor coefficient; they are
kept as exact rationals (the system is badly conditioned in floats already for
moderate k) and scaled by 1/dt only at use sites.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

MAX_STEPS = 8


@dataclass(frozen=True)
class MultistepCoeffs:
    """Derivative-approximation weights for a k-step scheme.

    ``scaled_alphas[i]`` is the dimensionless product alpha_{k,i} * dt; the
    true weights are recovered with :meth:`alphas`.
    """

    k: int
    scaled_alphas: tuple[Fraction, ...]

    def alphas(self, dt: float) -> np.ndarray:
        """Floating-point weights alpha_{k,i} for a concrete step size."""
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        return np.array([float(a) for a in self.scaled_alphas]) / dt


@dataclass(frozen=True)
class StabilityReport:
    """Root-condition verdict for a k-step scheme.

    ``roots`` are the characteristic roots; ``max_abs_nontrivial`` is the
    largest modulus after removing one instance of the root at 1, which every
    scheme has because the weights sum to zero.
    """

    k: int
    roots: tuple[complex, ...]
    max_abs_nontrivial: float
    stable: bool


def compute_coeffs(k: int) -> MultistepCoeffs:
    """Solve the Vandermonde system for the k-step derivative weights.

    Row j of the system imposes sum_i i^j * (alpha_{k,i} dt) = delta_{j1},
    j = 0..k, i.e. exactness of the derivative approximation on polynomials
    of degree up to k.  Solved in exact rational arithmetic.
    """
    if not isinstance(k, int) or isinstance(k, bool):
        raise ValueError(f"step count k must be an int, got {k!r}")
    if not 1 <= k <= MAX_STEPS:
        raise ValueError(f"step count k must be in [1, {MAX_STEPS}], got {k}")
    n = k + 1
    # Augmented matrix [V | e2] over Fraction, Gauss-Jordan elimination.
    rows = [
        [Fraction(i) ** j for i in range(n)] + [Fraction(1 if j == 1 else 0)]
        for j in range(n)
    ]
    for col in range(n):
        piv = next(r for r in range(col, n) if rows[r][col] != 0)
        rows[col], rows[piv] = rows[piv], rows[col]
        inv = rows[col][col]
        rows[col] = [v / inv for v in rows[col]]
        for r in range(n):
            if r != col and rows[r][col] != 0:
                factor = rows[r][col]
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[col])]
    return MultistepCoeffs(k=k, scaled_alphas=tuple(rows[j][n] for j in range(n)))


# Tolerances for the root condition: a root within UNIT_CIRCLE_TOL of the unit
# circle counts as on it and must then be simple (|P'| > SIMPLE_ROOT_TOL).
UNIT_CIRCLE_TOL = 1e-8
SIMPLE_ROOT_TOL = 1e-8


def stability_report(coeffs: MultistepCoeffs) -> StabilityReport:
    """Check the root condition for the scheme's characteristic polynomial.

    P(lambda) = sum_{j=0..k} alpha_{k,j} lambda^(k-j), evaluated with the
    dt-scaled weights (a common factor does not move roots).  Roots come from
    the companion-matrix eigenvalues of numpy.roots, ample for degree <= 8.
    """
    poly = np.array([float(a) for a in coeffs.scaled_alphas])
    roots = np.roots(poly)
    roots = roots[np.lexsort((roots.imag, roots.real))]

    modulus = np.abs(roots)
    on_circle = np.abs(modulus - 1.0) <= UNIT_CIRCLE_TOL
    deriv = np.polyder(poly)
    stable = bool(np.all(modulus <= 1.0 + UNIT_CIRCLE_TOL)) and all(
        abs(np.polyval(deriv, root)) > SIMPLE_ROOT_TOL
        for root in roots[on_circle]
    )

    drop = int(np.argmin(np.abs(roots - 1.0)))
    rest = np.delete(roots, drop)
    max_nontrivial = float(np.max(np.abs(rest))) if rest.size else 0.0
    return StabilityReport(
        k=coeffs.k,
        roots=tuple(complex(r) for r in roots),
        max_abs_nontrivial=max_nontrivial,
        stable=stable,
    )


def approx_derivative(samples, coeffs: MultistepCoeffs, dt: float):
    """Approximate du/dt at the first sample time.

    ``samples`` holds u(t0 + i*dt) for i = 0..k.  The result is exact for
    polynomials of degree <= k; vector-valued samples are combined
    componentwise.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    values = np.asarray(samples, dtype=float)
    if values.shape[0] != coeffs.k + 1:
        raise ValueError(
            f"expected {coeffs.k + 1} samples for k={coeffs.k}, got {values.shape[0]}"
        )
    scaled = np.array([float(a) for a in coeffs.scaled_alphas])
    result = np.tensordot(scaled, values, axes=(0, 0)) / dt
    return float(result) if result.ndim == 0 else result
