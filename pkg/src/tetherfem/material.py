"""Multi-well strain energy, interpenetration penalties, and derivatives.

The bulk law is the isotropic multi-well energy
    W(F) = (5 I1^3 - 9 I1^2 - 12 I1 J^2 + 12 J^2 + 8) / 96,
with I1 = tr(F^T F) and J = det F, obtained by averaging the fiber law
    Wbar(lam) = lam^6/6 - lam^4/4 + 1/12
over fiber directions. Interpenetration is discouraged by an exponential
penalty exp(a (b - J)) (defaults a=60, b=0.21) or a polynomial one
C0 |F|^(2 m0). All derivatives are analytic; finite differences appear
only as test oracles.

Functions accept a single 2x2 array, a batch (..., 2, 2), or a DefGrad.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PENALTY_NONE = "none"
PENALTY_EXPONENTIAL = "exponential"
PENALTY_POLYNOMIAL = "polynomial"

# exp() argument cap; prevents overflow while line searches probe wildly
# inverted states. Clamping events are counted, never silent.
EXP_CLAMP = 700.0


@dataclass(frozen=True)
class DefGrad:
    """A deformation gradient with its derived invariants."""

    F: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", np.asarray(self.F, dtype=float))
        if self.F.shape[-2:] != (2, 2):
            raise ValueError("deformation gradient must be 2x2")

    @property
    def I1(self):
        return i1(self.F)

    @property
    def J(self):
        return det2(self.F)


@dataclass(frozen=True)
class MaterialModel:
    """Strain-energy plus penalty selection with parameters."""

    penalty: str = PENALTY_EXPONENTIAL
    pen_a: float = 60.0
    pen_b: float = 0.21
    pen_c0: float = 1.0
    pen_m0: int = 2

    def __post_init__(self):
        if self.penalty not in (PENALTY_NONE, PENALTY_EXPONENTIAL,
                                PENALTY_POLYNOMIAL):
            raise ValueError(f"unknown penalty kind {self.penalty!r}")


def _as_F(F):
    if isinstance(F, DefGrad):
        return F.F
    F = np.asarray(F, dtype=float)
    if F.shape[-2:] != (2, 2):
        raise ValueError("deformation gradient must be 2x2")
    return F


def i1(F):
    F = _as_F(F)
    return np.einsum("...ij,...ij->...", F, F)


def det2(F):
    F = _as_F(F)
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def cof2(F):
    """Cofactor matrix: d(det F)/dF."""
    F = _as_F(F)
    c = np.empty_like(F)
    c[..., 0, 0] = F[..., 1, 1]
    c[..., 0, 1] = -F[..., 1, 0]
    c[..., 1, 0] = -F[..., 0, 1]
    c[..., 1, 1] = F[..., 0, 0]
    return c


def strain_energy(F):
    F = _as_F(F)
    I1 = i1(F)
    J = det2(F)
    return (5.0 * I1**3 - 9.0 * I1**2 - 12.0 * I1 * J**2 + 12.0 * J**2 + 8.0) / 96.0


def strain_energy_dF(F):
    F = _as_F(F)
    I1 = i1(F)
    J = det2(F)
    a = (15.0 * I1**2 - 18.0 * I1 - 12.0 * J**2) * 2.0
    b = 24.0 * J * (1.0 - I1)
    return (a[..., None, None] * F + b[..., None, None] * cof2(F)) / 96.0


def penalty(F, model: MaterialModel):
    val, _ = penalty_with_flag(F, model)
    return val


def penalty_with_flag(F, model: MaterialModel):
    """Penalty values and the number of clamped exponents."""
    F = _as_F(F)
    if model.penalty == PENALTY_NONE:
        return np.zeros(F.shape[:-2]), 0
    if model.penalty == PENALTY_EXPONENTIAL:
        expo = model.pen_a * (model.pen_b - det2(F))
        clamped = expo > EXP_CLAMP
        return np.exp(np.minimum(expo, EXP_CLAMP)), int(np.count_nonzero(clamped))
    nrm2 = i1(F)
    return model.pen_c0 * nrm2 ** model.pen_m0, 0


def penalty_dF(F, model: MaterialModel):
    F = _as_F(F)
    if model.penalty == PENALTY_NONE:
        return np.zeros_like(F)
    if model.penalty == PENALTY_EXPONENTIAL:
        expo = np.minimum(model.pen_a * (model.pen_b - det2(F)), EXP_CLAMP)
        return (-model.pen_a * np.exp(expo))[..., None, None] * cof2(F)
    nrm2 = i1(F)
    m0 = model.pen_m0
    return (2.0 * m0 * model.pen_c0 * nrm2 ** (m0 - 1))[..., None, None] * F


def fiber_energy(lam):
    """One-dimensional fiber law; double well with minima 0 at lam = +-1."""
    lam = np.asarray(lam, dtype=float)
    return lam**6 / 6.0 - lam**4 / 4.0 + 1.0 / 12.0


def angular_average_energy(lam1, lam2, n_theta: int = 512):
    """Average of the fiber law over fiber directions for a stretch state
    diag(lam1, lam2); converges spectrally to strain_energy(diag(...))."""
    if n_theta < 8:
        raise ValueError("n_theta must be >= 8")
    th = 2.0 * np.pi * np.arange(n_theta) / n_theta
    lam = np.sqrt((lam1 * np.cos(th)) ** 2 + (lam2 * np.sin(th)) ** 2)
    return float(np.mean(fiber_energy(lam)))


def coercivity_margin(F, bound: str = "halved"):
    """W(F) minus the quadratic lower bound.

    bound="halved" uses |F|^2 / 2 - 19/12 (the bound the fiber-averaging
    argument actually yields; tight at diag(sqrt2, sqrt2)). bound="literal"
    uses |F|^2 - 19/12, which fails at F = identity and is kept only as a
    documented discrepancy check.
    """
    F = _as_F(F)
    nrm2 = i1(F)
    if bound == "halved":
        return strain_energy(F) - (0.5 * nrm2 - 19.0 / 12.0)
    if bound == "literal":
        return strain_energy(F) - (nrm2 - 19.0 / 12.0)
    raise ValueError(f"unknown bound {bound!r}")


def coercivity_scan(n_samples: int, bound: str = "halved"):
    """Worst margin of the quadratic lower bound over diagonal stretches
    diag(lam1, lam2) with lam_i on an n_samples-point grid in [-4, 4]."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    lam = np.linspace(-4.0, 4.0, n_samples)
    l1, l2 = np.meshgrid(lam, lam, indexing="ij")
    F = np.zeros(l1.shape + (2, 2))
    F[..., 0, 0] = l1
    F[..., 1, 1] = l2
    return float(np.min(coercivity_margin(F, bound=bound)))
