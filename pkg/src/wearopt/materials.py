"""Constitutive models: bi-material interpolation for the design field,
bi-modal clutch modulus, and the compressible neo-Hookean membrane with
tension-field (wrinkling) relaxation.

The membrane energy density is expressed through the principal stretches
(l1 >= l2) of the 3x2 deformation gradient:

    W = mu/2 (l1^2 + l2^2 - 2 - 2 ln(l1 l2)) + lam/2 ln^2(l1 l2)

with mu = Y / (2 (1 + nu)) and lam = Y nu / ((1 + nu)(1 - 2 nu)). The
relaxed variant replaces the energy by its tension-field envelope:

    slack    l1 <= 1                 -> W = 0
    wrinkled dW/dl2 < 0 at (l1, l2)  -> W evaluated at the natural width
                                        stretch l2*(l1) with dW/dl2 = 0
    taut     otherwise               -> full model

Both branch boundaries are first-order continuous: at the taut/wrinkled
boundary dW/dl2 vanishes by definition, and at l1 = 1 the wrinkled branch
meets the slack branch with zero slope.
"""

from dataclasses import dataclass

import numpy as np


class NumericError(FloatingPointError):
    """Non-finite value encountered in a constitutive evaluation."""


@dataclass
class MaterialParams:
    """Material constants; defaults match the standard garment setup."""

    Y_cloth: float = 0.5e6
    Y_reinforced: float = 0.5e9
    Y_stiff: float = 3.0e9
    nu: float = 0.33
    p: float = 1.6
    thickness: float = 5e-4

    def validate(self):
        if not (0.0 < self.Y_cloth <= self.Y_reinforced <= self.Y_stiff):
            raise ValueError("moduli must satisfy 0 < Y_cloth <= Y_reinforced <= Y_stiff")
        if not (0.0 <= self.nu < 0.5):
            raise ValueError("Poisson ratio must lie in [0, 0.5)")
        if self.p < 1.0:
            raise ValueError("interpolation exponent must be >= 1")
        if self.thickness <= 0.0:
            raise ValueError("thickness must be positive")


def lame_parameters(Y, nu):
    mu = Y / (2.0 * (1.0 + nu))
    lam = Y * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return mu, lam


def interpolate_garment_modulus(d, params):
    """Power-law modulus interpolation Y(d) = Y_cloth + d^p (Y_reinf - Y_cloth)."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0.0) or np.any(d > 1.0):
        raise ValueError("design value out of [0, 1]")
    return params.Y_cloth + d**params.p * (params.Y_reinforced - params.Y_cloth)


def clutch_modulus(gamma, params):
    """Linear blend between cloth (off) and stiff (on) moduli."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0.0) or np.any(gamma > 1.0):
        raise ValueError("activation out of [0, 1]")
    return gamma * params.Y_stiff + (1.0 - gamma) * params.Y_cloth


def _natural_width_stretch(l1, mu, lam, iters=40):
    """Solve mu (y^2 - 1) + lam ln(l1 y) = 0 for y (monotone, Newton)."""
    y = np.ones_like(l1)
    for _ in range(iters):
        h = mu * (y * y - 1.0) + lam * np.log(l1 * y)
        dh = 2.0 * mu * y + lam / y
        step = h / dh
        # the root lies in (0, 1]; keep the iterate there
        y = np.clip(y - step, 1e-4, 1.0)
        if np.max(np.abs(step)) < 1e-15:
            break
    return y


def membrane_energy_density(F, Y, nu, relaxed=True):
    """Energy density W (J/m^3) and dW/dF for a batch of elements.

    F may be a single 3x2 matrix or an (m, 3, 2) stack; Y likewise a
    scalar or per-element array. Returns (W, dW_dF) with matching shapes.
    """
    F = np.asarray(F, dtype=float)
    single = F.ndim == 2
    if single:
        F = F[None]
    if not np.all(np.isfinite(F)):
        raise NumericError("non-finite deformation gradient")
    Y = np.broadcast_to(np.asarray(Y, dtype=float), (len(F),))

    U, s, Vt = np.linalg.svd(F, full_matrices=False)
    l1, l2 = s[:, 0], s[:, 1]
    l1 = np.maximum(l1, 1e-12)
    l2 = np.maximum(l2, 1e-12)

    mu, lam = lame_parameters(Y, nu)

    def w_full(a, b):
        logj = np.log(a * b)
        return 0.5 * mu * (a * a + b * b - 2.0 - 2.0 * logj) + 0.5 * lam * logj**2

    def dw(a, b):
        # derivative with respect to the first stretch argument
        logj = np.log(a * b)
        return mu * (a - 1.0 / a) + lam * logj / a

    if relaxed:
        slack = l1 <= 1.0
        wrinkled = (~slack) & (mu * (l2 * l2 - 1.0) + lam * np.log(l1 * l2) < 0.0)
        l2_eff = np.where(wrinkled, _natural_width_stretch(np.maximum(l1, 1.0), mu, lam), l2)
        W = w_full(l1, l2_eff)
        g1 = dw(l1, l2_eff)
        g2 = np.where(wrinkled, 0.0, dw(l2_eff, l1))
        W = np.where(slack, 0.0, W)
        g1 = np.where(slack, 0.0, g1)
        g2 = np.where(slack, 0.0, g2)
    else:
        W = w_full(l1, l2)
        g1 = dw(l1, l2)
        g2 = dw(l2, l1)

    G = np.zeros_like(s)
    G[:, 0] = g1
    G[:, 1] = g2
    dW_dF = np.einsum("nij,nj,njk->nik", U, G, Vt)

    if single:
        return float(W[0]), dW_dF[0]
    return W, dW_dF
