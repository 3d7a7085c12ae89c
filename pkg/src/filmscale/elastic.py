"""Isotropic film energy: the 3-D density, its quadratic forms, and the
plane-stress reduction.

The concrete density is St. Venant-Kirchhoff,

    W(F) = (mu/4) |F^T F - I|^2 + (lam/8) tr(F^T F - I)^2,

which is frame indifferent, vanishes exactly on SO(3), grows quadratically in
the distance to SO(3) near the identity, and has the quadratic form

    Q3(F) = 2 mu |sym F|^2 + lam (tr F)^2

at the identity (W(I + tF) = (t^2/2) Q3(F) + O(t^3)).  Relaxing Q3 over the
out-of-plane entries of a 2x2 argument yields the plate form

    Q2(M) = 2 mu |sym M|^2 + (2 mu lam / (2 mu + lam)) (tr M)^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Material",
    "W",
    "energy_density",
    "q3",
    "q2",
    "q2_matrix",
    "sigma2",
    "complete_to_q2",
    "completion_closed",
]


@dataclass(frozen=True)
class Material:
    """Lame parameters; well-posedness needs mu > 0 and 2*mu + lam > 0."""

    mu: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if not (self.mu > 0 and 2 * self.mu + self.lam > 0):
            raise ValueError("Material: need mu > 0 and 2*mu + lam > 0")

    @property
    def lam_bar(self) -> float:
        """Plane-stress reduced modulus 2*mu*lam / (2*mu + lam)."""
        return 2 * self.mu * self.lam / (2 * self.mu + self.lam)

    @property
    def lam0(self) -> float:
        """Optimal 33-completion factor: F33 = -lam0 * tr(M)."""
        return self.lam / (2 * self.mu + self.lam)


def energy_density(F: np.ndarray, material: Material) -> np.ndarray:
    """W(F) for F of shape (..., 3, 3), vectorized over leading axes."""
    F = np.asarray(F, dtype=float)
    C = np.einsum("...ki,...kj->...ij", F, F) - np.eye(3)
    tr = np.trace(C, axis1=-2, axis2=-1)
    return (material.mu / 4.0) * np.sum(C * C, axis=(-2, -1)) + (material.lam / 8.0) * tr**2


W = energy_density


def q3(F: np.ndarray, material: Material) -> np.ndarray:
    """Q3(F) = 2 mu |sym F|^2 + lam (tr F)^2 for (..., 3, 3) arrays."""
    F = np.asarray(F, dtype=float)
    S = 0.5 * (F + np.swapaxes(F, -1, -2))
    tr = np.trace(F, axis1=-2, axis2=-1)
    return 2 * material.mu * np.sum(S * S, axis=(-2, -1)) + material.lam * tr**2


def q2(M: np.ndarray, material: Material) -> np.ndarray:
    """Plane-stress form Q2(M) for (..., 2, 2) arrays."""
    M = np.asarray(M, dtype=float)
    S = 0.5 * (M + np.swapaxes(M, -1, -2))
    tr = np.trace(M, axis1=-2, axis2=-1)
    return 2 * material.mu * np.sum(S * S, axis=(-2, -1)) + material.lam_bar * tr**2


def q2_matrix(material: Material) -> np.ndarray:
    """3x3 Gram matrix of Q2 on upper-triangle triples (t11, t12, t22)."""
    mu, lb = material.mu, material.lam_bar
    return np.array(
        [
            [2 * mu + lb, 0.0, lb],
            [0.0, 4 * mu, 0.0],
            [lb, 0.0, 2 * mu + lb],
        ]
    )


def sigma2(E: np.ndarray, material: Material) -> np.ndarray:
    """Plane-stress stress 2 mu E + lam_bar tr(E) I for (..., 2, 2) strains."""
    E = np.asarray(E, dtype=float)
    tr = np.trace(E, axis1=-2, axis2=-1)
    out = 2 * material.mu * E.copy()
    out[..., 0, 0] += material.lam_bar * tr
    out[..., 1, 1] += material.lam_bar * tr
    return out


def complete_to_q2(M: np.ndarray, material: Material) -> tuple[float, np.ndarray]:
    """Minimize Q3 over 3x3 extensions of the 2x2 block M.

    Solves the stationarity system in the five new entries
    (F13, F23, F31, F32, F33).  The system is only positive *semi*-definite --
    Q3 ignores the skew part of the completion -- so the minimum-norm
    least-squares solution is taken, which zeroes the skew part.  Returns
    (Q3 at the optimum, the completed 3x3 matrix); the value equals Q2(M).
    """
    M = np.asarray(M, dtype=float)
    if M.shape != (2, 2):
        raise ValueError("complete_to_q2 expects a single 2x2 block")
    mu, lam = material.mu, material.lam
    trM = M[0, 0] + M[1, 1]
    # variables x = (F13, F23, F31, F32, F33); grad Q3 / 2:
    #   d/dF13: 2 mu (F13 + F31)/2 = mu (F13 + F31)   (same for F31)
    #   d/dF33: 2 mu F33 + lam (tr M + F33)
    A = np.array(
        [
            [mu, 0, mu, 0, 0],
            [0, mu, 0, mu, 0],
            [mu, 0, mu, 0, 0],
            [0, mu, 0, mu, 0],
            [0, 0, 0, 0, 2 * mu + lam],
        ]
    )
    b = np.array([0.0, 0.0, 0.0, 0.0, -lam * trM])
    x = np.linalg.lstsq(A, b, rcond=None)[0]
    F = np.zeros((3, 3))
    F[:2, :2] = M
    F[0, 2], F[1, 2], F[2, 0], F[2, 1], F[2, 2] = x
    return float(q3(F, material)), F


def completion_closed(M: np.ndarray, material: Material) -> np.ndarray:
    """Closed form of the optimal extension: borders 0, F33 = -lam0 tr(M)."""
    M = np.asarray(M, dtype=float)
    F = np.zeros(M.shape[:-2] + (3, 3))
    F[..., :2, :2] = M
    F[..., 2, 2] = -material.lam0 * (M[..., 0, 0] + M[..., 1, 1])
    return F
