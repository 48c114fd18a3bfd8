"""Closed-form interacting linear-response matrices and their consequences.

The renormalized velocity matrix v and coupling matrix Lambda are inputs
(the theory guarantees they exist but provides no computable series); with
lambda-linear defaults available for quick scans. All matrix functions of
the diagonal v act entrywise.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import NearSingular, NearSingularT, QuadratureFailure

COND_LIMIT = 1e12


@dataclass(frozen=True)
class ResponseMatrixSet:
    """Velocities, couplings, drive ratio and reference renormalizations."""

    v: np.ndarray          # diagonal entries, nonzero
    Lam: np.ndarray        # symmetric, zero diagonal
    a: float = 1.0         # theta / eta
    Z: np.ndarray = None   # positive diagonal entries (defaults to ones)

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        Lam = np.asarray(self.Lam, dtype=float)
        Z = np.ones_like(v) if self.Z is None else np.atleast_1d(np.asarray(self.Z, dtype=float))
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "Lam", Lam)
        object.__setattr__(self, "Z", Z)
        n = v.size
        if Lam.shape != (n, n):
            raise ValueError("Lambda must be Nf x Nf")
        if np.abs(Lam - Lam.T).max() > 1e-12:
            raise ValueError("Lambda must be symmetric")
        if np.abs(np.diag(Lam)).max() > 1e-12:
            raise ValueError("Lambda must have zero diagonal")
        if np.any(v == 0.0):
            raise ValueError("velocities must be nonzero")
        if np.any(Z <= 0.0):
            raise ValueError("Z must be positive")
        if self.a <= 0.0:
            raise ValueError("a = theta/eta must be positive")
        gauge = np.linalg.norm(Lam, 2) / (4.0 * np.pi * np.abs(v).min())
        if gauge >= 1.0:
            raise ValueError(
                f"coupling too strong: ||Lambda||/(4 pi min|v|) = {gauge:.3f} >= 1"
            )

    @property
    def Nf(self):
        return self.v.size


def default_matrices(coupling, free_velocities, a=1.0):
    """lambda-linear defaults: Lambda_ww' = coupling off-diagonal, free v."""
    v = np.asarray(free_velocities, dtype=float)
    n = v.size
    Lam = coupling * (np.ones((n, n)) - np.eye(n))
    return ResponseMatrixSet(v=v, Lam=Lam, a=a)


def _guarded_inv(A, exc=NearSingularT):
    if np.linalg.cond(A) > COND_LIMIT:
        raise exc(f"condition number {np.linalg.cond(A):.2e} exceeds {COND_LIMIT:.0e}")
    return np.linalg.inv(A)


def k_tilde(rset, q):
    """Dressing matrix (1 - Lam/(4pi|v|)) (1 + frac(q) Lam/(4pi|v|))^(-1).

    frac(q) = (i/a + v q)/(-i/a + v q) acts as a diagonal matrix on the left
    of Lambda, as does 1/(4pi|v|).
    """
    v, Lam, a = rset.v, rset.Lam, rset.a
    absv = np.abs(v)
    pre = np.eye(rset.Nf) - (1.0 / (4 * np.pi * absv))[:, None] * Lam
    frac = (1j / a + v * q) / (-1j / a + v * q)
    inner = np.eye(rset.Nf) + (frac / (4 * np.pi * absv))[:, None] * Lam
    return pre @ _guarded_inv(inner)


def k_frak(rset, nu):
    """Identity for nu=0; sgn(v) (1 + Lam/(4pi|v|)) (1 - Lam/(4pi|v|))^(-1) sgn(v)."""
    if nu == 0:
        return np.eye(rset.Nf)
    v, Lam = rset.v, rset.Lam
    absv = np.abs(v)
    sg = np.diag(np.sign(v))
    plus = np.eye(rset.Nf) + (1.0 / (4 * np.pi * absv))[:, None] * Lam
    minus = np.eye(rset.Nf) - (1.0 / (4 * np.pi * absv))[:, None] * Lam
    return sg @ plus @ _guarded_inv(minus) @ sg


def k_nu(rset, q, nu):
    """Response matrix K^nu(q) = Ktilde (v^nu/(2pi|v|)) (vq/(-i/a+vq)) Kfrak^nu."""
    v, a = rset.v, rset.a
    absv = np.abs(v)
    vnu = np.ones(rset.Nf) if nu == 0 else v
    mid = vnu / (2 * np.pi * absv) * (v * q) / (-1j / a + v * q)
    return k_tilde(rset, q) @ np.diag(mid) @ k_frak(rset, nu)


def two_chirality_closed_forms(v_star, lambda_star, q, a=1.0):
    """Entry sums of K^0 and K^1 for two counterpropagating chiralities.

    The a=1 expressions with q replaced by a q:
      sum K^0 = (1/(pi v*)) r (v*^2 q^2)/(1 + v*^2 q^2),
      sum K^1 = (1/pi)     r (i v* q)/(1 + v*^2 q^2),
    with r = (4 pi v* - lambda*)/(4 pi v* + lambda*).
    """
    if abs(lambda_star) >= 4 * np.pi * v_star:
        raise ValueError("requires |lambda*| < 4 pi v*")
    aq = a * q
    r = (4 * np.pi * v_star - lambda_star) / (4 * np.pi * v_star + lambda_star)
    s0 = (1.0 / (np.pi * v_star)) * r * (v_star ** 2 * aq ** 2) / (1.0 + v_star ** 2 * aq ** 2)
    s1 = (1.0 / np.pi) * r * (1j * v_star * aq) / (1.0 + v_star ** 2 * aq ** 2)
    return s0, s1


def chi_lin(rset, x, theta, nu, mu_hat, support=1.0, tol=1e-10):
    """Continuum linear-response profile by adaptive quadrature on the support.

    chi(x) = -int mu_hat(q) e^{i theta q x} sum_entries K^nu(q) dq / 2pi.
    Returns (value, abserr); raises QuadratureFailure if the estimated
    absolute error exceeds `tol`.
    """
    ones = np.ones(rset.Nf)

    def integrand_re(q):
        val = mu_hat(q) * np.exp(1j * theta * q * x) * (ones @ k_nu(rset, q, nu) @ ones)
        return val.real

    def integrand_im(q):
        val = mu_hat(q) * np.exp(1j * theta * q * x) * (ones @ k_nu(rset, q, nu) @ ones)
        return val.imag

    total = 0.0
    err = 0.0
    for f in (integrand_re, integrand_im):
        # split at q = 0: the entry sums are only piecewise smooth there
        for (lo, hi) in ((-support, 0.0), (0.0, support)):
            val, e = quad(f, lo, hi, epsabs=tol * 1e-2, epsrel=1e-12, limit=400)
            if f is integrand_re:
                total += val
            err += e
    if err > tol:
        raise QuadratureFailure(f"estimated quadrature error {err:.2e} > {tol:.0e}")
    return -total / (2 * np.pi), err


def vertex_renormalizations(v, Lam, Z):
    """Reference vertex couplings fixed by the lattice Ward identities.

    Zvec_mu = [1 - (-1)^mu Lam_Z^T (4 pi |v|)^(-1)] v_mu Zvec, with
    Lam_Z = Z^(-1) Lam Z and v_0 = 1, v_1 = v. Requires the two dressing
    matrices 1 -+ Lam_Z^T/(4 pi |v|) to be well-conditioned.
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    Z = np.atleast_1d(np.asarray(Z, dtype=float))
    Lam = np.asarray(Lam, dtype=float)
    absv = np.abs(v)
    LamZ = (Lam / Z[:, None]) * Z[None, :]   # Z^-1 Lam Z
    out = []
    for mu in (0, 1):
        Amat = np.eye(v.size) - (-1.0) ** mu * LamZ.T * (1.0 / (4 * np.pi * absv))[None, :]
        _guarded_inv(np.eye(v.size) - (-1.0) ** mu * (1.0 / (4 * np.pi * absv))[:, None] * LamZ,
                     exc=NearSingular)
        vmu = np.ones(v.size) if mu == 0 else v
        out.append(Amat @ (vmu * Z))
    return out[0], out[1]
