"""Exact Euclidean correlators of the lambda=0 theory at finite beta, L.

The two-point density/current bubble is pole-summed (Fermi functions, no
frequency truncation); the m >= 3 single-loop correlators use a truncated
fermionic Matsubara sum with an analytic large-frequency tail correction.
"""
from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.special import zeta

from . import _kernels
from .errors import CutoffTooLow, SingularPropagator
from .lattice import current_vertex

LOOP_SIGN = -1.0  # one overall minus per fermion loop; validated against ED


def fermi_weight(x):
    """Stable logistic 1/(1+e^x)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x > 0
    out[pos] = np.exp(-x[pos]) / (1.0 + np.exp(-x[pos]))
    out[~pos] = 1.0 / (1.0 + np.exp(x[~pos]))
    return out if out.shape else float(out)


@dataclass(frozen=True)
class MatsubaraGrid:
    """Discrete frequency/momentum grid at inverse temperature beta, size L.

    Fermionic frequencies (2pi/beta)(Z + 1/2) are kept while the scaled
    cutoff profile chi(2^-N0 k0) is nonzero, i.e. |k0| < (3/2) 2^N0.
    """

    beta: float
    L: int
    N0: int

    @property
    def spacing(self):
        return 2.0 * np.pi / self.beta

    @property
    def k0_max(self):
        return 1.5 * 2.0 ** self.N0

    def fermionic(self):
        h = self.spacing
        n = int(np.floor(self.k0_max / h - 0.5))
        idx = np.arange(-n - 1, n + 1)
        k0 = h * (idx + 0.5)
        return k0[np.abs(k0) < self.k0_max]

    def bosonic(self):
        h = self.spacing
        n = int(np.floor(self.k0_max / h))
        return h * np.arange(-n, n + 1)

    def momenta(self):
        return 2.0 * np.pi * np.arange(self.L) / self.L


def free_propagator(ham, mu, k0, k1, cond_limit=1e14):
    """g(k) = (i k0 + H(k1) - mu)^(-1), with a conditioning guard."""
    A = 1j * k0 * np.eye(ham.M) + ham.bloch(k1) - mu * np.eye(ham.M)
    if np.linalg.cond(A) > cond_limit:
        raise SingularPropagator(f"(k0, k1) = ({k0}, {k1}) too close to a pole")
    g = np.linalg.inv(A)
    resid = np.abs(A @ g - np.eye(ham.M)).max()
    if resid > 1e-12:
        raise SingularPropagator(f"inversion residual {resid:.2e} at ({k0}, {k1})")
    return g


def wick_determinant(ham, mu, beta, L, minus_fields, plus_fields):
    """Gaussian expectation of prod_i psi^-(k_i, rho_i) psi^+(p_i, rho'_i).

    Kernel K = beta L delta_{k,p} g_{rho rho'}(k); fields are (k0, k1, rho)
    triples. Equal counts of +/- fields required.
    """
    if len(minus_fields) != len(plus_fields):
        raise ValueError("need equally many psi^- and psi^+ fields")
    n = len(minus_fields)
    K = np.zeros((n, n), dtype=complex)
    for i, (k0, k1, rho) in enumerate(minus_fields):
        g = free_propagator(ham, mu, k0, k1)
        for j, (q0, q1, rhop) in enumerate(plus_fields):
            if abs(k0 - q0) < 1e-12 and abs((k1 - q1 + np.pi) % (2 * np.pi) - np.pi) < 1e-12:
                K[i, j] = beta * L * g[rho, rhop]
    return complex(np.linalg.det(K))


def _band_data(ham, mu, beta, L):
    ks = 2.0 * np.pi * np.arange(L) / L
    M = ham.M
    evals = np.empty((L, M))
    evecs = np.empty((L, M, M), dtype=complex)
    for i, k in enumerate(ks):
        w, v = np.linalg.eigh(ham.bloch(k))
        evals[i] = w
        evecs[i] = v
    return ks, evals - mu, evecs


def density_current_bubble(ham, mu, beta, L, p0, p1, nu=0):
    """(1/(beta L)) <T n_p ; j_nu,-p> at lambda=0, p = (p0, p1) bosonic.

    Pole-summed closed form over Bloch eigenstates and Fermi functions; the
    only remaining sum is over the L lattice momenta.
    """
    _check_bosonic(p0, beta)
    ks, xi, vec = _band_data(ham, mu, beta, L)
    M = ham.M
    shift = int(round(p1 / (2 * np.pi / L))) % L
    if abs(p1 - 2 * np.pi * shift / L) > 1e-9 and abs(p1 - 2 * np.pi * (shift - L) / L) > 1e-9:
        raise ValueError("p1 must lie on the 2pi/L momentum grid")
    xim = np.roll(xi, shift, axis=0)       # xi(k - p1)
    vecm = np.roll(vec, shift, axis=0)
    f = fermi_weight(beta * xi)
    fm = fermi_weight(beta * xim)
    total = 0.0 + 0.0j
    for i, k in enumerate(ks):
        J = current_vertex(ham, nu, k - p1, -p1)
        # overlap[a, b] = <u_a(k-p1)|u_b(k)>, vert[b, a] = <u_b(k)|J|u_a(k-p1)>
        overlap = vecm[i].conj().T @ vec[i]
        vert = vec[i].conj().T @ J @ vecm[i]
        for a in range(M):
            for b in range(M):
                dE = xim[i, a] - xi[i, b]
                den = dE - 1j * p0
                num = f[i, b] - fm[i, a]
                w = overlap[a, b] * vert[b, a]
                if abs(den) > 1e-12:
                    total += w * num / den
                elif abs(p0) < 1e-12:
                    total += w * beta * f[i, b] * (1.0 - f[i, b])
    return total / L


def _check_bosonic(p0, beta, tol=1e-9):
    r = p0 * beta / (2 * np.pi)
    if abs(r - round(r)) > tol:
        raise ValueError(f"p0 = {p0} is not a bosonic Matsubara frequency at beta = {beta}")


def bandwidth(ham, ngrid=512):
    ks = np.linspace(0, 2 * np.pi, ngrid, endpoint=False)
    w = np.array([np.linalg.eigvalsh(ham.bloch(k)) for k in ks])
    return float(w.max() - w.min())


def default_cutoff_exponent(ham, momenta):
    """Smallest N0 with (3/2) 2^N0 >= 100 max(|p_i0|, bandwidth)."""
    pmax = max(abs(p[0]) for p in momenta) if momenta else 0.0
    target = 100.0 * max(pmax, bandwidth(ham))
    return int(np.ceil(np.log2(target / 1.5)))


def m_point_density_loop(ham, mu, beta, L, momenta, nu=0, N0=None,
                         tail_orders=3, tail_limit=0.10):
    """Connected m-point density(/current) loop at lambda=0, normalized by beta L.

    momenta: the m-1 density momenta (p0, p1), each p0 a bosonic frequency;
    the last insertion carries p_m = -sum p_i and the nu vertex. The value is
    the sum over the (m-1)! cyclic orderings of single-fermion-loop ring sums
    with frequency cutoff (3/2) 2^N0 plus an analytic 1/k0 tail.

    Returns (value, tail_estimate). Raises CutoffTooLow if the tail
    correction exceeds `tail_limit` of the value.
    """
    m = len(momenta) + 1
    if m < 3:
        raise ValueError("m >= 3 required; use density_current_bubble for m = 2")
    for (p0, _) in momenta:
        _check_bosonic(p0, beta)
    if N0 is None:
        N0 = default_cutoff_exponent(ham, momenta)
    grid = MatsubaraGrid(beta=beta, L=L, N0=N0)
    dq = 2.0 * np.pi / L
    pm = (-sum(p[0] for p in momenta), -sum(p[1] for p in momenta))
    if ham.M != 1:
        return _loop_generic(ham, mu, grid, momenta, pm, nu)

    ks, xi, _ = _band_data(ham, mu, beta, L)
    xi = xi[:, 0]
    h = grid.spacing
    n0 = int(np.floor(grid.k0_max / h - 0.5)) + 1
    # vertex of the current insertion: J_nu(k + p_m, p_m) as a function of k1
    Jm = np.array(
        [current_vertex(ham, nu, k + pm[1], pm[1])[0, 0] for k in ks],
        dtype=complex,
    )
    total = 0.0 + 0.0j
    tail_total = 0.0 + 0.0j
    # the kernel sums indices [-n0, n0); first excluded frequency is h(n0+1/2)
    S = _tail_sums_from_index(beta, n0, m + tail_orders)
    for rest in permutations(momenta):
        # legs carry k - Q_j, Q_0 = 0, Q_j = partial sums of the ordering
        q0s = [0.0]
        q1s = [0.0]
        s0 = s1 = 0.0
        for (a0, a1) in rest:
            s0 += a0
            s1 += a1
            q0s.append(s0)
            q1s.append(s1)
        u0s = np.array([-q for q in q0s])
        xis = np.stack([np.roll(xi, int(round(q / dq))) for q in q1s])
        # roll(xi, n)[i] = xi[i - n] = xi(k - n dq) -> xi(k - Q1)
        total += _kernels.lattice_ring_sum(h, n0, u0s, xis, Jm)
        # analytic tail: prod_j 1/(i k0 + c_j), c_j = xi_j + i u0s[j]
        cs = xis + 1j * u0s[:, None]
        tail_total += _ring_tail(cs, Jm, S, m, tail_orders)
    value = LOOP_SIGN * (total + tail_total) / (beta * L)
    tail = abs(tail_total) / (beta * L)
    if abs(value) > 0 and tail > tail_limit * abs(value):
        raise CutoffTooLow(
            f"tail correction {tail:.3e} exceeds {tail_limit:.0%} of |value| = {abs(value):.3e};"
            " raise N0"
        )
    return value, tail


def _tail_sums_from_index(beta, n0, smax):
    h = 2.0 * np.pi / beta
    out = {}
    for s in range(2, smax + 1):
        c = 2.0 * np.cos(np.pi * s / 2.0)
        out[s] = 0.0 if abs(c) < 1e-15 else c * h ** (-s) * zeta(s, n0 + 0.5)
    return out


def _ring_tail(cs, vert, S, m, orders):
    """Tail of sum_k0 prod_j (i k0 + c_j)^{-1} via homogeneous symmetric sums."""
    p1 = cs.sum(axis=0)
    p2 = (cs ** 2).sum(axis=0)
    p3 = (cs ** 3).sum(axis=0)
    h = [np.ones_like(p1), p1, (p1 ** 2 + p2) / 2.0,
         (p1 ** 3 + 3 * p1 * p2 + 2 * p3) / 6.0]
    tail = np.zeros_like(p1)
    for r in range(0, orders + 1):
        s = m + r
        if s in S and S[s] != 0.0:
            tail = tail + ((-1.0) ** r) * h[r] * S[s]
    return (tail * vert).sum()


def _loop_generic(ham, mu, grid, momenta, pm, nu):
    """Matrix-valued ring sum for M > 1 (no tail correction; small systems)."""
    beta, L = grid.beta, grid.L
    ks = grid.momenta()
    k0s = grid.fermionic()
    total = 0.0 + 0.0j
    for rest in permutations(momenta):
        q0s = [0.0]
        q1s = [0.0]
        s0 = s1 = 0.0
        for (a0, a1) in rest:
            s0 += a0
            s1 += a1
            q0s.append(s0)
            q1s.append(s1)
        for i, k in enumerate(ks):
            J = current_vertex(ham, nu, k + pm[1], pm[1])
            hs = [ham.bloch(k - q1) - mu * np.eye(ham.M) for q1 in q1s]
            for k0 in k0s:
                prod = J
                for (q0, hmat) in zip(q0s, hs):
                    g = np.linalg.inv(1j * (k0 - q0) * np.eye(ham.M) + hmat)
                    prod = prod @ g
                total += np.trace(prod)
    return LOOP_SIGN * total / (beta * L), 0.0


def chi_lin_lattice(ham, mu, beta, L, eta_b, theta, nu, mu_hat):
    """Finite-lattice linear response profile from the pole-summed bubble.

    chi(x) = -(1/(theta L)) sum_p mu_hat(-p/theta) e^{-ipx} B_nu((eta_b, p)).
    mu_hat is the momentum profile of the slow potential (even, compactly
    supported); eta_b must be a positive bosonic frequency.
    """
    _check_bosonic(eta_b, beta)
    ps = 2.0 * np.pi * np.fft.fftfreq(L, d=1.0)
    x = np.arange(L)
    chi = np.zeros(L, dtype=complex)
    for p1 in ps:
        amp = mu_hat(np.array([-p1 / theta]))[0]
        if amp == 0.0:
            continue
        B = density_current_bubble(ham, mu, beta, L, eta_b, p1, nu)
        chi += -(amp / (theta * L)) * np.exp(-1j * p1 * x) * B
    if np.abs(chi.imag).max() > 1e-9:
        raise FloatingPointError("linear response profile acquired an imaginary part")
    return chi.real
