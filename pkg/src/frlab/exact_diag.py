"""Brute-force Fock-space oracle for small chains.

All operators are built from Jordan-Wigner ladder matrices with the mode
order (x, rho) row-major; the Hamiltonian conserves particle number, so the
spectral decomposition is done per number sector. Identity checks (KMS,
Wick rotation, continuity, Ward) are evaluated in closed form in the
eigenbasis -- no numerical time quadrature anywhere.
"""
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh

from .errors import DimensionTooLarge, EtaNotMatsubara, StepControlFailure
from .lattice import current_vertex

MAX_MODES = 14
_EXP_GUARD = 600.0


def _popcount(arr):
    out = np.zeros(arr.shape, dtype=np.int64)
    v = arr.copy()
    while np.any(v):
        out += v & 1
        v >>= 1
    return out


@dataclass
class FockBasis:
    """Occupation-number basis for L sites with M internal labels."""

    L: int
    M: int = 1

    def __post_init__(self):
        self.n_modes = self.L * self.M
        if self.n_modes > MAX_MODES:
            raise DimensionTooLarge(
                f"L*M = {self.n_modes} exceeds the dense budget of {MAX_MODES} modes"
            )
        self.dim = 1 << self.n_modes
        self._lower = self._build_lowering()

    def mode(self, x, rho=0):
        return (x % self.L) * self.M + rho

    def _build_lowering(self):
        ops = []
        states = np.arange(self.dim, dtype=np.int64)
        for j in range(self.n_modes):
            occ = (states >> j) & 1
            src = states[occ == 1]
            dst = src & ~(1 << j)
            sign = 1.0 - 2.0 * (_popcount(src & ((1 << j) - 1)) % 2)
            ops.append(
                sp.csr_matrix((sign, (dst, src)), shape=(self.dim, self.dim))
            )
        return ops

    def a(self, x, rho=0):
        return self._lower[self.mode(x, rho)]

    def adag(self, x, rho=0):
        return self._lower[self.mode(x, rho)].conj().T.tocsr()

    def number_op(self):
        states = np.arange(self.dim, dtype=np.int64)
        return sp.diags(_popcount(states).astype(float)).tocsr()

    def quadratic(self, kernel):
        """Fock operator sum_{mn} kernel[m, n] a+_m a_n from a one-particle kernel."""
        out = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        kernel = np.asarray(kernel)
        for m in range(self.n_modes):
            for n in range(self.n_modes):
                if kernel[m, n] != 0.0:
                    out = out + kernel[m, n] * (self._lower[m].conj().T @ self._lower[n])
        return out

    def density(self, x):
        """Total density at site x (summed over internal labels)."""
        out = sp.csr_matrix((self.dim, self.dim), dtype=float)
        for rho in range(self.M):
            aj = self._lower[self.mode(x, rho)]
            out = out + (aj.conj().T @ aj).real
        return out

    def density_fourier(self, p):
        """n_p = sum_x e^{-ipx} n_x."""
        out = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for x in range(self.L):
            out = out + np.exp(-1j * p * x) * self.density(x)
        return out


def bond_current_kernel(model, L):
    """One-particle kernels of the lattice currents j_x through each cut (x, x+1).

    Returns an array J[x, m, n] with j_x = sum a+_m J[x, m, n] a_n; built from
    the bonds (y, y+d) crossing the cut, h = periodized hopping.
    """
    M = model.M
    h = model.dense(L)
    R = model.range
    J = np.zeros((L, L * M, L * M), dtype=complex)
    for x in range(L):
        for d in range(1, R + 1):
            for r in range(d):
                y = (x - r) % L
                z = (y + d) % L
                for ra in range(M):
                    for rb in range(M):
                        hyz = h[y * M + ra, z * M + rb]
                        J[x, y * M + ra, z * M + rb] += 1j * hyz
                        J[x, z * M + rb, y * M + ra] += -1j * np.conj(hyz)
    return J


@dataclass
class ManyBodyEnsemble:
    """Gibbs ensemble of the interacting chain, sector-blocked spectral data."""

    basis: FockBasis
    beta: float
    mu: float
    hamiltonian: sp.csr_matrix
    sectors: list = field(default_factory=list)  # (indices, E, V) per particle number

    @property
    def energies(self):
        return np.concatenate([E for (_, E, _) in self.sectors])

    def weights(self):
        E = self.energies
        w = np.exp(-self.beta * (E - E.min()))
        return w / w.sum()

    def gibbs_expectation(self, op):
        w = self.weights()
        total = 0.0
        i0 = 0
        opd = op.toarray() if sp.issparse(op) else np.asarray(op)
        for (idx, E, V) in self.sectors:
            block = V.conj().T @ opd[np.ix_(idx, idx)] @ V
            total += np.sum(w[i0:i0 + len(E)] * np.diag(block)).real
            i0 += len(E)
        return total

    def to_eigenbasis(self, op):
        """Same-sector blocks V+ O V of a number-conserving operator."""
        opd = op.toarray() if sp.issparse(op) else np.asarray(op)
        return [V.conj().T @ opd[np.ix_(idx, idx)] @ V for (idx, E, V) in self.sectors]


def interaction_matrix(potential, L):
    """Periodized translation-invariant two-body coefficients w(x - y) on the ring."""
    wraps = potential.range // L + 1
    W = np.zeros((L, L))
    for x in range(L):
        for y in range(L):
            d = x - y
            W[x, y] = sum(potential.w(d + n * L) for n in range(-wraps, wraps + 1))
    return W


def build_ensemble(model, L, beta, mu=None, coupling=None, potential=None):
    """Assemble H per the lattice Hamiltonian + density-density interaction,
    diagonalize K = H - mu N per particle-number sector.

    `model` is a lattice.Model (mu/coupling/potential may be overridden).
    """
    ham = model.hamiltonian
    mu = model.mu if mu is None else mu
    lam = model.coupling if coupling is None else coupling
    pot = model.potential if potential is None else potential
    basis = FockBasis(L=L, M=ham.M)
    dim = basis.dim
    h1 = ham.dense(L)
    H = basis.quadratic(h1)
    if lam != 0.0 and pot.values:
        W = interaction_matrix(pot, L)
        half = sp.identity(dim, format="csr") * 0.5
        dens = [basis.density(x) - half for x in range(L)]
        for x in range(L):
            for y in range(L):
                if W[x, y] != 0.0:
                    H = H + lam * W[x, y] * (dens[x] @ dens[y])
    N = basis.number_op()
    K = (H - mu * N).toarray()
    if np.abs(K - K.conj().T).max() > 1e-12:
        raise ValueError("assembled Hamiltonian is not Hermitian")
    states = np.arange(dim, dtype=np.int64)
    occ = _popcount(states)
    sectors = []
    for n in range(basis.n_modes + 1):
        idx = np.where(occ == n)[0]
        E, V = eigh(K[np.ix_(idx, idx)])
        sectors.append((idx, E, V))
    ens = ManyBodyEnsemble(
        basis=basis, beta=beta, mu=mu, hamiltonian=H.tocsr(), sectors=sectors
    )
    return ens


# ---------------------------------------------------------------------------
# Euclidean moments and cumulants
# ---------------------------------------------------------------------------

def _partitions(items):
    if len(items) == 1:
        yield [items]
        return
    first, rest = items[0], items[1:]
    for part in _partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def euclidean_moment(ens, ops, times):
    """<T gamma_t1(O_1) ... gamma_tn(O_n)> for even number-conserving operators.

    Times must be distinct points of [0, beta); evaluation is a matrix chain
    in the eigenbasis with nonpositive exponents throughout (stable for any
    beta). Coincident times are rejected rather than normal-ordered.
    """
    beta = ens.beta
    times = [float(t) for t in times]
    for t in times:
        if not (0.0 <= t < beta):
            raise ValueError("imaginary times must lie in [0, beta)")
    for i in range(len(times)):
        for j in range(i + 1, len(times)):
            if abs(times[i] - times[j]) < 1e-12:
                raise ValueError(
                    "coincident imaginary times are not supported "
                    "(normal-ordered branch deliberately unimplemented)"
                )
    order = sorted(range(len(times)), key=lambda i: -times[i])
    blocks = [ens.to_eigenbasis(ops[i]) for i in order]
    ts = [times[i] for i in order]
    w = ens.weights()
    Emin = ens.energies.min()
    total = 0.0 + 0.0j
    i0 = 0
    for s, (idx, E, V) in enumerate(ens.sectors):
        ns = len(E)
        Erel = E - Emin
        # chain: diag(e^{-(beta - t1) E}) O1 diag(e^{-(t1-t2) E}) ... On diag(e^{-tn E})
        gaps = [beta - ts[0]] + [ts[i] - ts[i + 1] for i in range(len(ts) - 1)] + [ts[-1]]
        chain = np.diag(np.exp(-gaps[0] * Erel))
        for i, blk in enumerate(blocks):
            chain = chain @ blk[s] @ np.diag(np.exp(-gaps[i + 1] * Erel))
        total += np.trace(chain)
        i0 += ns
    Z = np.sum(np.exp(-beta * (ens.energies - Emin)))
    return total / Z


def euclidean_cumulant(ens, ops, times):
    """Connected time-ordered correlation via the partition/Moebius relation."""
    n = len(ops)
    if n == 1:
        return euclidean_moment(ens, ops, times)
    idx = list(range(n))
    total = euclidean_moment(ens, ops, times)
    for part in _partitions(idx):
        if len(part) == 1:
            continue
        prod = 1.0 + 0.0j
        for block in part:
            prod *= euclidean_cumulant(
                ens, [ops[i] for i in block], [times[i] for i in block]
            )
        total -= prod
    return total


# ---------------------------------------------------------------------------
# identity checks
# ---------------------------------------------------------------------------

def _two_time_expectation(ens, A, B, t, s):
    """<gamma_t(A) gamma_s(B)> for number-conserving A, B; t, s real."""
    w = ens.weights()
    Emin = ens.energies.min()
    Ablk = ens.to_eigenbasis(A)
    Bblk = ens.to_eigenbasis(B)
    total = 0.0 + 0.0j
    i0 = 0
    for si, (idx, E, V) in enumerate(ens.sectors):
        ns = len(E)
        Erel = E - Emin
        expo = (t - s) * (Erel[:, None] - Erel[None, :])
        if np.max(expo - ens.beta * Erel[:, None]) > _EXP_GUARD:
            raise OverflowError("beta * bandwidth too large for stable evaluation")
        weight = np.exp(expo - ens.beta * Erel[:, None])
        total += np.sum(weight * Ablk[si] * Bblk[si].T)
        i0 += ns
    Z = np.sum(np.exp(-ens.beta * (ens.energies - Emin)))
    return total / Z


def kms_check(ens, A, B, t, s):
    """Cyclicity residual | <gamma_t(A) gamma_s(B)> - <gamma_{s+beta}(B) gamma_t(A)> |.

    Moving gamma_s(B) through the Gibbs factor advances its time by beta and
    puts it in front while A keeps its time t.
    """
    lhs = _two_time_expectation(ens, A, B, t, s)
    rhs = _two_time_expectation(ens, B, A, s + ens.beta, t)
    return abs(lhs - rhs)


def _check_eta(eta_b, beta):
    r = eta_b * beta / (2.0 * np.pi)
    if eta_b <= 0 or abs(r - round(r)) > 1e-9 or round(r) < 1:
        raise EtaNotMatsubara(
            f"eta = {eta_b} is not in (2 pi / beta) N_+ for beta = {beta}"
        )


def time_fourier_pair(ens, A, B, p0):
    """int_0^beta du e^{-i p0 u} <gamma_u(A) B>_c, p0 a bosonic frequency.

    Closed form: sum_ab A_ab B_ba (w_b - w_a) / (E_a - E_b - i p0), with the
    static (p0 = 0) degenerate part beta w_a A_ab B_ba on E_a = E_b after
    subtracting the disconnected piece.
    """
    beta = ens.beta
    w = ens.weights()
    Ablk = ens.to_eigenbasis(A)
    Bblk = ens.to_eigenbasis(B)
    total = 0.0 + 0.0j
    i0 = 0
    static = abs(p0) < 1e-12
    for si, (idx, E, V) in enumerate(ens.sectors):
        ns = len(E)
        ws = w[i0:i0 + ns]
        dE = E[:, None] - E[None, :]
        den = dE - 1j * p0
        num = ws[None, :] - ws[:, None]  # w_b - w_a at (a, b)
        AB = Ablk[si] * Bblk[si].T       # A_ab B_ba
        mask = np.abs(den) > 1e-12
        total += np.sum(AB[mask] * num[mask] / den[mask])
        if static:
            a_idx, b_idx = np.where(~mask)
            total += beta * np.sum(ws[a_idx] * AB[~mask])
        i0 += ns
    if static:
        meanA = ens.gibbs_expectation(A)
        meanB = ens.gibbs_expectation(B)
        total -= beta * meanA * meanB
    return total


def density_threepoint(ens, momenta):
    """(1/(beta L)) <T n_p1; n_p2; n_p3> with all insertions time-integrated.

    momenta: three (p0, p1) pairs summing to zero with every p0 a nonzero
    bosonic frequency (then the disconnected pieces integrate to zero and
    the cumulant equals the moment). Closed-form double ordered integrals
    in the eigenbasis.
    """
    (a0, a1), (b0, b1), (c0, c1) = momenta
    if abs(a0 + b0 + c0) > 1e-9 or abs((a1 + b1 + c1 + np.pi) % (2 * np.pi) - np.pi) > 1e-9:
        raise ValueError("momenta must sum to zero (spatial part mod 2 pi)")
    for p0 in (a0, b0, c0):
        _check_eta(abs(p0), ens.beta)
    basis = ens.basis
    L = basis.L
    A = basis.density_fourier(a1)
    B = basis.density_fourier(b1)
    C = basis.density_fourier(c1)
    Ab = ens.to_eigenbasis(A)
    Bb = ens.to_eigenbasis(B)
    Cb = ens.to_eigenbasis(C)
    w = ens.weights()
    total = 0.0 + 0.0j
    i0 = 0
    for si, (idx, E, V) in enumerate(ens.sectors):
        ns = len(E)
        ws = w[i0:i0 + ns]
        Ea = E[:, None, None]
        Eb = E[None, :, None]
        Ec = E[None, None, :]
        wa = ws[:, None, None]
        wb = ws[None, :, None]
        wc = ws[None, None, :]

        def ordered(Xb, Yb, Zb, px, py):
            u1 = (Ea - Eb) - 1j * px
            u2 = (Eb - Ec) - 1j * py
            u12 = u1 + u2
            term = ((wc - wa) / u12 - (wb - wa) / u1) / u2
            return np.einsum("ab,bc,ca,abc->", Xb[si], Yb[si], Zb[si], term)

        # s1 > s2 with (A at s1, B at s2) plus the swapped ordering
        total += ordered(Ab, Bb, Cb, a0, b0)
        total += ordered(Bb, Ab, Cb, b0, a0)
        i0 += ns
    return total / L


def ward_p0_check(ens, model, p0, nu):
    """|(1/(beta L)) <T n_(p0,0) ; j_nu,(-p0,0)>|, expected zero for p0 != 0."""
    _check_eta(abs(p0), ens.beta)
    basis = ens.basis
    L = basis.L
    n0 = basis.density_fourier(0.0)
    if nu == 0:
        j0 = basis.density_fourier(0.0)
    else:
        Jk = bond_current_kernel(model.hamiltonian, L)
        j0 = basis.quadratic(Jk.sum(axis=0))
    val = time_fourier_pair(ens, n0, j0, p0)
    return abs(val) / L


def continuity_check(ens, model, x):
    """Operator norm of i[H, n_x] + (j_x - j_{x-1}) on the Fock space."""
    basis = ens.basis
    H = ens.hamiltonian
    nx = basis.density(x).astype(complex)
    J = bond_current_kernel(model.hamiltonian, basis.L)
    jx = basis.quadratic(J[x % basis.L])
    jxm = basis.quadratic(J[(x - 1) % basis.L])
    resid = 1j * (H @ nx - nx @ H) + (jx - jxm)
    dense = resid.toarray()
    return float(np.linalg.norm(dense, 2))


# ---------------------------------------------------------------------------
# Wick rotation (real-time Duhamel vs imaginary-time cumulants)
# ---------------------------------------------------------------------------

def _triple_sum(ens, Xblk, Yblk, Zblk, fn):
    """sum_abc w_a X_ab Y_bc Z_ca fn(Ea, Eb, Ec), blocked per sector."""
    w = ens.weights()
    total = 0.0 + 0.0j
    i0 = 0
    for si, (idx, E, V) in enumerate(ens.sectors):
        ns = len(E)
        ws = w[i0:i0 + ns]
        F = fn(E[:, None, None], E[None, :, None], E[None, None, :])
        total += np.einsum("a,ab,bc,ca,abc->", ws, Xblk[si], Yblk[si], Zblk[si], F)
        i0 += ns
    return total


def _pair_sum(ens, Xblk, Yblk, fn):
    w = ens.weights()
    total = 0.0 + 0.0j
    i0 = 0
    for si, (idx, E, V) in enumerate(ens.sectors):
        ns = len(E)
        ws = w[i0:i0 + ns]
        F = fn(E[:, None], E[None, :])
        total += np.einsum("a,ab,ba,ab->", ws, Xblk[si], Yblk[si], F)
        i0 += ns
    return total


def wick_rotation_check(ens, n, O, P, eta_b, t=0.0):
    """Order-n damped real-time Duhamel integral vs imaginary-time cumulants.

    Returns (lhs, rhs, residual). Requires eta_b in (2 pi / beta) N_+ and
    t <= 0; O, P must conserve particle number. Both sides are evaluated in
    closed form in the eigenbasis (rational-exponential antiderivatives).
    """
    _check_eta(eta_b, ens.beta)
    if t > 0:
        raise ValueError("the damped evolution is defined for t <= 0")
    if n == 1:
        lhs = _wick_lhs_1(ens, O, P, eta_b, t)
        rhs = _wick_rhs_1(ens, O, P, eta_b, t)
    elif n == 2:
        lhs = _wick_lhs_2(ens, O, P, eta_b, t)
        rhs = _wick_rhs_2(ens, O, P, eta_b, t)
    else:
        raise ValueError("only n = 1, 2 are implemented")
    return lhs, rhs, abs(lhs - rhs)


def _wick_lhs_1(ens, O, P, eta, t):
    """int_{-inf}^{t} ds e^{eta s} <[tau_t(O), tau_s(P)]>."""
    Ob = ens.to_eigenbasis(O)
    Pb = ens.to_eigenbasis(P)

    def fn(Ea, Eb):
        # <tau_t(O) tau_s(P)>: phases e^{i(Ea-Eb)(t-s)}
        return np.exp(eta * t) / (eta - 1j * (Ea - Eb))

    # <tau_s(P) tau_t(O)>: phases e^{i(Ea-Eb)(s-t)} -> integral with -(Ea-Eb)
    def fn_swapped(Ea, Eb):
        return np.exp(eta * t) / (eta + 1j * (Ea - Eb))

    return _pair_sum(ens, Ob, Pb, fn) - _pair_sum(ens, Pb, Ob, fn_swapped)


def _wick_rhs_1(ens, O, P, eta, t):
    """-i e^{eta t} int_0^beta ds e^{-i eta s} <T gamma_s(P); O>."""
    val = time_fourier_pair(ens, P, O, eta)
    return -1j * np.exp(eta * t) * val


def _wick_lhs_2(ens, O, P, eta, t):
    """Nested-commutator double integral over -inf < s2 < s1 < t."""
    Ob = ens.to_eigenbasis(O)
    Pb = ens.to_eigenbasis(P)

    def dbl(alpha, beta_):
        # int_{s2<s1<t} e^{(eta + i alpha)s1} e^{(eta + i beta_)s2}
        return np.exp((2 * eta + 1j * (alpha + beta_)) * t) / (
            (eta + 1j * beta_) * (2 * eta + 1j * (alpha + beta_))
        )

    # <[[A(t), B(s1)], C(s2)]> = ABC - BAC - CAB + CBA, A = O, B = C = P
    def term(Xb, Yb, Zb, slot):
        # positions (X, Y, Z) carry phase energies (Ea-Eb), (Eb-Ec), (Ec-Ea);
        # `slot` says which time (t, s1, s2) each position is evolved to
        def fn(Ea, Eb, Ec):
            shape = np.broadcast(Ea, Eb, Ec).shape
            a = np.zeros(shape)
            b = np.zeros(shape)
            tt = np.zeros(shape)
            for ph, sl in zip([Ea - Eb, Eb - Ec, Ec - Ea], slot):
                if sl == "t":
                    tt = tt + ph
                elif sl == "s1":
                    a = a + ph
                else:
                    b = b + ph
            return np.exp(1j * tt * t) * dbl(a, b)

        return _triple_sum(ens, Xb, Yb, Zb, fn)

    val = (
        term(Ob, Pb, Pb, ("t", "s1", "s2"))      # O(t) P(s1) P(s2)
        - term(Pb, Ob, Pb, ("s1", "t", "s2"))    # P(s1) O(t) P(s2)
        - term(Pb, Ob, Pb, ("s2", "t", "s1"))    # P(s2) O(t) P(s1)
        + term(Pb, Pb, Ob, ("s2", "s1", "t"))    # P(s2) P(s1) O(t)
    )
    return val


def _wick_rhs_2(ens, O, P, eta, t):
    """(-i)^2 e^{2 eta t} / 2! * double imaginary-time cumulant integral."""
    beta = ens.beta
    w = ens.weights()
    Emin = ens.energies.min()
    Pb = ens.to_eigenbasis(P)
    Ob = ens.to_eigenbasis(O)

    # connected 3-point: 2 * sum_abc w_a P_ab P_bc O_ca I2(u_ab, u_bc)
    # with u_xy = (E_x - E_y) - i eta and
    # I2 = int_0^beta ds1 e^{u1 s1} int_0^s1 ds2 e^{u2 s2}
    #    = [ (e^{(u1+u2) beta} - 1)/(u1+u2) - (e^{u1 beta} - 1)/u1 ] / u2 .
    # The exploding exponentials are rewritten through Gibbs weights:
    # w_a e^{beta(Ea - Ec)} = w_c etc. (e^{-i eta beta} = 1).
    total = 0.0 + 0.0j
    i0 = 0
    for si, (idx, E, V) in enumerate(ens.sectors):
        ns = len(E)
        ws = w[i0:i0 + ns]
        Ea = E[:, None, None]
        Eb = E[None, :, None]
        Ec = E[None, None, :]
        wa = ws[:, None, None]
        wb = ws[None, :, None]
        wc = ws[None, None, :]
        u1 = (Ea - Eb) - 1j * eta
        u2 = (Eb - Ec) - 1j * eta
        u12 = u1 + u2
        # w_a * I2 rewritten through Gibbs weights (no exploding exponentials)
        term = ((wc - wa) / u12 - (wb - wa) / u1) / u2
        total += 2.0 * np.einsum(
            "ab,bc,ca,abc->", Pb[si], Pb[si], Ob[si], term
        )
        i0 += ns

    # The disconnected pieces of the cumulant all carry a uniform
    # e^{-i eta s_i} integral of a quantity whose total frequency is not
    # zero (eta and 2 eta), so they integrate to zero exactly for the
    # bosonic eta enforced above; no subtraction is needed.
    return -np.exp(2 * eta * t) * total / 2.0


# ---------------------------------------------------------------------------
# driven Fock-space dynamics (small systems)
# ---------------------------------------------------------------------------

def full_response_small(ens, model, eta, theta, profile, nu=0, t0=None,
                        steps_per_unit=None, defect_tol=1e-8, ramp_floor=1e-8):
    """Per-site response of the driven Gibbs state, (Tr j rho(0) - Tr j rho)/theta.

    The density matrix is evolved with K + e^{eta t} P from t0 (where the
    ramp is below 1e-8) to 0 using the interaction picture in the eigenbasis
    of K; `profile` is the real potential m(x) multiplying theta.
    """
    basis = ens.basis
    L = basis.L
    if basis.n_modes > 10:
        raise DimensionTooLarge("full_response_small is budgeted to L*M <= 10")
    m = np.asarray(profile, dtype=float)
    P = sum(theta * m[x] * basis.density(x) for x in range(L)).toarray().astype(complex)
    # global eigenbasis (block-diagonal collected into dense form)
    dim = basis.dim
    Vfull = np.zeros((dim, dim), dtype=complex)
    Efull = np.zeros(dim)
    col = 0
    for (idx, E, V) in ens.sectors:
        Vfull[np.ix_(idx, range(col, col + len(E)))] = V
        Efull[col:col + len(E)] = E
        col += len(E)
    Pt = Vfull.conj().T @ P @ Vfull
    w = np.exp(-ens.beta * (Efull - Efull.min()))
    w /= w.sum()
    rho = np.diag(w).astype(complex)
    mmax = np.abs(theta * m).max()
    if mmax == 0.0:
        chi = np.zeros(L)
        return chi
    if t0 is None:
        t0 = -np.log(mmax / ramp_floor) / eta
    dE = Efull.max() - Efull.min()
    if steps_per_unit is None:
        steps_per_unit = max(16.0 * dE, 80.0 * eta)
    nsteps = max(64, int(np.ceil(abs(t0) * steps_per_unit)))
    dt = -t0 / nsteps
    c1 = 0.5 - np.sqrt(3) / 6
    c2 = 0.5 + np.sqrt(3) / 6
    x1 = (3 - 2 * np.sqrt(3)) / 12
    x2 = (3 + 2 * np.sqrt(3)) / 12
    dEmat = Efull[:, None] - Efull[None, :]
    U = np.eye(dim, dtype=complex)
    t = t0
    for _ in range(nsteps):
        t1, t2 = t + c1 * dt, t + c2 * dt
        G1 = np.exp(eta * t1) * Pt * np.exp(1j * dEmat * t1)
        G2 = np.exp(eta * t2) * Pt * np.exp(1j * dEmat * t2)
        for G in (x1 * G1 + x2 * G2, x2 * G1 + x1 * G2):
            U = _expm_taylor(-1j * dt * G) @ U
        t += dt
    defect = np.abs(U.conj().T @ U - np.eye(dim)).max()
    if defect > defect_tol:
        raise StepControlFailure(f"unitarity defect {defect:.2e}")
    rho0 = U @ rho @ U.conj().T
    chi = np.zeros(L)
    if nu == 0:
        for x in range(L):
            O = Vfull.conj().T @ basis.density(x).toarray() @ Vfull
            chi[x] = np.real(np.trace(O @ rho0) - np.trace(O @ rho)) / theta
    else:
        J = bond_current_kernel(model.hamiltonian, L)
        for x in range(L):
            O = Vfull.conj().T @ basis.quadratic(J[x]).toarray() @ Vfull
            chi[x] = np.real(np.trace(O @ rho0) - np.trace(O @ rho)) / theta
    return chi


def _expm_taylor(M, tol=1e-14, maxn=40):
    out = np.eye(M.shape[0], dtype=complex)
    term = out.copy()
    for n in range(1, maxn):
        term = M @ term / n
        out = out + term
        if np.abs(term).max() < tol:
            break
    return out
