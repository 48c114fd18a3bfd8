"""Single-particle model: Bloch Hamiltonians, bands, Fermi points, vertices.

Everything here is L-independent: the Hamiltonian is stored by displacement
blocks, and beta never enters. Energies are in hopping units.
"""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateCrossing,
    ElasticScatteringViolated,
    ModelFileMissing,
    NoFermiPoint,
)

HERMITICITY_TOL = 1e-14
ROOT_TOL = 1e-12
BRACKET_POINTS = 4096
DEGENERACY_GAP = 1e-8
ELASTIC_TOL = 1e-9
VELOCITY_TOL = 1e-8


@dataclass(frozen=True)
class BlochHamiltonian:
    """Finite-range translation-invariant hopping, stored by displacement.

    blocks[d] is the M x M block H(d) for displacement d >= 0; the block for
    -d is blocks[d]^dagger, so blocks[0] must be Hermitian.
    """

    M: int
    blocks: dict = field(default_factory=dict)

    def __post_init__(self):
        blocks = {int(d): np.asarray(b, dtype=complex) for d, b in self.blocks.items()}
        object.__setattr__(self, "blocks", blocks)
        if self.M < 1:
            raise ValueError("M must be a positive integer")
        for d, b in blocks.items():
            if d < 0:
                raise ValueError("store displacements d >= 0 only")
            if b.shape != (self.M, self.M):
                raise ValueError(f"block {d} is not {self.M}x{self.M}")
        h0 = blocks.get(0, np.zeros((self.M, self.M)))
        if np.abs(h0 - h0.conj().T).max() > HERMITICITY_TOL:
            raise ValueError("block 0 must be Hermitian")

    @property
    def range(self):
        return max(self.blocks) if self.blocks else 0

    def bloch(self, k):
        """Bloch matrix H(k) = sum_d e^{-ikd} H(d), Hermitian by pairing."""
        out = np.zeros((self.M, self.M), dtype=complex)
        for d, b in self.blocks.items():
            if d == 0:
                out += b
            else:
                out += np.exp(-1j * k * d) * b
                out += np.exp(1j * k * d) * b.conj().T
        return 0.5 * (out + out.conj().T)

    def bloch_derivative(self, k):
        """dH/dk from the hopping blocks, Hermitian-symmetrized."""
        out = np.zeros((self.M, self.M), dtype=complex)
        for d, b in self.blocks.items():
            if d == 0:
                continue
            out += (-1j * d) * np.exp(-1j * k * d) * b
            out += (1j * d) * np.exp(1j * k * d) * b.conj().T
        return 0.5 * (out + out.conj().T)

    def dense(self, L):
        """Periodized real-space Hamiltonian on the ring of L sites (ML x ML)."""
        if L < 2:
            raise ValueError("need L >= 2")
        M = self.M
        h = np.zeros((L * M, L * M), dtype=complex)
        for d, b in self.blocks.items():
            for x in range(L):
                if d == 0:
                    h[x * M:(x + 1) * M, x * M:(x + 1) * M] += b
                else:
                    y = (x + d) % L
                    # H(x; x+d) = H^inf(-d)... displacement convention:
                    # block d couples site x to site x-d: H(x; x-d) = H(d).
                    z = (x - d) % L
                    h[x * M:(x + 1) * M, z * M:(z + 1) * M] += b
                    h[z * M:(z + 1) * M, x * M:(x + 1) * M] += b.conj().T
        return 0.5 * (h + h.conj().T)


def laplacian(t=1.0):
    """Spinless lattice Laplacian, dispersion 2t(1-cos k)."""
    return BlochHamiltonian(M=1, blocks={0: [[2.0 * t]], 1: [[-t]]})


def bloch_matrix(model, k):
    return model.bloch(k)


def band_structure(model, grid):
    """Eigenvalues (ascending) and orthonormal eigenvectors over a k-grid."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("empty momentum grid")
    evals = np.empty((grid.size, model.M))
    evecs = np.empty((grid.size, model.M, model.M), dtype=complex)
    for i, k in enumerate(grid):
        try:
            w, v = np.linalg.eigh(model.bloch(k))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"eigensolver failed at k={k}") from exc
        evals[i] = w
        evecs[i] = v
    return evals, evecs


@dataclass(frozen=True)
class FermiDatum:
    """One transversal Fermi crossing: label, momentum, velocity, band."""

    omega: int
    k_F: float
    v: float
    band: int


@dataclass
class AssumptionReport:
    """Verdicts for the low-energy-spectrum assumptions at this mu."""

    nondegenerate: bool
    elastic: bool
    net_chirality: int
    min_gap: float
    details: list = field(default_factory=list)


def _band_energy(model, band, k):
    return np.linalg.eigvalsh(model.bloch(k))[band]


def _velocity(model, band, k):
    w, v = np.linalg.eigh(model.bloch(k))
    u = v[:, band]
    return float(np.real(u.conj() @ model.bloch_derivative(k) @ u))


def find_fermi_points(model, mu, delta_degen=DEGENERACY_GAP, n_bracket=BRACKET_POINTS,
                      strict=True):
    """Locate all Fermi crossings in [0, 2pi) and check the spectral assumptions.

    Roots of e_band(k) = mu are bracketed on a uniform grid and refined by
    bisection to ROOT_TOL. Raises NoFermiPoint / DegenerateCrossing /
    ElasticScatteringViolated; otherwise returns (points, report). With
    strict=False the elastic-scattering violation is recorded in the report
    instead of raised (needed e.g. at half filling, where the two Fermi
    points sit exactly pi apart).
    """
    ks = np.linspace(0.0, 2 * np.pi, n_bracket, endpoint=False)
    evals, _ = band_structure(model, ks)
    points = []
    min_gap = np.inf
    for band in range(model.M):
        f = evals[:, band] - mu
        for i in range(len(ks)):
            j = (i + 1) % len(ks)
            a, b = ks[i], ks[i] + 2 * np.pi / n_bracket
            fa, fb = f[i], f[j]
            if fa == 0.0:
                root = a
            elif fa * fb < 0.0:
                root = _bisect(lambda k: _band_energy(model, band, k) - mu, a, b)
            else:
                continue
            w = np.linalg.eigvalsh(model.bloch(root))
            gap = min(
                abs(w[o] - w[band]) for o in range(model.M) if o != band
            ) if model.M > 1 else np.inf
            min_gap = min(min_gap, gap)
            if gap < delta_degen:
                raise DegenerateCrossing(
                    f"crossing at k={root:.12f} (band {band}) has gap {gap:.3e}"
                )
            v = _velocity(model, band, root)
            if abs(v) < VELOCITY_TOL:
                raise NoFermiPoint(
                    f"band {band} touches mu tangentially at k={root:.12f} (v={v:.3e});"
                    " mu sits at a band edge"
                )
            points.append((root % (2 * np.pi), v, band))
    if not points:
        raise NoFermiPoint(f"no band crosses mu={mu}")
    points.sort()
    data = [
        FermiDatum(omega=i + 1, k_F=k, v=v, band=band)
        for i, (k, v, band) in enumerate(points)
    ]
    report = AssumptionReport(
        nondegenerate=True,
        elastic=True,
        net_chirality=int(round(sum(np.sign(p.v) for p in data))),
        min_gap=float(min_gap),
    )
    _check_elastic(data, report, strict=strict)
    return data, report


def _bisect(f, a, b, tol=ROOT_TOL):
    fa = f(a)
    for _ in range(200):
        m = 0.5 * (a + b)
        if b - a < tol:
            return m
        fm = f(m)
        if fa * fm <= 0.0:
            b = m
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


def _mod_dist(x):
    """Distance of x from 0 modulo 2pi."""
    return abs((x + np.pi) % (2 * np.pi) - np.pi)


def _check_elastic(data, report, tol=ELASTIC_TOL, strict=True):
    """Momentum relations k1 - k2 = k3 - k4 mod 2pi only in the trivial pairings."""
    n = len(data)
    for i1 in range(n):
        for i2 in range(n):
            for i3 in range(n):
                for i4 in range(n):
                    lhs = data[i1].k_F - data[i2].k_F - data[i3].k_F + data[i4].k_F
                    if _mod_dist(lhs) < tol:
                        if (i1 == i2 and i3 == i4) or (i1 == i3 and i2 == i4):
                            continue
                        report.elastic = False
                        report.details.append((i1 + 1, i2 + 1, i3 + 1, i4 + 1))
                        if strict:
                            raise ElasticScatteringViolated(
                                (i1 + 1, i2 + 1, i3 + 1, i4 + 1), _mod_dist(lhs)
                            )


def current_vertex(model, nu, k, p):
    """Momentum-space density/current vertex J_nu(k, p).

    nu=0 is the identity; nu=1 is i(H(k) - H(k-p)) / (1 - e^{-ip}) with the
    analytic dH/dk limit at p = 0 mod 2pi.
    """
    if nu == 0:
        return np.eye(model.M, dtype=complex)
    if _mod_dist(p) < 1e-12:
        return model.bloch_derivative(k)
    return 1j * (model.bloch(k) - model.bloch(k - p)) / (1.0 - np.exp(-1j * p))


@dataclass(frozen=True)
class TwoBodyPotential:
    """Finite-range real two-body potential, w(-d) = w(d)."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = {int(d): float(w) for d, w in self.values.items()}
        object.__setattr__(self, "values", vals)
        if any(d < 0 for d in vals):
            raise ValueError("store displacements d >= 0 only")

    @property
    def range(self):
        return max(self.values) if self.values else 0

    def w(self, d):
        return self.values.get(abs(int(d)), 0.0)

    def fourier(self, k):
        """w_hat(k) = w(0) + 2 sum_{d>0} w(d) cos(kd); real and even."""
        k = np.asarray(k, dtype=float)
        out = np.full(k.shape, self.values.get(0, 0.0))
        for d, w in self.values.items():
            if d > 0:
                out = out + 2.0 * w * np.cos(k * d)
        return out if out.shape else float(out)


@dataclass(frozen=True)
class Model:
    """A run model: hopping, chemical potential, coupling, potential."""

    hamiltonian: BlochHamiltonian
    mu: float
    coupling: float = 0.0
    potential: TwoBodyPotential = field(default_factory=TwoBodyPotential)


def load_model(path):
    """Read a model definition from TOML.

    Layout:
        [model]      M, mu, lambda
        [model.blocks]  "<d>" = [[re, im], ...]   (M*M row-major pairs)
        [potential]  values = { "<d>" = w }
    """
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    path = Path(path)
    if not path.exists():
        raise ModelFileMissing(str(path))
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    m = doc["model"]
    M = int(m["M"])
    blocks = {}
    for d, flat in m["blocks"].items():
        pairs = np.asarray(flat, dtype=float).reshape(M, M, 2)
        blocks[int(d)] = pairs[..., 0] + 1j * pairs[..., 1]
    ham = BlochHamiltonian(M=M, blocks=blocks)
    pot = TwoBodyPotential(
        values={int(d): w for d, w in doc.get("potential", {}).get("values", {}).items()}
    )
    return Model(
        hamiltonian=ham,
        mu=float(m["mu"]),
        coupling=float(m.get("lambda", 0.0)),
        potential=pot,
    )
