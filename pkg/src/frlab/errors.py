"""Exception types raised by the laboratory."""


class FrlabError(Exception):
    pass


class NoFermiPoint(FrlabError):
    """No band crosses the chemical potential."""


class DegenerateCrossing(FrlabError):
    """A Fermi crossing sits on a (near-)degenerate eigenvalue."""


class ElasticScatteringViolated(FrlabError):
    """A quadruple of Fermi points satisfies a nontrivial momentum relation."""

    def __init__(self, quadruple, mismatch):
        self.quadruple = quadruple
        self.mismatch = mismatch
        super().__init__(
            f"quadruple {quadruple} violates elastic scattering "
            f"(momentum mismatch {mismatch:.3e})"
        )


class SingularPropagator(FrlabError):
    """Propagator evaluated too close to a pole."""


class CutoffTooLow(FrlabError):
    """Frequency-cutoff tail correction exceeds the trust threshold."""


class DimensionTooLarge(FrlabError):
    """Fock-space dimension beyond the dense-diagonalization budget."""


class EtaNotMatsubara(FrlabError):
    """Adiabatic rate is not a positive bosonic Matsubara frequency."""


class StepControlFailure(FrlabError):
    """Unitarity or spectrum-preservation defect exceeded tolerance."""


class NearSingularT(FrlabError):
    """Response/Ward matrix inversion is ill-conditioned."""


class NearSingular(NearSingularT):
    """Vertex-renormalization system is ill-conditioned."""


class QuadratureFailure(FrlabError):
    """Adaptive quadrature did not reach the requested tolerance."""


class GridTooCoarse(FrlabError):
    """Momentum grid spacing too coarse for the requested momenta."""


class ConfigInvalid(FrlabError):
    """Run configuration failed validation."""


class ModelFileMissing(FrlabError):
    """Model definition file not found."""


class CheckFailed(FrlabError):
    """One or more enabled checks failed."""
