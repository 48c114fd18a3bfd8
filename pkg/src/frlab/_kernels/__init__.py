"""Kernel selection: compiled extension if built, numpy fallback otherwise.

Set FRLAB_NO_EXT=1 to force the fallback (used by the benchmark).
"""
import os

if os.environ.get("FRLAB_NO_EXT"):
    from ._fallback import (  # noqa: F401
        HAVE_EXT,
        chiral_pair_sum,
        chiral_ring_sum,
        lattice_ring_sum,
        smooth_step,
    )
else:
    try:
        from .grid_sums import (  # noqa: F401
            HAVE_EXT,
            chiral_pair_sum,
            chiral_ring_sum,
            lattice_ring_sum,
            smooth_step,
        )
    except ImportError:
        from ._fallback import (  # noqa: F401
            HAVE_EXT,
            chiral_pair_sum,
            chiral_ring_sum,
            lattice_ring_sum,
            smooth_step,
        )
