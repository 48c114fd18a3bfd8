"""Pure-numpy grid-sum kernels (chunked over the frequency axis).

Same call signatures as the compiled extension in grid_sums.pyx; selected
automatically when the extension is not built (or FRLAB_NO_EXT=1).
"""
import numpy as np

HAVE_EXT = False

_CHUNK = 2048


def smooth_step(t):
    """C-infinity cutoff profile: 1 for |t|<=1, 0 for |t|>=3/2.

    Transition chi(t) = f(3/2-|t|) / (f(3/2-|t|) + f(|t|-1)) with
    f(s) = exp(-1/s) for s > 0 and 0 otherwise.
    """
    t = np.abs(np.asarray(t, dtype=float))
    out = np.zeros(t.shape)
    out[t <= 1.0] = 1.0
    mid = (t > 1.0) & (t < 1.5)
    if np.any(mid):
        tm = t[mid]
        a = np.exp(-1.0 / (1.5 - tm))
        b = np.exp(-1.0 / (tm - 1.0))
        out[mid] = a / (a + b)
    return out


def _k0_axis(h, n0):
    n = np.arange(-n0, n0)
    return h * (n + 0.5)


def chiral_pair_sum(p0, p1, v, scale, h, n0, n1, stretch, want_diff):
    """Sums for the anomalous bubble on the antiperiodic grid.

    prod = sum_k chi(|k-p|) chi(|k|) / (D(k-p) D(k))
    diff = sum_k [chi(|k-p|)/D(k-p) - chi(|k|)/D(k)]      (if want_diff)

    with D(k) = i k0 + v k1 and |k| the cutoff norm
    sqrt(k0^2 + (v*stretch*k1)^2) scaled by `scale` = 2^-N.
    k0 = h(i+1/2), i in [-n0, n0); k1 = h(j+1/2), j in [-n1, n1).
    """
    k0 = _k0_axis(h, n0)
    k1 = _k0_axis(h, n1)
    prod = 0.0 + 0.0j
    diff = 0.0 + 0.0j
    for i in range(0, len(k0), _CHUNK):
        a = k0[i : i + _CHUNK][:, None]
        b = k1[None, :]
        D = 1j * a + v * b
        Dm = 1j * (a - p0) + v * (b - p1)
        c = smooth_step(scale * np.sqrt(a * a + (v * stretch * b) ** 2))
        cm = smooth_step(
            scale * np.sqrt((a - p0) ** 2 + (v * stretch * (b - p1)) ** 2)
        )
        prod += np.sum((cm * c) / (Dm * D))
        if want_diff:
            diff += np.sum(cm / Dm - c / D)
    return prod, diff


def chiral_ring_sum(s0, s1, v, scale, h, n0, n1, stretch):
    """Single-ordering fermion ring of cutoff chiral propagators.

    sum_k prod_j chi(|k+s_j|) / D(k+s_j), shifts (s0[j], s1[j]).
    """
    s0 = np.asarray(s0, dtype=float)
    s1 = np.asarray(s1, dtype=float)
    k0 = _k0_axis(h, n0)
    k1 = _k0_axis(h, n1)
    total = 0.0 + 0.0j
    for i in range(0, len(k0), _CHUNK):
        a = k0[i : i + _CHUNK][:, None]
        b = k1[None, :]
        prod = None
        for u0, u1 in zip(s0, s1):
            K0 = a + u0
            K1 = b + u1
            g = smooth_step(
                scale * np.sqrt(K0 * K0 + (v * stretch * K1) ** 2)
            ) / (1j * K0 + v * K1)
            prod = g if prod is None else prod * g
        total += prod.sum()
    return total


def lattice_ring_sum(h, n0, u0s, xis, vert):
    """Matsubara-Bloch ring for the free lattice theory (one internal band).

    sum over k0 = h(i+1/2), i in [-n0, n0), and k1-index l of
        vert[l] * prod_j 1 / (i(k0 + u0s[j]) + xis[j, l]).

    xis[j] holds the shifted dispersion xi(k1 + q_j) tabulated on the k1 grid.
    """
    u0s = np.asarray(u0s, dtype=float)
    xis = np.asarray(xis, dtype=float)
    vert = np.asarray(vert, dtype=complex)
    k0 = _k0_axis(h, n0)
    total = 0.0 + 0.0j
    for i in range(0, len(k0), _CHUNK):
        a = k0[i : i + _CHUNK][:, None]
        prod = None
        for j in range(xis.shape[0]):
            g = 1.0 / (1j * (a + u0s[j]) + xis[j][None, :])
            prod = g if prod is None else prod * g
        total += (prod * vert[None, :]).sum()
    return total
