# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled grid-sum kernels for the momentum-space loops.

Mirrors _fallback.py; the cutoff profile is evaluated through a quadratic
interpolation table in s = t^2 so the hot loops need no exp/sqrt calls.
"""
import numpy as np

cimport cython
from cython.parallel cimport prange
from libc.math cimport exp

HAVE_EXT = True

# ---------------------------------------------------------------------------
# cutoff profile table: chi as a function of s = t^2 on [1, 9/4]
# ---------------------------------------------------------------------------

cdef int _TBL_N = 1 << 17
cdef double _TBL_LO = 1.0
cdef double _TBL_HI = 2.25
cdef double _TBL_INV = (_TBL_N - 1) / (_TBL_HI - _TBL_LO)
cdef double[::1] _TBL = np.zeros(_TBL_N)


def _build_table():
    s = np.linspace(_TBL_LO, _TBL_HI, _TBL_N)
    t = np.sqrt(s)
    out = np.zeros_like(t)
    out[t <= 1.0] = 1.0
    mid = (t > 1.0) & (t < 1.5)
    tm = t[mid]
    a = np.exp(-1.0 / (1.5 - tm))
    b = np.exp(-1.0 / (tm - 1.0))
    out[mid] = a / (a + b)
    return out


_TBL = _build_table()


cdef inline double _chi_s(double s) nogil:
    """chi(sqrt(s)) by quadratic interpolation; exact 1/0 outside the seam."""
    cdef double x, w
    cdef Py_ssize_t i
    if s <= _TBL_LO:
        return 1.0
    if s >= _TBL_HI:
        return 0.0
    x = (s - _TBL_LO) * _TBL_INV
    i = <Py_ssize_t> x
    if i < 1:
        i = 1
    elif i > _TBL_N - 2:
        i = _TBL_N - 2
    w = x - i
    # three-point Lagrange around node i
    return (0.5 * w * (w - 1.0)) * _TBL[i - 1] \
        + (1.0 - w * w) * _TBL[i] \
        + (0.5 * w * (w + 1.0)) * _TBL[i + 1]


def smooth_step(t):
    """Vectorized cutoff profile (exact form, used outside hot loops)."""
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


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def chiral_pair_sum(double p0, double p1, double v, double scale, double h,
                    long n0, long n1, double stretch, bint want_diff):
    """See _fallback.chiral_pair_sum."""
    cdef double s2 = scale * scale
    cdef double vs = v * stretch
    cdef double pr_re = 0.0, pr_im = 0.0, df_re = 0.0, df_im = 0.0
    cdef long i, j
    cdef double k0, k1, k0m, k1m, c, cm, dre, dim, mre, mim, den, denm
    cdef double num_re, num_im
    for i in prange(-n0, n0, nogil=True, schedule='static'):
        k0 = h * (i + 0.5)
        k0m = k0 - p0
        for j in range(-n1, n1):
            k1 = h * (j + 0.5)
            k1m = k1 - p1
            c = _chi_s(s2 * (k0 * k0 + vs * vs * k1 * k1))
            cm = _chi_s(s2 * (k0m * k0m + vs * vs * k1m * k1m))
            if c == 0.0 and cm == 0.0:
                continue
            # D = i k0 + v k1 ; 1/D = (v k1 - i k0)/|D|^2
            den = k0 * k0 + v * v * k1 * k1
            denm = k0m * k0m + v * v * k1m * k1m
            dre = v * k1 / den
            dim = -k0 / den
            mre = v * k1m / denm
            mim = -k0m / denm
            if c != 0.0 and cm != 0.0:
                # (cm/Dm) * (c/D)
                num_re = cm * c * (mre * dre - mim * dim)
                num_im = cm * c * (mre * dim + mim * dre)
                pr_re += num_re
                pr_im += num_im
            if want_diff:
                df_re += cm * mre - c * dre
                df_im += cm * mim - c * dim
    return complex(pr_re, pr_im), complex(df_re, df_im)


def chiral_ring_sum(double[::1] s0, double[::1] s1, double v, double scale,
                    double h, long n0, long n1, double stretch):
    """See _fallback.chiral_ring_sum."""
    cdef long m = s0.shape[0]
    cdef double s2 = scale * scale
    cdef double vs = v * stretch
    cdef double tot_re = 0.0, tot_im = 0.0
    cdef long i, j, l
    cdef double k0, k1, K0, K1, c, den, gre, gim, pre, pim, tre
    cdef bint dead
    for i in prange(-n0, n0, nogil=True, schedule='static'):
        k0 = h * (i + 0.5)
        for j in range(-n1, n1):
            k1 = h * (j + 0.5)
            pre = 1.0
            pim = 0.0
            dead = 0
            for l in range(m):
                K0 = k0 + s0[l]
                K1 = k1 + s1[l]
                c = _chi_s(s2 * (K0 * K0 + vs * vs * K1 * K1))
                if c == 0.0:
                    dead = 1
                    break
                den = K0 * K0 + v * v * K1 * K1
                gre = c * v * K1 / den
                gim = -c * K0 / den
                tre = pre * gre - pim * gim
                pim = pre * gim + pim * gre
                pre = tre
            if not dead:
                tot_re += pre
                tot_im += pim
    return complex(tot_re, tot_im)


def lattice_ring_sum(double h, long n0, double[::1] u0s, double[:, ::1] xis,
                     complex[::1] vert):
    """See _fallback.lattice_ring_sum."""
    cdef long m = u0s.shape[0]
    cdef long L = xis.shape[1]
    cdef double tot_re = 0.0, tot_im = 0.0
    cdef long i, l, j
    cdef double k0, K0, xi, den, gre, gim, pre, pim, tre, vre, vim
    for i in prange(-n0, n0, nogil=True, schedule='static'):
        k0 = h * (i + 0.5)
        for l in range(L):
            pre = 1.0
            pim = 0.0
            for j in range(m):
                K0 = k0 + u0s[j]
                xi = xis[j, l]
                den = K0 * K0 + xi * xi
                gre = xi / den
                gim = -K0 / den
                tre = pre * gre - pim * gim
                pim = pre * gim + pim * gre
                pre = tre
            vre = vert[l].real
            vim = vert[l].imag
            tot_re += pre * vre - pim * vim
            tot_im += pre * vim + pim * vre
    return complex(tot_re, tot_im)
