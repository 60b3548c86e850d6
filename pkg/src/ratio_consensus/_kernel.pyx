# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled round kernel; see ``_kernel_py.advance`` for the contract."""
import numpy as np

from libc.stdint cimport int64_t


def advance(
    double[:, ::1] y, double[:, ::1] z, double[:, ::1] mu, double[:, ::1] sigma,
    double[:, ::1] nu, double[:, ::1] tau, unsigned char[:, ::1] fresh,
    const int64_t[::1] src, const int64_t[::1] dst, const double[::1] outdeg,
    const unsigned char[:, :, ::1] masks,
    double[:, :, ::1] y_out, double[:, :, ::1] z_out,
    double[:, ::1] mass_y, double[:, ::1] mass_z,
    double[:, :, ::1] flight_y=None, double[:, :, ::1] flight_z=None,
):
    cdef Py_ssize_t T = y.shape[0]
    cdef Py_ssize_t n = y.shape[1]
    cdef Py_ssize_t m = src.shape[0]
    cdef Py_ssize_t R = masks.shape[1]
    cdef bint record = flight_y is not None
    cdef double[::1] inc_y = np.empty(n)
    cdef double[::1] inc_z = np.empty(n)
    cdef double[::1] y_new = np.empty(n)
    cdef double[::1] z_new = np.empty(n)
    cdef Py_ssize_t t, k, e, i, j
    cdef double dy, dz, fy, fz, sy, sz, a, b

    for t in range(T):
        for k in range(R):
            for i in range(n):
                a = y[t, i] / outdeg[i]
                b = z[t, i] / outdeg[i]
                inc_y[i] = a
                inc_z[i] = b
                mu[t, i] += a
                sigma[t, i] += b
                y_new[i] = 0.0
                z_new[i] = 0.0
            for e in range(m):
                i = src[e]
                if masks[t, k, e]:
                    j = dst[e]
                    if fresh[t, e]:
                        dy = inc_y[i]
                        dz = inc_z[i]
                    else:
                        dy = mu[t, i] - nu[t, e]
                        dz = sigma[t, i] - tau[t, e]
                    nu[t, e] = mu[t, i]
                    tau[t, e] = sigma[t, i]
                    fresh[t, e] = 1
                    y_new[j] += dy
                    z_new[j] += dz
                else:
                    fresh[t, e] = 0
            sy = 0.0
            sz = 0.0
            for j in range(n):
                y[t, j] = y_new[j]
                z[t, j] = z_new[j]
                y_out[t, k, j] = y_new[j]
                z_out[t, k, j] = z_new[j]
                sy += y_new[j]
                sz += z_new[j]
            for e in range(m):
                i = src[e]
                fy = mu[t, i] - nu[t, e]
                fz = sigma[t, i] - tau[t, e]
                sy += fy
                sz += fz
                if record:
                    flight_y[t, k, e] = fy
                    flight_z[t, k, e] = fz
            mass_y[t, k] = sy
            mass_z[t, k] = sz
