"""Numpy implementation of the round kernel; used when the compiled one is absent.

Must stay bit-compatible with ``_kernel.pyx`` for the ``y``/``z`` trajectories:
same division, same accumulation order per receiver (edges ascending).
"""
from __future__ import annotations

import numpy as np


def advance(
    y, z, mu, sigma, nu, tau, fresh,
    src, dst, outdeg, masks,
    y_out, z_out, mass_y, mass_z,
    flight_y=None, flight_z=None,
):
    """Run ``masks.shape[1]`` synchronous rounds for ``masks.shape[0]`` replicas in place.

    Shapes: ``y, z, mu, sigma`` (T, n); ``nu, tau, fresh`` (T, m);
    ``masks`` (T, R, m) uint8; ``y_out, z_out`` (T, R, n); ``mass_*`` (T, R);
    optional ``flight_*`` (T, R, m).
    """
    T, n = y.shape
    R = masks.shape[1]
    bins = (np.arange(T, dtype=np.int64)[:, None] * n + dst[None, :]).ravel()
    size = T * n
    for k in range(R):
        inc_y = y / outdeg
        inc_z = z / outdeg
        mu += inc_y
        sigma += inc_z
        x = masks[:, k, :].astype(bool)
        mu_src = mu[:, src]
        sigma_src = sigma[:, src]
        was_fresh = fresh.astype(bool)
        dy = np.where(was_fresh, inc_y[:, src], mu_src - nu)
        dz = np.where(was_fresh, inc_z[:, src], sigma_src - tau)
        dy = np.where(x, dy, 0.0)
        dz = np.where(x, dz, 0.0)
        np.copyto(nu, mu_src, where=x)
        np.copyto(tau, sigma_src, where=x)
        fresh[...] = x
        y[...] = np.bincount(bins, weights=dy.ravel(), minlength=size).reshape(T, n)
        z[...] = np.bincount(bins, weights=dz.ravel(), minlength=size).reshape(T, n)
        fy = mu_src - nu
        fz = sigma_src - tau
        y_out[:, k, :] = y
        z_out[:, k, :] = z
        mass_y[:, k] = y.sum(axis=1) + fy.sum(axis=1)
        mass_z[:, k] = z.sum(axis=1) + fz.sum(axis=1)
        if flight_y is not None:
            flight_y[:, k, :] = fy
            flight_z[:, k, :] = fz
