"""Compiled inner loops for the physical-space part of the transport term."""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def transport_products(phys, out, inv4h):
    """Fused physical products of the transport term.

    ``phys`` is ``(6, N, B, n1, n2)`` holding ``u1, u2, u3, d1 f, d2 f, f``
    on interior planes (walls are zero).  Writes

        u1 d1f + u2 d2f + [s+ (f_{j+1} - f_j) + s- (f_j - f_{j-1})] / (4h)

    into ``out`` (``(N, B, n1, n2)``), where ``s+-`` are the sums of ``u3``
    over the faces above and below plane ``j``.  This equals
    ``u_h . grad_h f + (u3 Dz f + Dz(u3 f) - f Dz u3) / 2``.  Returns the
    per-copy maxima of ``|u1|, |u2|, |u3|`` as a ``(3, B)`` array.
    """
    _, N, B, n1, n2 = phys.shape
    umax = np.zeros((3, B))
    for j in range(N):
        for b in range(B):
            m1 = umax[0, b]
            m2 = umax[1, b]
            m3 = umax[2, b]
            for x in range(n1):
                for y in range(n2):
                    u1 = phys[0, j, b, x, y]
                    u2 = phys[1, j, b, x, y]
                    u3 = phys[2, j, b, x, y]
                    f = phys[5, j, b, x, y]
                    if j + 1 < N:
                        up = (u3 + phys[2, j + 1, b, x, y]) * (phys[5, j + 1, b, x, y] - f)
                    else:
                        up = u3 * (-f)
                    if j > 0:
                        dn = (u3 + phys[2, j - 1, b, x, y]) * (f - phys[5, j - 1, b, x, y])
                    else:
                        dn = u3 * f
                    out[j, b, x, y] = u1 * phys[3, j, b, x, y] + u2 * phys[4, j, b, x, y] + (up + dn) * inv4h
                    a1 = abs(u1)
                    a2 = abs(u2)
                    a3 = abs(u3)
                    if a1 > m1:
                        m1 = a1
                    if a2 > m2:
                        m2 = a2
                    if a3 > m3:
                        m3 = a3
            umax[0, b] = m1
            umax[1, b] = m2
            umax[2, b] = m3
    return umax


@numba.njit(cache=True, nogil=True)
def dual_products(phys, out, inv4h):
    """Physical products of the transposed buoyancy-transport coupling.

    ``phys`` is ``(4, N, B, n1, n2)`` holding ``psi, d1 S, d2 S, S`` on
    interior planes.  Writes into ``out`` (``(3, N, B, n1, n2)``) the vector
    field ``G`` with ``<A(w, S), psi> = <w, G>`` for every band-limited
    ``w``:

        G1 = psi d1S,   G2 = psi d2S,
        G3 = [(S_{j+1} - S_j)(psi_j + psi_{j+1})
              + (S_j - S_{j-1})(psi_j + psi_{j-1})] / (4h).
    """
    _, N, B, n1, n2 = phys.shape
    for j in range(N):
        for b in range(B):
            for x in range(n1):
                for y in range(n2):
                    p = phys[0, j, b, x, y]
                    s = phys[3, j, b, x, y]
                    if j + 1 < N:
                        up = (phys[3, j + 1, b, x, y] - s) * (p + phys[0, j + 1, b, x, y])
                    else:
                        up = -s * p
                    if j > 0:
                        dn = (s - phys[3, j - 1, b, x, y]) * (p + phys[0, j - 1, b, x, y])
                    else:
                        dn = s * p
                    out[0, j, b, x, y] = p * phys[1, j, b, x, y]
                    out[1, j, b, x, y] = p * phys[2, j, b, x, y]
                    out[2, j, b, x, y] = (up + dn) * inv4h
