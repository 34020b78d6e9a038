"""Independent reference computations used by the tests.

Nothing here calls the package's pipeline.  Derivatives come from finite
differences or from plain sympy, group actions from direct substitution.
"""

import numpy as np
import sympy as sp


def central_diff(f, x, h=1e-5):
    """Gradient of a scalar function of a vector by central differences."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jets(fun, x0, order, h=1e-3):
    """Derivatives of a scalar function of one variable up to ``order``.

    Uses a high-order central stencil; good to about 1e-8 for smooth f.
    """
    from math import comb
    out = [fun(x0)]
    for k in range(1, order + 1):
        # k-th central difference with step h, Richardson-extrapolated once
        def dk(step):
            return sum((-1) ** j * comb(k, j) * fun(x0 + (k / 2 - j) * step) for j in range(k + 1)) / step ** k
        out.append((4 * dk(h / 2) - dk(h)) / 3)
    return out


def se2_matrix(theta, a, b):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, a], [s, c, b], [0.0, 0.0, 1.0]])


def mobius_matrix(a, b, c):
    return np.array([[a, b], [c, (b * c + 1) / a]])


def sympy_mc_se2():
    """(dg)g^-1 for SE(2) in plain sympy, returned as 3x3 of dict param->coeff."""
    th, a, b = sp.symbols("theta a b")
    g = sp.Matrix([[sp.cos(th), -sp.sin(th), a], [sp.sin(th), sp.cos(th), b], [0, 0, 1]])
    ginv = sp.simplify(g.inv())
    return {t: sp.simplify(g.diff(t) * ginv) for t in (th, a, b)}


def curvature(u_x, v_x, u_xx, v_xx):
    return (u_x * v_xx - u_xx * v_x) / (u_x ** 2 + v_x ** 2) ** 1.5


def schwarzian_half(z1, z2, z3):
    """z_www/(2 z_w) - 3 z_ww^2/(4 z_w^2)."""
    return z3 / (2 * z1) - 3 * z2 ** 2 / (4 * z1 ** 2)
