"""Independent Cartesian oracle on flat R^3 for a rotationally symmetric 2-tensor.

h_ij(x) = b(r) delta_ij + c(r) x_i x_j / r^2 with c = a - b, written with
c(r)/r^2 = 0.03 exp(-r^2/6) so that h is smooth at the origin.  Exact
derivatives come from sympy; the nonlinear part of the Ricci-DeTurck
operator is formed directly as -2 Rc(g) + L_W g - Lap h with g = delta + h
and W^k = g^{ij} Gamma^k_ij, without any reduction to radial variables.

Run as a script to regenerate the frozen values used in the tests.
"""

import numpy as np
import sympy as sp

X = sp.symbols("x0:3", real=True)
R2 = sum(v**2 for v in X)
A_EXPR = sp.Rational(1, 10) * sp.exp(-R2 / 8)
CT_EXPR = sp.Rational(3, 100) * sp.exp(-R2 / 6)  # c / r^2
B_EXPR = A_EXPR - CT_EXPR * R2
H = sp.Matrix(3, 3, lambda i, j: B_EXPR * (1 if i == j else 0) + CT_EXPR * X[i] * X[j])


def profiles(r):
    """Numeric a(r), b(r) for the same field."""
    a = 0.1 * np.exp(-r**2 / 8)
    b = a - 0.03 * r**2 * np.exp(-r**2 / 6)
    return a, b


def _jets(point):
    sub = dict(zip(X, point))
    h = np.array([[float(H[i, j].subs(sub)) for j in range(3)] for i in range(3)])
    dh = np.array([[[float(sp.diff(H[i, j], X[k]).subs(sub)) for j in range(3)] for i in range(3)] for k in range(3)])
    ddh = np.array(
        [
            [[[float(sp.diff(H[i, j], X[k], X[l]).subs(sub)) for j in range(3)] for i in range(3)] for k in range(3)]
            for l in range(3)
        ]
    )
    return h, dh, ddh  # dh[k,i,j] = d_k h_ij, ddh[l,k,i,j] = d_l d_k h_ij


def ricci_deturck_nonlinear(point):
    h, dh, ddh = _jets(point)
    g = np.eye(3) + h
    gi = np.linalg.inv(g)
    # dgi[m,k,l] = d_m g^{kl}
    dgi = -np.einsum("ka,mab,bl->mkl", gi, dh, gi)
    # lower Christoffel [ij,l] and its derivative
    low = np.empty((3, 3, 3))
    dlow = np.empty((3, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            for l in range(3):
                low[i, j, l] = 0.5 * (dh[i, j, l] + dh[j, i, l] - dh[l, i, j])
                for m in range(3):
                    dlow[m, i, j, l] = 0.5 * (ddh[m, i, j, l] + ddh[m, j, i, l] - ddh[m, l, i, j])
    Gam = np.einsum("kl,ijl->kij", gi, low)
    dGam = np.einsum("mkl,ijl->mkij", dgi, low) + np.einsum("kl,mijl->mkij", gi, dlow)
    # Rc_ij = d_k Gam^k_ij - d_j Gam^k_ik + Gam^k_kp Gam^p_ij - Gam^k_jp Gam^p_ik
    Rc = (
        np.einsum("kkij->ij", dGam)
        - np.einsum("jkik->ij", dGam)
        + np.einsum("kkp,pij->ij", Gam, Gam)
        - np.einsum("kjp,pik->ij", Gam, Gam)
    )
    W = np.einsum("ij,kij->k", gi, Gam)
    dW = np.einsum("mij,kij->mk", dgi, Gam) + np.einsum("ij,mkij->mk", gi, dGam)
    LW = np.einsum("k,kij->ij", W, dh) + np.einsum("kj,ik->ij", g, dW) + np.einsum("ik,jk->ij", g, dW)
    lap = np.einsum("kkij->ij", ddh)
    return -2.0 * Rc + LW - lap


def derivative_norms(point):
    h, dh, ddh = _jets(point)
    return float(np.sqrt(np.sum(dh**2))), float(np.sqrt(np.sum(ddh**2)))


def drift_laplacian(point):
    """(Lap h - grad_{grad f} h)_ij with f = |x|^2/4."""
    h, dh, ddh = _jets(point)
    x = np.asarray(point, dtype=float)
    return np.einsum("kkij->ij", ddh) - np.einsum("k,kij->ij", 0.5 * x, dh)


RADII = (0.5, 1.0, 2.0, 3.0)

if __name__ == "__main__":
    for r in RADII:
        p = (r, 0.0, 0.0)
        E = ricci_deturck_nonlinear(p)
        L = drift_laplacian(p)
        n1, n2 = derivative_norms(p)
        print(f"    ({r}, {E[0, 0]!r}, {E[1, 1]!r}, {n1!r}, {n2!r}, {L[0, 0]!r}, {L[1, 1]!r}),")
