"""Independent reference implementations used as test oracles.

Each oracle recomputes a quantity by a different route from the library:
dense algebra instead of sparse factorizations, explicit selection matrices
instead of index arrays, tensor-product formulas instead of quadrature.
"""

import numpy as np


def hex_unit_cube_operators():
    """Mass and Laplacian stiffness of one trilinear unit-cube element.

    Built as Kronecker products of the exact 1-D linear-element matrices,
    with local node order (x fastest within each z layer, counter-clockwise
    per face) mapped afterwards.
    """
    m1 = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    k1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    # tensor index (i, j, l) -> z-major, then y, then x
    M = np.kron(m1, np.kron(m1, m1))
    K = np.kron(m1, np.kron(m1, k1)) + np.kron(m1, np.kron(k1, m1)) + np.kron(k1, np.kron(m1, m1))
    # tensor ordering (x fastest, then y, then z) matches the node numbering of a 1x1x1 block mesh
    return M, K


def pod_count(s, tol):
    """Energy criterion by direct summation."""
    s = list(s)
    total = sum(v * v for v in s)
    for n in range(1, len(s) + 1):
        tail = sum(v * v for v in s[n:])
        if tail / total < tol:
            return n
    return len(s)


def deim_indices(U):
    """Straight-line DEIM with explicit selection matrices."""
    N, m = U.shape
    idx = [int(np.argmax(np.abs(U[:, 0])))]
    for j in range(1, m):
        P = np.zeros((N, j))
        for col, i in enumerate(idx):
            P[i, col] = 1.0
        Uj = U[:, :j]
        c = np.linalg.inv(P.T @ Uj) @ (P.T @ U[:, j])
        res = U[:, j] - Uj @ c
        idx.append(int(np.argmax(np.abs(res))))
    return idx


def dense_step(fom, x_prev, inputs, params):
    """One IMEX step with dense matrices and a dense solve."""
    E = fom.E.toarray()
    A = fom.A.toarray()
    Mf = fom.Mf.toarray()
    f = fom.nonlinearity(x_prev, params)
    rhs = E @ x_prev + fom.dt * (Mf @ f + fom.B @ inputs)
    return np.linalg.solve(E - fom.dt * A, rhs)


def dense_rom_trajectory(fom, V_phi, V_r, U_phi, P_phi, U_r, P_r, params):
    """Hyperreduced ROM march with explicit selection matrices and dense solves."""
    N = fom.N
    V = np.zeros((2 * N, V_phi.shape[1] + V_r.shape[1]))
    V[:N, : V_phi.shape[1]] = V_phi
    V[N:, V_phi.shape[1]:] = V_r
    EE = fom.EE.toarray()
    E = fom.E.toarray()
    M = fom.ops.mass.toarray()

    def sel(P):
        S = np.zeros((N, len(P)))
        S[np.asarray(P), np.arange(len(P))] = 1.0
        return S

    Sphi, Sr = sel(P_phi), sel(P_r)
    Wphi = U_phi @ np.linalg.inv(Sphi.T @ U_phi)
    Wr = U_r @ np.linalg.inv(Sr.T @ U_r)
    inputs = fom.inputs(params)
    xh = V.T @ fom.initial_state(params)
    out = [fom.C @ V @ xh]
    Xh = [xh]
    for k in range(1, fom.n_steps + 1):
        x = V @ xh
        f = fom.nonlinearity(x, params)
        f_ei = np.concatenate([Wphi @ (Sphi.T @ f[:N]), Wr @ (Sr.T @ f[N:])])
        Mf_ei = np.concatenate([M @ f_ei[:N], M @ f_ei[N:]])
        rhs = V.T @ (E @ x + fom.dt * (Mf_ei + fom.B @ inputs[k]))
        xh = np.linalg.solve(V.T @ EE @ V, rhs)
        Xh.append(xh)
        out.append(fom.C @ V @ xh)
    return np.array(out), np.column_stack(Xh)


def residual_norms(fom, X, params):
    """Step residual norms of a full-space trajectory, one step at a time."""
    EE = fom.EE.toarray()
    E = fom.E.toarray()
    Mf = fom.Mf.toarray()
    inputs = fom.inputs(params)
    out = []
    for k in range(1, X.shape[1]):
        f = fom.nonlinearity(X[:, k - 1], params)
        r = E @ X[:, k - 1] + fom.dt * (Mf @ f + fom.B @ inputs[k]) - EE @ X[:, k]
        out.append(np.linalg.norm(r))
    return np.array(out)


def spearman(a, b):
    """Rank correlation via average ranks."""
    def ranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        r[order] = np.arange(len(v), dtype=float)
        for val in np.unique(v):
            m = v == val
            r[m] = r[m].mean()
        return r

    ra, rb = ranks(a), ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    return float(ra @ rb / np.sqrt((ra @ ra) * (rb @ rb)))
