"""Batched symmetric 3x3 eigen-decomposition.

Eigenvalues come from the closed-form trigonometric solution of the
characteristic cubic. Rows whose spectrum is (nearly) repeated, where the
closed form loses its eigenvectors, are re-solved with cyclic Jacobi
rotations.
"""

import numpy as np

DEGENERACY_TOL = 1e-12


def jacobi_eigh3(C, max_sweeps=50):
    """Cyclic Jacobi on a batch of symmetric 3x3 matrices.

    Returns ``(values, vectors)`` with values sorted descending and
    ``vectors[..., :, j]`` the eigenvector of ``values[..., j]``.
    """
    A = np.array(C, dtype=np.float64, copy=True).reshape(-1, 3, 3)
    m = A.shape[0]
    V = np.broadcast_to(np.eye(3), (m, 3, 3)).copy()
    for _ in range(max_sweeps):
        off = A[:, 0, 1] ** 2 + A[:, 0, 2] ** 2 + A[:, 1, 2] ** 2
        scale = np.einsum("nii->n", A * A)
        if np.all(off <= 1e-32 * np.maximum(scale, 1e-300)):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = A[:, p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            theta = np.zeros(m)
            theta[active] = (A[active, q, q] - A[active, p, p]) / (2.0 * apq[active])
            t = np.zeros(m)
            th = theta[active]
            t[active] = np.where(th >= 0, 1.0, -1.0) / (np.abs(th) + np.hypot(th, 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            J = np.broadcast_to(np.eye(3), (m, 3, 3)).copy()
            J[:, p, p] = c
            J[:, q, q] = c
            J[:, p, q] = s
            J[:, q, p] = -s
            A = np.einsum("nji,njk,nkl->nil", J, A, J)
            A[:, p, q] = A[:, q, p] = 0.0
            V = V @ J
    vals = np.einsum("nii->ni", A).copy()
    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    vecs = np.take_along_axis(V, order[:, None, :], axis=2)
    return vals.reshape(np.shape(C)[:-1]), vecs.reshape(np.shape(C))


def _closed_form_values(A):
    a00, a11, a22 = A[:, 0, 0], A[:, 1, 1], A[:, 2, 2]
    a01, a02, a12 = A[:, 0, 1], A[:, 0, 2], A[:, 1, 2]
    q = (a00 + a11 + a22) / 3.0
    p1 = a01 ** 2 + a02 ** 2 + a12 ** 2
    p2 = (a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe_p = np.where(p > 0, p, 1.0)
    B = (A - q[:, None, None] * np.eye(3)) / safe_p[:, None, None]
    r = np.clip(np.linalg.det(B) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    l1 = q + 2.0 * p * np.cos(phi)
    l3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    l2 = 3.0 * q - l1 - l3
    vals = np.stack([l1, l2, l3], axis=1)
    # normalised discriminant of the characteristic cubic: 0 when two roots coincide
    disc = np.where(p > 0, 1.0 - r * r, 0.0)
    return vals, disc


def eigvalsh3(C):
    """Descending eigenvalues of symmetric 3x3 matrices, shape (..., 3)."""
    A = np.asarray(C, dtype=np.float64).reshape(-1, 3, 3)
    vals, disc = _closed_form_values(A)
    bad = disc < DEGENERACY_TOL
    if np.any(bad):
        vals[bad] = jacobi_eigh3(A[bad])[0]
    return vals.reshape(np.shape(C)[:-1])


def smallest_eigvec3(C):
    """Eigenvalues (descending) and unit eigenvector of the smallest eigenvalue."""
    A = np.asarray(C, dtype=np.float64).reshape(-1, 3, 3)
    vals, disc = _closed_form_values(A)
    M = A - vals[:, 2, None, None] * np.eye(3)
    cands = np.stack([
        np.cross(M[:, 0], M[:, 1]),
        np.cross(M[:, 0], M[:, 2]),
        np.cross(M[:, 1], M[:, 2]),
    ], axis=1)
    norms = np.linalg.norm(cands, axis=2)
    best = np.argmax(norms, axis=1)
    vec = cands[np.arange(A.shape[0]), best]
    length = norms[np.arange(A.shape[0]), best]
    row_scale = np.einsum("nij,nij->n", A, A)
    bad = (disc < DEGENERACY_TOL) | (length <= 1e-12 * np.maximum(row_scale, 1e-300))
    out = np.zeros_like(vec)
    good = ~bad
    out[good] = vec[good] / length[good, None]
    if np.any(bad):
        jv, jvec = jacobi_eigh3(A[bad])
        vals[bad] = jv
        out[bad] = jvec[:, :, 2]
    return vals.reshape(np.shape(C)[:-1]), out.reshape(np.shape(C)[:-2] + (3,))
