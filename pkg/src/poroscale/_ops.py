"""Staggered (MAC) finite-difference calculus on periodic cubic lattices.

Conventions used across the package, for a cubic lattice with ``N`` cells per
side and spacing ``h``:

* scalar fields live at cell centers ``x_k = (i_k + 1/2) h`` and are stored
  as plain ``(N, ..., N)`` arrays;
* the k-component of a velocity lives at the *lower* k-face of cell ``i``,
  i.e. at ``x_k = i_k h``, stored with the same shape (periodic wraparound
  identifies slot 0 with the face at ``x_k = N h``);
* a velocity field is a list/tuple of ``dim`` such face arrays.

On a box the same storage is used; the boundary faces are the slots with
index 0, which all solvers keep masked to zero, so the wrapped differences
never see values from across the wall.

With these conventions ``grad`` (centers -> faces) and ``-div`` (faces ->
centers) are exact adjoints, and the discrete identities ``div curl = 0``
and ``curl curl = -lap + grad div`` hold to machine precision, which the
vector-potential construction relies on.
"""

import numpy as np
from scipy import fft as sfft


def grad(p, axis, h):
    """Center-to-face difference: value at face slot i is (p[i] - p[i-1])/h."""
    return (p - np.roll(p, 1, axis=axis)) / h


def div(u, h):
    """Face-to-center divergence of a velocity (list of face arrays)."""
    out = np.zeros_like(u[0])
    for k, uk in enumerate(u):
        out += np.roll(uk, -1, axis=k) - uk
    return out / h


def avg_c2f(p, axis):
    return 0.5 * (p + np.roll(p, 1, axis=axis))


def avg_f2c(u, axis):
    return 0.5 * (u + np.roll(u, -1, axis=axis))


def velocity_at_centers(u):
    """Interpolate a face velocity to cell centers, component-wise."""
    return [avg_f2c(uk, k) for k, uk in enumerate(u)]


def interp_to_face(field, src_axis_offset, axis):
    """Average a k-face array to the staggering of an `axis`-face array.

    ``src_axis_offset`` is the axis along which `field` is face-staggered.
    Averages over the four (2D: two) surrounding source points.
    """
    if src_axis_offset == axis:
        return field
    # to centers along the source axis, then to faces along the target axis
    return avg_c2f(avg_f2c(field, src_axis_offset), axis)


def lap(p, h):
    """Periodic 2*dim+1 point Laplacian on any (shifted) lattice."""
    out = -2.0 * p.ndim * p
    for ax in range(p.ndim):
        out += np.roll(p, 1, axis=ax) + np.roll(p, -1, axis=ax)
    return out / h**2


def neg_lap_dirichlet(u, mask, h):
    """-Laplacian with homogeneous Dirichlet values at masked slots.

    Input values at masked slots are ignored (treated as 0) and output rows
    at masked slots are zeroed, so the operator is SPD on the free slots.
    """
    v = np.where(mask, u, 0.0)
    out = 2.0 * u.ndim * v
    for ax in range(u.ndim):
        out -= np.roll(v, 1, axis=ax) + np.roll(v, -1, axis=ax)
    out /= h**2
    return np.where(mask, out, 0.0)


# ---------------------------------------------------------------------------
# spectral helpers


def lap_symbol(shape, h):
    """Eigenvalues of the periodic -Laplacian_h on an rfft grid, >= 0."""
    sym = None
    for ax, n in enumerate(shape):
        if ax == len(shape) - 1:
            m = np.arange(n // 2 + 1)
        else:
            m = np.fft.fftfreq(n) * n
        lam = (2.0 / h * np.sin(np.pi * m / n)) ** 2
        lam = lam.reshape([-1 if a == ax else 1 for a in range(len(shape))])
        sym = lam if sym is None else sym + lam
    return sym


def solve_poisson_periodic(rhs, h):
    """Solve -lap_h u = rhs on the periodic lattice, zero-mean gauge.

    The mean of ``rhs`` is projected out, so the solve is always well posed.
    """
    sym = lap_symbol(rhs.shape, h)
    rhat = sfft.rfftn(rhs)
    flat = sym.copy()
    flat[(0,) * rhs.ndim] = 1.0
    uhat = rhat / flat
    uhat[(0,) * rhs.ndim] = 0.0
    return sfft.irfftn(uhat, s=rhs.shape)


class SymbolInverse:
    """Apply (tau - lap_h)^{-1} via FFT; SPD preconditioner for masked solves."""

    def __init__(self, shape, h, tau):
        self._sym = lap_symbol(shape, h) + tau
        self._shape = shape

    def __call__(self, v):
        return sfft.irfftn(sfft.rfftn(v) / self._sym, s=self._shape)


# ---------------------------------------------------------------------------
# discrete curl pairs (all on unmasked periodic lattices)
#
# 2D node fields sit at corners x_k = i_k h.  curl_node_to_face(psi) is
# divergence free exactly; curl_face_to_node(curl_node_to_face(psi)) equals
# -lap(psi) exactly.


def curl_node_to_face_2d(psi, h):
    ux = (np.roll(psi, -1, axis=1) - psi) / h         # +d(psi)/dy at x-faces
    uy = -(np.roll(psi, -1, axis=0) - psi) / h        # -d(psi)/dx at y-faces
    return [ux, uy]


def curl_face_to_node_2d(u, h):
    return (u[1] - np.roll(u[1], 1, axis=0)) / h - (u[0] - np.roll(u[0], 1, axis=1)) / h


def curl_face_to_edge_3d(F, h):
    """Columnwise 3D curl of a face field, landing on edge lattices.

    Component m of the result lives on m-edges (centered in m, at corners in
    the other two axes); uses backward differences so that the pair with
    :func:`curl_edge_to_face_3d` satisfies curl curl = -lap + grad div.
    """
    out = []
    for m in range(3):
        k, l = (m + 1) % 3, (m + 2) % 3
        dFl_dk = (F[l] - np.roll(F[l], 1, axis=k)) / h
        dFk_dl = (F[k] - np.roll(F[k], 1, axis=l)) / h
        out.append(dFl_dk - dFk_dl)
    return out


def curl_edge_to_face_3d(E, h):
    """Adjoint-consistent curl taking edge fields back to face lattices."""
    out = []
    for i in range(3):
        k, l = (i + 1) % 3, (i + 2) % 3
        dEl_dk = (np.roll(E[l], -1, axis=k) - E[l]) / h
        dEk_dl = (np.roll(E[k], -1, axis=l) - E[k]) / h
        out.append(dEl_dk - dEk_dl)
    return out


# ---------------------------------------------------------------------------
# Krylov building blocks


def pcg(apply_A, b, x0, apply_M, rtol=1e-11, atol=0.0, maxiter=2000):
    """Preconditioned CG; returns (x, iterations, achieved residual 2-norm).

    Stops when ||b - A x||_2 <= max(rtol * ||b||_2, atol).
    """
    x = x0.copy()
    r = b - apply_A(x)
    z = apply_M(r)
    p = z.copy()
    rz = float(np.vdot(r, z).real)
    bnorm = float(np.linalg.norm(b))
    target = max(rtol * bnorm, atol)
    it = 0
    res = float(np.linalg.norm(r))
    while res > target and it < maxiter:
        Ap = apply_A(p)
        alpha = rz / float(np.vdot(p, Ap).real)
        x += alpha * p
        r -= alpha * Ap
        res = float(np.linalg.norm(r))
        if res <= target:
            break
        z = apply_M(r)
        rz_new = float(np.vdot(r, z).real)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return x, it, res
