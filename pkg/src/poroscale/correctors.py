"""Comparison pair (r_eps, w_eps) and the boundary corrector.

The pair compares a perforated-domain flow against a limit solution:

    w_eps = W(x/eps) K^{-1} u,
    r_eps = p^{-1}( p(rho) + eps * (K^{-1} q)(x/eps) . u ),

built by periodic tiling of the cell solution.  The grid resolution per
homogenization cell equals the cell-problem resolution, so the x/eps lookup
is index arithmetic (np.tile), with no interpolation error term.

On a box, w_eps does not vanish at the outer wall; the boundary corrector

    w_tilde = eta_eps w_eps + eps * (grad eta_eps x Phi(x/eps)) K^{-1} u

(in 2D the cross product degenerates to the perpendicular gradient of the
stream functions) restores the zero trace exactly while keeping
div w_tilde bounded, and Psi_eps = w_tilde - w_eps is supported in the
collar of width eps*d, d the obstacle clearance.  The cutoff is the C^1
smoothstep eta(t) = 3(t/d)^2 - 2(t/d)^3 clamped to [0,1]; eta'(0) = 0 makes
the wall trace exactly zero, and eta == 1 past the collar makes
w_tilde == w_eps there bit-exactly.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _ops as ops
from .pressure_law import pressure_eval, pressure_inverse


@dataclass
class CorrectorPair:
    t: float
    r: np.ndarray                 # density corrector, cell centered
    w: list                       # velocity corrector, faces
    div_w: np.ndarray
    dr_dt: np.ndarray = None
    dw_dt: list = None
    psi: list = None              # boundary corrector, faces (box mode)
    w_tilde: list = None          # w + psi; equals w on the torus
    dw_tilde_dt: list = None
    eta: list = field(default=None, repr=False)


class EpsilonTooLargeError(ValueError):
    pass


def _tile(arr, reps, dim):
    return np.tile(arr, (reps,) * dim)


def _smoothstep(t, d):
    s = np.clip(t / d, 0.0, 1.0)
    return 3.0 * s**2 - 2.0 * s**3


def _smoothstep_deriv(t, d):
    s = np.clip(t / d, 0.0, 1.0)
    return (6.0 * s - 6.0 * s**2) / d


def _levi_civita(i, j, k):
    if (i, j, k) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        return 1
    if (i, j, k) in ((0, 2, 1), (2, 1, 0), (1, 0, 2)):
        return -1
    return 0


def _edge_to_face_3d(arr, edge_axis, face_axis):
    """Average a 3D edge-lattice array onto a face lattice.

    An edge field is centered along its own axis and cornered in the other
    two; a face field is cornered along its axis and centered in the rest.
    """
    out = arr
    for a in range(3):
        corner_src = a != edge_axis
        corner_dst = a == face_axis
        if corner_src and not corner_dst:
            out = ops.avg_f2c(out, a)
        elif corner_dst and not corner_src:
            out = ops.avg_c2f(out, a)
    return out


class CorrectorBuilder:
    """Caches the tiled cell fields for one (cell solution, grid) pair."""

    def __init__(self, sol, grid, law):
        if sol.cell.n != grid.n_per_cell or sol.cell.dim != grid.dim:
            raise ValueError("cell solution resolution must match the grid's "
                             "per-cell resolution (index-arithmetic lookup)")
        if len(sol.directions) != sol.dim:
            raise ValueError("correctors need all forcing directions solved")
        self.sol = sol
        self.grid = grid
        self.law = law
        self.eps = grid.epsilon
        d = grid.dim
        m = grid.tiles_per_side
        invK = np.linalg.inv(sol.K)
        self.invK = invK
        # tiled W^eps_{kj} = sum_m W_{km}(x/eps) invK[m, j], per face axis k
        self.Wt = [[sum(invK[mm, j] * _tile(sol.W[mm][k], m, d) for mm in range(d))
                    for j in range(d)] for k in range(d)]
        # tiled (K^{-1} q)_j, cell centered, zero mean over fluid cells
        self.qt = []
        for j in range(d):
            qj = sum(invK[j, mm] * _tile(sol.q[mm], m, d) for mm in range(d))
            qj = np.where(grid.fluid_cell, qj - qj[grid.fluid_cell].mean(), 0.0)
            self.qt.append(qj)
        self.phi_t = None
        if grid.domain.kind == "box":
            if sol.Phi is None:
                from .cell_problem import solve_vector_potential
                solve_vector_potential(sol)
            if d == 2:
                self.phi_t = [_tile(p, m, d) for p in sol.Phi]  # node scalars
            else:
                self.phi_t = [[_tile(c, m, d) for c in col] for col in sol.Phi]

    # -- fields ------------------------------------------------------------
    def velocity(self, u):
        """w_eps = W^eps u at faces; u is a limit (smooth) face velocity."""
        d = self.grid.dim
        out = []
        for k in range(d):
            acc = np.zeros(self.grid.domain.shape)
            for j in range(d):
                acc += self.Wt[k][j] * ops.interp_to_face(u[j], j, k)
            out.append(acc)
        return out

    def w_eps_at_centers(self):
        """W^eps interpolated to cell centers, for the duality checks."""
        d = self.grid.dim
        return [[ops.avg_f2c(self.Wt[k][j], k) for j in range(d)] for k in range(d)]

    def density(self, rho, u):
        """r_eps = p^{-1}(p(rho) + eps (K^{-1} q)(x/eps) . u) on fluid cells."""
        uc = ops.velocity_at_centers(u)
        perturb = self.eps * sum(self.qt[j] * uc[j] for j in range(self.grid.dim))
        arg = pressure_eval(self.law, rho) + perturb
        fluid = self.grid.fluid_cell
        if np.any(arg[fluid] <= 0.0):
            raise EpsilonTooLargeError(
                f"p(rho) + eps^2 q^eps . u reaches {arg[fluid].min():.3e} <= 0; "
                "epsilon is above the corrector existence threshold")
        return np.where(fluid, pressure_inverse(self.law, np.maximum(arg, 0.0)), 0.0)

    def boundary_fields(self, u):
        """(psi, w_tilde, eta at faces); psi == 0 and w_tilde == w on the torus."""
        grid = self.grid
        w = self.velocity(u)
        if grid.domain.kind != "box":
            return [np.zeros_like(wk) for wk in w], w, None
        d = grid.dim
        eps = self.eps
        dcut = grid.cell.obstacle.clearance
        uc = ops.velocity_at_centers(u)
        uKinv = [sum(self.invK[j, mm] * uc[mm] for mm in range(d)) for j in range(d)]

        for k in range(d):
            wall = np.abs(u[k][grid.domain.boundary_face_mask(k)])
            if wall.size and wall.max() > 1e-8:
                warnings.warn(
                    f"limit velocity has normal trace {wall.max():.2e} on the "
                    "wall; the div Psi bound degrades", RuntimeWarning)

        etas, w_tilde = [], []
        for k in range(d):
            pts = grid.domain.face_centers(k)
            per_axis = np.minimum(pts, 1.0 - pts)
            dist = np.min(per_axis, axis=-1)
            eta = _smoothstep(dist / eps, dcut)
            deta = _smoothstep_deriv(dist / eps, dcut) / eps
            nearest = np.argmin(per_axis, axis=-1)
            grad_eta = [np.where(nearest == a,
                                 deta * np.where(pts[..., a] < 0.5, 1.0, -1.0),
                                 0.0) for a in range(d)]

            corr = np.zeros(grid.domain.shape)
            if d == 2:
                perp = grad_eta[1] if k == 0 else -grad_eta[0]
                other = 1 - k
                for j in range(d):
                    phi_f = ops.avg_f2c(self.phi_t[j], other)  # nodes -> k-faces
                    uj_f = ops.interp_to_face(ops.avg_c2f(uKinv[j], j), j, k)
                    corr += eps * perp * phi_f * uj_f
            else:
                for j in range(d):
                    uj_f = ops.interp_to_face(ops.avg_c2f(uKinv[j], j), j, k)
                    for a in range(d):
                        for b in range(d):
                            sgn = _levi_civita(k, a, b)
                            if sgn == 0:
                                continue
                            phi_f = _edge_to_face_3d(self.phi_t[j][b], b, k)
                            corr += eps * sgn * grad_eta[a] * phi_f * uj_f
            wt = eta * w[k] + corr
            wt = np.where(grid.domain.boundary_face_mask(k), 0.0, wt)
            wt = np.where(dist >= eps * dcut, w[k], wt)
            w_tilde.append(wt)
            etas.append(eta)
        psi = [wt - wk for wt, wk in zip(w_tilde, w)]
        return psi, w_tilde, etas

    def build(self, limit, prev=None, nxt=None):
        """CorrectorPair at a limit snapshot; time derivatives by central
        differences when the neighbouring snapshots are supplied."""
        grid = self.grid
        r = self.density(limit.rho, limit.u)
        w = self.velocity(limit.u)
        psi, w_tilde, eta = self.boundary_fields(limit.u)
        pair = CorrectorPair(t=limit.t, r=r, w=w,
                             div_w=np.where(grid.fluid_cell,
                                            ops.div(w, grid.h), 0.0),
                             psi=psi, w_tilde=w_tilde, eta=eta)
        if prev is not None and nxt is not None:
            dt2 = nxt.t - prev.t
            r_p, r_n = self.density(prev.rho, prev.u), self.density(nxt.rho, nxt.u)
            w_p, w_n = self.velocity(prev.u), self.velocity(nxt.u)
            pair.dr_dt = (r_n - r_p) / dt2
            pair.dw_dt = [(a - b) / dt2 for a, b in zip(w_n, w_p)]
            if grid.domain.kind == "box":
                _, wt_p, _ = self.boundary_fields(prev.u)
                _, wt_n, _ = self.boundary_fields(nxt.u)
                pair.dw_tilde_dt = [(a - b) / dt2 for a, b in zip(wt_n, wt_p)]
            else:
                pair.dw_tilde_dt = pair.dw_dt
        return pair


def build_correctors(sol, limit, grid, law, prev=None, nxt=None):
    """One-off construction; pipelines should reuse a CorrectorBuilder."""
    return CorrectorBuilder(sol, grid, law).build(limit, prev=prev, nxt=nxt)


def build_boundary_corrector(sol, limit, grid, law):
    """(psi_eps, w_tilde, eta) for a box grid (zero corrector on the torus)."""
    return CorrectorBuilder(sol, grid, law).boundary_fields(limit.u)


def _profile_dictionary(dim):
    """Smooth scalar profiles for the duality test.

    Integer-frequency trigs are orthogonal to every tile-periodic field, so
    the dictionary mixes half-frequency waves and off-lattice bumps that
    genuinely see the oscillation of W^eps.
    """
    pi = np.pi

    def bump(p, c, width):
        r2 = sum((p[..., a] - c[a]) ** 2 for a in range(dim))
        return np.exp(-r2 / width**2)

    return [
        lambda p: np.sin(pi * p[..., 0]),
        lambda p: np.sin(pi * p[..., 0]) * np.sin(pi * p[..., 1 % dim]),
        lambda p: np.sin(2 * pi * p[..., 0]),
        lambda p: bump(p, (0.37,) * dim, 0.17),
        lambda p: bump(p, (0.61, 0.29) + (0.5,) * (dim - 2), 0.23),
        lambda p: np.ones(p.shape[:-1]),
    ]


def duality_defect(builder):
    """sup over a dictionary of the normalized pairing

        | int_{Omega_eps} (theta^{-1} Id - W^eps) : Psi dx |
          / ( eps * ||Psi||_{W^{1,1}} ),

    with Psi = profile * E_kj over all entries; a lower bound for the
    dual-norm corrector estimate, bounded across the epsilon sweep.
    """
    grid = builder.grid
    d = grid.dim
    eps, h = grid.epsilon, grid.h
    theta = grid.cell.theta_h
    fluid = grid.fluid_cell
    pts = grid.domain.cell_centers()
    Wc = builder.w_eps_at_centers()
    best = 0.0
    for fn in _profile_dictionary(d):
        vals = fn(pts)
        gradsum = sum(np.abs((np.roll(vals, -1, axis=a) - vals) / h)
                      for a in range(d))
        w11 = float((np.abs(vals) + gradsum).sum()) * h**d
        for k in range(d):
            for j in range(d):
                target = 1.0 / theta if k == j else 0.0
                num = float(((target - Wc[k][j]) * vals)[fluid].sum()) * h**d
                best = max(best, abs(num) / max(eps * w11, 1e-300))
    return best


def verify_corrector_bounds(cases):
    """Measured corrector-estimate constants across an epsilon sweep.

    ``cases``: list of (builder, pair, limit) or (builder, pair, limit,
    drho_dt) tuples over >= 3 distinct epsilon.  Returns one row per case
    with the normalized quantities; raises if any of them grows by more
    than a factor 2 between consecutive epsilon (unbounded growth).
    """
    if len(cases) < 3:
        raise ValueError("need at least three epsilon values")
    rows = []
    for case in cases:
        builder, pair, limit = case[:3]
        drho_dt = case[3] if len(case) > 3 else None
        grid = builder.grid
        eps, h = grid.epsilon, grid.h
        fluid = grid.fluid_cell
        r_dev = float(np.abs(pair.r - limit.rho)[fluid].max())
        grad_w = 0.0
        for k in range(grid.dim):
            wk = np.where(grid.fluid_face[k], pair.w[k], 0.0)
            for ax in range(grid.dim):
                grad_w = max(grad_w,
                             float(np.abs((np.roll(wk, -1, axis=ax) - wk) / h).max()))
        row = {
            "epsilon": eps,
            "r_dev_over_eps": r_dev / eps,
            "eps_grad_w": eps * grad_w,
            "div_w_inf": float(np.abs(pair.div_w).max()),
            "duality_defect": duality_defect(builder),
        }
        if pair.dr_dt is not None and drho_dt is not None:
            row["dt_r_dev_over_eps"] = float(
                np.abs((pair.dr_dt - drho_dt)[fluid]).max()) / eps
        rows.append(row)

    rows.sort(key=lambda r: -r["epsilon"])
    for a, b in zip(rows, rows[1:]):
        for key in ("r_dev_over_eps", "eps_grad_w", "div_w_inf"):
            if a[key] > 1e-12 and b[key] / a[key] > 2.0:
                raise RuntimeError(
                    f"{key} grows by {b[key] / a[key]:.2f}x between "
                    f"eps={a['epsilon']} and eps={b['epsilon']}")
    return rows
