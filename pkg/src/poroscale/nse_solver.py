"""Scaled compressible Navier-Stokes on the perforated grid.

The system marched here is, after dividing the momentum equation by the
inertia scale eps^lambda,

    dt rho + div(rho u) = 0,
    dt(rho u) + div(rho u x u) - eps^(2-lambda) div S(grad u)
        + eps^(-lambda) grad p(rho) = eps^(-lambda) rho f,

with exact no-slip on every masked face (holes and, on a box, the outer
wall).  Transport and momentum convection are first-order upwind, the
pressure gradient explicit under the acoustic CFL dt ~ h eps^(lambda/2)
(the Mach scaling), and the stiff viscous operator - whose coefficient
eps^(2-lambda) is large for lambda > 2 - is treated implicitly by one SPD
solve per step.

The step policy also enforces dt <= eps^2 (4/3 + eta) / max(rho p'(rho)),
which is the threshold below which the implicit viscous damping absorbs
the anti-dissipative error of the explicit acoustic update.

Energy bookkeeping uses the discrete operator form: the dissipation
recorded per step is dt * eps^2 * [ |grad u|^2 + (1/3+eta)(div u)^2 ] h^d,
which is the exact quadratic form of the implicit operator and the
discrete counterpart of the S(grad u):grad u integral.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _ops as ops
from .pressure_law import potential_H, pressure_eval

DENSITY_FLOOR = 1e-12


@dataclass
class FlowState:
    t: float
    rho: np.ndarray
    u: list
    diagnostics: dict = field(default_factory=dict)


def _mask_velocity(u, grid):
    return [np.where(grid.fluid_face[k], uk, 0.0) for k, uk in enumerate(u)]


def initialize_flow(grid, law, lam, rho0, u0=None, m0=None):
    """Build the initial state, enforcing the compatibility conditions.

    ``u0`` (well-prepared mode) is a face velocity, typically the corrector
    velocity of the limit solution at t=0, which makes the initial relative
    energy O(eps^beta); ``m0`` (explicit mode) is a face momentum.  Vacuum
    cells must carry zero momentum.
    """
    rho = np.where(grid.fluid_cell, np.asarray(rho0, dtype=float), 0.0)
    if np.any(rho < 0.0):
        raise ValueError("initial density must be nonnegative")
    if u0 is not None and m0 is not None:
        raise ValueError("give either u0 (well-prepared) or m0 (explicit)")
    if u0 is not None:
        u = _mask_velocity([np.asarray(c, dtype=float) for c in u0], grid)
    elif m0 is not None:
        u = []
        for k, mk in enumerate(m0):
            mk = np.where(grid.fluid_face[k], np.asarray(mk, dtype=float), 0.0)
            rf = ops.avg_c2f(rho, k)
            vacuum = (rho <= DENSITY_FLOOR) | (np.roll(rho, 1, axis=k) <= DENSITY_FLOOR)
            if np.any(vacuum & (np.abs(mk) > 0.0)):
                raise ValueError("nonzero momentum on a vacuum cell violates "
                                 "the compatibility conditions")
            degenerate = rf <= DENSITY_FLOOR
            u.append(np.where(degenerate, 0.0, mk / np.where(degenerate, 1.0, rf)))
    else:
        u = [np.zeros(grid.domain.shape) for _ in range(grid.dim)]
    state = FlowState(t=0.0, rho=rho, u=u)
    state.diagnostics = flow_diagnostics(state, grid, law, lam)
    state.diagnostics["dissipation"] = 0.0
    state.diagnostics["force_work"] = 0.0
    return state


def flow_diagnostics(state, grid, law, lam, eta_bulk=0.0):
    """Energy split and the uniform-bound monitors of the a priori estimate."""
    h, d = grid.h, grid.dim
    eps = grid.epsilon
    hd = h**d
    kin = 0.0
    l2u = 0.0
    grad2 = 0.0
    for k, uk in enumerate(state.u):
        rf = ops.avg_c2f(state.rho, k)
        kin += 0.5 * float(np.sum(rf * uk**2)) * hd
        l2u += float(np.sum(uk**2)) * hd
        v = np.where(grid.fluid_face[k], uk, 0.0)
        for ax in range(d):
            grad2 += float(np.sum(((np.roll(v, -1, axis=ax) - v) / h) ** 2)) * hd
    internal = float(np.sum(potential_H(law, state.rho))) * hd
    gamma_norm = float(np.sum(state.rho**law.gamma)) * hd
    mass = float(np.sum(state.rho)) * hd
    return {
        "mass": mass,
        "kinetic": eps**lam * kin,
        "internal": internal,
        "energy": eps**lam * kin + internal,
        "bds_kinetic": 2.0 * eps**lam * kin,
        "bds_u_l2sq": l2u,
        "bds_grad_l2sq": eps**2 * grad2,
        "bds_rho_gamma": gamma_norm,
    }


def viscous_form(u, grid, eta_bulk=0.0):
    """Discrete integral of S(grad u):grad u (h^d weighted, mu = 1)."""
    h, d = grid.h, grid.dim
    um = _mask_velocity(u, grid)
    total = 0.0
    for k in range(d):
        for ax in range(d):
            total += float(np.sum(((np.roll(um[k], -1, axis=ax) - um[k]) / h) ** 2))
    dv = ops.div(um, h)
    total += (1.0 / 3.0 + eta_bulk) * float(np.sum(dv**2))
    return total * h**d


def acoustic_dt(rho, law, lam, grid, u=None, eta_bulk=0.0, safety=0.5):
    """Stable step: acoustic CFL at Mach eps^(lambda/2), material CFL, and
    the viscous-stabilization threshold for the explicit acoustics."""
    eps, h = grid.epsilon, grid.h
    pmax = float(np.max(rho[grid.fluid_cell] * pressure_eval(law, rho[grid.fluid_cell], order=1))) if grid.fluid_cell.any() else 1.0
    cmax = np.sqrt(float(np.max(pressure_eval(law, rho, order=1))))
    dt = safety * h * eps ** (lam / 2.0) / max(cmax, 1e-300)
    dt = min(dt, safety * eps**2 * (4.0 / 3.0 + eta_bulk) / max(pmax, 1e-300))
    if u is not None:
        umax = max(float(np.abs(uk).max()) for uk in u)
        if umax > 0.0:
            dt = min(dt, safety * h / umax)
    return dt


class _NSEStepper:
    """One-grid stepper caching masks, force faces and FFT symbols."""

    def __init__(self, grid, law, lam, f=None, eta_bulk=0.0, cg_rtol=1e-10):
        from .limit_solver import force_on_faces
        self.grid = grid
        self.law = law
        self.lam = lam
        self.eta_bulk = eta_bulk
        self.cg_rtol = cg_rtol
        self.nu = grid.epsilon ** (2.0 - lam)
        self.inv_eps_lam = grid.epsilon ** (-lam)
        self.f_faces = force_on_faces(grid.domain, f)
        self._lap_sym = ops.lap_symbol(grid.domain.shape, grid.h)
        self._warm = None

    # -- explicit pieces -------------------------------------------------
    def _mass_flux(self, rho, u):
        flux = []
        for j, uj in enumerate(u):
            up = np.where(uj >= 0.0, np.roll(rho, 1, axis=j), rho)
            flux.append(up * uj)
        return flux

    def _convection(self, rho, u):
        h, d = self.grid.h, self.grid.dim
        m = [ops.avg_c2f(rho, j) * u[j] for j in range(d)]
        conv = []
        for k in range(d):
            acc = np.zeros(self.grid.domain.shape)
            for j in range(d):
                if j == k:
                    v = ops.avg_f2c(m[j], j)
                    fl = np.where(v >= 0.0, u[k], np.roll(u[k], -1, axis=k)) * v
                    acc += ops.grad(fl, k, h)
                else:
                    v = ops.avg_c2f(m[j], k)
                    fl = np.where(v >= 0.0, np.roll(u[k], 1, axis=j), u[k]) * v
                    acc += (np.roll(fl, -1, axis=j) - fl) / h
            conv.append(acc)
        return conv

    # -- implicit viscous solve ------------------------------------------
    def _viscous_solve(self, rho_face, rhs, dt):
        grid = self.grid
        h, d = grid.h, grid.dim
        coef = dt * self.nu
        masks = grid.fluid_face

        def apply_B(u):
            um = [np.where(masks[k], u[k], 0.0) for k in range(d)]
            dv = ops.div(um, h)
            out = []
            for k in range(d):
                visc = -ops.lap(um[k], h) - (1.0 / 3.0 + self.eta_bulk) * ops.grad(dv, k, h)
                out.append(np.where(masks[k], rho_face[k] * um[k] + coef * visc, 0.0))
            return out

        rho_bar = max(float(np.mean([rf[masks[k]].mean() for k, rf in enumerate(rho_face)])), DENSITY_FLOOR)
        sym = rho_bar + coef * self._lap_sym

        def apply_M(r):
            from scipy import fft as sfft
            return [np.where(masks[k],
                             sfft.irfftn(sfft.rfftn(np.where(masks[k], r[k], 0.0)) / sym,
                                         s=grid.domain.shape), 0.0)
                    for k in range(d)]

        b = [np.where(masks[k], rhs[k], 0.0) for k in range(d)]
        x = self._warm if self._warm is not None else [np.zeros_like(bk) for bk in b]
        x = [xk.copy() for xk in x]

        # flattened-CG over the concatenated components
        pack = lambda vs: np.concatenate([v.ravel() for v in vs])
        shape = grid.domain.shape

        def unpack(v):
            return [v[i * v.size // d:(i + 1) * v.size // d].reshape(shape) for i in range(d)]

        xv, _, _ = ops.pcg(lambda v: pack(apply_B(unpack(v))), pack(b), pack(x),
                           lambda r: pack(apply_M(unpack(r))),
                           rtol=self.cg_rtol, maxiter=500)
        out = [np.where(masks[k], u, 0.0) for k, u in enumerate(unpack(xv))]
        self._warm = out
        return out

    # -- one full step -----------------------------------------------------
    def step(self, state, dt):
        grid, law = self.grid, self.law
        h, d = grid.h, grid.dim
        rho, u = state.rho, state.u

        rho_new = rho - dt * ops.div(self._mass_flux(rho, u), h)
        if np.any(rho_new < -1e-13):
            raise RuntimeError("negative density after transport; dt too large")
        rho_new = np.where(grid.fluid_cell, np.maximum(rho_new, DENSITY_FLOOR), 0.0)

        p = pressure_eval(law, rho)
        conv = self._convection(rho, u)
        rho_face_old = [ops.avg_c2f(rho, k) for k in range(d)]
        rho_face_new = [ops.avg_c2f(rho_new, k) for k in range(d)]
        mstar = []
        for k in range(d):
            m = rho_face_old[k] * u[k]
            m = m - dt * conv[k] \
                - dt * self.inv_eps_lam * ops.grad(p, k, h) \
                + dt * self.inv_eps_lam * rho_face_old[k] * self.f_faces[k]
            mstar.append(np.where(grid.fluid_face[k], m, 0.0))

        u_new = self._viscous_solve(rho_face_new, mstar, dt)

        new = FlowState(t=state.t + dt, rho=rho_new, u=u_new)
        diag = flow_diagnostics(new, grid, law, self.lam, self.eta_bulk)
        eps2_diss = grid.epsilon**2 * viscous_form(u_new, grid, self.eta_bulk)
        work = 0.0
        for k in range(d):
            work += float(np.sum(rho_face_new[k] * self.f_faces[k] * u_new[k])) * h**d
        diag["dissipation"] = state.diagnostics.get("dissipation", 0.0) + dt * eps2_diss
        diag["force_work"] = state.diagnostics.get("force_work", 0.0) + dt * work
        new.diagnostics = diag
        return new


def step_nse(state, dt, lam, law, f, grid, eta_bulk=0.0):
    """Single step with a fresh stepper (tests); sweeps should use solve_nse."""
    return _NSEStepper(grid, law, lam, f, eta_bulk).step(state, dt)


def solve_nse(grid, law, lam, rho0, u0=None, m0=None, f=None, T=1.0,
              output_times=None, eta_bulk=0.0, dt_factor=1.0, dt=None,
              monitor_every=0):
    """March the perforated NSE to T and return snapshots at output times.

    Also returns a monitor dict with time series of the a priori bound
    quantities and the running energy-inequality defect
    E(t) + dissipation - E(0) - force work.
    """
    stepper = _NSEStepper(grid, law, lam, f, eta_bulk)
    state = initialize_flow(grid, law, lam, rho0, u0=u0, m0=m0)
    if output_times is None:
        output_times = [T]
    output_times = sorted(t for t in output_times if t > 0.0)
    traj = [state]
    E0 = state.diagnostics["energy"]
    monitors = {k: [v] for k, v in state.diagnostics.items()}
    monitors["t"] = [0.0]
    monitors["energy_defect"] = [0.0]
    nstep = 0
    for t_out in output_times:
        while state.t < t_out - 1e-14:
            dt_n = dt if dt is not None else dt_factor * acoustic_dt(
                state.rho, law, lam, grid, u=state.u, eta_bulk=eta_bulk)
            dt_n = min(dt_n, t_out - state.t)
            state = stepper.step(state, dt_n)
            nstep += 1
            if monitor_every and nstep % monitor_every == 0:
                _append_monitors(monitors, state, E0)
        state.t = t_out
        traj.append(state)
        _append_monitors(monitors, state, E0)
    return traj, monitors


def _append_monitors(monitors, state, E0):
    d = state.diagnostics
    monitors["t"].append(state.t)
    monitors["energy_defect"].append(
        d["energy"] + d["dissipation"] - E0 - d["force_work"])
    for k, v in d.items():
        monitors.setdefault(k, []).append(v)
