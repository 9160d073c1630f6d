"""Homogenized target system: Darcy's law coupled to mass conservation.

Solves, on the unit torus or box,

    theta dt rho - div(rho K grad p(rho)) + div(rho^2 K f) = 0,
    u = K (rho f - grad p(rho)),

with an explicit conservative finite-volume scheme: arithmetic face density
and centered pressure gradient in the diffusive flux, upwinding by the face
force sign in the advective flux.  Box walls carry zero total normal flux,
so mass conservation is a telescoping identity.
"""

from dataclasses import dataclass

import numpy as np

from . import _ops as ops
from .pressure_law import pressure_eval


class StepSizeError(RuntimeError):
    """Raised when dt violates the stability policy; carries a suggestion."""

    def __init__(self, dt, suggested):
        super().__init__(f"dt={dt:.3e} exceeds the stable step {suggested:.3e}")
        self.suggested = suggested


@dataclass
class LimitState:
    t: float
    rho: np.ndarray
    u: list


def force_on_faces(domain, f):
    """Normalize a force spec (None, callable, or face arrays) to face arrays."""
    if f is None:
        return [np.zeros(domain.shape) for _ in range(domain.dim)]
    if callable(f):
        out = []
        for k in range(domain.dim):
            vals = f(domain.face_centers(k))
            vals = np.asarray(vals)
            out.append(vals[..., k] if vals.shape[-1:] == (domain.dim,) else vals)
        return out
    return [np.asarray(fk, dtype=float) for fk in f]


def _K_dot_faces(domain, vecs, K):
    """(K v)_k at k-faces from per-axis face arrays v_j, averaging j -> k."""
    d = domain.dim
    out = []
    for k in range(d):
        acc = np.zeros(domain.shape)
        for j in range(d):
            if K[k, j] == 0.0:
                continue
            acc += K[k, j] * ops.interp_to_face(vecs[j], j, k)
        out.append(acc)
    return out


def darcy_velocity(rho, f, K, law, domain):
    """u = K (rho f - grad p(rho)) at faces; zero normal flux on box walls."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if abs(np.linalg.det(K)) < 1e-300:
        raise ValueError("permeability K is singular")
    if np.any(rho <= 0.0):
        raise ValueError("density must be positive")
    h = domain.h
    fF = force_on_faces(domain, f)
    p = pressure_eval(law, rho)
    drive = [ops.avg_c2f(rho, j) * fF[j] - ops.grad(p, j, h) for j in range(domain.dim)]
    u = _K_dot_faces(domain, drive, K)
    if domain.kind == "box":
        for k in range(domain.dim):
            u[k] = np.where(domain.boundary_face_mask(k), 0.0, u[k])
    return u


def suggest_dt(rho, f, K, theta, law, domain):
    """Stability policy: diffusive and advective CFL bounds combined."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    h = domain.h
    normK = float(np.linalg.norm(K, 2))
    stiff = float(np.max(rho * pressure_eval(law, rho, order=1))) * normK
    dt = 0.25 * h**2 * theta / max(stiff, 1e-300)
    fF = force_on_faces(domain, f)
    Kf = _K_dot_faces(domain, fF, K)
    vmax = float(np.max(rho)) * max(float(np.abs(v).max()) for v in Kf)
    if vmax > 0.0:
        dt = min(dt, 0.5 * h * theta / vmax)
    return dt


def _fluxes(rho, f_faces, K, law, domain):
    h, d = domain.h, domain.dim
    p = pressure_eval(law, rho)
    gradp = [ops.grad(p, j, h) for j in range(d)]
    Kgp = _K_dot_faces(domain, gradp, K)
    Kf = _K_dot_faces(domain, f_faces, K)
    flux = []
    for k in range(d):
        rho_face = ops.avg_c2f(rho, k)
        diff = -rho_face * Kgp[k]
        up = np.where(Kf[k] >= 0.0, np.roll(rho, 1, axis=k), rho)
        adv = up**2 * Kf[k]
        Fk = diff + adv
        if domain.kind == "box":
            Fk = np.where(domain.boundary_face_mask(k), 0.0, Fk)
        flux.append(Fk)
    return flux


def step_limit(state, dt, f, K, theta, law, domain, check_dt=True):
    """One conservative finite-volume step of the porous-medium system."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if check_dt:
        dt_max = suggest_dt(state.rho, f, K, theta, law, domain)
        if dt > dt_max * (1.0 + 1e-12):
            raise StepSizeError(dt, dt_max)
    f_faces = force_on_faces(domain, f)
    flux = _fluxes(state.rho, f_faces, K, law, domain)
    rho_new = state.rho - (dt / theta) * ops.div(flux, domain.h)
    u = darcy_velocity(rho_new, f_faces, K, law, domain)
    return LimitState(t=state.t + dt, rho=rho_new, u=u)


def solve_limit(rho0, f, K, theta, law, T, domain, output_times=None,
                dt_factor=1.0):
    """March to T, landing exactly on the requested output instants.

    Returns the list of LimitState snapshots (t=0 included).  The step is
    re-evaluated from the policy as the solution evolves; ``dt_factor`` < 1
    tightens it uniformly.
    """
    rho0 = np.asarray(rho0, dtype=float)
    if np.any(rho0 <= 0.0):
        raise ValueError("initial density must be positive")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if output_times is None:
        output_times = [T]
    output_times = [t for t in output_times if t > 0.0]
    f_faces = force_on_faces(domain, f)

    state = LimitState(t=0.0, rho=rho0.copy(),
                       u=darcy_velocity(rho0, f_faces, K, law, domain))
    traj = [state]
    for t_out in output_times:
        while state.t < t_out - 1e-14:
            dt = dt_factor * suggest_dt(state.rho, f_faces, K, theta, law, domain)
            dt = min(dt, t_out - state.t)
            state = step_limit(state, dt, f_faces, K, theta, law, domain,
                               check_dt=False)
        state.t = t_out
        traj.append(state)
    return traj


def barenblatt(points, t, m, dim, C, c_time=1.0, center=None):
    """Self-similar source solution of dt u = c Delta(u^m), as an oracle.

    Standard profile U(x,t) = s^{-alpha} (C - kappa |x|^2 s^{-2 beta})_+^{1/(m-1)}
    with s = c_time * t, alpha = d/(d(m-1)+2), beta = alpha/d,
    kappa = alpha (m-1) / (2 d m).
    """
    alpha = dim / (dim * (m - 1) + 2.0)
    beta = alpha / dim
    kappa = alpha * (m - 1) / (2.0 * dim * m)
    s = c_time * t
    if center is None:
        center = np.full(dim, 0.5)
    r2 = np.sum((points - center) ** 2, axis=-1)
    arg = C - kappa * r2 * s ** (-2.0 * beta)
    return s ** (-alpha) * np.clip(arg, 0.0, None) ** (1.0 / (m - 1.0))
