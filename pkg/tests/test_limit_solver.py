import numpy as np
import pytest

from poroscale.geometry import Domain
from poroscale.limit_solver import (StepSizeError, barenblatt, darcy_velocity,
                                    solve_limit, step_limit, suggest_dt,
                                    LimitState)
from poroscale.pressure_law import PressureLaw

LAW2 = PressureLaw(2.0, 1.0)


def test_darcy_constant_density_no_force():
    dom = Domain(dim=2, n=32)
    u = darcy_velocity(np.ones(dom.shape), None, np.eye(2), LAW2, dom)
    assert all(np.abs(uk).max() == 0.0 for uk in u)


def test_darcy_sine_profile_spectral_oracle():
    # rho = 1 + 0.1 sin(2 pi x1), f = 0, K = Id: u1 = -d/dx1 rho^2
    dom = Domain(dim=2, n=256)
    x = dom.cell_centers()[..., 0]
    rho = 1.0 + 0.1 * np.sin(2 * np.pi * x)
    u = darcy_velocity(rho, None, np.eye(2), LAW2, dom)
    xf = dom.face_centers(0)[..., 0]
    rf = 1.0 + 0.1 * np.sin(2 * np.pi * xf)
    exact = -2.0 * rf * 0.2 * np.pi * np.cos(2 * np.pi * xf)
    assert np.abs(u[0] - exact).max() < 1e-3
    assert np.abs(u[1]).max() < 1e-12


def test_darcy_linear_response_to_gradient_force():
    # rho == 1: u = K f exactly (no pressure gradient)
    dom = Domain(dim=2, n=64)
    K = np.array([[2.0, 0.3], [0.3, 1.0]])

    def f(pts):
        return np.stack([np.sin(2 * np.pi * pts[..., 1]),
                         np.cos(2 * np.pi * pts[..., 0])], axis=-1)

    u = darcy_velocity(np.ones(dom.shape), f, K, LAW2, dom)
    fF = [f(dom.face_centers(k))[..., k] for k in range(2)]
    for k in range(2):
        exact = sum(K[k, j] * (fF[j] if j == k else 0.0) for j in range(2))
        # cross terms are interpolated; compare against the same interpolation
    # direct check for the diagonal part with a force aligned per axis
    u = darcy_velocity(np.ones(dom.shape), lambda p: np.stack(
        [np.ones(p.shape[:-1]), np.zeros(p.shape[:-1])], axis=-1), K, LAW2, dom)
    assert np.abs(u[0] - K[0, 0]).max() < 1e-12
    assert np.abs(u[1] - K[1, 0]).max() < 1e-12


def test_box_no_normal_flux():
    dom = Domain(dim=2, n=32, kind="box")
    rho = 1.0 + 0.3 * np.random.default_rng(1).random(dom.shape)
    u = darcy_velocity(rho, None, np.eye(2), LAW2, dom)
    for k in range(2):
        assert np.abs(u[k][dom.boundary_face_mask(k)]).max() == 0.0


def test_constant_state_is_fixed_point():
    dom = Domain(dim=2, n=32)
    state = LimitState(t=0.0, rho=np.full(dom.shape, 1.7), u=None)
    dt = suggest_dt(state.rho, None, np.eye(2), 0.8, LAW2, dom)
    out = step_limit(state, dt, None, np.eye(2), 0.8, LAW2, dom)
    assert np.abs(out.rho - 1.7).max() == 0.0


def test_step_rejection_suggests_dt():
    dom = Domain(dim=2, n=32)
    rho = 1.0 + 0.2 * np.sin(2 * np.pi * dom.cell_centers()[..., 0])
    state = LimitState(t=0.0, rho=rho, u=None)
    dt_ok = suggest_dt(rho, None, np.eye(2), 0.8, LAW2, dom)
    with pytest.raises(StepSizeError) as exc:
        step_limit(state, 10 * dt_ok, None, np.eye(2), 0.8, LAW2, dom)
    assert exc.value.suggested == pytest.approx(dt_ok)


def test_mass_conservation_1000_steps():
    dom = Domain(dim=2, n=64)
    theta = 0.8
    pts = dom.cell_centers()
    rho = 1.0 + 0.3 * np.sin(2 * np.pi * pts[..., 0]) * np.cos(2 * np.pi * pts[..., 1])

    def f(p):
        return np.stack([0.2 * np.ones(p.shape[:-1]),
                         0.1 * np.sin(2 * np.pi * p[..., 0])], axis=-1)

    state = LimitState(t=0.0, rho=rho, u=None)
    m0 = theta * rho.sum() * dom.h**2
    dt = 0.9 * suggest_dt(rho, f, np.eye(2), theta, LAW2, dom)
    for _ in range(1000):
        state = step_limit(state, dt, f, np.eye(2), theta, LAW2, dom, check_dt=False)
    m1 = theta * state.rho.sum() * dom.h**2
    assert abs(m1 - m0) / m0 < 1e-10
    assert state.rho.min() > 0.0


def test_positivity_floor_preserved():
    dom = Domain(dim=2, n=64)
    pts = dom.cell_centers()
    rho_min = 0.1
    rho = rho_min + np.exp(-60 * np.sum((pts - 0.5) ** 2, axis=-1))
    f = lambda p: np.stack([np.full(p.shape[:-1], 0.5),
                            np.zeros(p.shape[:-1])], axis=-1)
    traj = solve_limit(rho, f, np.eye(2), 0.8, LAW2, 0.02, dom, dt_factor=0.9)
    assert traj[-1].rho.min() >= rho_min * (1 - 1e-12)


def test_comparison_principle_sampled():
    dom = Domain(dim=2, n=48)
    pts = dom.cell_centers()
    lo = 0.5 + 0.2 * np.sin(2 * np.pi * pts[..., 0])
    hi = lo + 0.3 + 0.1 * np.cos(2 * np.pi * pts[..., 1])
    f = lambda p: np.stack([np.full(p.shape[:-1], 0.3),
                            np.zeros(p.shape[:-1])], axis=-1)
    out_t = [0.005, 0.01]
    tlo = solve_limit(lo, f, np.eye(2), 0.8, LAW2, 0.01, dom, output_times=out_t,
                      dt_factor=0.45)
    thi = solve_limit(hi, f, np.eye(2), 0.8, LAW2, 0.01, dom, output_times=out_t,
                      dt_factor=0.45)
    for a, b in zip(tlo[1:], thi[1:]):
        assert (b.rho - a.rho).min() > -1e-12


def test_barenblatt_tracking():
    # gamma=2, K=k Id, f=0 reduces to dt rho = (2k/(3 theta)) lap rho^3;
    # the solver tracks the floored Barenblatt profile in relative L1
    law = PressureLaw(2.0, 1.0)
    dom = Domain(dim=2, n=128)
    theta, k, delta = 0.85, 1.0, 0.02
    K = k * np.eye(2)
    c = 2.0 * k / (3.0 * theta)
    tau0 = 5e-3
    C = tau0 ** (2 / 3)
    t0, t1 = tau0 / c, 2 * tau0 / c
    pts = dom.cell_centers()
    rho0 = delta + barenblatt(pts, t0, m=3, dim=2, C=C, c_time=c)
    traj = solve_limit(rho0, None, K, theta, law, t1 - t0, dom)
    exact = delta + barenblatt(pts, t1, m=3, dim=2, C=C, c_time=c)
    bump_mass = np.sum(exact - delta) * dom.h**2
    err = np.sum(np.abs(traj[-1].rho - exact)) * dom.h**2 / bump_mass
    assert err < 0.05


def test_perturbation_drift_rate():
    # linearization about rho = 1: perturbations are transported at speed
    # 2 K f / theta; on the torus the translation is read off from the phase
    # of the first Fourier mode (diffusion damps it but does not rotate it)
    dom = Domain(dim=2, n=96)
    theta = 0.8
    fvec = np.array([0.05, 0.0])
    f = lambda p: np.broadcast_to(fvec, p.shape[:-1] + (2,))
    pts = dom.cell_centers()
    amp = 0.01
    rho = 1.0 + amp * np.exp(-80 * np.sum((pts - 0.4) ** 2, axis=-1))
    T = 0.02
    traj = solve_limit(rho, f, np.eye(2), theta, LAW2, T, dom)

    def mode_phase(w):
        x = pts[..., 0]
        return np.angle(np.sum(w * np.exp(-2j * np.pi * x)))

    dphase = np.unwrap([mode_phase(rho - 1.0), mode_phase(traj[-1].rho - 1.0)])
    speed = -(dphase[1] - dphase[0]) / (2 * np.pi * T)
    assert speed == pytest.approx(2 * fvec[0] / theta, rel=0.1)
