import numpy as np
import pytest

from poroscale.cell_problem import solve_cell
from poroscale.geometry import build_perforated_grid, make_obstacle
from poroscale.nse_solver import (acoustic_dt, initialize_flow, solve_nse,
                                  step_nse)
from poroscale.pressure_law import PressureLaw

LAW = PressureLaw(2.0, 1.0)
LAM = 2.5


@pytest.fixture(scope="module")
def grid8():
    return build_perforated_grid("torus", 1 / 8, make_obstacle("ball", 0.5),
                                 n_per_cell=16, dim=2)


def wavy_rho(grid, amp=0.2):
    pts = grid.domain.cell_centers()
    return 1.0 + amp * np.sin(2 * np.pi * pts[..., 0]) * np.sin(2 * np.pi * pts[..., 1])


def test_initialize_flow_compatibility(grid8):
    st = initialize_flow(grid8, LAW, LAM, np.ones(grid8.domain.shape))
    assert st.diagnostics["kinetic"] == 0.0
    assert st.diagnostics["internal"] == pytest.approx(0.0, abs=1e-12)
    rho0 = np.ones(grid8.domain.shape)
    rho0[0, 0] = 0.0  # a fluid cell (cell corner region, away from the hole)
    assert grid8.fluid_cell[0, 0]
    m0 = [np.ones(grid8.domain.shape), np.zeros(grid8.domain.shape)]
    with pytest.raises(ValueError, match="compatibility"):
        initialize_flow(grid8, LAW, LAM, rho0, m0=m0)
    with pytest.raises(ValueError):
        initialize_flow(grid8, LAW, LAM, -np.ones(grid8.domain.shape))


def test_constant_state_exact_fixed_point(grid8):
    st = initialize_flow(grid8, LAW, LAM, np.ones(grid8.domain.shape))
    out = step_nse(st, 1e-4, LAM, LAW, None, grid8)
    assert np.array_equal(out.rho, st.rho)
    assert all(np.abs(uk).max() == 0.0 for uk in out.u)


def test_no_slip_and_mass_conservation(grid8):
    traj, mon = solve_nse(grid8, LAW, LAM, wavy_rho(grid8), T=5e-3,
                          output_times=[2.5e-3, 5e-3])
    for st in traj:
        for k in range(2):
            assert np.abs(st.u[k][~grid8.fluid_face[k]]).max() == 0.0
        assert np.abs(st.rho[~grid8.fluid_cell]).max() == 0.0
    drift = abs(mon["mass"][-1] - mon["mass"][0]) / mon["mass"][0]
    assert drift < 1e-10


def test_energy_inequality_defect_first_order_in_dt(grid8):
    rho0 = wavy_rho(grid8)
    Cs = {}
    for fac in (1.0, 0.5):
        traj, mon = solve_nse(grid8, LAW, LAM, rho0, T=0.02, dt_factor=fac,
                              output_times=[0.01, 0.02])
        dt = fac * acoustic_dt(traj[-1].rho, LAW, LAM, grid8)
        Cs[fac] = max(max(mon["energy_defect"]), 0.0) / dt
    # defect <= C dt with C stable under halving
    assert Cs[1.0] < 10.0
    assert Cs[0.5] < 2.0 * Cs[1.0] + 1e-12


def test_dissipation_nonnegative_monotone(grid8):
    traj, mon = solve_nse(grid8, LAW, LAM, wavy_rho(grid8), T=5e-3,
                          output_times=[2.5e-3, 5e-3])
    d = mon["dissipation"]
    assert d[0] == 0.0
    assert all(b >= a for a, b in zip(d, d[1:]))


def test_negative_density_rejected(grid8):
    st = initialize_flow(grid8, LAW, LAM, wavy_rho(grid8))
    # absurd step: transport would empty cells
    with pytest.raises(RuntimeError, match="dt too large|negative density"):
        big_u = [np.where(grid8.fluid_face[k], 50.0, 0.0) for k in range(2)]
        st2 = initialize_flow(grid8, LAW, LAM, wavy_rho(grid8), u0=big_u)
        step_nse(st2, 0.5, LAM, LAW, None, grid8)


def test_steady_state_matches_cell_pattern():
    # one-cell torus, strong forcing, lambda large: the long-time velocity
    # reproduces the scaled cell solution W(x/eps) rho f (Darcy balance)
    grid = build_perforated_grid("torus", 1 / 2, make_obstacle("ball", 0.5),
                                 n_per_cell=32, dim=2)
    sol = solve_cell(grid.cell)
    fmag = 0.5
    f = lambda p: np.stack([np.full(p.shape[:-1], fmag),
                            np.zeros(p.shape[:-1])], axis=-1)
    traj, _ = solve_nse(grid, LAW, 3.0, np.ones(grid.domain.shape), f=f, T=2.0)
    u = traj[-1].u
    pred = [sol.W[0][k] * fmag for k in range(2)]
    num = sum(float(np.sum(a * b)) for a, b in zip(u, pred))
    den = np.sqrt(sum(float(np.sum(a * a)) for a in u)
                  * sum(float(np.sum(b * b)) for b in pred))
    rel = np.sqrt(sum(float(np.sum((a - b) ** 2)) for a, b in zip(u, pred))
                  / sum(float(np.sum(b * b)) for b in pred))
    assert num / den > 0.995
    assert rel < 0.1


def test_bds_monitors_bounded_across_eps_sweep():
    # the a priori bound quantities stay below a common constant for
    # eps in {1/4, 1/8} with identical data and force
    caps = {"bds_kinetic": 0.0, "bds_u_l2sq": 0.0,
            "bds_grad_l2sq": 0.0, "bds_rho_gamma": 0.0}
    poincare = {}
    for eps in (1 / 4, 1 / 8):
        grid = build_perforated_grid("torus", eps, make_obstacle("ball", 0.5),
                                     n_per_cell=16, dim=2)
        f = lambda p: np.stack([np.full(p.shape[:-1], 0.3),
                                np.zeros(p.shape[:-1])], axis=-1)
        traj, mon = solve_nse(grid, LAW, LAM, wavy_rho(grid), f=f, T=0.02,
                              output_times=[0.01, 0.02])
        for k in caps:
            caps[k] = max(caps[k], max(mon[k]))
        poincare[eps] = np.sqrt(mon["bds_u_l2sq"][-1] / mon["bds_grad_l2sq"][-1])
    assert all(v < 5.0 for v in caps.values())
    # Poincare consistency: ||u|| <= C eps ||grad u|| with C stable in eps
    ratio = poincare[1 / 8] / poincare[1 / 4]
    assert 0.4 < ratio < 2.5
