"""The homogenized limit: Darcy's law driven porous-medium dynamics.

With gamma = 2 and K = k Id, f = 0 the limit system collapses to
theta dt rho = (2k/3) lap rho^3, whose source-type Barenblatt solution is
an exact oracle for the finite-volume stepper (up to the positive floor
that keeps the density inside the theorem's rho >= rho_min regime).
"""

import numpy as np

from poroscale import Domain, PressureLaw, barenblatt, solve_limit

law = PressureLaw(2.0, 1.0)
dom = Domain(dim=2, n=128, kind="torus")
theta, k, floor = 0.85, 1.0, 0.02
K = k * np.eye(2)

c_time = 2.0 * k / (3.0 * theta)     # dt rho = c_time * lap rho^3
tau0 = 5e-3
C = tau0 ** (2 / 3)                  # bump amplitude 1, support radius 0.3
t0 = tau0 / c_time

pts = dom.cell_centers()
rho0 = floor + barenblatt(pts, t0, m=3, dim=2, C=C, c_time=c_time)
print(f"Barenblatt bump: amplitude {rho0.max() - floor:.3f}, floor {floor}")

horizons = [0.5 * t0, t0, 2.0 * t0]
traj = solve_limit(rho0, None, K, theta, law, horizons[-1], dom,
                   output_times=horizons)
print("\n   t        L1 err   mass drift   rho_max")
m0 = theta * rho0.sum() * dom.h**2
for st in traj[1:]:
    exact = floor + barenblatt(pts, t0 + st.t, m=3, dim=2, C=C, c_time=c_time)
    bump = np.sum(exact - floor) * dom.h**2
    err = np.sum(np.abs(st.rho - exact)) * dom.h**2 / bump
    m = theta * st.rho.sum() * dom.h**2
    print(f"{st.t:8.5f}  {err:8.3%}  {abs(m - m0) / m0:.2e}   {st.rho.max():.4f}")

print("\nself-similar spreading: support radius grows like t^(1/6); the")
print("numerical profile tracks the shifted oracle to a few percent in L1.")
