"""Gamma-law pressure, its potential, and the relative-entropy integrand.

The pressure is ``p(s) = a s^gamma`` with ``gamma >= 2``, the canonical
member of the admissible isentropic class.  The potential ``H`` solves
``s H'(s) - H(s) = p(s)`` with ``H(1) = 0``, which for the gamma law has the
closed form ``H(s) = a (s^gamma - s) / (gamma - 1)``; all identities below
are therefore exact up to rounding, no quadrature involved.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PressureLaw:
    """Gamma-law equation of state p(s) = a * s**gamma."""

    gamma: float
    a: float = 1.0

    def __post_init__(self):
        if not self.gamma >= 2.0:
            raise ValueError(f"gamma must be >= 2, got {self.gamma}")
        if not self.a > 0.0:
            raise ValueError(f"pressure coefficient a must be > 0, got {self.a}")

    @property
    def p_inf(self):
        """Limit of p'(s)/s^(gamma-1); equals a*gamma for the gamma law."""
        return self.a * self.gamma


def _check_nonnegative(s, name):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0.0):
        raise ValueError(f"{name} must be nonnegative")
    return s


def pressure_eval(law, s, order=0):
    """Evaluate p, p' or p'' at density s >= 0."""
    s = _check_nonnegative(s, "density")
    g, a = law.gamma, law.a
    if order == 0:
        out = a * s**g
    elif order == 1:
        out = a * g * s ** (g - 1.0)
    elif order == 2:
        out = a * g * (g - 1.0) * s ** (g - 2.0)
    else:
        raise ValueError("order must be 0, 1 or 2")
    return out if out.ndim else float(out)


def pressure_inverse(law, y):
    """Density with p(s) = y, i.e. s = (y/a)**(1/gamma)."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0.0):
        raise ValueError("pressure must be nonnegative")
    out = (y / law.a) ** (1.0 / law.gamma)
    return out if out.ndim else float(out)


def potential_H(law, s, order=0):
    """Pressure potential H (or H', H'').

    H(s) = a (s^gamma - s)/(gamma - 1) satisfies s H'(s) - H(s) = p(s) and
    H(1) = 0 exactly; H''(s) = p'(s)/s.
    """
    s = _check_nonnegative(s, "density")
    g, a = law.gamma, law.a
    if order == 0:
        out = a * (s**g - s) / (g - 1.0)
    elif order == 1:
        out = a * (g * s ** (g - 1.0) - 1.0) / (g - 1.0)
    elif order == 2:
        out = a * g * s ** (g - 2.0)
    else:
        raise ValueError("order must be 0, 1 or 2")
    return out if out.ndim else float(out)


def entropy_h(law, s, r):
    """Relative-entropy integrand h(s|r) = H(s) - H'(r)(s-r) - H(r).

    Nonnegative, zero iff s == r; for gamma=2, a=1 it equals (s-r)^2.
    """
    s = _check_nonnegative(s, "density")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("reference density r must be positive")
    out = potential_H(law, s) - potential_H(law, r, order=1) * (s - r) - potential_H(law, r)
    return out if np.ndim(out) else float(out)


def check_entropy_lower_bound(law, r_interval, s_max, samples):
    """Largest c with h(s|r) >= c*((r-s)^2 + p(s) 1_{s>=2r}) on a sample grid.

    Scans a tensor grid of about ``samples`` (r, s) points with r in the
    compact interval and s in [0, s_max]; the returned constant must come
    out positive for an admissible law (uniform coercivity over r-compacts).
    """
    r_lo, r_hi = float(r_interval[0]), float(r_interval[1])
    if not (0.0 < r_lo <= r_hi):
        raise ValueError("need 0 < r_lo <= r_hi")
    if not s_max > 2.0 * r_hi:
        raise ValueError("s_max must exceed 2*r_hi to probe the tail bound")
    if samples < 100:
        raise ValueError("need at least 100 samples")
    n = max(10, int(np.ceil(np.sqrt(samples))))
    r = np.linspace(r_lo, r_hi, n)[:, None]
    s = np.linspace(0.0, s_max, n)[None, :]
    h = entropy_h(law, np.broadcast_to(s, (n, n)), np.broadcast_to(r, (n, n)))
    tail = np.where(s >= 2.0 * r, pressure_eval(law, np.broadcast_to(s, (n, n))), 0.0)
    denom = (r - s) ** 2 + tail
    # points with s ~ r carry a 0/0 ratio whose limit p'(r)/(2r) is positive;
    # exclude them instead of dividing rounding noise
    keep = denom > 1e-12 * max(1.0, s_max) ** 2
    c = float((h[keep] / denom[keep]).min())
    return c
