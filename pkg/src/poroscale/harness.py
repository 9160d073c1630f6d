"""Experiment orchestration: configs, pipelines, dumps, and the CLI.

Configs are INI files with sections mirroring the experiment blocks::

    [experiment]
    kind = rate            ; cell | limit | nse | rate | check
    seed = 0

    [geometry]
    domain = torus         ; torus | box
    dim = 2
    obstacle = ball
    radius = 0.5
    epsilons = 1/4, 1/8, 1/16
    n_per_cell = 32

    [physics]
    gamma = 2.0
    a = 1.0
    lambda = 2.5
    eta_bulk = 0.0
    force = 0, 0
    rho0 = 1 + 0.2*sin(2*pi*x1)*sin(2*pi*x2)

    [time]
    T = 0.1
    n_outputs = 20
    dt_factor = 1.0

    [io]
    dump_fields = false

Scalar fields are written in a tiny expression grammar (sums of products of
constants, pi, sin(...) and cos(...) of a linear phase); vector fields are
comma-separated components.  Field dumps are raw little-endian float64,
row-major, with a JSON sidecar; tables are UTF-8 CSV with 17 significant
digits.  Exit codes: 0 success, 1 config error, 2 solver or verification
failure.
"""

import argparse
import hashlib
import json
import re
import sys
import warnings
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from . import _ops as ops
from .analysis import (check_relen_inequality, error_functional, fit_rate,
                       norm_neg_sobolev, poincare_constant, theoretical_rate)
from .cell_problem import (check_cell_average_identity, permeability,
                           solve_cell, solve_vector_potential,
                           vector_potential_defect)
from .correctors import CorrectorBuilder, verify_corrector_bounds
from .geometry import (Domain, build_perforated_grid, build_reference_cell,
                       make_obstacle)
from .limit_solver import (LimitState, darcy_velocity, solve_limit,
                           step_limit, suggest_dt)
from .nse_solver import solve_nse, step_nse, initialize_flow
from .pressure_law import (PressureLaw, check_entropy_lower_bound, entropy_h,
                           potential_H, pressure_eval, pressure_inverse)

# ---------------------------------------------------------------------------
# expression grammar: expr := term (('+'|'-') term)*, term := factor ('*' factor)*,
# factor := NUMBER | pi | sin(phase) | cos(phase), phase := product of
# NUMBER/pi and at most one coordinate x1|x2|x3 (x, y, z aliases)

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?)|(pi)|(sin|cos)|"
                    r"(x1|x2|x3|[xyz])|([()*+-]))")
_VARS = {"x": 0, "y": 1, "z": 2, "x1": 0, "x2": 1, "x3": 2}


class ExpressionError(ValueError):
    pass


def _tokenize(text):
    pos, out = 0, []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionError(f"bad token at {text[pos:]!r}")
        num, pi, fn, var, op = m.groups()
        if num:
            out.append(("num", float(num)))
        elif pi:
            out.append(("num", np.pi))
        elif fn:
            out.append(("fn", fn))
        elif var:
            out.append(("var", _VARS[var]))
        elif op:
            out.append(("op", op))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, tokens):
        self.toks = tokens
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expr(self):
        terms = [("+", self.term())]
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, sign = self.take()
            terms.append((sign, self.term()))
        def ev(p):
            acc = 0.0
            for sign, t in terms:
                v = t(p)
                acc = acc + v if sign == "+" else acc - v
            return acc
        return ev

    def term(self):
        factors = [self.factor()]
        while self.peek() == ("op", "*"):
            self.take()
            factors.append(self.factor())
        def ev(p):
            acc = factors[0](p)
            for f in factors[1:]:
                acc = acc * f(p)
            return acc
        return ev

    def factor(self):
        kind, val = self.take()
        if kind == "num":
            return lambda p, v=val: np.full(p.shape[:-1], v)
        if kind == "op" and val == "-":
            inner = self.factor()
            return lambda p: -inner(p)
        if kind == "var":
            if val >= 1_000:
                raise ExpressionError("bad coordinate")
            return lambda p, a=val: p[..., a]
        if kind == "fn":
            if self.take() != ("op", "("):
                raise ExpressionError(f"expected '(' after {val}")
            inner = self.expr()
            if self.take() != ("op", ")"):
                raise ExpressionError("expected ')'")
            f = np.sin if val == "sin" else np.cos
            return lambda p, f=f: f(inner(p))
        raise ExpressionError(f"unexpected token {val!r}")


def parse_expression(text):
    """Compile a scalar grammar expression to a callable on (..., d) points."""
    parser = _Parser(_tokenize(text))
    fn = parser.expr()
    if parser.i != len(parser.toks):
        raise ExpressionError(f"trailing input in {text!r}")
    return fn


def parse_vector_expression(text, dim):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != dim:
        raise ExpressionError(f"need {dim} components, got {len(parts)}")
    comps = [parse_expression(p) for p in parts]

    def ev(points):
        return np.stack([c(points) for c in comps], axis=-1)

    return ev


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    domain_kind: str = "torus"
    dim: int = 3
    obstacle: str = "ball"
    radius: float = 0.5
    exponent: float = 4.0
    semi_axes: tuple = None
    epsilons: tuple = ()
    n_per_cell: int = 64
    resolution: int = 128          # plain-domain grid for kind=limit
    gamma: float = 2.0
    a: float = 1.0
    lam: float = 2.5
    eta_bulk: float = 0.0
    force: str = None
    rho0: str = "1"
    k_iso: float = None            # bypass the cell solve for kind=limit
    theta: float = None
    T: float = 0.1
    n_outputs: int = 20
    dt_factor: float = 1.0
    dump_fields: bool = False
    warnings: list = dc_field(default_factory=list)

    def law(self):
        if self.gamma >= 2.0:
            return PressureLaw(self.gamma, self.a)
        # exploration outside the theorem hypotheses, flagged in warnings
        return _relaxed_law(self.gamma, self.a)

    def force_fn(self, dim):
        if self.force is None:
            return None
        return parse_vector_expression(self.force, dim)

    def rho0_fn(self):
        return parse_expression(self.rho0)


def _relaxed_law(gamma, a):
    # exploration outside the theorem hypotheses: bypass the gamma >= 2 gate
    law = PressureLaw.__new__(PressureLaw)
    object.__setattr__(law, "gamma", gamma)
    object.__setattr__(law, "a", a)
    return law


_SCHEMA = {
    "experiment": {"kind", "seed"},
    "geometry": {"domain", "dim", "obstacle", "radius", "exponent",
                 "semi_axes", "epsilons", "n_per_cell", "resolution"},
    "physics": {"gamma", "a", "lambda", "eta_bulk", "force", "rho0",
                "k_iso", "theta"},
    "time": {"T", "n_outputs", "dt_factor"},
    "io": {"dump_fields"},
}


class ConfigError(ValueError):
    def __init__(self, violations):
        super().__init__("invalid config:\n  " + "\n  ".join(violations))
        self.violations = violations


def _parse_fraction(text):
    return float(Fraction(text))


def parse_config(path):
    """Read and validate a config; collects every violation before raising."""
    import configparser
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keep key case (T vs t)
    read = cp.read(path)
    violations = []
    if not read:
        raise ConfigError([f"cannot read config file {path}"])
    for sect in cp.sections():
        if sect not in _SCHEMA:
            violations.append(f"unknown section [{sect}]")
            continue
        for key in cp[sect]:
            if key not in _SCHEMA[sect]:
                violations.append(f"unknown key {key!r} in [{sect}]")

    def get(sect, key, conv, default):
        if sect in cp and key in cp[sect]:
            try:
                return conv(cp[sect][key])
            except (ValueError, ExpressionError) as exc:
                violations.append(f"[{sect}] {key}: {exc}")
                return default
        return default

    kind = get("experiment", "kind", str, None)
    if kind not in ("cell", "limit", "nse", "rate", "check"):
        violations.append(f"experiment.kind must be one of cell/limit/nse/rate/check, got {kind!r}")

    cfg = ExperimentConfig(
        kind=kind or "check",
        seed=get("experiment", "seed", int, 0),
        domain_kind=get("geometry", "domain", str, "torus"),
        dim=get("geometry", "dim", int, 3),
        obstacle=get("geometry", "obstacle", str, "ball"),
        radius=get("geometry", "radius", float, 0.5),
        exponent=get("geometry", "exponent", float, 4.0),
        semi_axes=get("geometry", "semi_axes",
                      lambda s: tuple(float(Fraction(x)) for x in s.split(",")), None),
        epsilons=get("geometry", "epsilons",
                     lambda s: tuple(_parse_fraction(x) for x in s.split(",")), ()),
        n_per_cell=get("geometry", "n_per_cell", int, 64),
        resolution=get("geometry", "resolution", int, 128),
        gamma=get("physics", "gamma", float, 2.0),
        a=get("physics", "a", float, 1.0),
        lam=get("physics", "lambda", float, 2.5),
        eta_bulk=get("physics", "eta_bulk", float, 0.0),
        force=get("physics", "force", str, None),
        rho0=get("physics", "rho0", str, "1"),
        k_iso=get("physics", "k_iso", float, None),
        theta=get("physics", "theta", float, None),
        T=get("time", "T", float, 0.1),
        n_outputs=get("time", "n_outputs", int, 20),
        dt_factor=get("time", "dt_factor", float, 1.0),
        dump_fields=get("io", "dump_fields", lambda s: s.lower() in ("1", "true", "yes"), False),
    )

    if cfg.domain_kind not in ("torus", "box"):
        violations.append(f"geometry.domain must be torus or box, got {cfg.domain_kind!r}")
    if cfg.dim not in (2, 3):
        violations.append("geometry.dim must be 2 or 3")
    if cfg.lam <= 0:
        violations.append("physics.lambda must be positive")
    if list(cfg.epsilons) != sorted(cfg.epsilons, reverse=True):
        violations.append("geometry.epsilons must be strictly decreasing")
    for eps in cfg.epsilons:
        m = 1.0 / (2.0 * eps)
        if abs(m - round(m)) > 1e-9:
            violations.append(f"epsilon={eps}: 1/(2 eps) = {m} is not an integer")
    if cfg.force is not None:
        try:
            parse_vector_expression(cfg.force, cfg.dim)
        except ExpressionError as exc:
            violations.append(f"physics.force: {exc}")
    try:
        parse_expression(cfg.rho0)
    except ExpressionError as exc:
        violations.append(f"physics.rho0: {exc}")

    if violations:
        raise ConfigError(violations)

    if cfg.gamma < 2.0:
        cfg.warnings.append(
            f"gamma={cfg.gamma} is outside Theorem 1 hypotheses (gamma >= 2); "
            "run permitted, reports flagged")
    lam0, _, flags = theoretical_rate(max(cfg.gamma, 2.0), cfg.lam, cfg.domain_kind)
    if flags["outside_hypotheses"]:
        cfg.warnings.append(
            f"lambda={cfg.lam} <= lambda0={lam0:.4g}: outside Theorem 1 hypotheses")
    return cfg


# ---------------------------------------------------------------------------
# field dumps and CSV


def write_field(out_dir, name, array, **meta):
    """Raw little-endian float64 dump, row-major, with a JSON sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(array, dtype="<f8")
    (out_dir / f"{name}.f64").write_bytes(arr.tobytes())
    sidecar = {"field": name, "shape": list(arr.shape)}
    sidecar.update(meta)
    (out_dir / f"{name}.json").write_text(json.dumps(sidecar, indent=1))


def read_field(out_dir, name):
    out_dir = Path(out_dir)
    meta = json.loads((out_dir / f"{name}.json").read_text())
    data = np.frombuffer((out_dir / f"{name}.f64").read_bytes(), dtype="<f8")
    return data.reshape(meta["shape"]), meta


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return f"{x:.17g}"
    return str(x)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _grid_hash(grid):
    hsh = hashlib.sha256()
    hsh.update(grid.fluid_cell.tobytes())
    for mf in grid.fluid_face:
        hsh.update(mf.tobytes())
    return hsh.hexdigest()[:16]


def write_manifest(out_dir, cfg, extra=None):
    import scipy
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in vars(cfg).items() if k != "warnings"},
        "warnings": cfg.warnings,
        "versions": {"poroscale": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__},
    }
    if extra:
        doc.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(doc, indent=1))


# ---------------------------------------------------------------------------
# pipelines


def _obstacle_from(cfg):
    return make_obstacle(cfg.obstacle, radius=cfg.radius, exponent=cfg.exponent,
                         semi_axes=cfg.semi_axes, dim=cfg.dim)


def run_cell(cfg, out_dir):
    cell = build_reference_cell(_obstacle_from(cfg), cfg.dim, cfg.n_per_cell)
    sol = solve_cell(cell)
    rep = permeability(sol)
    d = cfg.dim
    rows = []
    for i in range(d):
        rows.append([f"K[{i}]"] + [rep.K[i, j] for j in range(d)])
    for i in range(d):
        rows.append([f"K_energy[{i}]"] + [rep.K_energy[i, j] for j in range(d)])
    rows.append(["eigenvalues"] + list(rep.eigenvalues))
    rows.append(["theta_h", cell.theta_h] + [""] * (d - 1))
    rows.append(["symmetry_defect", rep.symmetry_defect] + [""] * (d - 1))
    rows.append(["avg_identity_defect", check_cell_average_identity(sol)] + [""] * (d - 1))
    write_csv(Path(out_dir) / "cell_K.csv",
              ["quantity"] + [f"col{j}" for j in range(d)], rows)
    if cfg.dump_fields:
        for j in range(d):
            for k in range(d):
                write_field(out_dir, f"cell_w{j}_{k}", sol.W[j][k],
                            spacing=cell.h, component=k, direction=j)
            write_field(out_dir, f"cell_q{j}", sol.q[j], spacing=cell.h,
                        direction=j)
    print(f"K =\n{rep.K}")
    return sol


def run_limit(cfg, out_dir):
    dom = Domain(dim=cfg.dim, n=cfg.resolution, kind=cfg.domain_kind)
    law = cfg.law()
    if cfg.k_iso is not None:
        K = cfg.k_iso * np.eye(cfg.dim)
        theta = cfg.theta if cfg.theta is not None else 1.0 - 0.0
    else:
        cell = build_reference_cell(_obstacle_from(cfg), cfg.dim, cfg.n_per_cell)
        sol = solve_cell(cell)
        K = sol.K
        theta = cell.theta_h
    rho0 = np.asarray(cfg.rho0_fn()(dom.cell_centers()), dtype=float)
    f = cfg.force_fn(cfg.dim)
    out_times = list(np.linspace(0, cfg.T, cfg.n_outputs + 1)[1:])
    traj = solve_limit(rho0, f, K, theta, law, cfg.T, dom,
                       output_times=out_times, dt_factor=cfg.dt_factor)
    rows = []
    for st in traj:
        mass = theta * float(st.rho.sum()) * dom.h**cfg.dim
        umax = max(float(np.abs(c).max()) for c in st.u)
        rows.append([st.t, mass, float(st.rho.min()), float(st.rho.max()), umax])
    write_csv(Path(out_dir) / "limit_series.csv",
              ["t", "mass", "rho_min", "rho_max", "u_max"], rows)
    if cfg.dump_fields:
        write_field(out_dir, "limit_rho_final", traj[-1].rho, spacing=dom.h,
                    time=traj[-1].t)
    return traj


def run_nse(cfg, out_dir):
    if not cfg.epsilons:
        raise ConfigError(["kind=nse needs geometry.epsilons"])
    law = cfg.law()
    grid = build_perforated_grid(cfg.domain_kind, cfg.epsilons[0],
                                 _obstacle_from(cfg), cfg.n_per_cell, cfg.dim)
    rho0 = np.asarray(cfg.rho0_fn()(grid.domain.cell_centers()), dtype=float)
    f = cfg.force_fn(cfg.dim)
    out_times = list(np.linspace(0, cfg.T, cfg.n_outputs + 1)[1:])
    traj, mon = solve_nse(grid, law, cfg.lam, rho0, f=f, T=cfg.T,
                          output_times=out_times, eta_bulk=cfg.eta_bulk,
                          dt_factor=cfg.dt_factor)
    keys = ["t", "mass", "energy", "energy_defect", "dissipation",
            "bds_kinetic", "bds_u_l2sq", "bds_grad_l2sq", "bds_rho_gamma"]
    rows = list(zip(*[mon[k] for k in keys]))
    write_csv(Path(out_dir) / "energy.csv", keys, rows)
    if cfg.dump_fields:
        write_field(out_dir, "nse_rho_final", traj[-1].rho, spacing=grid.h,
                    time=traj[-1].t, epsilon=grid.epsilon)
        for k in range(cfg.dim):
            write_field(out_dir, f"nse_u{k}_final", traj[-1].u[k],
                        spacing=grid.h, time=traj[-1].t, epsilon=grid.epsilon,
                        component=k)
    return traj, mon


def run_rate_case(cfg, eps, sol=None, out_dir=None):
    """One epsilon member of the rate sweep; returns the error row and series."""
    law = cfg.law()
    obs = _obstacle_from(cfg)
    if sol is None:
        cell = build_reference_cell(obs, cfg.dim, cfg.n_per_cell)
        sol = solve_cell(cell)
    grid = build_perforated_grid(cfg.domain_kind, eps, obs, cfg.n_per_cell, cfg.dim)
    dom = grid.domain
    f = cfg.force_fn(cfg.dim)
    rho0 = np.asarray(cfg.rho0_fn()(dom.cell_centers()), dtype=float)
    out_times = list(np.linspace(0, cfg.T, cfg.n_outputs + 1)[1:])

    theta = grid.cell.theta_h
    limit_traj = solve_limit(rho0, f, sol.K, theta, law, cfg.T, dom,
                             output_times=out_times, dt_factor=cfg.dt_factor)
    builder = CorrectorBuilder(sol, grid, law)
    pairs = []
    for i, lim in enumerate(limit_traj):
        prev = limit_traj[max(i - 1, 0)]
        nxt = limit_traj[min(i + 1, len(limit_traj) - 1)]
        if prev is nxt:
            prev, nxt = limit_traj[0], limit_traj[1]
        pairs.append(builder.build(lim, prev=prev, nxt=nxt))

    # fully prepared data: rho_eps0 = r_eps(0) and u_eps0 = w_eps(0) make the
    # initial relative energy vanish, so the sweep measures the eps-rate of
    # the dynamics rather than the decay of an initial layer
    u_eps0 = pairs[0].w_tilde if dom.kind == "box" else pairs[0].w
    nse_traj, mon = solve_nse(grid, law, cfg.lam, pairs[0].r, u0=u_eps0, f=f,
                              T=cfg.T, output_times=out_times,
                              eta_bulk=cfg.eta_bulk, dt_factor=cfg.dt_factor)
    derr, verr, cerr = error_functional(nse_traj, limit_traj, pairs, grid)
    report = check_relen_inequality(nse_traj, pairs, cfg.lam, law, f, grid,
                                    eta_bulk=cfg.eta_bulk)
    if out_dir is not None:
        keys = ["t", "mass", "energy", "energy_defect", "dissipation",
                "bds_kinetic", "bds_u_l2sq", "bds_grad_l2sq", "bds_rho_gamma"]
        write_csv(Path(out_dir) / f"energy_eps_{eps:.6g}.csv", keys,
                  list(zip(*[mon[k] for k in keys])))
        rel_rows = list(zip(report.times, report.E, report.dissipation,
                            report.inequality_defect))
        write_csv(Path(out_dir) / f"relen_eps_{eps:.6g}.csv",
                  ["t", "E", "dissipation", "defect"], rel_rows)
    return {
        "epsilon": eps,
        "density_error": derr,
        "velocity_error": verr,
        "corrector_velocity_error": cerr,
        "total_error": derr + verr,
        "max_relen_defect": report.max_defect,
    }


def run_rate(cfg, out_dir, jobs=1):
    if len(cfg.epsilons) < 3:
        raise ConfigError(["kind=rate needs at least three epsilons"])
    cell = build_reference_cell(_obstacle_from(cfg), cfg.dim, cfg.n_per_cell)
    sol = solve_cell(cell)
    results = []
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = {eps: ex.submit(run_rate_case, cfg, eps, None, out_dir)
                    for eps in cfg.epsilons}
            results = [futs[eps].result() for eps in cfg.epsilons]
    else:
        results = [run_rate_case(cfg, eps, sol, out_dir) for eps in cfg.epsilons]

    gamma_eff = cfg.gamma if cfg.gamma >= 2 else 2.0
    rep = fit_rate([(r["epsilon"], r["total_error"]) for r in results],
                   gamma=gamma_eff, lam=cfg.lam, domain_kind=cfg.domain_kind)
    header = ["epsilon", "density_error", "velocity_error",
              "corrector_velocity_error", "total_error", "max_relen_defect",
              "beta_emp", "beta_theory", "lambda0", "r_squared"]
    rows = [[r["epsilon"], r["density_error"], r["velocity_error"],
             r["corrector_velocity_error"], r["total_error"],
             r["max_relen_defect"], rep.beta_emp, rep.beta_theory,
             rep.lambda0, rep.r_squared] for r in results]
    write_csv(Path(out_dir) / "rate.csv", header, rows)
    print(f"beta_emp = {rep.beta_emp:.4f}  beta_theory = {rep.beta_theory:.4f} "
          f"(lambda0 = {rep.lambda0:.4f}, r^2 = {rep.r_squared:.5f})")
    return results, rep


# ---------------------------------------------------------------------------
# kind=check: quick invariant battery over every module


def run_check(cfg, out_dir):
    rng = np.random.default_rng(cfg.seed)
    rows = []

    def record(module, name, value, threshold, ok):
        rows.append([module, name, value, threshold, "PASS" if ok else "FAIL"])

    law = PressureLaw(2.0, 1.0)
    s = rng.uniform(1e-3, 100.0, 1000)
    dev = np.max(np.abs(s * potential_H(law, s, 1) - potential_H(law, s)
                        - pressure_eval(law, s)) / pressure_eval(law, s))
    record("pressure_law", "potential_identity", dev, 1e-12, dev < 1e-12)
    r = rng.uniform(0.1, 5.0, 1000)
    dev = np.max(np.abs(entropy_h(law, s % 10, r) - ((s % 10) - r) ** 2))
    record("pressure_law", "gamma2_entropy_closed_form", dev, 1e-12, dev < 1e-12)
    dev = np.max(np.abs(pressure_inverse(law, pressure_eval(law, s)) - s) / s)
    record("pressure_law", "inverse_roundtrip", dev, 1e-12, dev < 1e-12)
    c = check_entropy_lower_bound(law, (0.5, 2.0), 10.0, 10_000)
    record("pressure_law", "entropy_lower_bound_c", c, 0.125, c >= 0.125)

    obs = make_obstacle("ball", 0.5)
    cell = build_reference_cell(obs, 2, 32)
    exact = 1 - np.pi / 16
    record("geometry", "porosity_vs_analytic", abs(cell.theta_h - exact), 0.02,
           abs(cell.theta_h - exact) < 0.02)

    sol = solve_cell(cell)
    div = max(sol.residuals[j]["divergence"] for j in range(2))
    record("cell_problem", "div_residual", div, 1e-10, div < 1e-10)
    per = permeability(sol)
    record("cell_problem", "K_spd", per.eigenvalues.min(), 0.0,
           per.eigenvalues.min() > 0)
    record("cell_problem", "K_vs_energy", per.energy_rel_diff, 0.01,
           per.energy_rel_diff < 0.01)
    d_avg = check_cell_average_identity(sol)
    record("cell_problem", "avg_identity_defect", d_avg, 0.02, d_avg < 0.02)
    solve_vector_potential(sol)
    d_pot = max(vector_potential_defect(sol))
    record("cell_problem", "vector_potential_defect", d_pot, 1e-8, d_pot < 1e-8)

    dom = Domain(dim=2, n=64, kind="torus")
    pts = dom.cell_centers()
    rho = 1 + 0.3 * np.sin(2 * np.pi * pts[..., 0])
    st = LimitState(t=0.0, rho=rho, u=None)
    m0 = rho.sum()
    dt = suggest_dt(rho, None, np.eye(2), 0.8, law, dom)
    for _ in range(100):
        st = step_limit(st, dt, None, np.eye(2), 0.8, law, dom, check_dt=False)
    drift = abs(st.rho.sum() - m0) / m0
    record("limit_solver", "mass_conservation", drift, 1e-11, drift < 1e-11)
    record("limit_solver", "positivity", st.rho.min(), 0.0, st.rho.min() > 0)

    grid = build_perforated_grid("torus", 1 / 4, obs, n_per_cell=32, dim=2)
    rho0 = 1 + 0.2 * np.sin(2 * np.pi * grid.domain.cell_centers()[..., 0])
    traj, mon = solve_nse(grid, law, 2.5, rho0, T=2e-3, output_times=[2e-3])
    noslip = max(np.abs(traj[-1].u[k][~grid.fluid_face[k]]).max() for k in range(2))
    record("nse_solver", "exact_no_slip", noslip, 0.0, noslip == 0.0)
    drift = abs(mon["mass"][-1] - mon["mass"][0]) / mon["mass"][0]
    record("nse_solver", "mass_conservation", drift, 1e-10, drift < 1e-10)

    builder = CorrectorBuilder(sol, grid, law)
    lim = LimitState(t=0.0, rho=rho0,
                     u=darcy_velocity(rho0, None, sol.K, law, grid.domain))
    pair = builder.build(lim)
    wmax = max(np.abs(pair.w[k][~grid.fluid_face[k]]).max() for k in range(2))
    record("correctors", "w_eps_noslip", wmax, 0.0, wmax == 0.0)
    rmin = pair.r[grid.fluid_cell].min()
    record("correctors", "r_eps_positive", rmin, 0.0, rmin > 0)

    cases = []
    for eps in (1 / 4, 1 / 8, 1 / 16):
        g = build_perforated_grid("torus", eps, obs, n_per_cell=32, dim=2)
        pts = g.domain.cell_centers()
        rho_s = 1 + 0.2 * np.sin(2 * np.pi * pts[..., 0] + 0.7) \
            * np.sin(2 * np.pi * pts[..., 1] + 0.3)
        lim_s = LimitState(t=0.0, rho=rho_s,
                           u=darcy_velocity(rho_s, None, sol.K, law, g.domain))
        b = CorrectorBuilder(sol, g, law)
        cases.append((b, b.build(lim_s), lim_s))
    try:
        bound_rows = verify_corrector_bounds(cases)
        bounded = True
    except RuntimeError:
        bound_rows, bounded = [], False
    if bound_rows:
        write_csv(Path(out_dir) / "corrector_bounds.csv",
                  list(bound_rows[0].keys()),
                  [list(r.values()) for r in bound_rows])
    record("correctors", "sweep_bounds_bounded", float(bounded), 1.0, bounded)

    N = 64
    x = (np.arange(N) + 0.5) / N
    g = np.sin(2 * np.pi * x)[:, None] * np.ones(N)[None, :]
    val = norm_neg_sobolev(g)
    exact = (1 / np.sqrt(2)) / np.sqrt(1 + 4 * np.pi**2)
    record("analysis", "spectral_norm_analytic", abs(val - exact), 1e-6,
           abs(val - exact) < 1e-6)
    lam0, beta, _ = theoretical_rate(3, 2, "torus")
    record("analysis", "rate_formula_gamma3", abs(lam0 - 2) + abs(beta - 1),
           1e-14, lam0 == 2.0 and beta == 1.0)
    fit = fit_rate([(0.25, 3 * 0.25**0.7), (0.125, 3 * 0.125**0.7),
                    (0.0625, 3 * 0.0625**0.7)])
    record("analysis", "fit_exact_powerlaw", abs(fit.beta_emp - 0.7), 1e-10,
           abs(fit.beta_emp - 0.7) < 1e-10)

    write_csv(Path(out_dir) / "check.csv",
              ["module", "check", "value", "threshold", "status"], rows)
    failures = [r for r in rows if r[4] == "FAIL"]
    for row in rows:
        print(f"{row[4]:4s} {row[0]}.{row[1]} = {_fmt(row[2])}")
    return len(failures)


# ---------------------------------------------------------------------------
# CLI


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="poroscale",
        description="homogenization laboratory for perforated compressible flow")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("cell", "limit", "nse", "rate", "check"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default="out")
        p.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    if cfg.kind != args.command:
        print(f"config kind={cfg.kind!r} does not match subcommand "
              f"{args.command!r}", file=sys.stderr)
        return 1
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if cfg.kind == "cell":
            sol = run_cell(cfg, out_dir)
            write_manifest(out_dir, cfg, {"grid_hash": _grid_hash_cell(sol.cell)})
        elif cfg.kind == "limit":
            run_limit(cfg, out_dir)
            write_manifest(out_dir, cfg)
        elif cfg.kind == "nse":
            traj, _ = run_nse(cfg, out_dir)
            grid = build_perforated_grid(cfg.domain_kind, cfg.epsilons[0],
                                         _obstacle_from(cfg), cfg.n_per_cell,
                                         cfg.dim)
            write_manifest(out_dir, cfg, {"grid_hash": _grid_hash(grid)})
        elif cfg.kind == "rate":
            run_rate(cfg, out_dir, jobs=args.jobs)
            hashes = {f"{eps:.6g}": _grid_hash(build_perforated_grid(
                cfg.domain_kind, eps, _obstacle_from(cfg), cfg.n_per_cell,
                cfg.dim)) for eps in cfg.epsilons}
            write_manifest(out_dir, cfg, {"grid_hashes": hashes})
        elif cfg.kind == "check":
            nfail = run_check(cfg, out_dir)
            write_manifest(out_dir, cfg)
            if nfail:
                print(f"{nfail} checks FAILED", file=sys.stderr)
                return 2
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    except Exception as exc:  # solver/verification failure: machine readable
        record = {"error": type(exc).__name__, "message": str(exc)}
        (out_dir / "error.json").write_text(json.dumps(record, indent=1))
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _grid_hash_cell(cell):
    hsh = hashlib.sha256()
    hsh.update(cell.fluid_cell.tobytes())
    return hsh.hexdigest()[:16]


if __name__ == "__main__":
    sys.exit(main())
