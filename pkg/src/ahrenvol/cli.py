"""Command-line audit driver: config ingestion, orchestration, reports.

Subcommands
    algebra-suite    double-form algebra property suites (seeded random inputs)
    collar-audit     boundary-jet identities and parity of collar invariants
    renvol           renormalized-volume asymptotics and finite parts
    gauss-bonnet     interior Pfaffian + boundary transgression audit
    linearize-check  linearized-curvature formulas vs finite differences
    el-residual      Euler-Lagrange residual and slice diagnostics
    flow             gradient descent on the radial profile family

Exit codes: 0 all checks pass; 1 at least one check fails; 2 config or
usage error; 3 numerical non-convergence.  Reports are JSON (optionally
CSV), written atomically (temp file + rename), and each check row carries
its anchor (a self-contained formula string), the seed, and a tolerance.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dfalg, renorm, variation
from . import collar as _collar

try:
    from importlib.metadata import version as _pkg_version

    VERSION = _pkg_version("ahrenvol")
except Exception:  # pragma: no cover - metadata missing in odd installs
    VERSION = "0.1.0"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NONCONVERGENCE = 3

SUBCOMMANDS = (
    "algebra-suite",
    "collar-audit",
    "renvol",
    "gauss-bonnet",
    "linearize-check",
    "el-residual",
    "flow",
)


class ConfigError(ValueError):
    """Invalid or incomplete configuration (maps to exit code 2)."""


# -- configuration ---------------------------------------------------------------


def _take(d: dict, section: str, allowed: dict) -> dict:
    """Strict key filter: unknown keys are rejected, defaults applied."""
    out = dict(allowed)
    for key, value in d.items():
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in '{section}'")
        out[key] = value
    return out


@dataclass(frozen=True)
class AuditConfig:
    """Validated audit configuration (strict JSON schema, see README)."""

    family: str
    seed: int
    theta: tuple = (0.0, 0.0, 0.0)
    jet_n_grid: int = 8
    jet_amplitude: float = 0.05
    eps_n: int = 12
    eps_lo: float = 0.02
    eps_hi: float = 0.3
    rho_max: float | None = None
    trials: int = 3
    flow_theta0: tuple = (0.05, 0.05, 0.05)
    flow_steps: int = 200
    flow_eta: float = 1e-3
    flow_target_fraction: float = 0.01
    tolerances: dict = field(default_factory=dict)
    out_dir: str = "."
    out_format: str = "json"

    @classmethod
    def from_dict(cls, raw: dict) -> "AuditConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        top = _take(
            raw,
            "config",
            {
                "family": None,
                "seed": None,
                "profile": {},
                "jet": {},
                "grid": {},
                "trials": 3,
                "flow": {},
                "tolerances": {},
                "outputs": {},
            },
        )
        for key in ("family", "seed"):
            if top[key] is None:
                raise ConfigError(f"missing required key '{key}'")
        if top["family"] not in ("radial", "torus-collar"):
            raise ConfigError("'family' must be 'radial' or 'torus-collar'")
        seed = int(top["seed"])
        profile = _take(top["profile"], "profile", {"theta": (0.0, 0.0, 0.0)})
        theta = tuple(float(t) for t in profile["theta"])
        jet = _take(top["jet"], "jet", {"n_grid": 8, "amplitude": 0.05})
        grid = _take(
            top["grid"],
            "grid",
            {"eps_n": 12, "eps_lo": 0.02, "eps_hi": 0.3, "rho_max": None},
        )
        flow = _take(
            top["flow"],
            "flow",
            {
                "theta0": (0.05, 0.05, 0.05),
                "steps": 200,
                "eta": 1e-3,
                "target_fraction": 0.01,
            },
        )
        tolerances = dict(top["tolerances"])
        for name, value in tolerances.items():
            if not (isinstance(value, (int, float)) and value > 0):
                raise ConfigError(f"tolerance '{name}' must be a positive number")
        outputs = _take(top["outputs"], "outputs", {"directory": ".", "format": "json"})
        if outputs["format"] not in ("json", "csv"):
            raise ConfigError("'outputs.format' must be 'json' or 'csv'")
        return cls(
            family=top["family"],
            seed=seed,
            theta=theta,
            jet_n_grid=int(jet["n_grid"]),
            jet_amplitude=float(jet["amplitude"]),
            eps_n=int(grid["eps_n"]),
            eps_lo=float(grid["eps_lo"]),
            eps_hi=float(grid["eps_hi"]),
            rho_max=None if grid["rho_max"] is None else float(grid["rho_max"]),
            trials=int(top["trials"]),
            flow_theta0=tuple(float(t) for t in flow["theta0"]),
            flow_steps=int(flow["steps"]),
            flow_eta=float(flow["eta"]),
            flow_target_fraction=float(flow["target_fraction"]),
            tolerances=tolerances,
            out_dir=str(outputs["directory"]),
            out_format=str(outputs["format"]),
        )

    def geometry(self):
        if self.family == "radial":
            return _collar.RadialGeometry(_collar.perturbed_profile(self.theta))
        jet = _collar.random_jet(self.seed, self.jet_n_grid, self.jet_amplitude)
        return _collar.TorusJetGeometry(jet)

    @property
    def is_hyperbolic(self) -> bool:
        return self.family == "radial" and all(t == 0.0 for t in self.theta)

    def eps_grid(self) -> np.ndarray:
        return renorm.default_eps_grid(self.eps_n, self.eps_lo, self.eps_hi)


@dataclass
class AuditReport:
    """Self-contained audit result: config echo, check rows, timing, stamp."""

    subcommand: str
    config: dict
    seed: int
    checks: list
    artifacts: dict = field(default_factory=dict)
    version: str = VERSION
    elapsed_seconds: float = 0.0
    timestamp: str = ""

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# ahrenvol {self.version} :: {self.subcommand}\n")
        writer = csv.writer(buf)
        writer.writerow(["name", "anchor", "value", "tolerance", "passed", "seed"])
        for row in self.checks:
            writer.writerow(
                [row["name"], row["anchor"], repr(row["value"]),
                 repr(row["tolerance"]), row["passed"], self.seed]
            )
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-report-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _check(name, anchor, value, tolerance, tolerances, tol_scale, passed=None):
    tol = float(tolerances.get(name, tolerance)) * tol_scale
    value = float(value)
    if passed is None:
        passed = abs(value) < tol
    return {
        "name": name,
        "anchor": anchor,
        "value": value,
        "tolerance": tol,
        "passed": bool(passed),
    }


# -- subcommand: algebra-suite -----------------------------------------------------


def _random_form(rng, n, p, q):
    coeffs = rng.standard_normal((math.comb(n, p), math.comb(n, q)))
    return dfalg.DoubleForm(n, p, q, coeffs)


def _random_curvature(rng, n=4):
    dense = rng.standard_normal((n,) * 4)
    dense = dense - dense.transpose(1, 0, 2, 3)
    dense = dense - dense.transpose(0, 1, 3, 2)
    dense = 0.5 * (dense + dense.transpose(2, 3, 0, 1))
    return dfalg.DoubleForm.from_dense(n, 2, 2, dense)


def _random_sym(rng, n=4):
    m = rng.standard_normal((n, n))
    return dfalg.SymBilinear(n, 0.5 * (m + m.T))


def run_algebra_suite(config: AuditConfig, tol_scale: float, threads: int) -> AuditReport:
    rng = np.random.default_rng(config.seed)
    degrees = [(3, 1, 1), (4, 1, 1), (4, 2, 1), (4, 2, 2), (5, 1, 2), (5, 2, 2)]
    dev_comm = dev_adj = dev_hodge = 0.0
    for _ in range(100):
        n, p, q = degrees[rng.integers(0, len(degrees))]
        g = dfalg.metric_g(n)
        w = _random_form(rng, n, p, q)
        lhs = dfalg.contract(dfalg.kn_product(g, w))
        cw = dfalg.contract(w)
        if isinstance(cw, float):
            rhs = (n - p - q) * w + cw * dfalg.kn_product(g, dfalg.unit_scalar(n))
        else:
            rhs = dfalg.kn_product(g, cw) + (n - p - q) * w
        scale = max(1.0, float(np.max(np.abs(lhs.coeffs))))
        dev_comm = max(dev_comm, float(np.max(np.abs(lhs.coeffs - rhs.coeffs))) / scale)

        b = _random_form(rng, n, p + 1, q + 1)
        lhs2 = dfalg.inner(dfalg.kn_product(g, w), b)
        cb = dfalg.contract(b)
        rhs2 = cb * w.coeffs[0, 0] if isinstance(cb, float) else dfalg.inner(w, cb)
        dev_adj = max(dev_adj, abs(lhs2 - rhs2) / max(1.0, abs(lhs2)))

        lhs3 = dfalg.kn_product(g, w)
        sign = (-1.0) ** (n * (p + q))
        rhs3 = sign * dfalg.hodge_star(dfalg.contract(dfalg.hodge_star(w)))
        scale = max(1.0, float(np.max(np.abs(lhs3.coeffs))))
        dev_hodge = max(dev_hodge, float(np.max(np.abs(lhs3.coeffs - rhs3.coeffs))) / scale)

    dev_deriv = dev_selfadj = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 6))
        h = _random_sym(rng, n)
        a = _random_form(rng, n, 1, 1)
        b = _random_form(rng, n, 1, 1)
        lhs = dfalg.f_h(h, dfalg.kn_product(a, b))
        rhs = dfalg.kn_product(dfalg.f_h(h, a), b) + dfalg.kn_product(a, dfalg.f_h(h, b))
        scale = max(1.0, float(np.max(np.abs(lhs.coeffs))))
        dev_deriv = max(dev_deriv, float(np.max(np.abs(lhs.coeffs - rhs.coeffs))) / scale)
        p1 = dfalg.inner(dfalg.f_h(h, a), b)
        p2 = dfalg.inner(a, dfalg.f_h(h, b))
        dev_selfadj = max(dev_selfadj, abs(p1 - p2) / max(1.0, abs(p1)))

    dev_pair = dev_rcirc = 0.0
    for _ in range(100):
        R = _random_curvature(rng)
        z = _random_sym(rng)
        h = _random_sym(rng)
        lhs = dfalg.inner(z.to_doubleform(), dfalg.contract(dfalg.f_h(h, R)))
        parts = dfalg.bilinear_algebra(z, R)
        rhs = 2.0 * float(np.sum(parts["rcirc"].entries * h.entries)) + 2.0 * float(
            np.sum(parts["compose"].entries * h.entries)
        )
        dev_pair = max(dev_pair, abs(lhs - rhs) / max(1.0, abs(lhs)))
        p1 = float(np.sum(z.entries * dfalg.bilinear_algebra(h, R)["rcirc"].entries))
        p2 = float(np.sum(parts["rcirc"].entries * h.entries))
        dev_rcirc = max(dev_rcirc, abs(p1 - p2) / max(1.0, abs(p1)))

    tols = config.tolerances
    checks = [
        _check("contraction_commutator", "c(g.w) == g c(w) + (n-p-q) w",
               dev_comm, 1e-10, tols, tol_scale),
        _check("metric_contraction_adjointness", "inner(g.w1, w2) == inner(w1, c w2)",
               dev_adj, 1e-10, tols, tol_scale),
        _check("hodge_metric_multiplication", "g.w == (-1)^(n(p+q)) * c * w",
               dev_hodge, 1e-10, tols, tol_scale),
        _check("f_h_derivation", "F_h(a.b) == F_h(a).b + a.F_h(b)",
               dev_deriv, 1e-10, tols, tol_scale),
        _check("f_h_self_adjoint", "inner(F_h a, b) == inner(a, F_h b)",
               dev_selfadj, 1e-10, tols, tol_scale),
        _check("contract_fh_pairing", "<z, c F_h R> == 2<rcirc(z), h> + 2<r o z, h>",
               dev_pair, 1e-10, tols, tol_scale),
        _check("rcirc_self_adjoint", "<z, rcirc(h)> == <rcirc(z), h>",
               dev_rcirc, 1e-10, tols, tol_scale),
    ]
    return AuditReport("algebra-suite", asdict(config), config.seed, checks)


# -- subcommand: collar-audit --------------------------------------------------------


def run_collar_audit(config: AuditConfig, tol_scale: float, threads: int) -> AuditReport:
    geom = config.geometry()
    nodes = _collar.chebyshev_rho_nodes()
    sample = _collar.CollarSample(geometry=geom, rho_grid=nodes)
    jet_rep = _collar.jet_identity_report(sample)

    fields = {"s": [], "r2": [], "R2": []}
    for rho in nodes:
        inv = _collar.curvature_in_frame(geom, float(rho))["invariants"]
        fields["s"].append(inv["s"])
        fields["r2"].append(inv["r2"])
        fields["R2"].append(inv["R2"])
    parity_dev = 0.0
    for name, stack in fields.items():
        arr = np.stack(stack)
        fit = _collar.rho_series_fit(nodes, arr, k_max=6)
        scale = max(1.0, float(np.max(np.abs(arr))))
        parity_dev = max(parity_dev, float(np.max(np.abs(fit.coefficient(1)))) / scale)

    tols = config.tolerances
    checks = [
        _check("trace_identity", "tr_gamma g3 == 2 v3",
               jet_rep["dev_trace_identity"], 1e-8, tols, tol_scale),
        _check("g3_curvature_identity", "g3 == -1/3 d/drho Rbar_i4j4 at rho=0",
               jet_rep["dev_g3_identity"], 1e-6, tols, tol_scale),
        _check("v3_curvature_identity", "v3 == -1/6 d/drho ricbar_44 at rho=0",
               jet_rep["dev_v3_identity"], 1e-6, tols, tol_scale),
        _check("invariant_parity", "rho^1 coefficient of s, |r|^2, |R|^2 == 0",
               parity_dev, 1e-6, tols, tol_scale),
    ]
    artifacts = {"v3": jet_rep["v3"], "rho_nodes": nodes}
    return AuditReport("collar-audit", asdict(config), config.seed, checks, artifacts)


# -- subcommand: renvol ---------------------------------------------------------------


def run_renvol(config: AuditConfig, tol_scale: float, threads: int) -> AuditReport:
    geom = config.geometry()
    eps = config.eps_grid()
    family = renorm.volume_family(geom, eps_grid=eps, rho_max=config.rho_max)
    fit = renorm.finite_part((eps, np.array(list(family.values()))))
    tols = config.tolerances
    checks = [
        _check(
            "volume_asymptotics_fit",
            "vol(eps) == C0 eps^-3 + C2 eps^-1 + L log(1/eps) + V + o(1)",
            fit.fit_residual / max(1.0, abs(fit.finite)),
            1e-6,
            tols,
            tol_scale,
        )
    ]
    if config.is_hyperbolic:
        oracle = (2.0 * math.pi**2 / 3.0, -1.5 * math.pi**2, 0.0, 4.0 * math.pi**2 / 3.0)
        names = ("C0", "C2", "L", "V")
        anchors = ("C0 == 2 pi^2 / 3", "C2 == -3 pi^2 / 2", "L == 0", "V == 4 pi^2 / 3")
        for got, want, name, anchor in zip(fit.as_tuple(), oracle, names, anchors):
            dev = abs(got - want) / max(1.0, abs(want))
            checks.append(_check(f"hyperbolic_{name}", anchor, dev, 1e-6, tols, tol_scale))
    artifacts = {
        "eps_grid": eps,
        "volumes": list(family.values()),
        "coefficients": {"C0": fit.c0, "C2": fit.c2, "L": fit.log_coeff, "V": fit.finite},
    }
    return AuditReport("renvol", asdict(config), config.seed, checks, artifacts)


# -- subcommand: gauss-bonnet ----------------------------------------------------------


def run_gauss_bonnet(config: AuditConfig, tol_scale: float, threads: int) -> AuditReport:
    if config.family != "radial":
        raise ConfigError("gauss-bonnet requires family 'radial'")
    profile = _collar.perturbed_profile(config.theta)
    audit = renorm.gauss_bonnet_audit(profile, eps_grid=config.eps_grid(), tol_scale=tol_scale)
    checks = [dict(row) for row in audit["checks"]]
    for name, tol in config.tolerances.items():
        for row in checks:
            if row["name"] == name:
                row["tolerance"] = float(tol) * tol_scale
                row["passed"] = bool(abs(row["value"]) < row["tolerance"])
    artifacts = {
        "eps_grid": audit["eps_grid"],
        "interior": audit["interior"],
        "boundary": audit["boundary"],
        "total": audit["total"],
        "fp_interior": audit["fp_interior"].finite,
        "fp_boundary": audit["fp_boundary"].finite,
    }
    return AuditReport("gauss-bonnet", asdict(config), config.seed, checks, artifacts)


# -- subcommand: linearize-check --------------------------------------------------------


def _linearize_trial(seed: int):
    rng = np.random.default_rng(seed)
    geom = _collar.RadialGeometry(
        _collar.perturbed_profile(0.05 * rng.uniform(-1.0, 1.0, 3))
    )

    def sym(a):
        return 0.5 * (a + a.transpose(0, 2, 1))

    pert = _collar.PolynomialPerturbation(
        {
            2: sym(1.5 * rng.uniform(-1, 1, (1, 3, 3))),
            3: sym(1.5 * rng.uniform(-1, 1, (1, 3, 3))),
        }
    )
    lin = variation.linearized_curvature(geom, pert, 0.25)
    steps = (1e-2, 5e-3, 2.5e-3)
    devs = []
    for t in steps:
        fd = variation.fd_curvature_derivative(geom, pert, 0.25, t)
        devs.append(
            max(
                float(np.max(np.abs(fd["riem_p"] - lin["riem_p"]))),
                float(np.max(np.abs(fd["ric_p"] - lin["ric_p"]))),
                float(np.max(np.abs(fd["s_p"] - lin["s_p"]))),
            )
        )
    return variation.convergence_order(steps, devs)


def run_linearize_check(config: AuditConfig, tol_scale: float, threads: int) -> AuditReport:
    seeds = [config.seed + k for k in range(config.trials)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            orders = list(pool.map(_linearize_trial, seeds))
    else:
        orders = [_linearize_trial(s) for s in seeds]

    geom = config.geometry()

    class _MetricJet:
        def value(self, rho, order=0):
            blocks = geom.spatial(rho)
            out = np.zeros((geom.npts, 4, 4))
            out[:, :3, :3] = blocks[order]
            if order == 0:
                out[:, 3, 3] = 1.0
            return out

    lin = variation.linearized_curvature(geom, _MetricJet(), 0.3)
    cur = lin["background"]
    inv = cur["invariants"]
    scale = max(1.0, float(np.max(np.abs(cur["riem_on"]))))
    dev_r = float(np.max(np.abs(lin["riem_p"] - cur["riem_on"]))) / scale
    dev_ric = float(np.max(np.abs(lin["ric_p"]))) / scale
    dev_s = float(np.max(np.abs(lin["s_p"] + inv["s"]))) / scale

    tols = config.tolerances
    checks = [
        _check(
            "fd_convergence_order",
            "order(||formula - [curv(g+th)-curv(g-th)]/2t||) == 2 +/- 0.2",
            max(abs(o - 2.0) for o in orders),
            0.2,
            tols,
            tol_scale,
        ),
        _check("scaling_riem", "R'g == R", dev_r, 1e-10, tols, tol_scale),
        _check("scaling_ric", "r'g == 0", dev_ric, 1e-10, tols, tol_scale),
        _check("scaling_scal", "s'g == -s", dev_s, 1e-10, tols, tol_scale),
    ]
    artifacts = {"orders": orders}
    return AuditReport("linearize-check", asdict(config), config.seed, checks, artifacts)


# -- subcommand: el-residual --------------------------------------------------------------


def run_el_residual(config: AuditConfig, tol_scale: float, threads: int) -> AuditReport:
    geom = config.geometry()
    result = variation.functional_gradient(geom)
    residual = result["E"]
    tols = config.tolerances
    checks = [
        _check(
            "slice_norms_finite",
            "int_{rho = const} |E| dvol finite on all slices",
            0.0,
            1.0,
            tols,
            tol_scale,
            passed=bool(np.all(np.isfinite(residual.slice_norms))),
        )
    ]
    artifacts = {
        "rhos": residual.rhos,
        "slice_norms": residual.slice_norms,
        "max_norm": residual.max_norm,
        "fit_residual": residual.fit_residual,
    }
    if config.is_hyperbolic:
        checks.append(
            _check("einstein_residual", "E == 0 on Einstein backgrounds (z == 0)",
                   residual.max_norm, 1e-8, tols, tol_scale)
        )
    if config.family == "radial":
        m = np.eye(3)[None]
        pert = _collar.PolynomialPerturbation({2: 0.4 * m, 3: -0.6 * m})
        rep = variation.el_slice_analysis(geom, pert)
        artifacts["phi_coefficients"] = rep["coefficients"]
        artifacts["phi_contributions"] = rep["contributions"]
        artifacts["vanishing_orders"] = rep["vanishing_orders"]
        artifacts["critical"] = rep["critical"]
        if not config.is_hyperbolic:
            c4 = rep["coefficients"][4]
            pairing_dev = abs(rep["phi4_from_pairing"] - c4) / max(1e-12, abs(c4))
            checks.append(
                _check(
                    "phi4_pairing",
                    "phi^(4) == <E0, h4> + <E1, h3> + <E2, h2>",
                    pairing_dev,
                    0.25,
                    tols,
                    tol_scale,
                )
            )
            checks.append(
                _check(
                    "low_order_residual_parity",
                    "E^(0) == 0 and E^(1) == 0 on radial profile families",
                    float(np.max(np.abs(rep["e_series"][:2]))),
                    1e-4,
                    tols,
                    tol_scale,
                )
            )
    return AuditReport("el-residual", asdict(config), config.seed, checks, artifacts)


# -- subcommand: flow --------------------------------------------------------------------


def run_flow_command(config: AuditConfig, tol_scale: float, threads: int) -> AuditReport:
    history = variation.run_flow(
        config.flow_theta0,
        steps=config.flow_steps,
        eta=config.flow_eta,
        target_fraction=config.flow_target_fraction,
    )
    values = [step.value for step in history]
    monotone = all(b <= a for a, b in zip(values, values[1:]))
    reached = values[-1] <= config.flow_target_fraction * max(values[0], 1e-300)
    tols = config.tolerances
    checks = [
        _check("flow_monotone", "Z(theta_k+1) <= Z(theta_k) for all k",
               0.0, 1.0, tols, tol_scale, passed=monotone),
        _check(
            "flow_target",
            "Z(theta_end) <= target_fraction * Z(theta_0) within the step budget",
            values[-1] / max(values[0], 1e-300),
            config.flow_target_fraction,
            tols,
            tol_scale,
            passed=reached,
        ),
    ]
    artifacts = {
        "history": [
            {"step": s.step, "theta": list(s.theta), "value": s.value, "eta": s.eta}
            for s in history
        ]
    }
    return AuditReport("flow", asdict(config), config.seed, checks, artifacts)


def _flow_progress_csv(report: AuditReport) -> str:
    buf = io.StringIO()
    buf.write("# gradient-flow progress\n")
    writer = csv.writer(buf)
    n_theta = len(report.artifacts["history"][0]["theta"])
    writer.writerow(["step"] + [f"theta{k}" for k in range(n_theta)] + ["value", "eta"])
    for row in report.artifacts["history"]:
        writer.writerow([row["step"]] + [repr(float(t)) for t in row["theta"]]
                        + [repr(float(row["value"])), repr(float(row["eta"]))])
    return buf.getvalue()


# -- driver ---------------------------------------------------------------------------------


_RUNNERS = {
    "algebra-suite": run_algebra_suite,
    "collar-audit": run_collar_audit,
    "renvol": run_renvol,
    "gauss-bonnet": run_gauss_bonnet,
    "linearize-check": run_linearize_check,
    "el-residual": run_el_residual,
    "flow": run_flow_command,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ahrenvol",
        description="Audit driver for the renormalized-volume calculus.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--out-dir", default=None, help="report output directory")
        p.add_argument("--format", default=None, choices=("json", "csv"))
        p.add_argument("--seed", type=int, default=None, help="overrides config seed")
        p.add_argument("--threads", type=int, default=1, help="worker-parallelism cap")
        p.add_argument("--tol-scale", type=float, default=1.0,
                       help="multiplies every tolerance")
    return parser


def _load_config(args) -> AuditConfig:
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as handle:
                raw = json.load(handle)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
    else:
        raw = {"family": "radial", "seed": 0}
    config = AuditConfig.from_dict(raw)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = int(args.seed)
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.format is not None:
        overrides["out_format"] = args.format
    if overrides:
        config = AuditConfig(**{**asdict(config), **overrides})
    return config


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    if args.tol_scale <= 0 or args.threads < 1:
        print("error: --tol-scale must be positive and --threads >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    start = time.perf_counter()
    try:
        report = _RUNNERS[args.subcommand](config, args.tol_scale, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        if "stalled" in str(exc):
            print(f"numerical non-convergence: {exc}", file=sys.stderr)
            return EXIT_NONCONVERGENCE
        raise
    except ValueError as exc:
        if "non-convergence" in str(exc) or "insufficient stencil" in str(exc):
            print(f"numerical non-convergence: {exc}", file=sys.stderr)
            return EXIT_NONCONVERGENCE
        raise
    report.elapsed_seconds = time.perf_counter() - start
    report.timestamp = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())

    os.makedirs(config.out_dir, exist_ok=True)
    base = os.path.join(config.out_dir, f"{args.subcommand}-report")
    _write_atomic(base + ".json", report.to_json())
    if config.out_format == "csv":
        _write_atomic(base + ".csv", report.to_csv())
    if args.subcommand == "flow":
        _write_atomic(
            os.path.join(config.out_dir, "flow-progress.csv"),
            _flow_progress_csv(report),
        )

    for row in report.checks:
        verdict = "pass" if row["passed"] else "FAIL"
        print(f"[{verdict}] {row['name']}: {row['value']:.3e} "
              f"(tol {row['tolerance']:.1e}) :: {row['anchor']}")
    if not report.passed:
        return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
