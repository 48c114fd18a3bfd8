"""Command-line harness: one entry point per computation, TOML in, CSV/JSON out.

Every run writes its artifacts atomically into --out and finishes with a
JSON run record carrying the config hash, wall clock, and one pass/fail
line per enabled check; the exit code is 0 iff all checks pass.
"""
import argparse
import concurrent.futures
import csv
import hashlib
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__, adiabatic, free_theory, reference_model
from . import exact_diag as ed
from . import response_matrices as rm
from .errors import CheckFailed, ConfigInvalid, FrlabError
from .lattice import Model, band_structure, find_fermi_points, laplacian, load_model

COMMANDS = ("spectrum", "fermi", "kubo-scan", "edcheck", "bubble",
            "chiralloop", "kmatrix", "scaling")


def _atomic_write(path, write_fn):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return str(path)


def _write_csv(path, header, rows):
    def go(fh):
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
    return _atomic_write(path, go)


def _config_hash(cfg):
    canon = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _load_config(path):
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    p = Path(path)
    if not p.exists():
        raise ConfigInvalid(f"config file {path} not found")
    with open(p, "rb") as fh:
        return tomllib.load(fh)


def _model_from_config(cfg, cfg_dir):
    sec = cfg.get("model")
    if sec is None:
        return Model(hamiltonian=laplacian(), mu=2.0)
    if "file" in sec:
        return load_model(Path(cfg_dir) / sec["file"])
    from .lattice import BlochHamiltonian, TwoBodyPotential
    M = int(sec.get("M", 1))
    blocks = {}
    for d, flat in sec.get("blocks", {}).items():
        pairs = np.asarray(flat, dtype=float).reshape(M, M, 2)
        blocks[int(d)] = pairs[..., 0] + 1j * pairs[..., 1]
    if not blocks:
        ham = laplacian(float(sec.get("t", 1.0)))
    else:
        ham = BlochHamiltonian(M=M, blocks=blocks)
    pot = TwoBodyPotential(values={
        int(d): w for d, w in cfg.get("potential", {}).get("values", {}).items()
    })
    return Model(hamiltonian=ham, mu=float(sec.get("mu", 0.0)),
                 coupling=float(sec.get("lambda", 0.0)), potential=pot)


class Run:
    """Collects checks and artifacts for one command invocation."""

    def __init__(self, command, cfg, outdir, tol_scale):
        self.command = command
        self.cfg = cfg
        self.outdir = Path(outdir)
        self.tol_scale = tol_scale
        self.checks = []
        self.artifacts = []
        self.t0 = time.time()

    def check(self, name, value, tol, larger_is_fail=True):
        ok = bool(value < tol * self.tol_scale) if larger_is_fail else bool(value)
        self.checks.append({
            "check": name, "value": float(value) if np.isscalar(value) else value,
            "tolerance": tol * self.tol_scale if larger_is_fail else None,
            "pass": ok,
        })
        return ok

    def assert_true(self, name, flag, detail=None):
        self.checks.append({"check": name, "value": detail, "tolerance": None,
                            "pass": bool(flag)})
        return bool(flag)

    def finish(self):
        record = {
            "command": self.command,
            "config_hash": _config_hash(self.cfg),
            "code_version": __version__,
            "wall_clock_s": round(time.time() - self.t0, 3),
            "checks": self.checks,
            "artifacts": self.artifacts,
            "pass": all(c["pass"] for c in self.checks) if self.checks else True,
        }
        path = self.outdir / f"{self.command.replace('-', '_')}_record.json"
        self.artifacts.append(str(path))
        _atomic_write(path, lambda fh: json.dump(record, fh, indent=2, default=str))
        return record


def _section(cfg, command):
    return cfg.get(command.replace("-", "_"), {})


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_spectrum(run, model, sec, jobs):
    L = int(sec.get("grid", 256))
    ks = np.linspace(0, 2 * np.pi, L, endpoint=False)
    evals, evecs = band_structure(model.hamiltonian, ks)
    herm = max(
        np.abs(model.hamiltonian.bloch(k) - model.hamiltonian.bloch(k).conj().T).max()
        for k in ks[:: max(1, L // 32)]
    )
    ortho = max(
        np.abs(evecs[i].conj().T @ evecs[i] - np.eye(model.hamiltonian.M)).max()
        for i in range(len(ks))
    )
    run.check("bloch_hermiticity", herm, 1e-14)
    run.check("eigenvector_orthonormality", ortho, 1e-12)
    rows = [(k, *evals[i]) for i, k in enumerate(ks)]
    run.artifacts.append(_write_csv(
        run.outdir / "spectrum.csv",
        ["k"] + [f"band{b}" for b in range(model.hamiltonian.M)], rows))


def cmd_fermi(run, model, sec, jobs):
    strict = bool(sec.get("strict", True))
    data, report = find_fermi_points(
        model.hamiltonian, model.mu,
        delta_degen=float(sec.get("delta_degen", 1e-8)), strict=strict)
    run.assert_true("nondegenerate_crossings", report.nondegenerate)
    run.assert_true("elastic_scattering", report.elastic or not strict,
                    detail=report.details or None)
    run.check("net_chirality", abs(report.net_chirality), 0.5)
    rows = [(d.omega, d.k_F, d.v, d.band) for d in data]
    run.artifacts.append(_write_csv(
        run.outdir / "fermi_points.csv", ["omega", "k_F", "v", "band"], rows))


def cmd_kubo_scan(run, model, sec, jobs):
    L = int(sec.get("L", 512))
    beta = float(sec.get("beta", 400.0))
    etas = list(sec.get("eta", [0.2, 0.1, 0.05]))
    if not etas:
        raise ConfigInvalid("kubo_scan.eta must be a nonempty list")
    if sorted(etas, reverse=True) != etas:
        raise ConfigInvalid("kubo_scan.eta must be sorted descending")
    a = float(sec.get("a", 1.0))
    nu = int(sec.get("nu", 0))
    out = adiabatic.kubo_comparison(model.hamiltonian, L, beta, model.mu,
                                    etas, a=a, nu=nu)
    rows = []
    for r in out["rows"]:
        for x in range(L):
            rows.append((r["eta"], r["theta"], a, nu, x,
                         r["chi_full"][x], r["chi_lin"][x],
                         r["chi_full"][x] - r["chi_lin"][x]))
    run.artifacts.append(_write_csv(
        run.outdir / "kubo_scan.csv",
        ["eta", "theta", "a", "nu", "x", "chi_full", "chi_lin", "deviation"], rows))
    summary = {"gamma_hat": out["gamma_hat"], "gamma_stderr": out["gamma_stderr"],
               "deviations": [r["dev"] for r in out["rows"]]}
    run.artifacts.append(_atomic_write(
        run.outdir / "kubo_summary.json",
        lambda fh: json.dump(summary, fh, indent=2)))
    run.assert_true("deviations_monotone", out["monotone"],
                    detail=[r["dev"] for r in out["rows"]])
    run.assert_true("decay_exponent_positive", out["gamma_hat"] > 0,
                    detail=out["gamma_hat"])


def cmd_edcheck(run, model, sec, jobs):
    L = int(sec.get("L", 4))
    beta = float(sec.get("beta", 4.0))
    lam = float(sec.get("lambda", model.coupling))
    ens = ed.build_ensemble(model, L, beta, coupling=lam)
    basis = ens.basis
    eta_b = 2 * np.pi * int(sec.get("eta_index", 1)) / beta
    A = basis.density(0).astype(complex)
    B = basis.density(1 % L).astype(complex)
    kms = ed.kms_check(ens, A, B, float(sec.get("t", 0.3)), float(sec.get("s", 0.9)))
    run.check("kms_residual", kms, 1e-9)
    cont = max(ed.continuity_check(ens, model, x) for x in range(L))
    run.check("continuity_residual", cont, 1e-12)
    ward = max(ed.ward_p0_check(ens, model, eta_b, nu) for nu in (0, 1))
    run.check("ward_p0_residual", ward, 1e-9)
    _, _, res1 = ed.wick_rotation_check(ens, 1, A, B, eta_b)
    run.check("wick_rotation_n1", res1, 1e-8)
    if bool(sec.get("n2", True)):
        ens3 = ed.build_ensemble(model, 3, beta, coupling=lam)
        b3 = ens3.basis
        _, _, res2 = ed.wick_rotation_check(
            ens3, 2, b3.density(0).astype(complex), b3.density(1).astype(complex), eta_b)
        run.check("wick_rotation_n2", res2, 1e-7)
    rows = [(c["check"], c["value"], c["tolerance"], c["pass"]) for c in run.checks]
    run.artifacts.append(_write_csv(
        run.outdir / "edcheck.csv", ["check", "residual", "tolerance", "pass"], rows))


def _bubble_point(args):
    p, N, beta, v, stretch = args
    val = reference_model.anomalous_bubble_N(p, N, beta, v=v, stretch=stretch)
    return N, val


def cmd_bubble(run, model, sec, jobs):
    p = tuple(sec.get("p", (1.0, 0.5)))
    Ns = [int(n) for n in sec.get("N", list(range(4, 11)))]
    beta = float(sec.get("beta", 4 * np.pi))
    v = float(sec.get("v", 1.0))
    stretch = float(sec.get("stretch", 1.0))
    ref = reference_model.bubble_closed_form(p, v)
    points = _parallel_map(_bubble_point, [(p, N, beta, v, stretch) for N in Ns], jobs)
    errs = [abs(val - ref) for (_, val) in points]
    gamma, _, _ = reference_model.fit_decay(Ns, errs)
    rows = [(N, val.real, val.imag, err, gamma)
            for (N, val), err in zip(points, errs)]
    run.artifacts.append(_write_csv(
        run.outdir / "bubble.csv",
        ["N", "re", "im", "abs_error_vs_closed_form", "fitted_decay"], rows))
    run.check("bubble_error_at_largest_N", errs[-1], 1e-3)
    run.assert_true("bubble_error_monotone_last3",
                    errs[-3] > errs[-2] > errs[-1], detail=errs[-3:])


def _loop_point(args):
    ps, N, beta, v, stretch = args
    return N, reference_model.chiral_m_loop(ps, N, beta, v=v, stretch=stretch)


def cmd_chiralloop(run, model, sec, jobs):
    beta = float(sec.get("beta", 4 * np.pi))
    eta = 2 * np.pi / beta
    Ns = [int(n) for n in sec.get("N", list(range(6, 13)))]
    m = int(sec.get("m", 3))
    if m == 3:
        ps = [(eta, eta), (eta, 0.0), (-2 * eta, -eta)]
    else:
        ps = [(eta, eta)] * (m - 1) + [(-(m - 1) * eta, -(m - 1) * eta)]
    points = _parallel_map(_loop_point, [(ps, N, beta, 1.0, 1.0) for N in Ns], jobs)
    # the exact free-loop cancellation: the summed orderings vanish identically
    worst = max(abs(val) for (_, val) in points)
    run.check("free_loop_cancellation", worst, 1e-10)
    # decay-rate diagnostic of the anomaly mechanism: the cutoff bubble
    # converges to the closed form only for the symmetric cutoff
    p = (2 * eta, eta)
    sym = reference_model.bubble_convergence(p, Ns, beta)
    gsym, _, _ = reference_model.fit_decay([r[0] for r in sym], [r[2] for r in sym])
    ctrl_N = [n for n in Ns if n <= min(Ns) + 4]
    ctrl = reference_model.bubble_convergence(p, ctrl_N, beta, stretch=2.0)
    gctl, _, _ = reference_model.fit_decay([r[0] for r in ctrl], [r[2] for r in ctrl])
    run.assert_true("anomaly_decay_exponent", gsym >= 0.3, detail=gsym)
    run.assert_true("asymmetric_control_no_decay", gctl < 0.3, detail=gctl)
    rows = [(N, abs(val), s[2], gsym) for (N, val), s in zip(points, sym)]
    run.artifacts.append(_write_csv(
        run.outdir / "chiralloop.csv",
        ["N", "abs_loop", "bubble_remainder", "fitted_decay"], rows))


def cmd_kmatrix(run, model, sec, jobs):
    Nf = int(sec.get("Nf", 2))
    v = np.asarray(sec.get("v", [1.0, -1.0]), dtype=float)
    Lam = np.asarray(sec.get("Lambda", (0.5 * (np.ones((Nf, Nf)) - np.eye(Nf))).tolist()),
                     dtype=float)
    a = float(sec.get("a", 1.0))
    qs = np.linspace(*sec.get("q_range", (-5.0, 5.0)), int(sec.get("nq", 101)))
    rset = rm.ResponseMatrixSet(v=v, Lam=Lam, a=a)
    rows = []
    for q in qs:
        for nu in (0, 1):
            K = rm.k_nu(rset, q, nu)
            for i in range(Nf):
                for j in range(Nf):
                    rows.append((q, nu, i + 1, j + 1, K[i, j].real, K[i, j].imag))
    run.artifacts.append(_write_csv(
        run.outdir / "kmatrix.csv", ["q", "nu", "omega", "omega_p", "re", "im"], rows))
    xs = sec.get("x", [0.0, 5.0, 10.0])
    theta = float(sec.get("theta", 0.1))
    prof_rows = []
    for x in xs:
        for nu in (0, 1):
            val, err = rm.chi_lin(rset, x, theta, nu, adiabatic.bump_amplitude)
            prof_rows.append((x, nu, val, err))
    run.artifacts.append(_write_csv(
        run.outdir / "chi_lin_profile.csv", ["x", "nu", "chi_lin", "quad_error"],
        prof_rows))
    # two-chirality oracle equality over random draws
    draws = int(sec.get("draws", 100))
    rng = np.random.default_rng(int(sec.get("seed", 0)))
    worst = 0.0
    for _ in range(draws):
        vs = rng.uniform(0.5, 3.0)
        lam = rng.uniform(-1.0, 1.0) * 2 * np.pi * vs
        q = rng.uniform(-5.0, 5.0)
        aa = rng.choice([0.5, 1.0, 2.0])
        rs = rm.ResponseMatrixSet(v=np.array([vs, -vs]),
                                  Lam=np.array([[0.0, lam], [lam, 0.0]]), a=aa)
        ones = np.ones(2)
        s0 = ones @ rm.k_nu(rs, q, 0) @ ones
        s1 = ones @ rm.k_nu(rs, q, 1) @ ones
        c0, c1 = rm.two_chirality_closed_forms(vs, lam, q, aa)
        worst = max(worst, abs(s0 - c0), abs(s1 - c1))
    run.check("two_chirality_oracle", worst, 1e-12)


def _scaling_point(args):
    ham, mu, beta, L, ps, N0 = args
    val, tail = free_theory.m_point_density_loop(ham, mu, beta, L, ps, nu=0, N0=N0)
    return abs(val), tail


def cmd_scaling(run, model, sec, jobs):
    L = int(sec.get("L", 512))
    beta = float(sec.get("beta", 400.0))
    N0 = int(sec.get("N0", 7))
    dq = 2 * np.pi / L
    kF_idx = int(sec.get("kF_index", 64))
    mu = 2.0 * (1.0 - np.cos(kF_idx * dq))
    eta0 = 2 * np.pi / beta
    j_hi = int(sec.get("eta_index", 16))
    ham = model.hamiltonian
    rows = []
    ratios = {}
    for m, mults in (
        (3, [(2 * kF_idx, -kF_idx)]),
        (4, [(2 * kF_idx, -2 * kF_idx, 2 * kF_idx)]),
    ):
        for j in (j_hi, j_hi // 2):
            eta = j * eta0
            ps = [(eta, jq * dq) for jq in mults[0]]
            val, tail = _scaling_point((ham, mu, beta, L, ps, N0))
            rows.append((m, eta, val, tail))
        ratios[m] = rows[-1][2] / rows[-2][2]
    run.artifacts.append(_write_csv(
        run.outdir / "scaling.csv", ["m", "eta", "abs_loop", "tail_estimate"], rows))
    run.assert_true("threepoint_doubles",
                    2.0 / 1.3 <= ratios[3] <= 2.0 * 1.3, detail=ratios[3])
    run.assert_true("fourpoint_quadruples",
                    4.0 / 1.4 <= ratios[4] <= 4.0 * 1.4, detail=ratios[4])


def _parallel_map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


DISPATCH = {
    "spectrum": cmd_spectrum,
    "fermi": cmd_fermi,
    "kubo-scan": cmd_kubo_scan,
    "edcheck": cmd_edcheck,
    "bubble": cmd_bubble,
    "chiralloop": cmd_chiralloop,
    "kmatrix": cmd_kmatrix,
    "scaling": cmd_scaling,
}


def run_command(command, cfg, outdir, jobs=1, tol_scale=1.0, cfg_dir="."):
    if command not in DISPATCH:
        raise ConfigInvalid(f"unknown command {command!r}")
    model = _model_from_config(cfg, cfg_dir)
    run = Run(command, cfg, outdir, tol_scale)
    DISPATCH[command](run, model, _section(cfg, command), jobs)
    return run.finish()


def main(argv=None):
    ap = argparse.ArgumentParser(prog="frlab", description=__doc__)
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", default=None, help="TOML run configuration")
    ap.add_argument("--out", default="out", help="artifact directory")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--tolerance-scale", type=float, default=1.0)
    args = ap.parse_args(argv)
    try:
        cfg = _load_config(args.config) if args.config else {}
        if args.tolerance_scale <= 0:
            raise ConfigInvalid("--tolerance-scale must be positive")
        record = run_command(args.command, cfg, args.out, jobs=args.jobs,
                             tol_scale=args.tolerance_scale,
                             cfg_dir=Path(args.config).parent if args.config else ".")
    except FrlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for c in record["checks"]:
        status = "PASS" if c["pass"] else "FAIL"
        print(f"[{status}] {c['check']}: {c['value']}")
    if not record["pass"]:
        print("run failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
