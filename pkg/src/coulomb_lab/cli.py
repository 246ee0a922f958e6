"""Experiment runner.

Each subcommand reproduces one of the package's headline checks and
writes its artifacts (CSV tables plus a summary.json listing every
check with its measured value, reference, tolerance and pass flag)
into the output directory.  Exit status: 0 when all checks pass,
1 when a check fails, 2 on usage errors.

Configuration comes from command-line flags, optionally seeded from a
key=value file given with --config (flags override the file).  All
randomness flows from a single seed recorded in summary.json, and a
repeated run with the same configuration is byte-identical.
"""

import argparse
import json
import os
import sys
from pathlib import Path

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _apply_thread_cap():
    cap = os.environ.get("COULOMB_LAB_THREADS")
    if cap:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, cap)


class Check:
    def __init__(self, name, value, reference, tol, ok):
        self.name = name
        self.value = value
        self.reference = reference
        self.tol = tol
        self.ok = bool(ok)

    def as_dict(self):
        return {
            "name": self.name,
            "value": self.value,
            "reference": self.reference,
            "tol": self.tol,
            "pass": self.ok,
        }


def _rel_check(name, value, reference, tol):
    err = abs(value - reference) / abs(reference)
    return Check(name, value, reference, tol, err <= tol)


def _float_list(text):
    return [float(t) for t in text.split(",") if t]


def _int_list(text):
    return [int(t) for t in text.split(",") if t]


def _parse_cap(text):
    """Cap string `center,rho` with center one of k, -k, or `x:y:z`."""
    import numpy as np

    head, rho = text.rsplit(",", 1)
    if head == "k":
        center = np.array([0.0, 0.0, 1.0])
    elif head == "-k":
        center = np.array([0.0, 0.0, -1.0])
    else:
        center = np.array([float(t) for t in head.split(":")])
        center = center / np.linalg.norm(center)
    return center, float(rho)


def _load_config_file(path):
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, val = line.split("=", 1)
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def _write_summary(outdir, command, config, checks, info=None):
    payload = {
        "command": command,
        "config": config,
        "checks": [c.as_dict() for c in checks],
        "pass": all(c.ok for c in checks),
    }
    if info:
        payload["info"] = info
    text = json.dumps(payload, indent=2, sort_keys=True)
    (Path(outdir) / "summary.json").write_text(text + "\n")


def _report(checks):
    for c in checks:
        status = "pass" if c.ok else "FAIL"
        ref = "" if c.reference is None else f" ref={c.reference:.6g}"
        print(f"[{status}] {c.name}: {c.value:.6g}{ref}")
    return 0 if all(c.ok for c in checks) else 1


def _enneper_field(eps, level):
    from . import build_disc_mesh, sample_field
    from .surfaces import enneper_gauss_closure

    mesh = build_disc_mesh(level)
    return sample_field(enneper_gauss_closure(eps), mesh)


# ----------------------------------------------------------------- commands


def cmd_mesh_info(args, outdir, config):
    from . import build_disc_mesh, export_mesh
    import numpy as np

    mesh = build_disc_mesh(args.level)
    with open(Path(outdir) / "mesh.txt", "w") as fh:
        export_mesh(mesh, fh)
    checks = [
        _rel_check("disc_area", mesh.area, np.pi, 0.01),
        Check("min_element_area", float(mesh.areas.min()), None, None,
              mesh.areas.min() > 0),
    ]
    info = {
        "level": args.level,
        "nodes": mesh.node_count,
        "triangles": mesh.triangle_count,
        "h_max": mesh.h_max,
    }
    _write_summary(outdir, "mesh-info", config, checks, info)
    return _report(checks)


def cmd_enneper_table(args, outdir, config):
    import numpy as np
    from . import build_disc_mesh, dirichlet_energy, phi
    from .mesh import integrate
    from .pde import gradient_l2
    from .surfaces import closed_form_table, enneper_gauss_closure, lam
    from . import sample_field

    mesh = build_disc_mesh(args.level)
    checks = []
    rows = []
    for eps in args.eps:
        fld = sample_field(enneper_gauss_closure(eps), mesh)
        table = closed_form_table(eps)
        abs_phi = integrate(np.abs(phi(fld)), mesh)
        energy = dirichlet_energy(fld)
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        f = np.log(lam(eps, x, y)) - np.log(1.0 + eps ** 2)
        grad_f2 = gradient_l2(f, mesh) ** 2
        errs = [
            abs(abs_phi - table.int_abs_phi) / table.int_abs_phi,
            abs(energy - table.int_grad_n2) / table.int_grad_n2,
            abs(grad_f2 - table.grad_f2) / table.grad_f2,
        ]
        rows.append((eps, abs_phi, table.int_abs_phi, energy,
                     table.int_grad_n2, grad_f2, table.grad_f2, max(errs)))
        checks.append(Check(f"closed_forms_eps_{eps:g}", max(errs), 0.0,
                            0.01, max(errs) <= 0.01))
        minimal = abs(2.0 * abs_phi - energy) / energy
        checks.append(Check(f"minimal_surface_eps_{eps:g}", minimal, 0.0,
                            0.01, minimal <= 0.01))
    with open(Path(outdir) / "enneper_table.csv", "w") as fh:
        fh.write("eps,int_abs_phi,ref_phi,int_grad_n2,ref_grad_n2,"
                 "grad_f2,ref_grad_f2,rel_err_max\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    _write_summary(outdir, "enneper-table", config, checks)
    return _report(checks)


def _weak_identity_worst(eps, level, region, seed):
    """Max normalized weak-identity residual over 10 random bumps."""
    from .divform import averaged_omega, weak_identity_residual
    from .frames import _test_functions
    from .pde import gradient_l2

    fld = _enneper_field(eps, level)
    form = averaged_omega(fld, region)
    worst = 0.0
    for zeta in _test_functions(fld.mesh, 10, seed, True):
        r = abs(weak_identity_residual(fld, form, zeta))
        worst = max(worst, r / gradient_l2(zeta, fld.mesh))
    return worst, form, fld


def cmd_decompose(args, outdir, config):
    import numpy as np
    from .divform import (admissible_region, export_divform, gamma_many,
                          omega)

    eps = args.eps[0]
    rng = np.random.default_rng(args.seed)
    base = _enneper_field(eps, args.level)
    report = admissible_region(base, level=args.sphere_level)
    checks = [
        Check("region_measure", report.measure, None, None,
              report.measure > 0.0),
    ]
    worst, form, fld = _weak_identity_worst(
        eps, args.level, report.region, args.seed
    )
    coarse, _, _ = _weak_identity_worst(
        eps, args.level - 1, report.region, args.seed
    )
    from .fields import dirichlet_energy

    grad_n = np.sqrt(dirichlet_energy(fld))
    cert = (8.0 * np.pi / report.measure) * grad_n
    checks += [
        Check("omega_l2_certificate",
              max(form.l2_omega1, form.l2_omega2), cert, None,
              max(form.l2_omega1, form.l2_omega2) <= cert),
        Check("weak_residual", worst, 0.0, 0.05, worst <= 0.05),
        Check("residual_refinement_ratio", coarse / worst, 1.5, None,
              coarse / worst >= 1.5),
        Check("kernel_bound_slack", float(form.bound_slack.min()), 0.0,
              None, form.bound_slack.min() >= 0.0),
    ]
    # kernel bound on 1e5 random samples
    def unit(k):
        v = rng.standard_normal((k, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    n = unit(100000)
    np_ = unit(100000)
    xi = rng.standard_normal((100000, 3))
    lam = np_[:, 0] ** 2 + np_[:, 1] ** 2
    sep = np.linalg.norm(n - np_, axis=1)
    ok = (lam > 1e-8) & (sep > 1e-6)
    g = gamma_many(n[ok], np_[ok], xi[ok])
    bound = 2.0 * np.linalg.norm(xi[ok], axis=1) / sep[ok]
    violations = int(np.sum(np.abs(g) > bound + 1e-12))
    checks.append(Check("gamma_bound_violations", violations, 0, None,
                        violations == 0))
    # elementwise omega bound at random admissible targets
    targets = report.region.nodes[
        rng.integers(0, report.region.nodes.shape[0], size=5)
    ]
    bad = 0
    for t in targets:
        w1, w2, _ = omega(fld, t)
        dist = np.linalg.norm(fld.nbar - t, axis=1)
        b1 = 2.0 * np.linalg.norm(fld.d1, axis=1) / dist
        b2 = 2.0 * np.linalg.norm(fld.d2, axis=1) / dist
        bad += int(np.sum(np.abs(w1) > b1 + 1e-12))
        bad += int(np.sum(np.abs(w2) > b2 + 1e-12))
    checks.append(Check("omega_bound_violations", bad, 0, None, bad == 0))
    with open(Path(outdir) / "divform.csv", "w") as fh:
        export_divform(fld, form, fh)
    _write_summary(outdir, "decompose", config, checks,
                   info={"sigma": report.sigma, "delta": report.delta})
    return _report(checks)


def cmd_frame(args, outdir, config):
    import numpy as np
    from .frames import coulomb_continuation, export_frame_log, frame_residuals
    from .pde import solve_poisson_dirichlet
    from .fields import phi
    from .surfaces import closed_form_table

    eps = args.eps[0]
    residuals = {}
    frame = None
    for level in (args.level - 2, args.level - 1, args.level):
        fld = _enneper_field(eps, level)
        frame = coulomb_continuation(fld, seed=args.seed)
        rep = frame_residuals(frame, seed=args.seed)
        residuals[level] = rep
    with open(Path(outdir) / "frame_log.csv", "w") as fh:
        export_frame_log(frame, fh)
    final = residuals[args.level]
    table = closed_form_table(eps)
    poisson = solve_poisson_dirichlet(phi(fld), fld.mesh)
    f_gap = float(np.abs(frame.f - poisson.f).max())
    r_lo = residuals[args.level - 2].coulomb_residual
    r_mid = residuals[args.level - 1].coulomb_residual
    r_hi = final.coulomb_residual
    checks = [
        Check("orthonormality_defect", final.orth_defect, 0.0, 1e-10,
              final.orth_defect <= 1e-10),
        Check("tangency_defect", final.tangency_defect, 0.0, 1e-10,
              final.tangency_defect <= 1e-10),
        Check("residual_halving_1", r_lo / r_mid, 2.0, None,
              r_lo / r_mid >= 2.0),
        Check("residual_halving_2", r_mid / r_hi, 2.0, None,
              r_mid / r_hi >= 2.0),
        Check("f_recovery_gap", f_gap, 0.0, 0.02 * poisson.max_abs,
              f_gap <= 0.02 * poisson.max_abs),
        _rel_check("f_max", final.f_max, abs(table.f_at_origin), 0.02),
    ]
    _write_summary(outdir, "frame", config, checks,
                   info={"boundary_std": frame.boundary_std,
                         "steps": len(frame.log)})
    return _report(checks)


def cmd_coarea(args, outdir, config):
    import numpy as np
    from . import full_sphere
    from .preimage import coarea_check

    eps = args.eps[0]
    fld = _enneper_field(eps, args.level)
    region = full_sphere(args.sphere_level)
    g = np.ones(fld.mesh.triangle_count)
    rep = coarea_check(fld, g, region, N=args.filter_n)
    gap = abs(rep.gap) / rep.lhs
    excl = rep.excluded_measure / region.measure
    cap_height = (1.0 - eps ** 2) / (1.0 + eps ** 2)
    margin = region.quadrature.face_diameter
    inner = rep.accepted & (region.nodes[:, 2] < cap_height - margin)
    outer = rep.accepted & (region.nodes[:, 2] > cap_height + margin)
    card1 = float(np.mean(rep.cards[inner] == 1)) if inner.any() else 0.0
    card0 = int(np.sum(rep.cards[outer] != 0))
    checks = [
        Check("coarea_gap", gap, 0.0, 0.02, gap <= 0.02),
        Check("excluded_measure", excl, 0.0, 0.05, excl <= 0.05),
        Check("card1_fraction", card1, 1.0, None, card1 >= 0.95),
        Check("card0_outside_image", card0, 0, None, card0 == 0),
    ]
    with open(Path(outdir) / "coarea.csv", "w") as fh:
        fh.write("node,n1,n2,n3,card,signed_sum,accepted\n")
        for q in range(region.nodes.shape[0]):
            n1, n2, n3 = region.nodes[q]
            fh.write(f"{q},{n1:.17g},{n2:.17g},{n3:.17g},"
                     f"{rep.cards[q]},{rep.signed_sums[q]},"
                     f"{int(rep.accepted[q])}\n")
    _write_summary(outdir, "coarea", config, checks,
                   info={"lhs": rep.lhs, "rhs": rep.rhs})
    return _report(checks)


def cmd_holography(args, outdir, config):
    import numpy as np
    from . import build_disc_mesh, cap, phi, sample_field
    from .pde import dual_norm
    from .preimage import holography_identity
    from .surfaces import closed_form_table, enneper_gauss_closure, zeta_eps

    center, rho = _parse_cap(args.cap)
    region = cap(center, rho, level=args.sphere_level)
    levels = args.levels or [args.level] * len(args.eps)
    if len(levels) == 1:
        levels = levels * len(args.eps)
    if len(levels) != len(args.eps):
        raise ValueError("need one refinement level per eps")
    rows = []
    raws, resids, duals, refs = [], [], [], []
    for eps, level in zip(args.eps, levels):
        mesh = build_disc_mesh(level)
        fld = sample_field(enneper_gauss_closure(eps), mesh)
        zeta = zeta_eps(eps, mesh)
        rep = holography_identity(fld, region, zeta)
        duals.append(dual_norm(phi(fld), mesh))
        raws.append(abs(rep.raw_term))
        resids.append(abs(rep.residual))
        refs.append(closed_form_table(eps).delta_norm)
        rows.append((eps, rep.mu, rep.raw_term, rep.residual,
                     rep.omega_l2, rep.excluded_measure))
    checks = []
    for eps, raw, dual, ref in zip(args.eps, raws, duals, refs):
        checks.append(_rel_check(f"raw_term_eps_{eps:g}", raw, ref, 0.05))
        checks.append(_rel_check(f"dual_norm_eps_{eps:g}", dual, ref, 0.05))
    inc_raw = all(b > a for a, b in zip(raws, raws[1:]))
    inc_dual = all(b > a for a, b in zip(duals, duals[1:]))
    mono = all(b <= a for a, b in zip(resids, resids[1:]))
    checks += [
        Check("raw_term_increasing", float(inc_raw), 1.0, None, inc_raw),
        Check("dual_norm_increasing", float(inc_dual), 1.0, None, inc_dual),
        Check("residual_max", max(resids), 0.0, 0.5, max(resids) <= 0.5),
        Check("residual_non_increasing", float(mono), 1.0, None, mono),
    ]
    with open(Path(outdir) / "holography.csv", "w") as fh:
        fh.write("eps,mu,raw_term,corrected_residual,omega_l2,"
                 "excluded_measure\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    _write_summary(outdir, "holography", config, checks,
                   info={"levels": levels})
    return _report(checks)


def cmd_self_intersect(args, outdir, config):
    import numpy as np
    from .surfaces import (coincidence_radii, enneper_psi_closure,
                           self_intersections)

    eps = args.eps[0]
    result = self_intersections(eps)
    psi = enneper_psi_closure(eps)
    rows = []
    worst = 0.0
    for p in result.pairs:
        gap = float(np.linalg.norm(psi(*p.x_hat) - psi(*p.x_tilde)))
        worst = max(worst, gap)
        rows.append((p.family, p.x_hat, p.x_tilde, p.radius, gap))
    radii = coincidence_radii(eps)
    min_r2 = float((radii ** 2).min()) if radii.size else float("inf")
    floor = 3.0 * eps ** 2 - 1e-6
    checks = [
        Check("pair_count", len(result.pairs), 4, None,
              len(result.pairs) == 4),
        Check("pair_gap_max", worst, 0.0, 1e-10, worst <= 1e-10),
        Check("sweep_min_radius_sq", min_r2, floor, None, min_r2 >= floor),
    ]
    with open(Path(outdir) / "self_intersect.csv", "w") as fh:
        fh.write("family,x_hat1,x_hat2,x_tilde1,x_tilde2,radius,gap\n")
        for fam, xh, xt, r, gap in rows:
            fh.write(f"{fam},{xh[0]:.17g},{xh[1]:.17g},"
                     f"{xt[0]:.17g},{xt[1]:.17g},{r:.17g},{gap:.17g}\n")
    _write_summary(outdir, "self-intersect", config, checks)
    return _report(checks)


def cmd_convergence(args, outdir, config):
    import numpy as np
    from . import (build_disc_mesh, dirichlet_energy, field_from_values,
                   phi, sample_field)
    from .mesh import integrate
    from .pde import gradient_l2
    from .surfaces import closed_form_table, enneper_gauss_closure, lam

    eps = args.eps[0]
    table = closed_form_table(eps)
    rows = []
    worst_by_level = []
    for level in args.levels:
        mesh = build_disc_mesh(level)
        fld = sample_field(enneper_gauss_closure(eps), mesh)
        e_phi = abs(integrate(np.abs(phi(fld)), mesh)
                    - table.int_abs_phi) / table.int_abs_phi
        e_en = abs(dirichlet_energy(fld)
                   - table.int_grad_n2) / table.int_grad_n2
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        f = np.log(lam(eps, x, y)) - np.log(1.0 + eps ** 2)
        e_f = abs(gradient_l2(f, mesh) ** 2
                  - table.grad_f2) / table.grad_f2
        rows.append((level, e_phi, e_en, e_f, max(e_phi, e_en, e_f)))
        worst_by_level.append(max(e_phi, e_en, e_f))
    decreasing = all(b < a for a, b in
                     zip(worst_by_level, worst_by_level[1:]))
    checks = [
        Check("errors_decreasing", float(decreasing), 1.0, None,
              decreasing),
    ]
    # orientation symmetry of the Jacobian density under O(3)
    rng = np.random.default_rng(args.seed)
    mesh = build_disc_mesh(args.levels[len(args.levels) // 2])
    fld = sample_field(enneper_gauss_closure(eps), mesh)
    base = phi(fld)
    worst_sym = 0.0
    for _ in range(5):
        q, _r = np.linalg.qr(rng.standard_normal((3, 3)))
        sign = float(np.linalg.det(q))
        rotated = field_from_values(fld.values @ q.T, mesh)
        worst_sym = max(
            worst_sym, float(np.abs(phi(rotated) - sign * base).max())
        )
    checks.append(Check("rotation_symmetry_defect", worst_sym, 0.0,
                        1e-12, worst_sym <= 1e-12))
    with open(Path(outdir) / "convergence.csv", "w") as fh:
        fh.write("level,rel_err_phi,rel_err_energy,rel_err_gradf2,"
                 "max_rel_err\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    _write_summary(outdir, "convergence", config, checks)
    return _report(checks)


_COMMANDS = {
    "mesh-info": cmd_mesh_info,
    "enneper-table": cmd_enneper_table,
    "decompose": cmd_decompose,
    "frame": cmd_frame,
    "coarea": cmd_coarea,
    "holography": cmd_holography,
    "self-intersect": cmd_self_intersect,
    "convergence": cmd_convergence,
}

_DEFAULTS = {
    "mesh-info": {"level": 5},
    "enneper-table": {"level": 6, "eps": [1.0, 0.5, 0.25]},
    "decompose": {"level": 6, "eps": [0.5], "sphere_level": 4},
    "frame": {"level": 6, "eps": [0.5]},
    "coarea": {"level": 6, "eps": [0.5], "sphere_level": 4,
               "filter_n": 64},
    "holography": {"eps": [0.3, 0.1, 0.03], "levels": [6, 7, 8],
                   "sphere_level": 4, "cap": "-k,0.7853981633974483"},
    "self-intersect": {"eps": [0.4]},
    "convergence": {"eps": [0.5], "levels": [4, 5, 6]},
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="coulomb-lab",
        description="Experiment runner for disc-to-sphere field "
                    "decompositions.",
    )
    parser.add_argument("--config", help="key=value configuration file")
    sub = parser.add_subparsers(dest="command")
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--level", type=int, help="mesh refinement level")
        p.add_argument("--levels", type=_int_list,
                       help="comma-separated refinement levels")
        p.add_argument("--eps", type=_float_list,
                       help="comma-separated parameter values")
        p.add_argument("--sphere-level", type=int,
                       help="sphere quadrature subdivision level")
        p.add_argument("--filter-n", type=int,
                       help="regular-value filter bound N")
        p.add_argument("--cap", help="cap region `center,rho`")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int)
    return parser


_CONVERT = {
    "level": int, "levels": _int_list, "eps": _float_list,
    "sphere_level": int, "filter_n": int, "cap": str, "out": str,
    "seed": int,
}


def main(argv=None):
    _apply_thread_cap()
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    merged = {"seed": 1234}
    merged.update(_DEFAULTS.get(args.command, {}))
    if args.config:
        try:
            raw = _load_config_file(args.config)
        except (OSError, ValueError) as exc:
            print(f"coulomb-lab: bad config: {exc}", file=sys.stderr)
            return 2
        for key, val in raw.items():
            if key not in _CONVERT:
                print(f"coulomb-lab: unknown config key {key!r}",
                      file=sys.stderr)
                return 2
            merged[key] = _CONVERT[key](val)
    for key in _CONVERT:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    for key, val in merged.items():
        setattr(args, key, val)
    for key in ("level", "levels", "eps", "sphere_level", "filter_n",
                "cap"):
        if not hasattr(args, key):
            setattr(args, key, None)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    config = {
        k: v for k, v in sorted(merged.items())
        if k != "out" and v is not None
    }
    config["seed"] = args.seed
    try:
        return _COMMANDS[args.command](args, outdir, config)
    except ValueError as exc:
        print(f"coulomb-lab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
