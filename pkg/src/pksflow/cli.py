"""Command-line entry points: simulate, validate, ot-selftest, steady-state.

Configuration is a flat ``key = value`` text file with dotted section keys
(unknown keys are errors), diagnostics land in one comma-separated file per
run with a single header row, and every floating-point value is written
with 17 significant digits so reruns with identical config and seed compare
bitwise.  Checkpoints (grid file + metadata record per step) make runs
resumable.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

_CONFIG_SCHEMA = {
    "grid.n": int,
    "grid.l": float,
    "physics.lambda": float,
    "physics.mass": float,
    "physics.c_rho0": float,
    "scheme.tau": float,
    "scheme.max_steps": int,
    "scheme.stop_l1": float,
    "scheme.z": float,
    "scheme.inner_maxiter": int,
    "ot.method": str,
    "ot.sinkhorn_epsilon": float,
    "ot.max_iters": int,
    "ot.marginal_tol": float,
    "ot.debias": bool,
    "init.kind": str,
    "init.offset_x": float,
    "init.offset_y": float,
    "init.weight": float,
    "init.offset2_x": float,
    "init.offset2_y": float,
    "init.file": str,
    "validate.family": str,
    "validate.count": int,
    "output.dir": str,
    "seed": int,
}

_DEFAULTS = {
    "grid.n": 128,
    "grid.l": 40.0,
    "physics.lambda": 1.0,
    "physics.mass": 8.0 * math.pi,
    "init.kind": "steady_translate",
    "init.offset_x": 0.25,
    "init.offset_y": 0.0,
    "init.weight": 0.5,
    "init.offset2_x": 0.0,
    "init.offset2_y": 0.0,
    "scheme.max_steps": 50,
    "scheme.stop_l1": 0.0,
    "ot.method": "entropic",
    "ot.max_iters": 20000,
    "ot.marginal_tol": 1e-6,
    "ot.debias": True,
    "validate.family": "standard",
    "validate.count": 8,
    "seed": 0,
}


def fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def parse_config(path: str) -> dict:
    cfg = dict(_DEFAULTS)
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected `key = value`")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_SCHEMA:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            typ = _CONFIG_SCHEMA[key]
            if typ is bool:
                if value.lower() not in ("true", "false", "0", "1"):
                    raise ValueError(f"{path}:{lineno}: bad boolean {value!r}")
                cfg[key] = value.lower() in ("true", "1")
            else:
                cfg[key] = typ(value)
    return cfg


def _build_grid(cfg):
    from . import grid

    return grid.GridSpec(cfg["grid.n"], cfg["grid.l"])


def _initial_density(cfg, spec):
    import numpy as np

    from . import grid

    p = grid.SteadyStateParams(lam=cfg["physics.lambda"], mass=cfg["physics.mass"])
    kind = cfg["init.kind"]
    if kind == "steady_translate":
        return grid.steady_state(p, (cfg["init.offset_x"], cfg["init.offset_y"]), spec)
    if kind == "mixture":
        w = cfg["init.weight"]
        r1 = grid.steady_state(p, (cfg["init.offset_x"], cfg["init.offset_y"]), spec)
        r2 = grid.steady_state(p, (cfg["init.offset2_x"], cfg["init.offset2_y"]), spec)
        vals = w * r1.values + (1.0 - w) * r2.values
        vals = vals * ((r1.mass + r2.mass) / 2.0 / (vals.sum() * spec.cell_area))
        return grid.density_from_values(spec, vals)
    if kind == "file":
        if "init.file" not in cfg:
            raise ValueError("init.kind = file requires init.file")
        if not os.path.exists(cfg["init.file"]):
            raise ValueError(f"initial-data file not found: {cfg['init.file']}")
        return grid.read_density(cfg["init.file"])
    raise ValueError(f"unknown init.kind {kind!r}")


def _ot_config(cfg):
    from . import transport

    return transport.OTSolverConfig(
        method=cfg["ot.method"],
        sinkhorn_epsilon=cfg.get("ot.sinkhorn_epsilon"),
        max_iters=cfg["ot.max_iters"],
        marginal_tol=cfg["ot.marginal_tol"],
        debias=cfg["ot.debias"],
    )


def _write_scheme(path, scheme):
    import dataclasses

    with open(path, "w") as f:
        for fld in dataclasses.fields(scheme):
            f.write(f"{fld.name} = {fmt(getattr(scheme, fld.name))}\n")


def _diag_header(rec):
    cols = list(rec.SCALARS)
    for side in ("before", "after"):
        cols += [f"{side}_{name}" for name in type(rec.before).FIELDS]
    cols += [f"lp_{p:g}" for p in sorted(rec.lp_snapshot)]
    return cols


def _diag_row(rec):
    vals = [getattr(rec, name) for name in rec.SCALARS]
    vals += list(rec.before.as_row())
    vals += list(rec.after.as_row())
    vals += [rec.lp_snapshot[p] for p in sorted(rec.lp_snapshot)]
    return vals


def cmd_simulate(args) -> int:
    import numpy as np

    from . import functionals, grid, jko

    cfg = parse_config(args.config)
    out = args.out or cfg.get("output.dir")
    if not out:
        print("simulate: no output directory (--out or output.dir)", file=sys.stderr)
        return 1
    os.makedirs(out, exist_ok=True)
    ckpt_dir = os.path.join(out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)

    spec = _build_grid(cfg)
    lam = cfg["physics.lambda"]
    start_k = 0
    if args.resume:
        rho0, start_k, scheme = _load_resume(args.resume, cfg)
    else:
        rho0 = _initial_density(cfg, spec)
        try:
            scheme = jko.schedule(
                lam,
                rho0,
                c_rho0=cfg.get("physics.c_rho0"),
                tau=cfg.get("scheme.tau"),
                z_override=cfg.get("scheme.z"),
                max_steps=cfg["scheme.max_steps"],
                stop_l1=cfg["scheme.stop_l1"],
                **(
                    {"inner_maxiter": cfg["scheme.inner_maxiter"]}
                    if "scheme.inner_maxiter" in cfg
                    else {}
                ),
            )
        except ValueError as err:
            print(f"simulate: rejected [thresh]: {err}", file=sys.stderr)
            return 1
    _write_scheme(os.path.join(out, "scheme.txt"), scheme)

    p = grid.SteadyStateParams(lam=lam, mass=rho0.mass)
    target = grid.steady_state(p, (0.0, 0.0), rho0.spec)
    diag_path = os.path.join(out, "diagnostics.csv")
    diag_file = open(diag_path, "w")
    header_written = False

    def checkpoint(k, rho, rec):
        nonlocal header_written
        kk = start_k + k
        grid.write_density(os.path.join(ckpt_dir, f"rho_{kk:05d}.grid"), rho)
        with open(os.path.join(ckpt_dir, f"meta_{kk:05d}.txt"), "w") as f:
            f.write(
                f"k = {kk}\ntau = {fmt(rec.tau)}\neps_k = {fmt(rec.eps_k)}\n"
                f"objective = {fmt(rec.objective_final)}\n"
            )
        if not header_written:
            diag_file.write(",".join(_diag_header(rec)) + "\n")
            header_written = True
        diag_file.write(",".join(fmt(v) for v in _diag_row(rec)) + "\n")
        diag_file.flush()

    try:
        traj = jko.run(rho0, scheme, target=target, checkpoint_cb=checkpoint)
    except jko.StepSolverError as err:
        print(f"simulate: step failed: {err}", file=sys.stderr)
        diag_file.close()
        return 1
    diag_file.close()

    final = traj.densities[-1]
    h_seq = [functionals.h_lambda(d, lam) for d in traj.densities]
    sum_tau_d = sum(scheme.tau * r.after.dissipation for r in traj.records)
    with open(os.path.join(out, "summary.txt"), "w") as f:
        f.write(f"steps = {len(traj.records)}\n")
        f.write(f"final_l1_to_steady = {fmt(grid.l1_distance(final, target))}\n")
        f.write(f"initial_l1_to_steady = {fmt(grid.l1_distance(rho0, target))}\n")
        f.write(f"final_h_lambda = {fmt(h_seq[-1])}\n")
        f.write(f"initial_h_lambda = {fmt(h_seq[0])}\n")
        f.write(f"sum_tau_dissipation = {fmt(sum_tau_d)}\n")
        f.write(f"final_free_energy = {fmt(functionals.free_energy(final, 0.0))}\n")
    return 0


def _load_resume(resume_path, cfg):
    import dataclasses

    from . import grid, jko

    ckpt_dir = (
        resume_path
        if os.path.basename(resume_path) == "checkpoints"
        else os.path.join(resume_path, "checkpoints")
    )
    grids = sorted(f for f in os.listdir(ckpt_dir) if f.endswith(".grid"))
    if not grids:
        raise ValueError(f"no checkpoints under {ckpt_dir}")
    last = grids[-1]
    k = int(last.split("_")[1].split(".")[0])
    rho = grid.read_density(os.path.join(ckpt_dir, last))
    scheme_path = os.path.join(os.path.dirname(ckpt_dir), "scheme.txt")
    # scheduling constants belong to the original datum, not the restart
    # point, so the stored config is reloaded verbatim
    types = {f.name: f.type for f in dataclasses.fields(jko.SchemeConfig)}
    stored = {}
    with open(scheme_path) as f:
        for line in f:
            key, value = (s.strip() for s in line.split("=", 1))
            if types.get(key) == "int":
                stored[key] = int(value)
            else:
                stored[key] = float(value)
    stored["max_steps"] = cfg["scheme.max_steps"]
    stored["stop_l1"] = cfg["scheme.stop_l1"]
    return rho, k, jko.SchemeConfig(**stored)


def cmd_validate(args) -> int:
    import numpy as np

    from . import functionals, grid, inequalities

    cfg = parse_config(args.config)
    out = args.out or cfg.get("output.dir")
    spec = _build_grid(cfg)
    lam = cfg["physics.lambda"]
    family = _density_family(cfg, spec)
    if not family:
        print("validate: no densities", file=sys.stderr)
        return 1

    rows = []
    failures = []
    for name, rho in family:
        critical = (
            abs(rho.mass - functionals.CRITICAL_MASS)
            <= functionals.CRITICAL_MASS_RTOL * functionals.CRITICAL_MASS
        )
        checks = [
            inequalities.check_log_hls(rho),
            inequalities.check_gns(rho),
            inequalities.localization_bound(rho, lam, 1.0),
            inequalities.localization_bound(rho, lam, 1.9),
            inequalities.neg_entropy_bound(rho, lam),
            inequalities.check_thick_tails(rho, lam, 1.5),
        ]
        for rep in checks:
            rows.append((name, rep, "pass" if rep.passed else "FAIL"))
            if not rep.passed:
                failures.append((name, rep))
        for make in (inequalities.check_ccf, inequalities.check_ccd):
            if critical:
                rep = make(rho, lam)
                rows.append((name, rep, "pass" if rep.passed else "FAIL"))
                if not rep.passed:
                    failures.append((name, rep))
            else:
                rows.append((name, make.__name__, "skipped: off-critical"))

    lines = ["density,check,anchor,lhs,rhs,slack,tol,status"]
    for name, rep, status in rows:
        if isinstance(rep, str):
            lines.append(f"{name},{rep},,,,,,{status}")
        else:
            lines.append(
                f"{name},{rep.name},{rep.anchor},{fmt(rep.lhs)},{fmt(rep.rhs)},"
                f"{fmt(rep.slack)},{fmt(rep.tol)},{status}"
            )
    report_text = "\n".join(lines) + "\n"
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "validate.csv"), "w") as f:
            f.write(report_text)
    else:
        sys.stdout.write(report_text)
    if failures:
        for name, rep in failures:
            print(
                f"validate: {rep.name} failed on {name} [{rep.anchor}]: "
                f"slack = {fmt(rep.slack)} < -tol = {fmt(-rep.tol)}",
                file=sys.stderr,
            )
        return 1
    return 0


def _density_family(cfg, spec):
    import numpy as np

    from . import grid

    lam = cfg["physics.lambda"]
    mass = cfg["physics.mass"]
    p = grid.SteadyStateParams(lam=lam, mass=mass)
    fam = cfg["validate.family"]
    rng = np.random.default_rng(cfg["seed"])
    out = []
    if fam == "translates":
        for i in range(cfg["validate.count"]):
            a = 0.5 * math.sqrt(lam) * i / max(cfg["validate.count"] - 1, 1)
            out.append((f"translate_{a:g}", grid.steady_state(p, (a, 0.0), spec)))
        return out
    if fam == "standard":
        out.append(("steady", grid.steady_state(p, (0.0, 0.0), spec)))
        out.append(
            ("translate", grid.steady_state(p, (0.25 * math.sqrt(lam), 0.0), spec))
        )
        r1 = grid.steady_state(p, (0.0, 0.0), spec)
        r2 = grid.steady_state(p, (0.5 * math.sqrt(lam), 0.0), spec)
        mix = 0.7 * r1.values + 0.3 * r2.values
        mix *= mass / (mix.sum() * spec.cell_area)
        out.append(("mixture", grid.density_from_values(spec, mix)))
        x, y = spec.meshgrid()
        bump = np.exp(-(x * x + y * y) / (2.0 * lam))
        bump *= mass / (bump.sum() * spec.cell_area)
        out.append(("bump", grid.density_from_values(spec, bump)))
        sub = grid.steady_state(
            grid.SteadyStateParams(lam=lam, mass=0.5 * mass), (0.0, 0.0), spec
        )
        out.append(("half_mass", sub))
        return out
    raise ValueError(f"unknown validate.family {fam!r}")


def cmd_ot_selftest(args) -> int:
    import numpy as np

    from . import transport

    sizes = [int(s) for s in args.sizes]
    rng = np.random.default_rng(args.seed)
    cap = transport.OTSolverConfig().exact_cap
    worst = (0.0, None)
    for size in sizes:
        if size > cap:
            print(f"size {size}: skipped (exact solver cap {cap})")
            continue
        for trial in range(args.trials):
            xs = rng.uniform(-1.0, 1.0, (size, 2))
            ys = rng.uniform(-1.0, 1.0, (size, 2))
            a = rng.uniform(0.2, 1.0, size)
            b = rng.uniform(0.2, 1.0, size)
            b *= a.sum() / b.sum()
            exact = transport.wasserstein_points(
                xs, a, ys, b, 2.0, transport.OTSolverConfig(method="exact-small")
            )
            ent = transport.wasserstein_points(
                xs,
                a,
                ys,
                b,
                2.0,
                transport.OTSolverConfig(
                    sinkhorn_epsilon=2e-3, marginal_tol=1e-9, debias=True
                ),
            )
            rel = abs(ent.cost - exact.cost) / max(exact.cost, 1e-12)
            if rel > worst[0]:
                worst = (rel, (size, trial, exact.cost, ent.cost))
            print(
                f"size {size} trial {trial}: exact {fmt(exact.cost)} "
                f"entropic {fmt(ent.cost)} rel {rel:.3e}"
            )
    if worst[1] is not None and worst[0] > 0.01:
        size, trial, we, wn = worst[1]
        print(
            f"ot-selftest: worst instance size {size} trial {trial}: "
            f"exact {fmt(we)} vs entropic {fmt(wn)} ({worst[0]:.2%})",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_steady_state(args) -> int:
    from . import grid

    cfg = parse_config(args.config) if args.config else dict(_DEFAULTS)
    spec = _build_grid(cfg)
    p = grid.SteadyStateParams(lam=cfg["physics.lambda"], mass=cfg["physics.mass"])
    rho = grid.steady_state(p, (cfg["init.offset_x"], cfg["init.offset_y"]), spec)
    tail = grid.steady_state_tail(p, spec)
    out = args.out or cfg.get("output.dir")
    if out:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, "steady_state.grid")
        grid.write_density(path, rho)
        print(f"wrote {path}")
    else:
        grid.write_density(sys.stdout, rho)
    print(f"box mass = {fmt(rho.mass)}", file=sys.stderr)
    print(f"analytic tail outside box >= radius L: {fmt(tail)}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pksflow",
        description="critical-mass chemotaxis: minimizing-movement runs and "
        "functional-inequality validation",
    )
    parser.add_argument("--threads", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run the minimizing-movement scheme")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", default=None)
    p_sim.add_argument("--resume", default=None)

    p_val = sub.add_parser("validate", help="run the inequality suite")
    p_val.add_argument("--config", required=True)
    p_val.add_argument("--out", default=None)

    p_ot = sub.add_parser("ot-selftest", help="entropic vs exact transport")
    p_ot.add_argument("sizes", nargs="+")
    p_ot.add_argument("--trials", type=int, default=3)
    p_ot.add_argument("--seed", type=int, default=0)

    p_ss = sub.add_parser("steady-state", help="dump a stationary profile grid")
    p_ss.add_argument("--config", default=None)
    p_ss.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    if args.threads is not None:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ[var] = str(args.threads)

    dispatch = {
        "simulate": cmd_simulate,
        "validate": cmd_validate,
        "ot-selftest": cmd_ot_selftest,
        "steady-state": cmd_steady_state,
    }
    try:
        return dispatch[args.command](args)
    except (ValueError, OSError) as err:
        print(f"{args.command}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
