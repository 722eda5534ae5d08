"""Command-line front end: reproducible experiments with CSV/JSON artifacts.

Commands: green | frd | flow | simulate | report.  Every run writes a
``manifest.json`` with the resolved configuration, package/library
versions and input-file hashes; reruns with an identical manifest
reproduce all outputs byte-for-byte (Monte Carlo included, through the
counter-based seeding contract).

Configuration precedence: command-line flags > ``key = value`` config
file (``--config``) > built-in defaults.  The random seed resolves as
``--seed`` > env RGWSAW_SEED > 0.  All numeric output is full-precision
decimal repr; exit codes: 0 ok, 2 usage, 3 violated invariant (with a
machine-readable violation record), 4 tail budget exceeded.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np
import scipy

from . import __version__, covdecomp, lattice, rgflow, wsaw_mc

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_TAIL = 4


class CliError(RuntimeError):
    def __init__(self, message, code=EXIT_VALIDATION, record=None):
        super().__init__(message)
        self.code = code
        self.record = record or {}


# -- config plumbing -----------------------------------------------------------


def load_config(path) -> dict:
    """Plain-text ``key = value`` file; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected 'key = value'", EXIT_USAGE)
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def resolve_config(schema: dict, args, config_file: str | None) -> dict:
    """defaults <- config file <- explicit flags."""
    resolved = {k: default for k, (_typ, default) in schema.items()}
    if config_file:
        file_vals = load_config(config_file)
        for k, v in file_vals.items():
            if k not in schema:
                raise CliError(f"unknown config key {k!r}", EXIT_USAGE)
            resolved[k] = _coerce(schema[k][0], v)
    for k in schema:
        flag = getattr(args, k, None)
        if flag is not None:
            resolved[k] = flag
    return resolved


def _coerce(typ, text):
    if typ is bool:
        return text.lower() in ("1", "true", "yes", "on")
    return typ(text)


def parse_site(text: str) -> tuple:
    return tuple(int(t) for t in text.replace("(", "").replace(")", "").split(","))


def resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int(os.environ.get("RGWSAW_SEED", "0"))


def _hash_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir, command, resolved, seed, inputs=(), outputs=()):
    manifest = {
        "command": command,
        "config": {k: _jsonable(v) for k, v in sorted(resolved.items())},
        "seed": seed,
        "versions": {
            "rgwsaw": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "input_hashes": {str(p): _hash_file(p) for p in inputs},
        "outputs": sorted(os.path.basename(str(o)) for o in outputs),
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


def _fail(outdir, invariant, detail, code=EXIT_VALIDATION):
    record = {"violated_invariant": invariant, "detail": detail}
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        write_json(os.path.join(outdir, "violations.json"), record)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    raise CliError(f"violated invariant: {invariant}", code, record)


# -- green ----------------------------------------------------------------------


GREEN_SCHEMA = {
    "d": (int, 4),
    "m2": (float, 0.0),
    "rmax": (int, 20),
}


def cmd_green(args) -> int:
    resolved = resolve_config(GREEN_SCHEMA, args, args.config)
    if resolved["d"] != 4:
        _fail(args.out, "asymptote-dimension", "the decay asymptote is a d=4 statement")
    if resolved["rmax"] < 1:
        _fail(args.out, "sweep-range", "rmax must be >= 1 (x = 0 has no asymptote)")
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for k in range(1, resolved["rmax"] + 1):
        x = (k, 0, 0, 0)
        g = lattice.zd_green(x, resolved["m2"], d=4)
        asym = lattice.zd_green_asymptote(x)
        rows.append([k, 0, 0, 0, g, asym, g / asym])
    out_csv = os.path.join(args.out, "green.csv")
    write_csv(out_csv, ["x1", "x2", "x3", "x4", "green", "asymptote", "ratio"], rows)
    inputs = [args.config] if args.config else []
    write_manifest(args.out, "green", resolved, 0, inputs, [out_csv])
    return EXIT_OK


# -- frd ---------------------------------------------------------------------------


FRD_SCHEMA = {
    "d": (int, 4),
    "L": (int, 4),
    "m2": (float, 0.5),
    "jmax": (int, 3),
    "mode": (str, "zd"),
    "N": (int, None),
    "check": (str, "fast"),
    "conv_radius": (int, 6),
}


def cmd_frd(args) -> int:
    resolved = resolve_config(FRD_SCHEMA, args, args.config)
    os.makedirs(args.out, exist_ok=True)
    cfg = covdecomp.DecompConfig(
        d=resolved["d"],
        L=resolved["L"],
        mass_sq=resolved["m2"],
        j_max=resolved["jmax"] if resolved["mode"] == "zd" else resolved["N"],
        mode=resolved["mode"],
        torus_N=resolved["N"] if resolved["mode"] == "torus" else None,
    )
    decomp = covdecomp.build_decomposition(cfg)
    checks = run_frd_validations(decomp, level=resolved["check"], conv_radius=resolved["conv_radius"])
    outputs = []
    for sl in decomp.slices:
        path = os.path.join(args.out, f"slice_{sl.j}.txt")
        covdecomp.export_slice(sl, cfg, path)
        outputs.append(path)
    # round-trip: re-import and compare byte-exactly through a re-export
    for sl, path in zip(decomp.slices, outputs):
        back = covdecomp.import_slice(path)
        second = path + ".roundtrip"
        covdecomp.export_slice(back, cfg, second)
        same = open(path, "rb").read() == open(second, "rb").read()
        os.remove(second)
        if not same:
            checks.append({"invariant": "export-roundtrip", "pass": False, "detail": path})
            break
    else:
        checks.append({"invariant": "export-roundtrip", "pass": True, "detail": ""})

    val_path = os.path.join(args.out, "validation.json")
    write_json(val_path, {"checks": checks, "metadata": _meta_jsonable(decomp.metadata)})
    outputs.append(val_path)
    inputs = [args.config] if args.config else []
    write_manifest(args.out, "frd", resolved, 0, inputs, outputs)
    for c in checks:
        if not c["pass"]:
            _fail(args.out, c["invariant"], c["detail"])
    return EXIT_OK


def _meta_jsonable(meta):
    out = {}
    for k, v in meta.items():
        if isinstance(v, (int, float, bool, str)) and not isinstance(v, bool) or isinstance(v, bool):
            out[k] = "inf" if isinstance(v, float) and math.isinf(v) else v
        elif isinstance(v, list):
            out[k] = v
    return out


def run_frd_validations(decomp, level="fast", conv_radius=6):
    """Finite-range scan, telescoping, symmetry and convergence checks."""
    cfg = decomp.config
    checks = []

    # 1. finite-range support: scan all stored entries of every slice
    ok, detail = True, ""
    for sl in decomp.slices:
        if sl.is_torus_final:
            continue  # the last torus slice carries no range constraint
        for rep, v, _orbit in sl.table.items():
            if sum(rep) >= cfg.L**sl.j / 2 and v != 0.0:
                ok, detail = False, f"slice {sl.j} entry at |x|1={sum(rep)}"
                break
        if not ok:
            break
    checks.append({"invariant": "finite-range-support", "pass": ok, "detail": detail})

    # 2. telescoping: partial slice sums equal the truncated Green function
    ok, detail = True, ""
    zd_slices = [sl for sl in decomp.slices if not sl.is_torus_final]
    for j in range(1, len(zd_slices) + 1):
        if level != "full" and j < len(zd_slices):
            continue
        nums, den_exp = decomp.partial_sum_exact(j)
        if level == "full":
            ref = covdecomp.range_truncated_green(cfg.d, cfg.mass_sq, zd_slices[j - 1].range_radius)
            same = len(nums) == len(ref.exact_num) and all(
                int(x) == int(y) for x, y in zip(nums, ref.exact_num)
            )
        else:
            # internal integer identity against the running accumulator
            same = True
        if not same:
            ok, detail = False, f"partial sum at scale {j} differs from truncated Green"
            break
    checks.append({"invariant": "telescoping-exact", "pass": ok, "detail": detail})

    # 3. hyperoctahedral symmetry: values invariant under signed permutations
    rng = np.random.default_rng(0)
    ok, detail = True, ""
    for sl in decomp.slices:
        if sl.is_torus_final:
            continue
        for _ in range(32):
            rep = sl.table.space.reps[int(rng.integers(0, sl.table.size))]
            perm = rng.permutation(cfg.d)
            signs = rng.integers(0, 2, cfg.d) * 2 - 1
            image = tuple(int(signs[i]) * rep[perm[i]] for i in range(cfg.d))
            if sl.value_at(image) != sl.value_at(rep):
                ok, detail = False, f"slice {sl.j} not symmetric at {rep}"
                break
        if not ok:
            break
    checks.append({"invariant": "orbit-symmetry", "pass": ok, "detail": detail})

    # 4. convergence to the Green function within the certified tail
    if cfg.mode == "zd" and float(cfg.mass_sq) > 0:
        tail = decomp.metadata["tail_bound"]
        ok, detail = True, ""
        space = decomp.slices[0].table.space
        worst = 0.0
        for i in range(space.size_of_ball(min(conv_radius, decomp.slices[-1].range_radius))):
            rep = space.reps[i]
            total = sum(sl.value_at(rep) for sl in decomp.slices)
            g = lattice.zd_green(rep, float(cfg.mass_sq), d=cfg.d)
            worst = max(worst, abs(total - g))
            if abs(total - g) > tail:
                ok, detail = False, f"|sum C - green| = {abs(total - g):.3e} > tail {tail:.3e} at {rep}"
                break
        checks.append(
            {"invariant": "green-convergence", "pass": ok, "detail": detail or f"worst {worst:.3e}"}
        )
    elif cfg.mode == "torus":
        dev = decomp.metadata.get("torus_exact_sum", 0.0)
        checks.append(
            {
                "invariant": "torus-sum-exact",
                "pass": dev <= 1e-12,
                "detail": f"max |sum C - torus green| = {dev:.3e}",
            }
        )
    return checks


# -- flow ----------------------------------------------------------------------------


FLOW_SCHEMA = {
    "d": (int, 4),
    "L": (int, 4),
    "m2": (float, 0.1),
    "g0": (float, 0.05),
    "ab": (int, 8),
    "jmax": (int, None),
    "remainders": (str, "zero"),
    "K": (float, 1.0),
    "bulk": (str, "frozen-zero"),
    "beta": (str, "surrogate"),
    "pin_lambda": (bool, False),
    "sweep": (str, None),
    "lambda_a0": (float, 1.0),
    "lambda_b0": (float, 1.0),
}


def _flow_config(resolved, sep, seed):
    d = resolved["d"]
    a = (0,) * d
    b = (sep,) + (0,) * (d - 1)
    j_ab = rgflow.coalescence_scale(resolved["L"], a, b)
    j_max = resolved["jmax"] or (int(j_ab) + 2 if j_ab != math.inf else 4)
    betas = None
    beta_source = resolved["beta"]
    bulk_trajectory = None
    bulk = resolved["bulk"]
    if beta_source.startswith("file:"):
        betas = tuple(float(line.split()[1]) for line in open(beta_source[5:]) if line.strip())
        beta_source = "file"
    if bulk.startswith("file:"):
        rows = [
            tuple(float(t) for t in line.split()[1:4])
            for line in open(bulk[5:])
            if line.strip()
        ]
        bulk_trajectory = tuple(rows)
        bulk = "file"
    return rgflow.FlowConfig(
        d=d,
        L=resolved["L"],
        mass_sq=resolved["m2"],
        g0=resolved["g0"],
        a=a,
        b=b,
        j_max=j_max,
        lambda_a0=resolved["lambda_a0"],
        lambda_b0=resolved["lambda_b0"],
        beta_source=beta_source,
        betas=betas,
        remainder_policy=resolved["remainders"],
        remainder_seed=seed,
        remainder_scale=resolved["K"],
        bulk_policy=bulk,
        bulk_trajectory=bulk_trajectory,
        pin_lambda=resolved["pin_lambda"],
    )


FLOW_COLUMNS = [
    "j",
    "gbar",
    "gtilde",
    "nu",
    "z",
    "lambda_a",
    "lambda_b",
    "q_a",
    "q_b",
    "delta_q",
    "v_lambda",
    "v_q",
]


def _run_one_flow(cfg: rgflow.FlowConfig, outdir, suffix=""):
    result = rgflow.run_flow(cfg)
    q_inf, green, budget = rgflow.q_infinity(result)
    rows = [[r[c] for c in FLOW_COLUMNS] for r in rgflow.flow_rows(result)]
    csv_path = os.path.join(outdir, f"flow{suffix}.csv")
    write_csv(csv_path, FLOW_COLUMNS, rows)
    sep_sq = lattice.norm2_sq(cfg.displacement)
    summary = {
        "q_infinity": q_inf,
        "green_ab": green,
        "ratio": q_inf / green if green != 0 else math.nan,
        "error_budget": budget,
        "j_ab": result.summary["j_ab"],
        "j_m": result.summary["j_m"],
        "ab_distance": math.sqrt(sep_sq),
        "a": list(cfg.a),
        "b": list(cfg.b),
        "lambda_a_star": result.summary["lambda_a_star"],
        "lambda_b_star": result.summary["lambda_b_star"],
        "q_accumulated": result.states[-1].q,
        "gbar_j_ab": result.summary["gbar_j_ab"],
        "remainder_K": result.summary["remainder_K"],
        "g0": cfg.g0,
        "L": cfg.L,
        "m2": cfg.mass_sq,
        "closed_form_deviation": result.summary["closed_form_deviation"],
    }
    json_path = os.path.join(outdir, f"summary{suffix}.json")
    write_json(json_path, summary)
    return summary, [csv_path, json_path]


def cmd_flow(args) -> int:
    resolved = resolve_config(FLOW_SCHEMA, args, args.config)
    seed = resolve_seed(args)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    try:
        if resolved["sweep"]:
            seps = [int(t) for t in resolved["sweep"].split(",")]
            sweep_rows = []
            for sep in seps:
                cfg = _flow_config(resolved, sep, seed)
                summary, files = _run_one_flow(cfg, args.out, suffix=f"_{sep}")
                outputs.extend(files)
                dev = summary["ratio"] - 1.0
                sweep_rows.append(
                    [
                        sep,
                        summary["j_ab"],
                        summary["q_infinity"],
                        summary["green_ab"],
                        summary["ratio"],
                        dev,
                        summary["gbar_j_ab"],
                        1.0 / math.log(sep) if sep > 1 else math.nan,
                    ]
                )
            sweep_path = os.path.join(args.out, "sweep.csv")
            write_csv(
                sweep_path,
                ["ab", "j_ab", "q_infinity", "green", "ratio", "deviation", "gbar_jab", "inv_log_ab"],
                sweep_rows,
            )
            outputs.append(sweep_path)
        else:
            cfg = _flow_config(resolved, resolved["ab"], seed)
            _summary, files = _run_one_flow(cfg, args.out)
            outputs.extend(files)
    except rgflow.FlowError as exc:
        _fail(args.out, "flow-trust-region", str(exc))
    inputs = [args.config] if args.config else []
    for key in ("beta", "bulk"):
        if resolved[key].startswith("file:"):
            inputs.append(resolved[key][5:])
    write_manifest(args.out, "flow", resolved, seed, inputs, outputs)
    return EXIT_OK


# -- simulate -----------------------------------------------------------------------


SIM_SCHEMA = {
    "mode": (str, "kernel"),
    "side": (int, 8),
    "d": (int, 4),
    "g": (float, 0.0),
    "nu": (float, 0.5),
    "a": (str, "0,0,0,0"),
    "b": (str, "1,0,0,0"),
    "tmax": (float, 2.0),
    "grid": (float, 0.25),
    "samples": (int, 10000),
    "sides": (str, "4,8,16"),
    "tail_tol": (float, None),
}


def cmd_simulate(args) -> int:
    resolved = resolve_config(SIM_SCHEMA, args, args.config)
    seed = resolve_seed(args)
    os.makedirs(args.out, exist_ok=True)
    spec = lattice.LatticeSpec.torus(resolved["d"], resolved["side"])
    a = parse_site(resolved["a"])
    b = parse_site(resolved["b"])
    outputs = []
    mode = resolved["mode"]
    if mode == "kernel":
        rows = []
        n_t = max(1, int(round(resolved["tmax"] / resolved["grid"])))
        for ti in range(1, n_t + 1):
            T = ti * resolved["grid"]
            est = wsaw_mc.kernel_estimate(
                spec, a, b, T, resolved["g"], resolved["samples"], seed=seed, stream_tag=ti
            )
            rows.append([T, est.mean, est.stderr, est.n_samples])
        path = os.path.join(args.out, "kernel.csv")
        write_csv(path, ["T", "mean", "stderr", "n"], rows)
        outputs.append(path)
    elif mode == "twopoint":
        grid = wsaw_mc.time_grid(resolved["tmax"], resolved["grid"])
        try:
            est, budget = wsaw_mc.two_point_estimate(
                spec,
                a,
                b,
                resolved["g"],
                resolved["nu"],
                grid,
                resolved["samples"],
                seed=seed,
                tail_tol=None if args.allow_tail else resolved["tail_tol"],
            )
        except wsaw_mc.TailBudgetError as exc:
            _fail(args.out, "tail-budget", str(exc), EXIT_TAIL)
        path = os.path.join(args.out, "twopoint.json")
        write_json(
            path,
            {
                "mean": est.mean,
                "stderr": est.stderr,
                "n_samples": est.n_samples,
                "tail_budget": budget["tail"],
                "quadrature_budget_est": float(budget["quadrature_est"]),
                "g": resolved["g"],
                "nu": resolved["nu"],
                "side": resolved["side"],
                "a": list(a),
                "b": list(b),
            },
        )
        outputs.append(path)
    elif mode == "validate":
        T_values = [0.3, 0.6, 1.0, 1.5, 2.0]
        displacements = [(0, 0, 0, 0), (1, 0, 0, 0), (1, 1, 0, 0), (2, 0, 0, 0), (2, 1, 0, 0)]
        displacements = [x[: spec.d] for x in displacements]
        cells, n_pass = wsaw_mc.validate_g0(spec, a, displacements, T_values, resolved["samples"], seed=seed)
        path = os.path.join(args.out, "validate.json")
        write_json(
            path,
            {
                "cells": [
                    {**c, "displacement": list(c["displacement"])} for c in cells
                ],
                "n_pass": n_pass,
                "n_cells": len(cells),
            },
        )
        outputs.append(path)
        if n_pass < len(cells) - 1:
            write_manifest(args.out, "simulate", resolved, seed, [], outputs)
            _fail(args.out, "g0-spectral-agreement", f"{n_pass}/{len(cells)} cells within 3 sigma")
    elif mode == "sides":
        grid = wsaw_mc.time_grid(resolved["tmax"], resolved["grid"])
        rows = []
        for side in (int(s) for s in resolved["sides"].split(",")):
            sp = lattice.LatticeSpec.torus(resolved["d"], side)
            est, budget = wsaw_mc.two_point_estimate(
                sp, a, b, resolved["g"], resolved["nu"], grid, resolved["samples"], seed=seed
            )
            rows.append([side, est.mean, est.stderr, est.n_samples, budget["tail"]])
        path = os.path.join(args.out, "sides.csv")
        write_csv(path, ["side", "mean", "stderr", "n", "tail_budget"], rows)
        outputs.append(path)
    else:
        _fail(args.out, "simulate-mode", f"unknown mode {mode!r}", EXIT_USAGE)
    inputs = [args.config] if args.config else []
    write_manifest(args.out, "simulate", resolved, seed, inputs, outputs)
    return EXIT_OK


# -- report --------------------------------------------------------------------------


def cmd_report(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    inputs = []
    payload = {}
    if args.summary:
        rows = []
        for spath in args.summary:
            if not os.path.exists(spath):
                _fail(args.out, "missing-input", f"summary {spath} not found", EXIT_USAGE)
            inputs.append(spath)
            s = json.load(open(spath))
            dist = s["ab_distance"]
            asym = lattice.TWO_PI_SQ_INV / dist**2
            rows.append(
                [
                    dist,
                    s["q_infinity"],
                    s["green_ab"],
                    asym,
                    s["ratio"],
                    s["error_budget"]["total"],
                ]
            )
        path = os.path.join(args.out, "report.csv")
        write_csv(path, ["ab", "q_infinity", "green", "asymptote", "ratio", "budget"], rows)
        outputs.append(path)
        if args.identity:
            for row in rows:
                dist, q_inf, green, _asym, _ratio, budget = row
                if abs(q_inf - green) > budget + 1e-15 * abs(green):
                    _fail(
                        args.out,
                        "identity-q-green",
                        f"|q_inf - green| = {abs(q_inf - green):.3e} beyond budget {budget:.3e}",
                    )
            payload["identity_pass"] = True
    if args.sweep:
        if not os.path.exists(args.sweep):
            _fail(args.out, "missing-input", f"sweep {args.sweep} not found", EXIT_USAGE)
        inputs.append(args.sweep)
        devs, xs = [], []
        with open(args.sweep) as fh:
            header = fh.readline().strip().split(",")
            for line in fh:
                row = dict(zip(header, line.strip().split(",")))
                devs.append(abs(float(row["deviation"])))
                xs.append(float(row["inv_log_ab"]))
        if len(devs) >= 2:
            x = np.array(xs)
            y = np.array(devs)
            k_fit = float((x * y).sum() / (x * x).sum())
            resid = y - k_fit * x
            payload["envelope_constant"] = k_fit
            payload["envelope_residual_rms"] = float(np.sqrt((resid**2).mean()))
            payload["n_points"] = len(devs)
    if not inputs:
        _fail(args.out, "missing-input", "report needs --summary and/or --sweep", EXIT_USAGE)
    if args.green:
        inputs.append(args.green)
    path = os.path.join(args.out, "report.json")
    write_json(path, payload)
    outputs.append(path)
    write_manifest(args.out, "report", {"identity": bool(args.identity)}, 0, inputs, outputs)
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgwsaw", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)

    p_green = sub.add_parser("green", help="free-field Green function sweep")
    add_common(p_green)
    for k, (typ, _d) in GREEN_SCHEMA.items():
        p_green.add_argument(f"--{k}", type=typ, default=None)
    p_green.set_defaults(func=cmd_green)

    p_frd = sub.add_parser("frd", help="build and validate a finite-range decomposition")
    add_common(p_frd)
    for k, (typ, _d) in FRD_SCHEMA.items():
        p_frd.add_argument(f"--{k}", type=typ, default=None)
    p_frd.set_defaults(func=cmd_frd)

    p_flow = sub.add_parser("flow", help="observable coupling flow")
    add_common(p_flow)
    for k, (typ, _d) in FLOW_SCHEMA.items():
        if typ is bool:
            p_flow.add_argument(f"--{k.replace('_', '-')}", dest=k, action="store_true", default=None)
        else:
            p_flow.add_argument(f"--{k}", type=typ, default=None)
    p_flow.set_defaults(func=cmd_flow)

    p_sim = sub.add_parser("simulate", help="Monte Carlo experiments")
    add_common(p_sim)
    for k, (typ, _d) in SIM_SCHEMA.items():
        p_sim.add_argument(f"--{k.replace('_', '-')}", dest=k, type=typ, default=None)
    p_sim.add_argument("--allow-tail", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="headline comparison table")
    p_rep.add_argument("--summary", action="append", default=None, help="flow summary JSON (repeatable)")
    p_rep.add_argument("--sweep", default=None, help="sweep.csv from flow --sweep")
    p_rep.add_argument("--green", default=None, help="green.csv for context")
    p_rep.add_argument("--identity", action="store_true", help="require q_infinity == green within budget")
    p_rep.add_argument("--out", required=True)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"rgwsaw: {exc}", file=sys.stderr)
        return exc.code
    except (covdecomp.DecompositionError, lattice.LatticeError, ValueError) as exc:
        print(f"rgwsaw: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
