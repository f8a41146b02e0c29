"""Command-line front end.

Every verb reads one INI config (see :mod:`bbmlab.config`), writes its
artifacts into ``--out-dir`` together with ``manifest.json``, and can be
re-run from that manifest with ``bbmlab replay`` (or ``--replay``), which
checks that the primary outputs are byte-identical.

Exit codes: 0 success, 1 check failure, 2 integrity or configuration error,
3 partial result (population cap hit).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import shutil
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bbmlab import __version__
from bbmlab.config import RunConfig
from bbmlab.errors import BBMLabError, ConfigurationError, IntegrityError
from bbmlab.manifest import RunManifest, atomic_write, sha256_file, verify_artifact

log = logging.getLogger("bbmlab")

EXIT_OK, EXIT_CHECK, EXIT_INTEGRITY, EXIT_PARTIAL = 0, 1, 2, 3
STAGING = ".staging"
COMMANDS = ("solve", "wave", "constants", "predict", "simulate", "condition", "verify")
SUITES = ("bounds", "rate", "ratios", "moderate", "conditional", "critical", "cross")


class DependencyError(ConfigurationError):
    """A required upstream artifact was not given."""


@dataclass
class RunContext:
    out_dir: Path
    stage: Path
    flags: dict
    written: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    steps: dict = field(default_factory=dict)
    exit_code: int = EXIT_OK

    def path(self, name: str) -> Path:
        if "/" in name or name.startswith("."):
            raise ValueError("artifact names are plain file names")
        if name not in self.written:
            self.written.append(name)
        return self.stage / name

    def write(self, name: str, data) -> Path:
        return atomic_write(self.path(name), data)

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def write_csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        return self.write(name, buf.getvalue())

    def use_input(self, path) -> Path:
        rec = verify_artifact(path)
        if rec not in self.inputs:
            self.inputs.append(rec)
        return Path(rec["path"])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v)}")


def _finite_or_str(x):
    x = float(x)
    return x if math.isfinite(x) else repr(x)


# ---------------------------------------------------------------------------
# input helpers


def _field_input(ctx: RunContext, stem):
    from bbmlab.fkpp.field import SolutionField, field_paths

    csv_path, bin_path = field_paths(stem)
    ctx.use_input(csv_path)
    ctx.use_input(bin_path)
    return SolutionField.load(csv_path)


def _json_input(ctx: RunContext, path) -> dict:
    p = ctx.use_input(path)
    return json.loads(p.read_text())


def _wave_input(ctx: RunContext, path):
    from bbmlab.fkpp.wave import WaveProfile

    meta = _json_input(ctx, path)
    csv_path = Path(path).with_name(meta["table"])
    ctx.use_input(csv_path)
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    return WaveProfile(z=data[:, 0], w=data[:, 1], left_slope=float(meta["left_slope"]),
                       t_source=float(meta["t_source"]), method=meta["method"],
                       bramson_offset=meta.get("bramson_offset"))


def _batch_input(ctx: RunContext, run_dir):
    from bbmlab.sim.bbm import ConditionedBatch, RealizationBatch

    run_dir = Path(run_dir)
    summary = _json_input(ctx, run_dir / "summary.json")
    csv_path = ctx.use_input(run_dir / "accepted.csv")
    acc = RealizationBatch.from_csv(csv_path.read_text(), summary["horizon"])
    return ConditionedBatch(acc, int(summary["trials"]), float(summary["threshold"]),
                            int(summary["capped_trials"])), summary


def _grid(cfg: RunConfig):
    from bbmlab.fkpp.field import SpaceTimeGrid

    cfg.require_section("grid")
    return SpaceTimeGrid(
        z_min=cfg.get_float("grid", "z_min"),
        z_max=cfg.get_float("grid", "z_max"),
        dz=cfg.get_float("grid", "dz", positive=True),
        dt=cfg.get_float("grid", "dt", positive=True),
        t_max=cfg.get_float("grid", "t_max", positive=True),
        window_policy=cfg.get_str("grid", "window", "fixed", choices=("fixed", "moving")),
    )


def _seed(cfg: RunConfig, section: str, flags: dict) -> int:
    if flags.get("seed") is not None:
        seed = int(flags["seed"])
    elif cfg.has(section, "seed"):
        seed = cfg.get_int(section, "seed", minimum=0)
    else:
        raise ConfigurationError(f"{cfg.source}: [{section}] seed is required (no default seed)")
    if not 0 <= seed < 2**64:
        raise ConfigurationError("seed must be a 64-bit unsigned integer")
    return seed


# ---------------------------------------------------------------------------
# verbs


def run_solve(cfg: RunConfig, ctx: RunContext):
    from bbmlab.fkpp.duhamel import solve_duhamel
    from bbmlab.fkpp.fd import solve_fd

    cfg.require_section("solve")
    scheme = cfg.get_str("solve", "scheme", choices=("fd", "duhamel"))
    grid = _grid(cfg)
    times = cfg.get_floats("solve", "times", None)
    store_every = cfg.get_float("solve", "store_every", None, positive=True)
    ramp = cfg.get_int("solve", "ramp_stride", None, minimum=1)
    probes = ctx.flags.get("probes") or cfg.get_floats("solve", "probes", [])
    probe_t = cfg.get_float("solve", "probe_time", grid.t_max, positive=True)
    if scheme == "duhamel" and ramp is not None:
        raise ConfigurationError("[solve] ramp_stride applies to scheme=fd only")
    if scheme == "fd":
        f = solve_fd(grid, times=times, store_every=store_every, ramp_stride=ramp)
    else:
        f = solve_duhamel(grid, times=times, store_every=store_every)
    ctx.path("field.csv")
    ctx.path("field.bin")
    f.save(ctx.stage / "field")
    rows = []
    for z in probes:
        lu = float(f.logu_at(z, probe_t, outside="clip"))
        rows.append((z, probe_t, math.exp(lu), lu))
        print(f"u({z:g}, {probe_t:g}) = {math.exp(lu):.10g}")
    ctx.write_csv("probes.csv", ("z", "t", "u", "log_u"), rows)
    inv = f.check_invariants()
    ctx.steps = {"steps": grid.n_steps, "slices": len(f.times)}
    ctx.write_json("summary.json", {
        "scheme": scheme, "grid": grid.to_dict(), "slices": len(f.times),
        "t_first": float(f.times[0]), "t_last": float(f.times[-1]), "invariants": inv,
        "probes": [{"z": r[0], "t": r[1], "u": r[2], "log_u": _finite_or_str(r[3])} for r in rows],
    })


def run_wave(cfg: RunConfig, ctx: RunContext):
    from bbmlab.core import c1_from_wave, c2_from_c1, c2_integral_form
    from bbmlab.fkpp.wave import extract_wave, fit_bramson_offset

    cfg.require_section("wave")
    t = cfg.get_float("wave", "t", positive=True)
    method = cfg.get_str("wave", "method", "extrapolated", choices=("extrapolated", "raw"))
    half = cfg.get_float("wave", "half_width", 30.0, positive=True)
    has_off, has_off_field = cfg.has("wave", "offset"), cfg.has("wave", "offset_field")
    if has_off == has_off_field:
        raise ConfigurationError("[wave] give exactly one of offset or offset_field")
    f = _field_input(ctx, cfg.get_str("wave", "field"))
    if has_off:
        offset = cfg.get_float("wave", "offset")
        fit = None
    else:
        mf = _field_input(ctx, cfg.get_str("wave", "offset_field"))
        lo = cfg.get_float("wave", "offset_from", 80.0, positive=True)
        step = cfg.get_float("wave", "offset_step", 5.0, positive=True)
        hi = cfg.get_float("wave", "offset_to", float(mf.times[-1]), positive=True)
        fit = fit_bramson_offset(mf, np.arange(lo, hi + 1e-9, step))
        offset = fit.offset
    w = extract_wave(f, t, half_width=half, method=method).with_offset(offset)
    c1 = c1_from_wave(w)
    ctx.write_csv("wave.csv", ("z", "w"), zip(w.z, w.w))
    out = {
        "table": "wave.csv", "t_source": t, "method": method, "half_width": half,
        "bramson_offset": offset, "left_slope": w.left_slope, "ode_residual": w.ode_residual(),
        "c1": c1, "c2": c2_from_c1(c1), "c2_integral_form": c2_integral_form(w),
    }
    if fit is not None:
        out["offset_fit"] = {"drift": fit.drift, "b": fit.b, "c": fit.c, "rms": fit.rms,
                             "times": list(fit.times)}
    ctx.write_json("wave.json", out)
    print(f"C1 = {c1:.8g}, left slope = {w.left_slope:.5f}, ODE residual = {out['ode_residual']:.3g}")


def run_constants(cfg: RunConfig, ctx: RunContext):
    from bbmlab.core import LOW, c1_from_wave, c2_from_c1, classify_regime, phi_alpha, rate_function

    cfg.require_section("constants")
    alphas = cfg.get_floats("constants", "alphas")
    cols = cfg.get_list("constants", "columns", ["psi", "v_alpha", "lambda_alpha", "c1", "c2", "phi"])
    bad = set(cols) - {"psi", "v_alpha", "lambda_alpha", "c1", "c2", "phi"}
    if bad:
        raise ConfigurationError(f"[constants] unknown columns {sorted(bad)}")
    params = [classify_regime(a) for a in alphas]
    c1 = c2 = None
    if "c1" in cols or "c2" in cols:
        if not cfg.has("constants", "wave"):
            raise DependencyError("C1/C2 need a wave artifact: run `bbmlab wave` and set [constants] wave")
        c1 = c1_from_wave(_wave_input(ctx, cfg.get_str("constants", "wave")))
        c2 = c2_from_c1(c1)
    phi_field = None
    if "phi" in cols and any(p.regime == LOW for p in params):
        if not cfg.has("constants", "phi_field"):
            raise DependencyError("Phi(alpha) needs a solver field: run `bbmlab solve` and set "
                                  "[constants] phi_field")
        phi_field = _field_input(ctx, cfg.get_str("constants", "phi_field"))
    s_max = cfg.get_float("constants", "phi_s_max", None, positive=True)
    rows, table, failures = [], [], []
    for a, p in zip(alphas, params):
        row = {"alpha": a, "regime": p.regime}
        if "psi" in cols:
            row["psi"] = rate_function(a)
        if "v_alpha" in cols:
            row["v_alpha"] = p.v_alpha
        if "lambda_alpha" in cols:
            row["lambda_alpha"] = p.lambda_alpha
        if "c1" in cols:
            row["c1"] = c1
        if "c2" in cols:
            row["c2"] = c2
        if "phi" in cols:
            if p.regime == LOW:
                est = phi_alpha(a, phi_field, s_max=s_max)
                row["phi"] = est.value
                row["phi_truncation"] = est.truncation_error
                # the integral term is positive, so Phi(alpha) > -1/alpha (> 1 at alpha = -1)
                if not (est.integral > 0 and est.value > -1.0 / a):
                    failures.append(f"Phi({a:g}) = {est.value:.6g} is not > {-1.0 / a:.6g}")
            else:
                row["phi"] = None
                row["phi_truncation"] = None
        table.append(row)
    header = ["alpha", "regime"] + [c for c in ("psi", "v_alpha", "lambda_alpha", "c1", "c2", "phi",
                                                "phi_truncation") if c in table[0]]
    for row in table:
        rows.append(["" if row[h] is None else row[h] for h in header])
    ctx.write_csv("constants.csv", header, rows)
    ctx.write_json("constants.json", {"rows": table, "validation": failures or "ok"})
    for r in rows:
        print(",".join(str(_fmt(v)) for v in r))
    if failures:
        for msg in failures:
            print(f"validation failed: {msg}", file=sys.stderr)
        ctx.exit_code = EXIT_CHECK


def _constants_lookup(table: dict):
    rows = table["rows"]
    c1 = next((r.get("c1") for r in rows if r.get("c1") is not None), None)
    c2 = next((r.get("c2") for r in rows if r.get("c2") is not None), None)
    phis = {float(r["alpha"]): r["phi"] for r in rows if r.get("phi") is not None}
    return c1, c2, phis


def run_predict(cfg: RunConfig, ctx: RunContext):
    from bbmlab.core import LOW, classify_regime, predict_probability

    cfg.require_section("predict")
    alphas = cfg.get_floats("predict", "alphas")
    times = cfg.get_floats("predict", "times")
    c1, c2, phis = _constants_lookup(_json_input(ctx, cfg.get_str("predict", "constants")))
    rows = []
    for a in alphas:
        p = classify_regime(a)
        consts = {"c1": c1, "c2": c2}
        if p.regime == LOW:
            if a not in phis:
                raise DependencyError(f"no Phi({a:g}) in the constants table; rerun `bbmlab constants`")
            consts["phi"] = phis[a]
        pred = predict_probability(p, constants=consts)
        for t in times:
            lp = pred.log_evaluate(t)
            rows.append((a, t, p.regime, lp, math.exp(lp)))
    ctx.write_csv("predictions.csv", ("alpha", "t", "regime", "log_p", "p"), rows)
    for r in rows:
        print(f"alpha={r[0]:g} t={r[1]:g} log P = {r[3]:.8g}")


def _sim_config(cfg: RunConfig, section: str, ctx: RunContext):
    from bbmlab.sim.bbm import DEFAULT_CAP, SimConfig

    seed = _seed(cfg, section, ctx.flags)
    ctx.seeds = [seed]
    return SimConfig(
        horizon=cfg.get_float(section, "horizon", positive=True),
        seed=seed,
        population_cap=cfg.get_int(section, "population_cap", DEFAULT_CAP, minimum=1),
        record_top_k=cfg.get_int(section, "record_top_k", 0, minimum=0),
    )


def run_simulate(cfg: RunConfig, ctx: RunContext):
    from bbmlab.errors import CappedRunError
    from bbmlab.sim.bbm import simulate_batch

    cfg.require_section("simulate")
    sc = _sim_config(cfg, "simulate", ctx)
    n = cfg.get_int("simulate", "n", minimum=1)
    shards = int(ctx.flags.get("shards") or cfg.get_int("simulate", "shards", 1, minimum=1))
    thresholds = cfg.get_floats("simulate", "thresholds", [])
    write_batch = cfg.get_bool("simulate", "write_batch", True)
    partial = False
    try:
        b = simulate_batch(sc, n, shards=shards)
    except CappedRunError as exc:
        b = exc.partial
        partial = True
    summary = {"config": sc.to_dict(), "requested": n, "shards": shards, "partial": partial}
    summary.update(b.summary())
    probs = []
    for z in thresholds:
        k = int(np.sum(b.m_t <= z))
        p = k / len(b) if len(b) else float("nan")
        se = math.sqrt(p * (1 - p) / len(b)) if len(b) else float("nan")
        probs.append({"threshold": z, "estimate": p, "standard_error": se, "successes": k})
    summary["probabilities"] = probs
    if write_batch:
        ctx.write("batch.csv", b.to_csv())
    ctx.write_json("summary.json", summary)
    ctx.steps = {"replicas": len(b)}
    print(f"{len(b)} replicas, mean n_t = {summary.get('mean_n_t', float('nan')):.6g}")
    if partial:
        print("population cap hit: partial result", file=sys.stderr)
        ctx.exit_code = EXIT_PARTIAL


def run_condition(cfg: RunConfig, ctx: RunContext):
    from bbmlab.core import SQRT2, bramson_centering
    from bbmlab.sim.bbm import simulate_conditioned

    cfg.require_section("condition")
    sc = _sim_config(cfg, "condition", ctx)
    given = [k for k in ("threshold", "alpha", "a") if cfg.has("condition", k)]
    if len(given) != 1:
        raise ConfigurationError("[condition] give exactly one of threshold, alpha, a")
    t = sc.horizon
    if given[0] == "threshold":
        z = cfg.get_float("condition", "threshold")
    elif given[0] == "alpha":
        z = SQRT2 * cfg.get_float("condition", "alpha") * t
    else:
        z = bramson_centering(t) - cfg.get_float("condition", "a")
    max_trials = cfg.get_int("condition", "max_trials", minimum=1)
    target = cfg.get_int("condition", "target", None, minimum=1)
    cb = simulate_conditioned(sc, z, max_trials, target=target)
    summary = cb.summary()
    summary["config"] = sc.to_dict()
    summary["target"] = target
    summary["max_trials"] = max_trials
    summary[given[0]] = cfg.get_float("condition", given[0])
    ctx.write("accepted.csv", cb.accepted.to_csv())
    ctx.write_json("summary.json", summary)
    ctx.steps = {"trials": cb.trials, "accepted": len(cb.accepted)}
    lo, hi = summary["wilson_95"]
    print(f"accepted {len(cb.accepted)} of {cb.trials}; rate {cb.acceptance_rate:.6g} "
          f"(95% Wilson [{lo:.6g}, {hi:.6g}])")
    if cb.capped:
        print(f"{cb.capped} trials hit the population cap: partial result", file=sys.stderr)
        ctx.exit_code = EXIT_PARTIAL


def run_verify(cfg: RunConfig, ctx: RunContext):
    from bbmlab.core import GAMMA
    from bbmlab.verify import audit, conditional, diagnostics
    from bbmlab.verify.report import ComparisonReport, reports_to_json, reports_to_text, suite_status

    cfg.require_section("verify")
    suites = ctx.flags.get("suite") or cfg.get_list("verify", "suite")
    bad = [s for s in suites if s not in SUITES]
    if bad:
        raise ConfigurationError(f"unknown suite(s) {bad}; choose from {', '.join(SUITES)}")
    reports = []
    fld = None

    def need_field():
        nonlocal fld
        if fld is None:
            if not cfg.has("verify", "field"):
                raise DependencyError("this suite needs [verify] field (from `bbmlab solve`)")
            fld = _field_input(ctx, cfg.get_str("verify", "field"))
        return fld

    consts = None

    def need_constants():
        nonlocal consts
        if consts is None:
            if not cfg.has("verify", "constants"):
                raise DependencyError("this suite needs [verify] constants (from `bbmlab constants`)")
            consts = _constants_lookup(_json_input(ctx, cfg.get_str("verify", "constants")))
        return consts

    if "bounds" in suites:
        eps = cfg.get_float("verify", "ds_epsilon", None, positive=True)
        reports += audit.bound_audit(need_field(), eps=eps)
    if "rate" in suites:
        lo = cfg.get_float("verify", "rate_alpha_min", -2.0)
        hi = cfg.get_float("verify", "rate_alpha_max", 0.9)
        n = cfg.get_int("verify", "rate_points", 291, minimum=2)
        curve = diagnostics.rate_curve(np.linspace(lo, hi, n))
        ctx.write_csv("rate_curve.csv", ("alpha", "psi", "regime"), curve)
        back = np.loadtxt(ctx.stage / "rate_curve.csv", delimiter=",", skiprows=1, usecols=(0, 1), ndmin=2)
        from bbmlab.core import rate_function
        err = max(abs(p - rate_function(a)) for a, p in back)
        reports.append(ComparisonReport.make("rate.curve_matches", err, 0.0, 0.0, kind="upper",
                                             metadata={"points": n, "range": [lo, hi]}))
    if "ratios" in suites:
        f = need_field()
        c1, c2, phis = need_constants()
        times = cfg.get_floats("verify", "times", [20.0, 30.0, 40.0])
        rows = []
        for a in cfg.get_floats("verify", "high_alphas", [0.0]):
            rs = diagnostics.ratio_diagnostic_high(f, a, c1, times, limits=(0.5, 2.0))
            reports += rs
            rows += [("high", a, r.metadata["t"], r.empirical) for r in rs if ".R[" in r.name]
        rs = diagnostics.ratio_diagnostic_critical(f, c2, times, limits=(0.5, 2.0))
        reports += rs
        rows += [("critical", -GAMMA, r.metadata["t"], r.empirical) for r in rs if ".R[" in r.name]
        for a in cfg.get_floats("verify", "low_alphas", [-1.0]):
            if a not in phis:
                raise DependencyError(f"no Phi({a:g}) in the constants table")
            rs = diagnostics.ratio_diagnostic_low(f, a, phis[a], times, limits=(0.5, 2.0))
            reports += rs
            rows += [("low", a, r.metadata["t"], r.empirical) for r in rs if ".R[" in r.name]
        ctx.write_csv("r_diagnostics.csv", ("regime", "alpha", "t", "R"), rows)
    if "moderate" in suites:
        c1, _, _ = need_constants()
        t = cfg.get_float("verify", "moderate_t", 40.0, positive=True)
        avals = cfg.get_floats("verify", "a_values", [5.0, 6.0, 7.0])
        reports += diagnostics.moderate_deviation_check(need_field(), c1, t, avals)
    if "conditional" in suites:
        if not cfg.has("verify", "batch"):
            raise DependencyError("suite conditional needs [verify] batch (from `bbmlab condition`)")
        batch, summ = _batch_input(ctx, cfg.get_str("verify", "batch"))
        alpha = summ.get("alpha")
        a = summ.get("a")
        if alpha is None and a is None:
            raise ConfigurationError("conditional suite needs a batch conditioned via alpha or a")
        phi = None
        if alpha is not None and cfg.has("verify", "constants"):
            phi = need_constants()[2].get(float(alpha))
        f = need_field()
        reports += conditional.conditional_law_suite(f, batch, alpha=alpha, a=a, phi=phi)
        from bbmlab.fkpp.branching import conditional_first_branch
        cb = conditional_first_branch(f, batch.threshold, batch.accepted.horizon)
        s = cb.s_marginal.grid
        ctx.write_csv("conditional_density.csv", ("s", "density"), zip(s, cb.s_marginal.values))
    if "critical" in suites:
        t = cfg.get_float("verify", "critical_t", 40.0, positive=True)
        fin, lim = diagnostics.critical_profile(need_field(), t)
        reports += diagnostics.critical_profile_check(need_field(), t)
        ctx.write_csv("critical_profile.csv", ("x", "finite_t", "limit"), zip(fin.grid, fin.values, lim.values))
    if "cross" in suites:
        if not cfg.has("verify", "other_field"):
            raise DependencyError("suite cross needs [verify] other_field (from `bbmlab solve`)")
        other = _field_input(ctx, cfg.get_str("verify", "other_field"))
        t = cfg.get_float("verify", "cross_t", positive=True)
        zs = np.linspace(cfg.get_float("verify", "cross_z_min", -15.0),
                         cfg.get_float("verify", "cross_z_max", 15.0), 3001)
        tol = cfg.get_float("verify", "cross_tolerance", 1e-3, positive=True)
        f = need_field()
        d = np.abs(f.u_at(zs, t) - other.u_at(zs, t))
        reports.append(ComparisonReport.make(
            f"cross.sup_abs_diff[t={t:g}]", float(d.max()), 0.0, tol, kind="upper",
            metadata={"schemes": [f.scheme, other.scheme], "z_at_max": float(zs[int(np.argmax(d))])}))
        ctx.write_csv("cross_diff.csv", ("z", "u", "u_other"), zip(zs, f.u_at(zs, t), other.u_at(zs, t)))
    ctx.write("report.json", reports_to_json(reports, {"suites": suites}))
    ctx.write("report.txt", reports_to_text(reports))
    print(reports_to_text(reports), end="")
    status = suite_status(reports)
    print(f"status: {status}")
    if status == "fail":
        ctx.exit_code = EXIT_CHECK


RUNNERS = {
    "solve": run_solve,
    "wave": run_wave,
    "constants": run_constants,
    "predict": run_predict,
    "simulate": run_simulate,
    "condition": run_condition,
    "verify": run_verify,
}


# ---------------------------------------------------------------------------
# orchestration


def execute(command: str, cfg: RunConfig, out_dir: Path, flags: dict) -> tuple[int, RunManifest]:
    """Run ``command`` into ``out_dir``; outputs appear only after a run that produced them."""
    if cfg.command is not None and cfg.command != command:
        raise ConfigurationError(f"{cfg.source}: config is for {cfg.command!r}, not {command!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = out_dir / STAGING
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir()
    ctx = RunContext(out_dir=out_dir, stage=stage, flags=flags)
    t0 = time.perf_counter()
    try:
        RUNNERS[command](cfg, ctx)
        names = list(ctx.written)
        for name in names:
            (stage / name).replace(out_dir / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    man = RunManifest(
        command=command, flags={k: v for k, v in sorted(flags.items()) if v is not None},
        config_digest=cfg.digest, config_text=cfg.text, seeds=ctx.seeds, inputs=ctx.inputs,
        outputs=[{"path": n, "sha256": sha256_file(out_dir / n)} for n in names],
        wall_clock_s=round(time.perf_counter() - t0, 3), steps=ctx.steps,
    )
    man.write(out_dir)
    return ctx.exit_code, man


def replay(manifest_path, out_dir) -> int:
    """Re-run a manifest into ``out_dir`` and compare output hashes."""
    man = RunManifest.load(manifest_path)
    if man.tool_version != __version__:
        print(f"warning: manifest from version {man.tool_version}, running {__version__}", file=sys.stderr)
    for rec in man.inputs:
        p = Path(rec["path"])
        if not p.exists() or sha256_file(p) != rec["sha256"]:
            raise IntegrityError(f"input {p} missing or changed since the recorded run")
    cfg = RunConfig(man.config_text, f"{manifest_path}:config")
    if cfg.digest != man.config_digest:
        raise IntegrityError("config text does not match its digest")
    code, new = execute(man.command, cfg, Path(out_dir), dict(man.flags))
    old = {r["path"]: r["sha256"] for r in man.outputs}
    cur = {r["path"]: r["sha256"] for r in new.outputs}
    bad = sorted(k for k in set(old) | set(cur) if old.get(k) != cur.get(k))
    for k in sorted(old):
        print(f"{'identical' if k not in bad else 'DIFFERENT'}  {k}")
    if bad:
        print(f"replay mismatch: {', '.join(bad)}", file=sys.stderr)
        return EXIT_INTEGRITY
    return code


def _probe_list(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad probe list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bbmlab", description="Lower deviations of the BBM maximum: "
                                 "solvers, simulation and verification.")
    ap.add_argument("--version", action="version", version=f"bbmlab {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--replay", metavar="MANIFEST", help="re-run a manifest instead of a config")
        if name in ("simulate", "condition"):
            p.add_argument("--seed", type=int)
        if name == "simulate":
            p.add_argument("--shards", type=int)
        if name == "solve":
            p.add_argument("--probes", type=_probe_list, help="comma-separated z values")
        if name == "verify":
            p.add_argument("--suite", type=lambda s: [x.strip() for x in s.split(",") if x.strip()])
    p = sub.add_parser("replay")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return replay(args.manifest, args.out_dir)
        if args.replay:
            man = RunManifest.load(args.replay)
            if man.command != args.command:
                raise ConfigurationError(f"manifest is for {man.command!r}")
            return replay(args.replay, args.out_dir)
        if not args.config:
            raise ConfigurationError("--config is required")
        cfg = RunConfig.from_file(args.config)
        flags = {k: getattr(args, k, None) for k in ("seed", "shards", "probes", "suite")}
        code, _ = execute(args.command, cfg, Path(args.out_dir), flags)
        return code
    except (IntegrityError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except BBMLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY


if __name__ == "__main__":
    sys.exit(main())
