"""Named experiments with their pass/fail analysis.

Every preset is a function ``(output_dir, workers, scale) -> PresetResult``.
``scale`` shrinks particle and realization counts for smoke runs; verdicts
at ``scale < 1`` are not meaningful.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .. import metric, model, stationary
from .experiments import Check, run_experiment
from .fitting import chaos_scaling, plateau_estimate


@dataclass
class PresetResult:
    name: str
    checks: list = field(default_factory=list)
    lines: list = field(default_factory=list)
    experiments: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def write(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "report.txt"
        body = [c.line() for c in self.checks] + [""] + self.lines
        path.write_text("\n".join(body) + "\n")
        summary = {"name": self.name, "passed": self.passed,
                   "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail}
                              for c in self.checks]}
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        return path


def _scaled(n: int, scale: float, floor: int) -> int:
    return max(floor, int(round(n * scale)))


# ---------------------------------------------------------------- configs


def t2_config(N: int = 1000, realizations: int = 100, seed: int = 7) -> dict:
    """Convex case: quadratic confinement, quadratic interaction, synchronous coupling."""
    return {
        "name": f"t2_convex_N{N}",
        "potential": {"kind": "quadratic", "curvature": 1.0},
        "interaction": {"kind": "quadratic", "alpha": 0.5},
        "sigma": 0.5, "sigma0": 0.5,
        "N": N, "aux_size": N, "d": 1,
        "dt": 0.01, "t_final": 15.0, "realizations": realizations,
        "coupling": {"mode": "synchronous"},
        "initial": {"a": {"kind": "gaussian", "mean": [1.0], "cov": 0.25},
                    "b": {"kind": "gaussian", "mean": [-1.0], "cov": 1.0},
                    "pair": True},
        "cadence": 10, "seed": seed, "chunk_size": 25,
        "observers": ["w2", "w1", "df_paired", "paired_rms", "spread_a", "spread_b",
                      "m2_a", "m2_b"],
        "fit": {"series": "w2"},
        "checks": {"rate_min": 0.8, "plateau_present": True},
    }


def p4_config(N: int = 2000, realizations: int = 200, seed: int = 5) -> dict:
    return {
        "name": "p4_ou",
        "potential": {"kind": "quadratic", "curvature": 1.0},
        "interaction": {"kind": "none"},
        "sigma": 0.5, "sigma0": 0.5,
        "N": N, "d": 1, "dt": 0.01, "t_final": 10.0, "realizations": realizations,
        "initial": {"a": {"kind": "dirac", "mean": [2.0]}},
        "cadence": 10, "seed": seed, "chunk_size": 50,
        "observers": ["spread_a", "mean_a", "m2_a"],
        "functionals": ["square"],
        "snapshot_times": [6.0, 8.0, 10.0],
        "fit": {"series": "spread_a"},
    }


def t3_config(delta_factor: float = 1e-3, N: int = 1000, realizations: int = 100,
              seed: int = 11) -> dict:
    return {
        "name": f"t3_double_well_df{delta_factor:g}",
        "potential": {"kind": "double_well_1d"},
        "interaction": {"kind": "quadratic", "alpha": 0.05},
        "sigma": 0.5, "sigma0": 3.0,
        "N": N, "d": 1, "dt": 0.0025, "t_final": 10.0, "realizations": realizations,
        "coupling": {"mode": "reflection_1d", "delta_factor": delta_factor},
        "initial": {"a": {"kind": "gaussian", "mean": [-1.0], "cov": 0.25},
                    "b": {"kind": "gaussian", "mean": [1.0], "cov": 0.25},
                    "pair": True},
        "cadence": 20, "seed": seed, "chunk_size": 25,
        "observers": ["df_paired", "w1", "w2", "paired_rms", "pi", "spread_a", "spread_b"],
        "fit": {"series": "df_paired"},
        "checks": {"rate_min_c_factor": 0.5},
    }


def sg0_quadratic_config(N: int = 200, realizations: int = 100, seed: int = 9) -> dict:
    return {
        "name": "sg0_collapse_quadratic",
        "potential": {"kind": "quadratic", "curvature": 1.0},
        "interaction": {"kind": "quadratic", "alpha": 5.0},
        "sigma": 0.0, "sigma0": 1.0,
        "N": N, "d": 2, "dt": 0.002, "t_final": 8.0, "realizations": realizations,
        "coupling": {"mode": "mean_reflection"},
        "initial": {"a": {"kind": "gaussian", "mean": [1.0, 0.0], "cov": 0.25},
                    "b": {"kind": "gaussian", "mean": [-1.0, 1.0], "cov": 0.5},
                    "pair": True},
        "cadence": 10, "seed": seed, "chunk_size": 50,
        "observers": ["spread_a", "spread_b", "mean_f_distance", "mean_distance", "pi"],
        "fit": {"series": "mean_f_distance"},
    }


def sg0_double_well_config(N: int = 200, realizations: int = 100, seed: int = 9) -> dict:
    return {
        "name": "sg0_collapse_radial_double_well",
        "potential": {"kind": "radial_double_well", "d": 2},
        "interaction": {"kind": "quadratic", "alpha": 5.0},
        "sigma": 0.0, "sigma0": 1.0,
        "N": N, "d": 2, "dt": 0.002, "t_final": 2.0, "realizations": realizations,
        "initial": {"a": {"kind": "gaussian", "mean": [1.0, 0.0], "cov": 0.25}},
        "cadence": 5, "seed": seed, "chunk_size": 50,
        "observers": ["spread_a", "mean_a"],
        "fit": {"series": "spread_a"},
    }


def gibbs_config(realizations: int = 100, t_final: float = 300.0, seed: int = 13) -> dict:
    return {
        "name": "p9_gibbs",
        "potential": {"kind": "double_well_1d"},
        "interaction": {"kind": "quadratic", "alpha": 5.0},
        "sigma": 0.0, "sigma0": 1.5,
        "N": 16, "d": 1, "dt": 0.01, "t_final": t_final, "realizations": realizations,
        "initial": {"a": {"kind": "gaussian", "mean": [0.0], "cov": 0.25}},
        "cadence": 10, "seed": seed, "chunk_size": 100,
        "observers": ["mean_a", "spread_a"],
        "fit": {"series": "spread_a"},
    }


# ---------------------------------------------------------------- presets


def p6_threshold(output_dir="runs", workers: int = 1, scale: float = 1.0) -> PresetResult:
    """Metric closed forms, contraction inequality and the common-noise threshold."""
    res = PresetResult("p6_threshold")
    V1 = model.quadratic([0.0], 1.0)
    m = metric.build_metric(V1, 1.0)
    f2 = metric.eval_f(m, 2.0)
    for label, got, want in (("R0", m.R0, 0.0), ("R1", m.R1, 2.0), ("ell", m.ell, 0.5),
                             ("f(2)", f2, 5.0 / 3.0)):
        err = abs(got - want)
        res.checks.append(Check(f"closed_form_{label}", err <= 1e-6,
                                f"{got:.10f} vs {want:.10f} (error {err:.2e})"))
    dw = model.builtin_double_well_1d()
    for name, V in (("quadratic", V1), ("double_well", dw)):
        for s0 in (1.0, 3.0):
            rep = metric.check_contraction_inequality(metric.build_metric(V, s0), V)
            res.checks.append(Check(f"contraction_{name}_sigma0_{s0:g}", rep.passed, rep.summary()))
    W = model.quadratic_interaction(0.05)
    thr = metric.sigma0_threshold(dw, W)
    res.lines.append(f"double-well, alpha = 0.05: {thr.summary()}")
    res.lines += [f"  sigma0 = {s:.4f}  c = {c:.5f}" for s, c in zip(thr.grid_sigma0, thr.grid_c)]
    out = Path(output_dir) / "p6_threshold"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metric_quadratic_sigma0_1.csv").write_text(metric.dump_csv(m))
    (out / "metric_double_well_sigma0_3.csv").write_text(
        metric.dump_csv(metric.build_metric(dw, 3.0, W=W), W))
    res.write(out)
    return res


def t2_convex(output_dir="runs", workers: int = 1, scale: float = 1.0) -> PresetResult:
    """Synchronous coupling in the convex case: W2 decay rate and plateau."""
    res = PresetResult("t2_convex")
    cfg = t2_config(_scaled(1000, scale, 20), _scaled(100, scale, 4))
    exp = run_experiment(cfg, output_dir=Path(output_dir) / "t2_convex", workers=workers)
    res.experiments.append(exp)
    res.checks += exp.checks
    res.lines.append(f"beta = {exp.derived['beta']}")
    if exp.fit is not None:
        res.lines.append(f"fit w2: rate {exp.fit.rate:.4f} +/- {exp.fit.rate_se:.4f} on "
                         f"[{exp.fit.t0}, {exp.fit.t1}], plateau {exp.fit.plateau:.4g}")
    res.write(Path(output_dir) / "t2_convex")
    return res


def chaos_scaling_preset(output_dir="runs", workers: int = 1, scale: float = 1.0,
                         Ns=(250, 1000, 4000)) -> PresetResult:
    """Plateau of the paired W2 against N on log-log axes."""
    res = PresetResult("chaos_scaling")
    out = Path(output_dir) / "chaos_scaling"
    levels, ses = [], []
    used = []
    for N in Ns:
        n = _scaled(N, scale, 10)
        exp = run_experiment(t2_config(n, _scaled(100, scale, 4)), output_dir=out, workers=workers)
        level, se = plateau_estimate(exp.record.times, exp.record.series["w2"])
        used.append(n)
        levels.append(level)
        ses.append(se)
        res.experiments.append(exp)
        res.lines.append(f"N = {n}: plateau {level:.5g} +/- {se:.2g}")
    rep = chaos_scaling(used, levels, ses)
    res.lines.append(f"slope {rep.slope:.4f} +/- {rep.slope_se:.4f} "
                     f"(95% CI [{rep.ci_low:.4f}, {rep.ci_high:.4f}])")
    res.checks.append(Check("chaos_slope", abs(rep.slope + 0.5) <= 0.15,
                            f"slope {rep.slope:.4f} vs -0.5 +/- 0.15"))
    (out / "scaling.json").parent.mkdir(parents=True, exist_ok=True)
    (out / "scaling.json").write_text(json.dumps(rep.to_dict(), indent=2) + "\n")
    res.write(out)
    return res


def p4_ou(output_dir="runs", workers: int = 1, scale: float = 1.0) -> PresetResult:
    """Ornstein-Uhlenbeck with common noise: invariant variances and stationarity."""
    res = PresetResult("p4_ou")
    cfg = p4_config(_scaled(2000, scale, 20), _scaled(200, scale, 8))
    exp = run_experiment(cfg, output_dir=Path(output_dir) / "p4_ou", workers=workers)
    res.experiments.append(exp)
    rec = exp.record
    clouds = [c for t in sorted(rec.snapshots) for c in rec.snapshots[t]["a"]]
    ou = stationary.ou_invariant_check(clouds, cfg["sigma"], cfg["sigma0"])
    res.checks.append(Check("within_variance", ou.within_pass,
                            f"{ou.within_var:.5f} vs {ou.within_target} "
                            f"(rel err {ou.within_rel_err:.3f}, tolerance 0.1)"))
    res.checks.append(Check("variance_of_means", ou.mean_pass,
                            f"{ou.mean_var:.5f} +/- {ou.mean_var_se:.2g} vs {ou.mean_target} "
                            f"(rel err {ou.mean_rel_err:.3f}, tolerance 0.1)"))
    st = stationary.stationarity_residual(rec, "square", transient_time=2.0, tail_start=5.0)
    res.checks.append(Check("stationarity_residual_x2", bool(st.tail_pass),
                            f"{st.tail_mean:.3g} +/- {st.tail_se:.2g} over {st.tail_window}"))
    res.lines += ou.lines() + st.lines()
    res.write(Path(output_dir) / "p4_ou")
    return res


def t3_double_well(output_dir="runs", workers: int = 1, scale: float = 1.0) -> PresetResult:
    """Reflection coupling for the double well: df decay rate against c, and delta sensitivity."""
    res = PresetResult("t3_double_well")
    out = Path(output_dir) / "t3_double_well"
    runs = []
    for fac in (1e-3, 5e-4):
        cfg = t3_config(fac, _scaled(1000, scale, 20), _scaled(100, scale, 4))
        exp = run_experiment(cfg, output_dir=out, workers=workers)
        runs.append(exp)
        res.experiments.append(exp)
        c = exp.derived["c"]
        fresh = metric.rate_c(metric.build_metric(exp.prepared.V, cfg["sigma0"], W=exp.prepared.W),
                              exp.prepared.W)
        res.lines.append(f"delta_factor {fac:g}: c = {c:.6f} (fresh {fresh:.6f}), "
                         f"delta mean {exp.derived.get('delta_mean', float('nan')):.3g}, "
                         + (f"rate {exp.fit.rate:.4f} on [{exp.fit.t0}, {exp.fit.t1}]"
                            if exp.fit else f"fit impossible: {exp.fit_error}"))
        df = exp.record.mean("df_paired")
        pi = exp.record.mean("pi")
        for k in range(0, df.size, max(1, df.size // 10)):
            res.lines.append(f"  t = {exp.record.times[k]:6.2f}  df_paired {df[k]:.5f}  pi {pi[k]:.4f}")
    first = runs[0]
    res.checks.append(Check("rate_vs_half_c", first.checks[0].passed, first.checks[0].detail))
    if runs[0].fit is not None and runs[1].fit is not None:
        change = abs(runs[1].fit.rate - runs[0].fit.rate) / abs(runs[0].fit.rate)
        res.checks.append(Check("delta_halving", change < 0.1,
                                f"relative rate change {change:.3f} (limit 0.1)"))
    else:
        res.checks.append(Check("delta_halving", False,
                                "rate undefined for at least one delta: "
                                + "; ".join(str(r.fit_error) for r in runs if r.fit is None)))
    res.write(out)
    return res


def sg0_collapse(output_dir="runs", workers: int = 1, scale: float = 1.0) -> PresetResult:
    """Spread collapse without idiosyncratic noise and the mean f-distance under mean reflection."""
    res = PresetResult("sg0_collapse")
    out = Path(output_dir) / "sg0_collapse"
    n, R = _scaled(200, scale, 10), _scaled(100, scale, 4)
    exp = run_experiment(sg0_quadratic_config(n, R), output_dir=out, workers=workers)
    res.experiments.append(exp)
    V, W, m = exp.prepared.V, exp.prepared.W, exp.prepared.metric
    oracle = 2.0 * (V.convexity_modulus + W.alpha)
    cf = stationary.variance_collapse_rate(exp.record.times, exp.record.series["spread_a"], W=W, V=V)
    rel = abs(cf.rate - oracle) / oracle
    res.checks.append(Check("spread_rate_quadratic", rel <= 0.2,
                            f"{cf.rate:.4f} vs oracle 2(k + alpha) = {oracle:.4f} (rel err {rel:.3f})"))
    target = 0.5 * m.ell * m.sigma0 ** 2
    if exp.fit is not None:
        res.checks.append(Check("mean_f_distance_rate", exp.fit.rate >= target,
                                f"{exp.fit.rate:.4f} vs 0.5 ell sigma0^2 = {target:.4f}"))
    else:
        res.checks.append(Check("mean_f_distance_rate", False, f"fit impossible: {exp.fit_error}"))
    exp2 = run_experiment(sg0_double_well_config(n, R), output_dir=out, workers=workers)
    res.experiments.append(exp2)
    V2 = exp2.prepared.V
    bound = 2.0 * (W.alpha - 2.0 * V2.lipschitz)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cf2 = stationary.variance_collapse_rate(exp2.record.times, exp2.record.series["spread_a"],
                                                W=W, V=V2)
    threshold = bound - 0.2 * abs(bound)
    res.checks.append(Check("spread_rate_radial_double_well", cf2.rate >= threshold,
                            f"{cf2.rate:.4f} vs 2(alpha - 2 L_V) - 20% = {threshold:.4f}"))
    res.lines.append(f"quadratic: collapse window {cf.window}, CI [{cf.ci_low:.4f}, {cf.ci_high:.4f}]")
    res.lines.append(f"radial double well: L_V = {V2.lipschitz}, bound {bound:.4f}")
    res.lines += [f"warning: {w.message}" for w in caught]
    res.write(out)
    return res


def p9_gibbs(output_dir="runs", workers: int = 1, scale: float = 1.0) -> PresetResult:
    """Barycenter law of the collapsed ensemble against the Gibbs density."""
    res = PresetResult("p9_gibbs")
    out = Path(output_dir) / "p9_gibbs"
    cfg = gibbs_config(_scaled(100, scale, 4), 300.0 if scale >= 1 else 30.0)
    exp = run_experiment(cfg, output_dir=out, workers=workers)
    res.experiments.append(exp)
    burn_in = int(round(5.0 / (cfg["dt"] * cfg["cadence"])))
    rep = stationary.gibbs_dirac_check(exp.record.series["mean_a"], exp.prepared.V, cfg["sigma0"],
                                       burn_in=burn_in)
    res.checks.append(Check("gibbs_sup_cdf", rep.passed,
                            f"sup-CDF distance {max(rep.sup_cdf_distance):.4f} (threshold {rep.threshold}) "
                            f"with {rep.n_samples} samples (minimum {rep.min_samples})"))
    res.lines += rep.lines()
    res.write(out)
    return res


PRESETS = {
    "p6_threshold": p6_threshold,
    "t2_convex": t2_convex,
    "chaos_scaling": chaos_scaling_preset,
    "p4_ou": p4_ou,
    "t3_double_well": t3_double_well,
    "sg0_collapse": sg0_collapse,
    "p9_gibbs": p9_gibbs,
}


def run_preset(name: str, output_dir="runs", workers: int = 1, scale: float = 1.0) -> PresetResult:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return PRESETS[name](output_dir=output_dir, workers=workers, scale=scale)
