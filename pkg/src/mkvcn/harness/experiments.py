"""Run a configured experiment and write its manifest, CSV, fit and plot script."""
from __future__ import annotations

import hashlib
import json
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .. import __version__, sde
from ..metric import rate_c
from .config import Prepared, load_config, prepare
from .fitting import FitImpossibleError, RateFit, fit_rate, plateau_estimate


@dataclass
class Check:
    """One pass/fail verdict with a human-readable detail string."""

    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class ExperimentResult:
    config: dict
    prepared: Prepared
    record: sde.TrajectoryRecord
    fit: RateFit | None
    fit_error: str | None
    checks: list = field(default_factory=list)
    files: dict = field(default_factory=dict)
    derived: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def source_digest() -> str:
    """SHA-256 over the package sources, recorded as the code version."""
    root = Path(__file__).resolve().parent.parent
    h = hashlib.sha256()
    for path in sorted(root.rglob("*.py")):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def derived_constants(prep: Prepared) -> dict:
    """Constants recomputed from scratch for the manifest."""
    V, W, m = prep.V, prep.W, prep.metric
    out = {
        "kappa_liminf": V.kappa_liminf if math.isfinite(V.kappa_liminf) else "inf",
        "L_V": V.lipschitz,
        "L_W": W.lipschitz,
        "beta": V.convexity_modulus,
    }
    if m is not None:
        out.update(R0=m.R0, R1=m.R1, ell=m.ell, phi_R0=m.phi_R0, diff=m.diff,
                   ell_sigma0_sq=m.ell * m.sigma0 ** 2, c=rate_c(m, W))
    return out


def _fit_series_name(cfg: dict, record: sde.TrajectoryRecord) -> str | None:
    name = cfg["fit"].get("series")
    if name:
        return name
    for cand in ("df_paired", "w2", "paired_rms", "spread_a"):
        if cand in record.series and record.series[cand].ndim == 2:
            return cand
    return None


def _columns(record: sde.TrajectoryRecord) -> list[tuple[str, np.ndarray, np.ndarray]]:
    cols = []
    for name, arr in record.series.items():
        label = name.replace(":", "_")
        mean = np.mean(arr, axis=0)
        se = record.se(name)
        if arr.ndim == 2:
            cols.append((label, mean, se))
        else:
            for k in range(arr.shape[2]):
                cols.append((f"{label}_{k}", mean[:, k], se[:, k]))
    return cols


def write_timeseries(path: Path, record: sde.TrajectoryRecord) -> None:
    cols = _columns(record)
    header = ["t"] + [f"{c}_{s}" for c, _, _ in cols for s in ("mean", "se")]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k, t in enumerate(record.times):
            row = [repr(float(t))]
            for _, mean, se in cols:
                row.append(repr(float(mean[k])))
                row.append(repr(float(se[k])))
            fh.write(",".join(row) + "\n")


def write_gnuplot(path: Path, csv_name: str, record: sde.TrajectoryRecord, series: str | None,
                  fit: RateFit | None) -> None:
    cols = _columns(record)
    names = [c for c, _, _ in cols]
    lines = ["set datafile separator ','", "set key top right", "set xlabel 't'",
             f"set output '{Path(csv_name).stem}.png'", "set terminal pngcairo size 900,600"]
    if series is not None and series in names:
        j = 2 + 2 * names.index(series)
        lines.append("set logscale y")
        lines.append(f"set title '{series}'")
        plot = [f"'{csv_name}' using 1:{j}:{j + 1} with yerrorbars title '{series}'"]
        if fit is not None:
            lines.append(f"fit_plateau = {fit.plateau!r}")
            lines.append(f"fit_rate = {fit.rate!r}")
            lines.append(f"fit_intercept = {fit.intercept!r}")
            plot.append("fit_plateau + exp(fit_intercept - fit_rate*x) title 'fit'")
        lines.append("plot " + ", \\\n     ".join(plot))
    else:
        lines.append("plot " + ", \\\n     ".join(
            f"'{csv_name}' using 1:{2 + 2 * i} with lines title '{n}'" for i, n in enumerate(names)))
    path.write_text("\n".join(lines) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj)}")


def evaluate_checks(cfg: dict, fit: RateFit | None, fit_error: str | None,
                    record: sde.TrajectoryRecord, series: str | None, derived: dict) -> list[Check]:
    checks = []
    spec = cfg.get("checks") or {}
    if "rate_min" in spec:
        ok = fit is not None and fit.rate >= spec["rate_min"]
        detail = (f"fitted rate {fit.rate:.4f} vs minimum {spec['rate_min']}" if fit
                  else f"fit impossible ({fit_error})")
        checks.append(Check("rate_min", ok, detail))
    if "rate_min_c_factor" in spec:
        target = spec["rate_min_c_factor"] * derived.get("c", float("nan"))
        ok = fit is not None and fit.rate >= target
        detail = (f"fitted rate {fit.rate:.4f} vs {spec['rate_min_c_factor']} c = {target:.4f}"
                  if fit else f"fit impossible ({fit_error}); target {target:.4f}")
        checks.append(Check("rate_min_c_factor", ok, detail))
    if spec.get("plateau_present"):
        checks.append(plateau_check(record, series))
    return checks


def plateau_check(record: sde.TrajectoryRecord, series: str | None) -> Check:
    """Nonzero, flat and well below the initial level over the final 20 %."""
    if series is None:
        return Check("plateau_present", False, "no series")
    x = record.series[series]
    level, se = plateau_estimate(record.times, x)
    k = max(2, int(math.ceil(0.2 * x.shape[1])))
    tail = x[:, -k:]
    h = k // 2
    first, second = tail[:, :h].mean(axis=1), tail[:, h:].mean(axis=1)
    gap = float(np.mean(first) - np.mean(second))
    gap_se = float(np.std(first - second, ddof=1) / math.sqrt(x.shape[0])) if x.shape[0] > 1 else math.inf
    start = float(np.mean(x[:, 0]))
    ok = level > 3 * se and abs(gap) < 3 * gap_se and level < 0.05 * start
    return Check("plateau_present", ok,
                 f"plateau {level:.4g} +/- {se:.2g}, tail drift {gap:.2g} +/- {gap_se:.2g}, "
                 f"initial {start:.4g}")


def run_experiment(config, overrides=(), output_dir: str | Path | None = None,
                   workers: int | None = None, write: bool = True) -> ExperimentResult:
    """Simulate a configured experiment and write its outputs.

    Files written to ``<output_dir>/<name>/``: ``manifest.json``,
    ``timeseries.csv``, ``fit.json``, ``plot.gp`` and ``report.txt``.
    A blow-up still writes the partial time series before re-raising.
    """
    cfg = load_config(config, overrides)
    if output_dir is not None:
        cfg["output_dir"] = str(output_dir)
    if workers is not None:
        cfg["workers"] = int(workers)
    prep = prepare(cfg)
    derived = derived_constants(prep)
    out = Path(cfg["output_dir"]) / cfg["name"]
    files = {}
    t0 = time.perf_counter()
    try:
        record = sde.run_batch(prep.spec, cfg["realizations"], workers=cfg["workers"],
                               chunk_size=cfg["chunk_size"])
    except sde.BlowUpError as exc:
        if write and exc.partial is not None:
            out.mkdir(parents=True, exist_ok=True)
            write_timeseries(out / "timeseries_partial.csv", exc.partial)
        raise
    elapsed = time.perf_counter() - t0
    if record.diagnostics.get("delta") is not None:
        deltas = np.asarray(record.diagnostics["delta"])
        derived["delta_mean"] = float(deltas.mean())
        derived["delta_min"] = float(deltas.min())
        derived["delta_max"] = float(deltas.max())
    series = _fit_series_name(cfg, record)
    fit, fit_error = None, None
    if series is not None:
        try:
            fit = fit_rate(record.times, record.mean(series), cfg["fit"].get("floor_hint"),
                           cfg["fit"].get("window", "full"))
        except FitImpossibleError as exc:
            fit_error = str(exc)
    checks = evaluate_checks(cfg, fit, fit_error, record, series, derived)
    result = ExperimentResult(cfg, prep, record, fit, fit_error, checks, files, derived, elapsed)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        files["timeseries"] = out / "timeseries.csv"
        write_timeseries(files["timeseries"], record)
        manifest = {
            "name": cfg["name"],
            "config": cfg,
            "code_version": __version__,
            "source_sha256": source_digest(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
            "derived": derived,
            "diagnostics": {
                "box_excursions": int(np.sum(record.diagnostics.get("box_excursions", 0))),
                "max_abs_coordinate": float(np.max(record.diagnostics.get("max_abs", [0.0]))),
            },
        }
        files["manifest"] = out / "manifest.json"
        files["manifest"].write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
        files["fit"] = out / "fit.json"
        files["fit"].write_text(json.dumps(
            {"series": series, "fit": fit.to_dict() if fit else None, "error": fit_error},
            indent=2) + "\n")
        files["plot"] = out / "plot.gp"
        write_gnuplot(files["plot"], "timeseries.csv", record, series, fit)
        files["report"] = out / "report.txt"
        files["report"].write_text(report_text(result))
    return result


def report_text(result: ExperimentResult) -> str:
    lines = [f"[experiment]", f"name = {result.config['name']}",
             f"realizations = {result.config['realizations']}"]
    lines.append("[derived]")
    lines += [f"{k} = {v}" for k, v in result.derived.items()]
    lines.append("[fit]")
    if result.fit is not None:
        lines += [f"{k} = {v}" for k, v in result.fit.to_dict().items()]
    else:
        lines.append(f"error = {result.fit_error}")
    if result.checks:
        lines.append("[checks]")
        lines += [c.line() for c in result.checks]
    return "\n".join(lines) + "\n"
