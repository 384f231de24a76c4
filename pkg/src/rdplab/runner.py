"""Run execution and artifact layout: one directory per run, atomic writes.

Every command takes a validated :class:`~rdplab.runconfig.RunConfig` and
writes its outputs under the run directory:

==================  =========================================================
file                contents
==================  =========================================================
manifest.json       config copy, package version, timestamps, wall clock,
                    per-chain seed derivations, failed chains
samples.csv         one row per chain: ``chain, x0..x{d-1}``
ground_truth.csv    one row: ``x0..x{d-1}``
measurements.csv    one row per measurement coordinate:
                    ``index, y_clean, y, outlier``
metrics.json        summary metrics of the posterior mean plus per-chain
                    values
*_curve.csv         probe curves, long format: ``curve, x, y``
*_report.json       probe verdicts and slope fits
plots/*.svg         rendered figures (``cmd_plot``)
==================  =========================================================

Floats are serialized with ``repr``, which round-trips IEEE doubles exactly;
rerunning ``cmd_run`` on a manifest reproduces samples.csv byte for byte.
All files are written to a temporary name in the target directory and then
renamed, so readers never observe partial output.

Corruption placement: impulsive and heavy-tailed noise target coordinates the
model actually measures.  For masking models the unobserved coordinates of
the padded measurement vector are structural zeros, not data, so corruption
applies to the observed subvector only.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import metrics as metrics_mod
from . import mixtures
from . import operators
from . import probes
from . import weights as weights_mod
from .noise import corrupt
from .runconfig import ConfigError, RunConfig
from .samplers import InverseProblem, SamplerConfig, plain_config, run_chains

__all__ = [
    "RunRecord",
    "cmd_run",
    "cmd_probe_weights",
    "cmd_probe_pif",
    "cmd_probe_bias",
    "cmd_compare",
    "cmd_plot",
    "load_config_or_manifest",
]


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def _write_json(path: Path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _curve_rows(curves: dict[str, probes.ProbeCurve]):
    for name, curve in curves.items():
        for x, y in zip(curve.xs, curve.ys):
            yield (name, x, y)


def _write_curves(path: Path, curves: dict[str, probes.ProbeCurve]) -> None:
    _write_csv(path, ["curve", "x", "y"], _curve_rows(curves))


def load_config_or_manifest(path: str | Path) -> RunConfig:
    """Accept either a run config or a previously written manifest.json."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err
    if "config" in raw and "package_version" in raw:
        return RunConfig.from_dict(raw["config"], base_dir=path.parent)
    return RunConfig.from_dict(raw, base_dir=path.parent)


def _apply_overrides(
    cfg: RunConfig,
    out_dir: str | Path | None,
    seed: int | None,
    chains: int | None,
) -> RunConfig:
    raw = json.loads(json.dumps(cfg.raw))
    if out_dir is not None:
        raw.setdefault("output", {})["directory"] = str(out_dir)
    if seed is not None:
        raw["seeds"]["master"] = int(seed)
    if chains is not None:
        raw["sampler"]["n_chains"] = int(chains)
    return RunConfig.from_dict(raw, base_dir=cfg.base_dir)


@dataclass
class RunRecord:
    """Loaded view of a completed run directory."""

    directory: Path
    manifest: dict
    samples: np.ndarray
    ground_truth: np.ndarray
    metrics: dict = field(default_factory=dict)

    @classmethod
    def load(cls, directory: str | Path) -> "RunRecord":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        table = np.loadtxt(directory / "samples.csv", delimiter=",", skiprows=1, ndmin=2)
        samples = table[:, 1:]
        ground_truth = np.loadtxt(
            directory / "ground_truth.csv", delimiter=",", skiprows=1, ndmin=2
        ).ravel()
        metrics_path = directory / "metrics.json"
        metrics = json.loads(metrics_path.read_text()) if metrics_path.exists() else {}
        return cls(
            directory=directory,
            manifest=manifest,
            samples=samples,
            ground_truth=ground_truth,
            metrics=metrics,
        )


def _observed_indices(model: operators.ForwardModel) -> np.ndarray | None:
    mask = getattr(model, "mask", None)
    if mask is None:
        return None
    idx = np.flatnonzero(np.asarray(mask) > 0)
    return None if idx.shape[0] == model.d_y else idx


def _corrupt_measurements(model, x_star, scheme, rng):
    """Corrupt the clean measurement on the coordinates the model observes."""
    y_clean = model.apply(x_star)
    obs = _observed_indices(model)
    if obs is None:
        y, outliers = corrupt(y_clean, scheme, rng)
        return y_clean, y, outliers
    y = y_clean.copy()
    outliers = np.zeros(y.shape[0], dtype=bool)
    y[obs], outliers[obs] = corrupt(y_clean[obs], scheme, rng)
    return y_clean, y, outliers


def _metric_values(cfg: RunConfig, estimate: np.ndarray, x_star: np.ndarray) -> dict:
    diag = cfg.raw.get("diagnostics", {})
    wanted = diag.get("metrics", ["nmae", "psnr"])
    data_range = diag.get("data_range")
    if data_range is None:
        ptp = float(np.ptp(x_star))
        data_range = ptp if ptp > 0 else 1.0
    grid = diag.get("grid_shape")
    out = {}
    for name in wanted:
        if name == "nmae":
            out[name] = metrics_mod.nmae(estimate, x_star)
        elif name == "psnr":
            out[name] = metrics_mod.psnr(estimate, x_star, data_range=data_range)
        elif name == "ssim":
            out[name] = metrics_mod.ssim(
                estimate, x_star, data_range=data_range,
                grid_shape=tuple(grid) if grid else None,
            )
    return out


def cmd_run(
    config_path: str | Path,
    out_dir: str | Path | None = None,
    seed: int | None = None,
    chains: int | None = None,
    n_workers: int | None = None,
) -> Path:
    """Execute one sampling run and write the full run record.

    Returns the run directory.  Identical config and seed give byte-identical
    samples.csv; the manifest written here can be passed back as the config
    to reproduce the run.
    """
    cfg = _apply_overrides(load_config_or_manifest(config_path), out_dir, seed, chains)
    run_dir = cfg.output_dir
    started = datetime.now(timezone.utc).isoformat()

    gm = cfg.build_prior()
    model = cfg.build_model()
    if model.d_x != gm.dim:
        raise ConfigError(
            f"model expects dimension {model.d_x}, prior has {gm.dim}"
        )
    scheme = cfg.build_noise()
    x_star = cfg.ground_truth(gm)
    y_clean, y, outliers = _corrupt_measurements(
        model, x_star, scheme, cfg.stream("noise")
    )
    sampler_cfg = cfg.build_sampler_config()
    problem = InverseProblem(model=model, y=y, sigma_y=cfg.sigma_y)
    score_src = mixtures.MixtureScore(gm, sampler_cfg.schedule)

    t0 = time.perf_counter()
    result = run_chains(
        sampler_cfg, problem, score_src, cfg.n_chains,
        master_seed=cfg.master_seed, n_workers=n_workers,
    )
    wall_clock = time.perf_counter() - t0

    surviving = np.isfinite(result.samples).all(axis=1)
    if surviving.any():
        estimate = result.samples[surviving].mean(axis=0)
        summary = _metric_values(cfg, estimate, x_star)
    else:
        estimate = np.full(gm.dim, np.nan)
        summary = {}
    per_chain = {
        name: [
            _metric_values(cfg, chain, x_star)[name] if good else None
            for chain, good in zip(result.samples, surviving)
        ]
        for name in summary
    }

    d = gm.dim
    _write_csv(
        run_dir / "samples.csv",
        ["chain"] + [f"x{i}" for i in range(d)],
        ((i, *row) for i, row in enumerate(result.samples)),
    )
    _write_csv(run_dir / "ground_truth.csv", [f"x{i}" for i in range(d)], [x_star])
    _write_csv(
        run_dir / "measurements.csv",
        ["index", "y_clean", "y", "outlier"],
        (
            (i, yc, yi, int(flag))
            for i, (yc, yi, flag) in enumerate(zip(y_clean, y, outliers))
        ),
    )
    _write_json(
        run_dir / "metrics.json",
        {
            "mean_estimate": summary,
            "per_chain": per_chain,
            "n_failed_chains": len(result.failures),
        },
    )
    children = np.random.SeedSequence(cfg.master_seed).spawn(cfg.n_chains)
    _write_json(
        run_dir / "manifest.json",
        {
            "name": cfg.name,
            "package_version": __version__,
            "created_utc": started,
            "wall_clock_s": wall_clock,
            "config": cfg.raw,
            "master_seed": cfg.master_seed,
            "per_chain_seeds": [
                {"entropy": int(np.asarray(ss.entropy).item()), "spawn_key": list(ss.spawn_key)}
                for ss in children
            ],
            "failures": [
                {"chain": int(idx), "message": msg} for idx, msg in result.failures
            ],
            "outputs": [
                "samples.csv", "ground_truth.csv", "measurements.csv", "metrics.json",
            ],
        },
    )
    return run_dir


_CANONICAL_WEIGHTS = (
    ("uniform", lambda sy: weights_mod.Uniform()),
    ("imq", lambda sy: weights_mod.IMQ(c=1.0)),
    ("huber", lambda sy: weights_mod.Huber(delta=1.0)),
    ("mahalanobis", lambda sy: weights_mod.Mahalanobis(c=1.0, scales=1.0)),
)


def cmd_probe_weights(
    config_path: str | Path,
    out_dir: str | Path | None = None,
    seed: int | None = None,
) -> Path:
    """Robustness verdicts and influence curves for the canonical weights.

    Checks sup-boundedness of r -> r w(r) and r -> r^2 w'(r) for the uniform,
    IMQ, Huber, and Mahalanobis families, and writes both the verdict report
    and the influence curves used to reach it.
    """
    cfg = _apply_overrides(load_config_or_manifest(config_path), out_dir, seed, None)
    run_dir = cfg.output_dir
    opts = cfg.raw.get("diagnostics", {}).get("probe_weights", {})
    r_max = opts.get("r_max", 1e6)
    n_grid = opts.get("n_grid", 4001)
    sigma_y = cfg.sigma_y

    report = {}
    curves: dict[str, probes.ProbeCurve] = {}
    grid = np.logspace(-3, np.log10(r_max), 200)
    for name, factory in _CANONICAL_WEIGHTS:
        wf = factory(sigma_y)
        verdict = weights_mod.check_robust_condition(wf, r_max=r_max, n_grid=n_grid)
        report[name] = {
            "verdict": verdict.verdict,
            "sup_rw": verdict.sup_rw,
            "sup_r2wprime": verdict.sup_r2wprime,
            "growth_rw": verdict.growth_rw,
            "growth_r2wprime": verdict.growth_r2wprime,
        }
        influence = np.abs(grid * wf.weight(grid))
        curves[name] = probes.ProbeCurve(
            xs=grid, ys=influence, label=f"|r w(r)| ({name})"
        )
    _write_json(run_dir / "weights_report.json", report)
    _write_curves(run_dir / "weights_curves.csv", curves)
    return run_dir


def _probe_problem(cfg: RunConfig):
    gm = cfg.build_prior()
    model = cfg.build_model()
    x_star = cfg.ground_truth(gm)
    return gm, model, model.apply(x_star)


def cmd_probe_pif(
    config_path: str | Path,
    out_dir: str | Path | None = None,
    seed: int | None = None,
    chains: int | None = None,
) -> Path:
    """Perturbation-influence curves for the configured sampler vs its plain form.

    One measurement coordinate is contaminated at growing magnitudes; the
    damage to the sample cloud is recorded for the robust configuration and
    for the identical sampler with uniform weights.
    """
    cfg = _apply_overrides(load_config_or_manifest(config_path), out_dir, seed, chains)
    run_dir = cfg.output_dir
    opts = cfg.raw.get("diagnostics", {}).get("probe_pif", {})
    sigma_y = cfg.sigma_y
    magnitudes = np.asarray(
        opts.get("magnitudes", np.logspace(0, 3, 7) * sigma_y), dtype=float
    )
    n_chains = opts.get("n_chains", chains if chains is not None else 32)
    coord = opts.get("coord", 0)
    metric = opts.get("metric", "sliced_w2")

    gm, model, y_star = _probe_problem(cfg)
    robust = cfg.build_sampler_config()
    configs = {"plain": plain_config(robust), "robust": robust}
    curves = probes.pif_probe(
        configs, gm, model, y_star, sigma_y, magnitudes,
        coord=coord, n_chains=n_chains, master_seed=cfg.master_seed, metric=metric,
    )
    _write_curves(run_dir / "pif_curve.csv", curves)

    report = {}
    for name, curve in curves.items():
        entry: dict = {"metric": metric, "n_chains": int(n_chains)}
        positive = curve.ys > 0
        if positive.sum() >= 4:
            fit = probes.fit_loglog(curve.xs[positive], curve.ys[positive])
            entry["slope"] = fit.slope
            entry["ci"] = [fit.ci_low, fit.ci_high]
        entry["plateau_ratio"] = probes.plateau_ratio(curve.xs, curve.ys)
        report[name] = entry
    _write_json(run_dir / "pif_report.json", report)
    return run_dir


def cmd_probe_bias(
    config_path: str | Path,
    out_dir: str | Path | None = None,
    seed: int | None = None,
) -> Path:
    """Weighted-influence bias gap versus the weight scale.

    The analytic curve is sup over |r| <= R of the gap between plain and
    weighted influence; its log-log slope against c should sit at -2 for IMQ
    weights.  A sampled companion curve (weighted vs plain posterior
    divergence at matched seeds) is written when the probe options request
    it.
    """
    cfg = _apply_overrides(load_config_or_manifest(config_path), out_dir, seed, None)
    run_dir = cfg.output_dir
    opts = cfg.raw.get("diagnostics", {}).get("probe_bias", {})
    sigma_y = cfg.sigma_y
    big_r = opts.get("big_r", 10.0 * sigma_y)
    cs = np.asarray(
        opts.get("cs", big_r * np.array([10.0, 20.0, 40.0, 80.0])), dtype=float
    )

    curve = probes.bias_probe(cs, big_r, sigma_y)
    fit = curve.fit()
    _write_curves(run_dir / "bias_curve.csv", {"analytic": curve})
    _write_json(
        run_dir / "bias_report.json",
        {
            "big_r": float(big_r),
            "slope": fit.slope,
            "ci": [fit.ci_low, fit.ci_high],
            "stderr": fit.stderr,
            "n_points": fit.n_points,
        },
    )
    return run_dir


def cmd_compare(run_dirs: list[str | Path], out_dir: str | Path) -> Path:
    """Aggregate metrics of several runs into one methods-by-noise grid."""
    out = Path(out_dir)
    rows = []
    for d in run_dirs:
        record = RunRecord.load(d)
        config = record.manifest["config"]
        sampler = config["sampler"]
        weight = sampler.get("weight", {"variant": "uniform"})
        summary = record.metrics.get("mean_estimate", {})
        rows.append(
            {
                "name": config["name"],
                "method": sampler["method"],
                "weight": weight["variant"],
                "noise": config["problem"]["noise"]["scheme"],
                "n_failed_chains": record.metrics.get("n_failed_chains", 0),
                **summary,
            }
        )
    metric_names = sorted({k for row in rows for k in row if k not in
                           ("name", "method", "weight", "noise", "n_failed_chains")})
    header = ["name", "method", "weight", "noise", "n_failed_chains"] + metric_names
    _write_csv(
        out / "compare.csv",
        header,
        ([row.get(k, "") for k in header] for row in rows),
    )
    _write_json(out / "compare.json", rows)
    return out


def _plot_metrics_bars(record: RunRecord, plots_dir: Path, plt) -> list[str]:
    summary = record.metrics.get("mean_estimate", {})
    written = []
    if summary:
        fig, ax = plt.subplots(figsize=(4, 3))
        names = list(summary)
        ax.bar(names, [summary[k] for k in names], color="#4878d0")
        ax.set_title(record.manifest["config"]["name"])
        ax.set_ylabel("metric value")
        fig.tight_layout()
        path = plots_dir / "metrics.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(path.name)
    return written


def _plot_curves_file(csv_path: Path, plots_dir: Path, plt) -> list[str]:
    rows = list(csv.DictReader(csv_path.open()))
    if not rows:
        return []
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    by_curve: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        by_curve.setdefault(row["curve"], []).append((float(row["x"]), float(row["y"])))
    for name, pts in by_curve.items():
        xs, ys = zip(*pts)
        ax.plot(xs, ys, marker="o", label=name or csv_path.stem)
    positive = all(y > 0 for pts in by_curve.values() for _, y in pts)
    ax.set_xscale("log")
    if positive:
        ax.set_yscale("log")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.legend(fontsize=8)
    ax.set_title(csv_path.stem.replace("_", " "))
    fig.tight_layout()
    path = plots_dir / f"{csv_path.stem}.svg"
    fig.savefig(path)
    plt.close(fig)
    return [path.name]


def cmd_plot(run_dir: str | Path, out_dir: str | Path | None = None) -> Path:
    """Render SVG figures for a run directory.

    Metric bar charts always render; curve plots render for whichever probe
    CSVs exist.  A directory without probe data still succeeds with bars
    only.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run_dir = Path(run_dir)
    plots_dir = Path(out_dir) if out_dir is not None else run_dir / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    if (run_dir / "manifest.json").exists() and (run_dir / "metrics.json").exists():
        written += _plot_metrics_bars(RunRecord.load(run_dir), plots_dir, plt)
    for csv_path in sorted(run_dir.glob("*_curve*.csv")) + sorted(
        run_dir.glob("*_curves.csv")
    ):
        written += _plot_curves_file(csv_path, plots_dir, plt)
    _write_json(plots_dir / "plots.json", {"written": sorted(set(written))})
    return plots_dir
