"""Command-line surface: estimate, mine, neighborhood, simulate, convert.

Reports are assembled fully in memory and written at the end, so a
failing stage never leaves a partial output file.  Diagnostics go to
stderr; stdout stays silent unless ``--stdout`` is given.  Identical
invocations produce byte-identical outputs at any thread count.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

import click
import numpy as np

from . import figures, latentcorr, miner, simlab, threshold
from .dataset import (
    BinaryDataset,
    DataFormatError,
    filter_degenerate,
    load_dense_csv,
    load_transactions,
    load_triplets,
    write_dense_csv,
    write_transactions,
    write_triplets,
)

INPUT_FORMATS = ("transactions", "csv", "triplets")
OUTPUT_FORMATS = ("json", "table", "csv")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Resolved options for a mining run, echoed into every report."""

    input_path: str
    input_format: str = "transactions"
    csv_header: str = "auto"
    csv_row_labels: str = "auto"
    fdr_q: float = 0.05
    max_iter: int = 100
    prior: str = "empirical"
    eps_theta: float | None = None
    seeds: str = "all"
    jaccard: float = 1.0
    threads: int = 1
    fit_path: str | None = None
    output_format: str = "json"

    def __post_init__(self) -> None:
        if not 0 < self.fdr_q < 1:
            raise ValueError("--fdr must lie in (0, 1)")
        if self.max_iter < 0:
            raise ValueError("--max-iter must be >= 0")
        if self.eps_theta is not None and not 0 < self.eps_theta < 0.5:
            raise ValueError("--eps-theta must lie in (0, 0.5)")
        if not 0 < self.jaccard <= 1:
            raise ValueError("--jaccard must lie in (0, 1]")
        if self.threads < 1:
            raise ValueError("--threads must be >= 1")
        if self.input_format not in INPUT_FORMATS:
            raise ValueError(f"unknown input format {self.input_format!r}")
        if self.output_format not in OUTPUT_FORMATS:
            raise ValueError(f"unknown output format {self.output_format!r}")
        if self.csv_header not in _TRISTATE or self.csv_row_labels not in _TRISTATE:
            raise ValueError("--csv-header/--csv-row-labels must be auto, yes, or no")
        _parse_prior(self.prior)


def main() -> None:
    cli(prog_name="lamb")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def cli() -> None:
    """Latent association mining in binary data."""


_TRISTATE = {"auto": None, "yes": True, "no": False}

_shared = [
    click.option("--input", "input_path", required=True, help="Input data file."),
    click.option(
        "--format",
        "input_format",
        type=click.Choice(INPUT_FORMATS),
        default="transactions",
        show_default=True,
        help="Input file format.",
    ),
    click.option(
        "--csv-header",
        type=click.Choice(tuple(_TRISTATE)),
        default="auto",
        show_default=True,
        help="Whether the CSV input has a header row.",
    ),
    click.option(
        "--csv-row-labels",
        type=click.Choice(tuple(_TRISTATE)),
        default="auto",
        show_default=True,
        help="Whether the CSV input has a leading label column.",
    ),
]


def shared_options(fn):
    for opt in reversed(_shared):
        fn = opt(fn)
    return fn


def threads_option(fn):
    return click.option(
        "--threads",
        type=int,
        default=None,
        help="Worker threads (default: LAMB_THREADS or all cores).",
    )(fn)


@cli.command(name="mine")
@shared_options
@click.option("--fdr", "fdr_q", type=float, default=0.05, show_default=True, help="FDR level q.")
@click.option("--max-iter", type=int, default=100, show_default=True, help="Search iteration cap.")
@click.option("--prior", default="empirical", show_default=True, help="empirical or gamma:ZETA,BETA.")
@click.option("--eps-theta", type=float, default=None, help="Threshold clamp (default 1/(2n)).")
@click.option("--seeds", default="all", show_default=True, help="'all' or comma-separated labels.")
@click.option("--jaccard", type=float, default=1.0, show_default=True, help="Dedup overlap threshold.")
@click.option("--fit", "fit_path", default=None, help="Reuse an exported fit JSON.")
@threads_option
@click.option("--psi-matrix", "psi_path", default=None, help="Also dump the pairwise matrix CSV here.")
@click.option("--figures/--no-figures", "figures_on", default=True, show_default=True)
@click.option("--output", "output_path", default=None, help="Report file.")
@click.option("--output-format", type=click.Choice(OUTPUT_FORMATS), default="json", show_default=True)
@click.option("--stdout", "to_stdout", is_flag=True, help="Also print the report to stdout.")
def mine_cmd(input_path, input_format, csv_header, csv_row_labels, fdr_q, max_iter,
             prior, eps_theta, seeds, jaccard, fit_path, threads, psi_path, figures_on,
             output_path, output_format, to_stdout):
    """Mine coherent variable sets from a binary dataset."""
    try:
        config = RunConfig(
            input_path=input_path, input_format=input_format, csv_header=csv_header,
            csv_row_labels=csv_row_labels, fdr_q=fdr_q,
            max_iter=max_iter, prior=prior, eps_theta=eps_theta, seeds=seeds,
            jaccard=jaccard, threads=_resolve_threads(threads),
            fit_path=fit_path, output_format=output_format,
        )
        outputs, report = _run_mine(config, psi_path, figures_on, output_path)
    except (DataFormatError, ValueError, RuntimeError) as exc:
        raise click.ClickException(str(exc)) from exc
    _emit(outputs, report, output_path, to_stdout)


def _run_mine(config: RunConfig, psi_path, figures_on, output_path):
    ds = _load_dataset(
        config.input_path, config.input_format, config.csv_header, config.csv_row_labels
    )
    filtered, removed = filter_degenerate(ds)
    if filtered.d == 0:
        raise ValueError("no informative columns (all columns degenerate)")
    fit = _obtain_fit(filtered, config)
    if not fit.converged:
        click.echo("warning: threshold fit did not converge; proceeding", err=True)
    theta = threshold.theta_matrix(fit, fit.eps_theta)
    u = latentcorr.standardize(filtered, theta)
    seed_idx = _parse_seeds(config.seeds, filtered)
    results = miner.mine_all(
        u, seeds=seed_idx, q=config.fdr_q, max_iter=config.max_iter, threads=config.threads
    )
    results = miner.dedup(results, config.jaccard)

    doc = {
        "config": _echo_config(config),
        "removed_columns": removed,
        "fit": {
            "converged": fit.converged,
            "iterations": fit.iterations,
            "residual": fit.constraint_residual,
        },
        "results": [
            {
                "members": sorted(r.labels),
                "pvalues": {filtered.col_labels[j]: p for j, p in r.member_pvalues.items()},
                "seeds_reaching": r.seeds_reaching,
                "reason": r.reason,
            }
            for r in results
        ],
    }
    report = _format_mine_report(doc, config.output_format)
    outputs: dict[str, bytes] = {}
    if output_path:
        outputs[output_path] = report.encode("utf-8")
    if psi_path:
        if filtered.d > 500:
            raise ValueError("pairwise matrix dump is meant for small panels (d <= 500)")
        mat = latentcorr.psi_matrix(u)
        outputs[psi_path] = _psi_csv(mat, filtered.col_labels).encode("utf-8")
        if figures_on:
            png = figures.heatmap_png(mat, filtered.col_labels)
            outputs[str(Path(psi_path).with_suffix(".png"))] = png
    return outputs, report


@cli.command()
@shared_options
@click.option("--prior", default="empirical", show_default=True, help="empirical or gamma:ZETA,BETA.")
@click.option("--eps-theta", type=float, default=None, help="Threshold clamp (default 1/(2n)).")
@click.option("--tol", type=float, default=threshold.DEFAULT_TOL, show_default=True)
@click.option("--max-iter", type=int, default=threshold.DEFAULT_MAX_ITER, show_default=True)
@click.option("--output", "output_path", default=None, help="Fit JSON file.")
@click.option("--stdout", "to_stdout", is_flag=True, help="Also print the fit JSON to stdout.")
def estimate(input_path, input_format, csv_header, csv_row_labels, prior, eps_theta,
             tol, max_iter, output_path, to_stdout):
    """Fit the threshold model and export it as JSON."""
    try:
        ds = _load_dataset(input_path, input_format, csv_header, csv_row_labels)
        filtered, removed = filter_degenerate(ds)
        if filtered.d == 0:
            raise ValueError("no informative columns (all columns degenerate)")
        kind, prior_obj = _parse_prior(prior)
        if kind == "gamma":
            fit = threshold.fit_gamma(filtered, prior_obj, eps_theta=eps_theta)
        else:
            fit = threshold.fit_empirical(filtered, tol=tol, max_iter=max_iter, eps_theta=eps_theta)
        if not fit.converged:
            click.echo("warning: threshold fit did not converge", err=True)
        doc = json.loads(threshold.fit_to_json(fit))
        doc["meta"]["config"] = {
            "input_path": input_path,
            "input_format": input_format,
            "csv_header": csv_header,
            "csv_row_labels": csv_row_labels,
            "prior": prior,
            "eps_theta": fit.eps_theta,
            "tol": tol,
            "max_iter": max_iter,
            "removed_columns": removed,
        }
        report = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    except (DataFormatError, ValueError, RuntimeError) as exc:
        raise click.ClickException(str(exc)) from exc
    outputs = {output_path: report.encode("utf-8")} if output_path else {}
    _emit(outputs, report, output_path, to_stdout)


@cli.command()
@shared_options
@click.option("--fdr", "fdr_q", type=float, default=0.05, show_default=True, help="FDR level q.")
@click.option("--target", "targets", multiple=True, required=True,
              help="Comma-separated labels forming one target set (repeatable).")
@click.option("--prior", default="empirical", show_default=True)
@click.option("--eps-theta", type=float, default=None)
@click.option("--fit", "fit_path", default=None, help="Reuse an exported fit JSON.")
@threads_option
@click.option("--output", "output_path", default=None, help="Report file.")
@click.option("--output-format", type=click.Choice(OUTPUT_FORMATS), default="json", show_default=True)
@click.option("--stdout", "to_stdout", is_flag=True, help="Also print the report to stdout.")
def neighborhood(input_path, input_format, csv_header, csv_row_labels, fdr_q, targets,
                 prior, eps_theta, fit_path, threads, output_path, output_format, to_stdout):
    """Single-sweep coherent neighborhoods around fixed target sets."""
    try:
        config = RunConfig(
            input_path=input_path, input_format=input_format, csv_header=csv_header,
            csv_row_labels=csv_row_labels, fdr_q=fdr_q,
            prior=prior, eps_theta=eps_theta, threads=_resolve_threads(threads),
            fit_path=fit_path, output_format=output_format,
        )
        ds = _load_dataset(input_path, input_format, csv_header, csv_row_labels)
        filtered, removed = filter_degenerate(ds)
        if filtered.d == 0:
            raise ValueError("no informative columns (all columns degenerate)")
        fit = _obtain_fit(filtered, config)
        u = latentcorr.standardize(filtered, threshold.theta_matrix(fit, fit.eps_theta))
        sections = []
        for target_spec in targets:
            labels = [t.strip() for t in target_spec.split(",") if t.strip()]
            unknown = [t for t in labels if t not in filtered.col_labels]
            if unknown:
                raise ValueError(f"unknown target labels: {', '.join(sorted(unknown))}")
            idx = {filtered.col_index(t) for t in labels}
            nb = miner.neighborhood(u, idx, q=config.fdr_q)
            sections.append(
                {
                    "target": labels,
                    "neighbors": sorted(filtered.col_labels[j] for j in nb.neighbors),
                    "pvalues": {
                        filtered.col_labels[j]: p for j, p in sorted(nb.pvalues.items())
                    },
                }
            )
        doc = {
            "config": _echo_config(config),
            "removed_columns": removed,
            "neighborhoods": sections,
        }
        report = _format_neighborhood_report(doc, config.output_format)
    except (DataFormatError, ValueError, RuntimeError, KeyError) as exc:
        raise click.ClickException(str(exc)) from exc
    outputs = {output_path: report.encode("utf-8")} if output_path else {}
    _emit(outputs, report, output_path, to_stdout)


@cli.command()
@click.option("--config", "config_path", required=True, help="Study config file (key=value lines).")
@threads_option
@click.option("--figures/--no-figures", "figures_on", default=True, show_default=True)
@click.option("--output", "output_path", default=None, help="Study CSV file.")
@click.option("--stdout", "to_stdout", is_flag=True, help="Also print the CSV to stdout.")
def simulate(config_path, threads, figures_on, output_path, to_stdout):
    """Run the comparative simulation study from a config file."""
    try:
        study = _parse_study_config(config_path)
        rows = simlab.run_study(
            study["grid"],
            methods=study["methods"],
            reps=study["reps"],
            q=study["fdr_q"],
            threads=_resolve_threads(threads),
        )
        lines = [f"# {k}={v}" for k, v in sorted(study["echo"].items())]
        lines.append("method,rho,tau_mode,rep,fpr,tdr")
        for row in rows:
            lines.append(
                f"{row['method']},{row['rho']},{row['tau_mode']},{row['rep']},"
                f"{row['fpr']:.10g},{row['tdr']:.10g}"
            )
        report = "\n".join(lines) + "\n"
        outputs = {output_path: report.encode("utf-8")} if output_path else {}
        if figures_on and output_path:
            summary = simlab.summarize(rows)
            for tau_mode in sorted({r["tau_mode"] for r in summary}):
                png = figures.study_curves_png(summary, tau_mode)
                stem = Path(output_path)
                outputs[str(stem.with_name(f"{stem.stem}_{tau_mode}.png"))] = png
    except (DataFormatError, ValueError, RuntimeError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    _emit(outputs, report, output_path, to_stdout)


@cli.command()
@shared_options
@click.option("--output", "output_path", required=True, help="Converted dataset file.")
@click.option(
    "--output-format",
    type=click.Choice(INPUT_FORMATS),
    required=True,
    help="Target dataset format.",
)
def convert(input_path, input_format, csv_header, csv_row_labels, output_path, output_format):
    """Convert a dataset between transactions/csv/triplets formats."""
    try:
        ds = _load_dataset(input_path, input_format, csv_header, csv_row_labels)
        writer = {
            "transactions": write_transactions,
            "csv": write_dense_csv,
            "triplets": write_triplets,
        }[output_format]
        writer(ds, output_path)
    except (DataFormatError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {output_path}", err=True)


def _load_dataset(path: str, fmt: str, csv_header: str = "auto",
                  csv_row_labels: str = "auto") -> BinaryDataset:
    if fmt == "csv":
        return load_dense_csv(
            path,
            has_header=_TRISTATE[csv_header],
            has_row_labels=_TRISTATE[csv_row_labels],
        )
    loader = {"transactions": load_transactions, "triplets": load_triplets}[fmt]
    return loader(path)


def _obtain_fit(filtered: BinaryDataset, config: RunConfig) -> threshold.ThresholdFit:
    if config.fit_path:
        fit = threshold.fit_from_json(Path(config.fit_path).read_text(encoding="utf-8"))
        if fit.n != filtered.n or fit.d != filtered.d:
            raise ValueError(
                f"fit shape ({fit.n}x{fit.d}) does not match filtered data "
                f"({filtered.n}x{filtered.d})"
            )
        if config.eps_theta is not None:
            fit = dataclasses.replace(fit, eps_theta=config.eps_theta)
        return fit
    kind, prior_obj = _parse_prior(config.prior)
    if kind == "gamma":
        return threshold.fit_gamma(filtered, prior_obj, eps_theta=config.eps_theta)
    return threshold.fit_empirical(filtered, eps_theta=config.eps_theta)


def _parse_prior(spec: str):
    if spec == "empirical":
        return "empirical", None
    if spec.startswith("gamma:"):
        parts = spec[len("gamma:") :].split(",")
        if len(parts) != 2:
            raise ValueError("gamma prior must be written gamma:ZETA,BETA")
        try:
            zeta, beta = float(parts[0]), float(parts[1])
        except ValueError:
            raise ValueError("gamma prior must be written gamma:ZETA,BETA") from None
        return "gamma", threshold.GammaPrior(zeta=zeta, beta=beta)
    raise ValueError(f"unknown prior {spec!r} (use empirical or gamma:ZETA,BETA)")


def _parse_seeds(spec: str, ds: BinaryDataset):
    if spec == "all":
        return None
    labels = [t.strip() for t in spec.split(",") if t.strip()]
    unknown = [t for t in labels if t not in ds.col_labels]
    if unknown:
        raise ValueError(f"unknown seed labels: {', '.join(sorted(unknown))}")
    return {ds.col_index(t) for t in labels}


def _resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return threads
    env = os.environ.get("LAMB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValueError(f"LAMB_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def _parse_study_config(path: str) -> dict:
    known = {
        "n": int, "d": int, "m": int, "rng_seed": int, "reps": int,
        "alpha_lo": float, "alpha_hi": float, "fdr_q": float,
        "rho": None, "tau_mode": None, "methods": None,
    }
    values: dict = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = val

    def get(key, conv, default):
        if key not in values:
            return default
        try:
            return conv(values[key])
        except ValueError:
            raise ValueError(f"invalid value for {key!r}: {values[key]!r}") from None

    n = get("n", int, 101)
    d = get("d", int, 1000)
    m = get("m", int, 100)
    rng_seed = get("rng_seed", int, 0)
    reps = get("reps", int, 1)
    alpha_lo = get("alpha_lo", float, 0.05)
    alpha_hi = get("alpha_hi", float, 0.5)
    fdr_q = get("fdr_q", float, 0.05)
    rhos = [float(v) for v in values.get("rho", "0.5").split(",") if v.strip()]
    tau_modes = [v.strip() for v in values.get("tau_mode", "random_expo1").split(",") if v.strip()]
    methods = tuple(
        v.strip() for v in values.get("methods", ",".join(simlab.METHODS)).split(",") if v.strip()
    )
    grid = [
        simlab.SimulationSpec(
            rho=rho, n=n, d=d, m=m, tau_mode=tau_mode,
            alpha_range=(alpha_lo, alpha_hi), rng_seed=rng_seed,
        )
        for tau_mode in tau_modes
        for rho in rhos
    ]
    echo = {
        "n": n, "d": d, "m": m, "rng_seed": rng_seed, "reps": reps,
        "alpha_lo": alpha_lo, "alpha_hi": alpha_hi, "fdr_q": fdr_q,
        "rho": ",".join(str(r) for r in rhos), "tau_mode": ",".join(tau_modes),
        "methods": ",".join(methods),
    }
    return {"grid": grid, "methods": methods, "reps": reps, "fdr_q": fdr_q, "echo": echo}


def _format_mine_report(doc: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        lines = [f"# {k}={v}" for k, v in sorted(_flat_config(doc["config"]).items())]
        lines.append("set,label,pvalue,seeds_reaching,reason")
        for i, res in enumerate(doc["results"], start=1):
            for label in res["members"]:
                lines.append(
                    f"{i},{label},{res['pvalues'][label]:.6g},"
                    f"{res['seeds_reaching']},{res['reason']}"
                )
        return "\n".join(lines) + "\n"
    lines = ["coherent sets", "============="]
    lines += [f"# {k}={v}" for k, v in sorted(_flat_config(doc["config"]).items())]
    fit = doc["fit"]
    lines.append(
        f"# fit: converged={fit['converged']} iterations={fit['iterations']} "
        f"residual={fit['residual']:.3g}"
    )
    removed = ", ".join(doc["removed_columns"]) or "(none)"
    lines.append(f"# removed columns: {removed}")
    lines.append("")
    if not doc["results"]:
        lines.append("(no coherent sets found)")
    for i, res in enumerate(doc["results"], start=1):
        lines.append(
            f"{i}. {', '.join(res['members'])}   "
            f"[seeds={res['seeds_reaching']}, reason={res['reason']}]"
        )
    return "\n".join(lines) + "\n"


def _format_neighborhood_report(doc: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        lines = [f"# {k}={v}" for k, v in sorted(_flat_config(doc["config"]).items())]
        lines.append("target,label,role,pvalue")
        for sec in doc["neighborhoods"]:
            tgt = "|".join(sec["target"])
            for label in sec["target"]:
                pv = sec["pvalues"].get(label)
                lines.append(f"{tgt},{label},target,{'' if pv is None else f'{pv:.6g}'}")
            for label in sec["neighbors"]:
                if label in sec["target"]:
                    continue
                lines.append(f"{tgt},{label},neighbor,{sec['pvalues'][label]:.6g}")
        return "\n".join(lines) + "\n"
    lines = ["coherent neighborhoods", "======================"]
    lines += [f"# {k}={v}" for k, v in sorted(_flat_config(doc["config"]).items())]
    for sec in doc["neighborhoods"]:
        lines.append("")
        for label in sec["target"]:
            lines.append(f"{label}   (target)")
        neighbors = [lbl for lbl in sec["neighbors"] if lbl not in sec["target"]]
        if not neighbors:
            lines.append("  (no neighbors)")
        for label in neighbors:
            lines.append(f"  {label}   p={sec['pvalues'][label]:.6g}")
    return "\n".join(lines) + "\n"


def _echo_config(config: RunConfig) -> dict:
    # threads is execution detail: reports must be identical at any count
    doc = dataclasses.asdict(config)
    doc.pop("threads", None)
    return doc


def _flat_config(config: dict) -> dict:
    return {k: ("" if v is None else v) for k, v in config.items()}


def _psi_csv(mat: np.ndarray, labels: tuple[str, ...]) -> str:
    lines = ["," + ",".join(labels)]
    for j, label in enumerate(labels):
        lines.append(label + "," + ",".join(f"{v:.12g}" for v in mat[j]))
    return "\n".join(lines) + "\n"


def _emit(outputs: dict[str, bytes], report: str, output_path: str | None, to_stdout: bool) -> None:
    if not output_path and not to_stdout:
        raise click.ClickException("nothing to do: pass --output and/or --stdout")
    for path, blob in outputs.items():
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(blob)
        click.echo(f"wrote {path}", err=True)
    if to_stdout:
        click.echo(report, nl=False)


if __name__ == "__main__":
    main()
