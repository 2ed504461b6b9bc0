"""Result records, sweep tables, and figure rendering.

CSV is the primary output of every run; figures are rendered next to the
tables from the same rows, so a report directory is self-contained.
"""

from __future__ import annotations

import csv
import json
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

ANALYZE_COLUMNS = ("sigma", "mode", "gamma", "status", "runtime_s")
SWEEP_COLUMNS = ("sigma", "gamma_lumped", "gamma_structured", "gamma_true")
SYNTH_COLUMNS = ("sigma", "gamma", "alpha", "status", "runtime_s")

_STYLE = {
    "figure.figsize": (6.0, 3.8),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "legend.fontsize": 9,
}


def result_record(result, seeds=None, extra=None) -> dict:
    """JSON-ready record of a certification run."""
    rec = {
        "gamma": result.gamma,
        "status": result.status,
        "alphas": {k: float(v) for k, v in result.alphas.items()},
        "solver_iterations": result.outcome.iterations,
        "solver_status": result.outcome.status,
        "seeds": seeds if seeds is not None else [],
    }
    rec.update(result.meta)
    if extra:
        rec.update(extra)
    return rec


def write_json(path, record) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, default=_jsonable)
        fh.write("\n")
    return path


def _jsonable(obj):
    try:
        import numpy as np

        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.floating, np.integer)):
            return obj.item()
    except ImportError:  # pragma: no cover
        pass
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_rows(path, rows, columns) -> pathlib.Path:
    """Write a full CSV table (header plus rows of dicts)."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in columns})
    return path


def append_row(path, row, columns) -> pathlib.Path:
    """Append one run to a sweep CSV, writing the header if absent."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        if fresh:
            writer.writeheader()
        writer.writerow({k: _fmt(row.get(k)) for k in columns})
    return path


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.10g}"
    return v


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _finite(rows, xkey, ykey):
    xs, ys = [], []
    for r in rows:
        if r.get(ykey) not in (None, ""):
            xs.append(float(r[xkey]))
            ys.append(float(r[ykey]))
    return xs, ys


def render_analysis_figure(rows, out_path, title="Certified upper bounds") -> pathlib.Path:
    """Noise level against certified bound, lumped and structured, with the
    true norm as the reference line."""
    out_path = pathlib.Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for key, label, marker in (
            ("gamma_lumped", "lumped data analysis", "o"),
            ("gamma_structured", "structured data analysis", "s"),
        ):
            xs, ys = _finite(rows, "sigma", key)
            if xs:
                ax.plot(xs, ys, marker=marker, label=label)
        xs, ys = _finite(rows, "sigma", "gamma_true")
        if xs:
            ax.plot(xs, ys, "--", color="tab:orange", label="true norm")
        ax.set_xlabel(r"noise level $\sigma$")
        ax.set_ylabel(r"$\gamma$")
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_path, dpi=150)
        plt.close(fig)
    return out_path


def render_synthesis_figure(rows, out_path,
                            title="Achievable bound with distributed control") -> pathlib.Path:
    out_path = pathlib.Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        xs, ys = _finite(rows, "sigma", "gamma")
        if xs:
            ax.plot(xs, ys, marker="o", color="tab:red", label="certified existence bound")
        intractable = [float(r["sigma"]) for r in rows if r.get("gamma") in (None, "")]
        for s in intractable:
            ax.axvline(s, color="gray", alpha=0.4, linestyle=":")
        ax.set_xlabel(r"noise level $\sigma$")
        ax.set_ylabel(r"$\gamma$")
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_path, dpi=150)
        plt.close(fig)
    return out_path
