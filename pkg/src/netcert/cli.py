"""Command-line experiment runner.

    netcert true-norm --config cfg.json [--out DIR]
    netcert analyze   --config cfg.json [--out DIR] [--seed S] [--mode lumped|structured|both] [--plot]
    netcert synth     --config cfg.json [--out DIR] [--seed S] [--alpha-grid default|extended] [--plot]
    netcert gen-data  --config cfg.json [--out DIR] [--seed S]

Configs are JSON, validated against the schemas shipped in
netcert/schemas (unknown keys are rejected).  All randomness flows
through the single seed recorded in the outputs, so a rerun with the
same config and seed reproduces the same numbers; the optional figures
are rendered next to the CSV tables they come from.

Exit codes: 0 success, 2 infeasible/unknown, 3 data or config error,
4 solver inconclusive.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import pathlib
import sys
import time

import numpy as np

from . import analysis, datadriven as dd, matrixcore as mc, report, synthesis
from . import truthoracle as oracle
from .sdpsolve import NoFeasiblePointError, SolveStatus

EXIT_OK = 0
EXIT_UNKNOWN = 2
EXIT_DATA = 3
EXIT_INCONCLUSIVE = 4


class ConfigError(ValueError):
    pass


def _load_config(path, command: str) -> dict:
    import jsonschema

    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    name = command.replace("-", "_")
    schema = json.loads(
        importlib.resources.files("netcert.schemas").joinpath(f"{name}.json").read_text()
    )
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config invalid for {command}: {exc.message}") from exc
    return cfg


def _build_system(spec: dict) -> oracle.SystemModel:
    kind = spec["kind"]
    if kind == "example1":
        return oracle.example1_system()
    if kind == "cycle":
        return oracle.random_cycle_system(
            spec["L"],
            n_i=spec.get("n_i", 1),
            diag_range=tuple(spec.get("diag_range", (0.0, 1.0))),
            coupling_range=tuple(spec.get("coupling_range", (0.0, 0.1))),
            seed=spec["seed"],
        )
    A = np.array(spec["A"], dtype=float)
    B = np.array(spec["B"], dtype=float)
    C = np.array(spec["C"], dtype=float) if "C" in spec else np.eye(A.shape[0])
    D = np.array(spec["D"], dtype=float) if "D" in spec else np.zeros((C.shape[0], B.shape[1]))
    struct = spec.get("structure")
    if struct is None:
        return oracle.SystemModel(A, B, C, D)
    graph = analysis.InterconnectionGraph(
        len(struct["state_dims"]),
        tuple(tuple(e) for e in struct["edges"]),
        tuple(struct["state_dims"]),
        tuple(struct["input_dims"]),
    )
    sys_plain = oracle.SystemModel(A, B, C, D, graph)
    # carry per-vertex blocks for the structured pipelines
    A_diag = [A[sys_plain.state_slice(i), sys_plain.state_slice(i)] for i in range(graph.L)]
    coupling = {
        (i, j): A[sys_plain.state_slice(i), sys_plain.state_slice(j)]
        for i, j in graph.ordered_pairs()
    }
    B_diag = [B[sys_plain.state_slice(i), sys_plain.input_slice(i)] for i in range(graph.L)]
    model = oracle.SystemModel.from_blocks(graph, A_diag, coupling, B_diag)
    if not (np.allclose(model.A, A) and np.allclose(model.B, B)):
        raise ConfigError("explicit matrices are not block-structured along the given graph")
    return model


def _experiment_config(cfg: dict, seed_override) -> oracle.ExperimentConfig:
    exp = cfg["experiment"]
    return oracle.ExperimentConfig(
        N=exp["N"],
        sigma=exp["sigma"],
        noise_model=exp.get("noise_model", "ball"),
        seed=seed_override if seed_override is not None else exp.get("seed", 0),
    )


def _vertex_cd(sys: oracle.SystemModel):
    if sys.C_diag:
        return list(sys.C_diag), list(sys.D_diag)
    g = sys.graph
    return (
        [np.eye(g.state_dims[i]) for i in range(g.L)],
        [np.zeros((g.state_dims[i], g.input_dims[i])) for i in range(g.L)],
    )


def cmd_true_norm(args) -> int:
    cfg = _load_config(args.config, "true-norm")
    sys_model = _build_system(cfg["system"])
    try:
        gamma = oracle.hinf_norm(sys_model)
    except oracle.UnstableSystemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    grid = oracle.freq_grid_norm(sys_model)
    print(f"true H-infinity norm: {gamma:.6f} (frequency grid {grid:.6f})")
    out = pathlib.Path(args.out)
    report.write_json(out / "true_norm.json", {
        "gamma_true": gamma,
        "freq_grid": grid,
        "spectral_radius": sys_model.spectral_radius,
    })
    return EXIT_OK


def _status_code(result) -> int:
    if result.certified:
        return EXIT_OK
    if result.outcome.status == SolveStatus.INCONCLUSIVE:
        return EXIT_INCONCLUSIVE
    return EXIT_UNKNOWN


def _analyze_one(sys_model, exp, mode):
    """Run one mode on one experiment; returns (gamma, status, result)."""
    if mode == "lumped":
        res = analysis.hinf_bound_unstructured(
            exp.trajectory, exp.lumped_bound, sys_model.C, sys_model.D
        )
    else:
        if sys_model.graph is None:
            raise dd.DataError("structured analysis needs an interconnection structure")
        C_list, D_list = _vertex_cd(sys_model)
        res = analysis.hinf_bound_structured(
            exp.subsystems, exp.vertex_bounds, sys_model.graph, C_list, D_list
        )
    return res


def cmd_analyze(args) -> int:
    cfg = _load_config(args.config, "analyze")
    sys_model = _build_system(cfg["system"])
    mode = args.mode or cfg.get("mode", "both")
    modes = ("lumped", "structured") if mode == "both" else (mode,)
    out = pathlib.Path(args.out)

    if "data_manifest" in cfg:
        experiments = [_experiment_from_manifest(cfg["data_manifest"], sys_model)]
        sigmas = [experiments[0].config.sigma]
    elif "experiment" in cfg:
        base = _experiment_config(cfg, args.seed)
        sigmas = cfg.get("sigmas", [base.sigma])
        experiments = []
        for k, s in enumerate(sigmas):
            c = oracle.ExperimentConfig(base.N, s, base.noise_model, base.seed + k)
            experiments.append(oracle.generate_experiment(sys_model, c))
    else:
        raise ConfigError("analyze needs either experiment or data_manifest")

    try:
        gamma_true = oracle.hinf_norm(sys_model)
    except oracle.UnstableSystemError:
        gamma_true = None

    code = EXIT_OK
    run_rows, sweep_rows = [], []
    for s, exp in zip(sigmas, experiments):
        sweep = {"sigma": s, "gamma_true": gamma_true}
        for md in modes:
            t0 = time.perf_counter()
            try:
                res = _analyze_one(sys_model, exp, md)
            except (dd.DataError, mc.MatrixError, analysis.AnalysisError) as exc:
                print(f"error: sigma={s} {md}: {exc}", file=sys.stderr)
                return EXIT_DATA
            dt = time.perf_counter() - t0
            run_rows.append({
                "sigma": s, "mode": md, "gamma": res.gamma,
                "status": res.status, "runtime_s": dt,
            })
            sweep[f"gamma_{md}"] = res.gamma
            code = max(code, _status_code(res))
            shown = f"{res.gamma:.6f}" if res.gamma is not None else "-"
            print(f"sigma={s:g} mode={md}: gamma*={shown} status={res.status} ({dt:.2f}s)")
        sweep_rows.append(sweep)
    report.write_rows(out / "analyze_runs.csv", run_rows, report.ANALYZE_COLUMNS)
    report.write_rows(out / "analyze_sweep.csv", sweep_rows, report.SWEEP_COLUMNS)
    if args.plot:
        report.render_analysis_figure(sweep_rows, out / "analyze_sweep.png")
    return code


def _experiment_from_manifest(path, sys_model):
    subsystems, bounds, edges, manifest = dd.load_manifest(path)
    nb = manifest["noise_bound"]
    model = nb.get("model", "ball")
    X = np.vstack([s.own.X for s in subsystems])
    U = np.vstack([s.own.U_minus for s in subsystems])
    n = X.shape[0]
    lumped_sigma = nb["sigma"] * (np.sqrt(n) if model == "interval" else 1.0)
    data = oracle.ExperimentData(
        dd.TrajectoryData(X, U),
        np.zeros((n, 0)),
        U,
        dd.energy_bound(lumped_sigma, nb["N"], n),
        subsystems,
        bounds,
        oracle.ExperimentConfig(nb["N"], nb["sigma"], model, manifest.get("seed", 0)),
    )
    return data


def cmd_synth(args) -> int:
    cfg = _load_config(args.config, "synth")
    sys_model = _build_system(cfg["system"])
    if sys_model.graph is None:
        print("error: synthesis needs an interconnected system", file=sys.stderr)
        return EXIT_DATA
    graph = sys_model.graph
    exp_cfg = _experiment_config(cfg, args.seed)
    exp = oracle.generate_experiment(sys_model, exp_cfg)
    spec = synthesis.PerformanceSpec.state_performance(graph)
    interval = tuple(cfg.get("gamma_interval", (1e-2, 1e3)))
    grid_cfg = args.alpha_grid or cfg.get("alpha_grid", "default")
    if grid_cfg == "default":
        grid = synthesis.DEFAULT_ALPHA_GRID
    elif grid_cfg == "extended":
        grid = synthesis.EXTENDED_ALPHA_GRID
    else:
        grid = tuple(float(a) for a in grid_cfg)
    rel_tol = cfg.get("rel_tol", 1e-3)
    sigmas = cfg.get("sigmas", [exp_cfg.sigma])
    out = pathlib.Path(args.out)

    code = EXIT_OK
    rows = []
    base_record = None
    for s in sigmas:
        bounds = [
            dd.energy_bound(
                s * (np.sqrt(graph.state_dims[i]) if exp_cfg.noise_model == "interval" else 1.0),
                exp_cfg.N, graph.state_dims[i],
            )
            for i in range(graph.L)
        ]
        t0 = time.perf_counter()
        try:
            gamma, res, bres = synthesis.min_gamma_synthesis(
                exp.subsystems, bounds, graph, spec, interval, grid, rel_tol
            )
            dt = time.perf_counter() - t0
            rows.append({
                "sigma": s, "gamma": gamma, "alpha": res.witness.alpha,
                "status": "feasible", "runtime_s": dt,
            })
            print(f"sigma={s:g}: gamma*={gamma:.6f} alpha={res.witness.alpha:g} ({dt:.2f}s)")
            if base_record is None:
                base_record = _witness_record(res.witness, graph, exp_cfg, bres)
        except NoFeasiblePointError:
            dt = time.perf_counter() - t0
            rows.append({
                "sigma": s, "gamma": None, "alpha": None,
                "status": "infeasible", "runtime_s": dt,
            })
            print(f"sigma={s:g}: no feasible gamma in {interval} ({dt:.2f}s)")
            code = max(code, EXIT_UNKNOWN)
        except (dd.DataError, mc.MatrixError, analysis.AnalysisError) as exc:
            print(f"error: sigma={s}: {exc}", file=sys.stderr)
            return EXIT_DATA
    report.write_rows(out / "synth_sweep.csv", rows, report.SYNTH_COLUMNS)
    if base_record is not None:
        report.write_json(out / "synth_result.json", base_record)
    if args.plot:
        report.render_synthesis_figure(rows, out / "synth_sweep.png")
    return code


def _witness_record(witness, graph, exp_cfg, bres) -> dict:
    spectra = {}
    for i in range(graph.L):
        for tag in ("P", "Pbar"):
            M = np.atleast_2d(witness.assignment[f"{tag}_{i}"])
            spectra[f"{tag}_{i}"] = np.linalg.eigvalsh(M).tolist()
    return {
        "gamma": witness.gamma,
        "alpha": witness.alpha,
        "status": "feasible",
        "bracketing_uncertain": bres.bracketing_uncertain,
        "witness_spectra": spectra,
        "controller_dims": {f"{i}->{j}": v for (i, j), v in witness.controller_dims.items()},
        "seeds": [exp_cfg.seed],
        "N": exp_cfg.N,
        "sigma": exp_cfg.sigma,
        "noise_model": exp_cfg.noise_model,
    }


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config, "gen-data")
    sys_model = _build_system(cfg["system"])
    exp_cfg = _experiment_config(cfg, args.seed)
    exp = oracle.generate_experiment(sys_model, exp_cfg)
    out = pathlib.Path(cfg.get("out_dir", args.out))
    if sys_model.graph is not None:
        trajs = [s.own for s in exp.subsystems]
        edges = sys_model.graph.edges
    else:
        trajs = [exp.trajectory]
        edges = ()
    manifest = dd.save_trajectories(
        out, trajs, edges, "energy", exp_cfg.sigma, exp_cfg.N,
        seed=exp_cfg.seed, noise_model=exp_cfg.noise_model,
    )
    print(f"wrote {len(trajs)} trajectory file(s) and {manifest}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="netcert",
        description="Certified H-infinity analysis and distributed-controller "
                    "existence tests from noisy input-state data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("true-norm", cmd_true_norm),
        ("analyze", cmd_analyze),
        ("synth", cmd_synth),
        ("gen-data", cmd_gen_data),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default="netcert_out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override experiment seed")
        if name == "analyze":
            p.add_argument("--mode", choices=["lumped", "structured", "both"], default=None)
        if name == "synth":
            p.add_argument("--alpha-grid", choices=["default", "extended"], default=None)
        if name in ("analyze", "synth"):
            p.add_argument("--plot", action="store_true",
                           help="render figures next to the CSV output")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (dd.DataError, mc.MatrixError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
