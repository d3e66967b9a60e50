"""Command-line front end.

Subcommands cover the whole pipeline: circuit spot checks, dataset
generation, surrogate training, single solves, region sweeps and the
memoryless baseline. One declarative config document carries every knob;
flags only select the command, point at files, or override dotted keys.
All artifacts are written atomically (temp file + rename).

Exit codes: 0 success, 1 configuration/validation error, 2 numeric failure.
"""

import argparse
import json
import os
import sys
import time

from . import __version__
from . import chain as chn
from . import circuit as circ
from . import region as reg
from . import sqp
from . import surrogate as surr
from .awgn import IrChannel
from .config import ConfigError, load_config, physics_report
from .errors import NumericFailure
from .utils import atomic_write, substream


def _t_label(t_symbol: float) -> str:
    return f"T_{t_symbol:.9g}"


def _dataset_path(out_dir, t_symbol):
    return os.path.join(out_dir, "datasets", _t_label(t_symbol) + ".csv")


def _model_paths(out_dir, t_symbol):
    base = os.path.join(out_dir, "models", _t_label(t_symbol))
    return (
        os.path.join(base, "model_next_state.json"),
        os.path.join(base, "model_reward.json"),
        os.path.join(base, "training_report.json"),
    )


def _write_run_json(out_dir, cfg, command, artifacts, started):
    doc = {
        "command": command,
        "config": cfg.doc,
        "master_seed": cfg.master_seed,
        "version": __version__,
        "wall_clock_s": time.time() - started,
        "artifacts": sorted(artifacts),
    }
    path = os.path.join(out_dir, "run.json")
    with atomic_write(path) as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _ensure_dataset(cfg, t_symbol, out_dir):
    """Load the dataset for this symbol duration, generating it if absent."""
    path = _dataset_path(out_dir, t_symbol)
    if os.path.exists(path):
        return circ.Dataset.load_csv(path), path, False
    params = cfg.circuit_params().with_duration(t_symbol)
    rng = substream(cfg.master_seed, "dataset", _t_label(t_symbol))
    ds = circ.generate_dataset(params, cfg.dataset_rows, cfg.amp_max, rng)
    with atomic_write(path) as fh:
        _write_dataset(ds, fh)
    return ds, path, True


def _write_dataset(ds, fh):
    fh.write("v0,x_eh,v_next,avg_power\n")
    for row in zip(ds.v0, ds.x_eh, ds.v_next, ds.avg_power):
        fh.write("%.17g,%.17g,%.17g,%.17g\n" % row)


def _ensure_surrogates(cfg, t_list, out_dir, log=lambda *_: None):
    """Return {T: (next-state net, reward net)}, training any missing pair."""
    models = {}
    new_files = []
    for t_symbol in t_list:
        p_next, p_reward, p_report = _model_paths(out_dir, t_symbol)
        if os.path.exists(p_next) and os.path.exists(p_reward):
            models[t_symbol] = (surr.load_model(p_next), surr.load_model(p_reward))
            continue
        ds, ds_path, fresh = _ensure_dataset(cfg, t_symbol, out_dir)
        if fresh:
            new_files.append(ds_path)
        log(f"training surrogates for {_t_label(t_symbol)} ...")
        m_next, r_next = surr.train(ds, "next_state", cfg.train_config(seed_offset=1))
        m_rwd, r_rwd = surr.train(ds, "reward", cfg.train_config(seed_offset=2))
        for path, model in ((p_next, m_next), (p_reward, m_rwd)):
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with atomic_write(path) as fh:
                json.dump(_model_doc(model), fh, indent=1, sort_keys=True)
                fh.write("\n")
        report = {
            "next_state": _report_doc(r_next),
            "reward": _report_doc(r_rwd),
        }
        with atomic_write(p_report) as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
            fh.write("\n")
        new_files += [p_next, p_reward, p_report]
        models[t_symbol] = (m_next, m_rwd)
        log(
            "  test MAPE: next-state %.3f%%, reward %.3f%%"
            % (r_next.test_mape, r_rwd.test_mape)
        )
    return models, new_files


def _model_doc(m):
    return {
        "format_version": m.format_version,
        "kind": "relu-mlp",
        "target": m.target,
        "layer_sizes": m.layer_sizes,
        "in_mean": m.in_mean.tolist(),
        "in_std": m.in_std.tolist(),
        "out_lo": m.out_lo,
        "out_hi": m.out_hi,
        "weights": [w.tolist() for w in m.weights],
        "biases": [b.tolist() for b in m.biases],
    }


def _report_doc(r):
    return {
        "train_mape": r.train_mape,
        "val_mape": r.val_mape,
        "best_epoch": r.best_epoch,
        "best_val_mape": r.best_val_mape,
        "test_mape": r.test_mape,
    }


def _build_assets(cfg, regime, backend, surrogates):
    return reg.SweepAssets(
        constellation=cfg.constellation(),
        circuit_params=cfg.circuit_params(),
        geometry=cfg.geometry(regime),
        noise_var=cfg.noise_var,
        power_budget=cfg.power_budget,
        amp_max=cfg.amp_max,
        surrogates=surrogates,
        backend=backend,
    )


def _build_grid(cfg):
    r = cfg.doc["region"]
    return reg.SweepGrid(
        t_list=list(r["symbol_durations_s"]),
        i_req_list=list(r["i_req_list_bits"]),
        n_realizations=r["realizations"],
        eval_steps=r["eval_steps"],
        eval_burn_in=r["eval_burn_in"],
        state_grid_points=r["state_grid_points"],
        eval_substeps=r["eval_substeps"],
        include_baseline=r["include_baseline"],
        solver=cfg.solver_config(),
    )


def cmd_validate_config(cfg, args, out_dir):
    errors, warnings_ = physics_report(cfg)
    for w in warnings_:
        print(f"warning: {w}")
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return 1
    print("configuration OK")
    return 0


def cmd_simulate_circuit(cfg, args, out_dir):
    params = cfg.circuit_params()
    sim = cfg.doc["simulate"]
    if sim["steady_state"]:
        res = circ.steady_state_response(params, sim["amplitude_v"])
    else:
        res = circ.simulate_interval(params, sim["v0_v"], sim["amplitude_v"])
    print("v_next_V=%.9g avg_power_W=%.9g" % (res.v_next, res.avg_power))
    return 0


def cmd_gen_dataset(cfg, args, out_dir):
    started = time.time()
    t_symbol = cfg.doc["circuit"]["symbol_duration_s"]
    path = _dataset_path(out_dir, t_symbol)
    params = cfg.circuit_params()
    rng = substream(cfg.master_seed, "dataset", _t_label(t_symbol))
    ds = circ.generate_dataset(params, cfg.dataset_rows, cfg.amp_max, rng)
    with atomic_write(path) as fh:
        _write_dataset(ds, fh)
    _write_run_json(out_dir, cfg, "gen-dataset", [path], started)
    print(f"wrote {len(ds)} rows to {path}")
    return 0


def cmd_train_surrogate(cfg, args, out_dir):
    started = time.time()
    t_symbol = cfg.doc["circuit"]["symbol_duration_s"]
    models, new_files = _ensure_surrogates(
        cfg, [t_symbol], out_dir, log=lambda msg: print(msg)
    )
    if not new_files:
        print("models already present; nothing to do")
    _write_run_json(out_dir, cfg, "train-surrogate", new_files, started)
    return 0


def cmd_optimize(cfg, args, out_dir):
    started = time.time()
    backend = cfg.doc["solver"]["backend"]
    regime = cfg.doc["region"]["regime"]
    t_symbol = cfg.doc["circuit"]["symbol_duration_s"]
    c = cfg.constellation()
    params = cfg.circuit_params()
    grid = _build_grid(cfg)

    rng_ch = substream(cfg.master_seed, "optimize", "channel", regime)
    h_i, h_e = reg.sample_channels(cfg.geometry(regime), rng_ch)
    eval_model = chn.make_circuit_model(
        params, c, h_e, amp_max=cfg.amp_max,
        grid_points=grid.state_grid_points, substeps=grid.eval_substeps,
    )
    if backend == "surrogate":
        models, _ = _ensure_surrogates(cfg, [t_symbol], out_dir, log=lambda m: print(m))
        m_next, m_rwd = models[t_symbol]
        model = chn.make_surrogate_model(
            m_next, m_rwd, params, c, h_e, cfg.amp_max,
            grid_points=grid.state_grid_points,
        )
    else:
        model = eval_model

    spec = sqp.ProblemSpec(
        constellation=c,
        channel=IrChannel(gain=h_i, noise_var=cfg.noise_var),
        i_req=cfg.doc["solver"]["i_req_bits"],
        power_budget=cfg.power_budget,
        model=model,
    )
    sol = sqp.solve(spec, cfg.solver_config(), substream(cfg.master_seed, "optimize", "solve"))
    p_eval = chn.evaluate_average_reward(
        eval_model, sol.theta, grid.eval_steps,
        substream(cfg.master_seed, "optimize", "eval"), burn_in=grid.eval_burn_in,
    )

    trace_path = os.path.join(out_dir, "trace.csv")
    with atomic_write(trace_path) as fh:
        fh.write(",".join(sqp.TRACE_COLUMNS) + "\n")
        for row in sol.trace:
            fh.write(
                "%d,%.17g,%.17g,%.17g,%.17g,%s\n"
                % (row["k"], row["p_tilde"], row["mi_bits"], row["step_norm"],
                   row["kkt_residual"], ";".join(row["active"]))
            )
    dist_path = os.path.join(out_dir, "distribution.csv")
    with atomic_write(dist_path) as fh:
        reg.write_distribution_csv(c, sol.theta, fh)
    _write_run_json(out_dir, cfg, "optimize", [trace_path, dist_path], started)
    print(
        "converged=%s iterations=%d I=%.4f bits P_circuit=%.6g W"
        % (sol.converged, sol.iterations, sol.mutual_info, p_eval)
    )
    return 0


def _run_sweep(cfg, args, out_dir, baseline_only):
    started = time.time()
    backend = cfg.doc["solver"]["backend"]
    regime = cfg.doc["region"]["regime"]
    grid = _build_grid(cfg)
    surrogates = {}
    if backend == "surrogate" and not baseline_only:
        surrogates, _ = _ensure_surrogates(cfg, grid.t_list, out_dir, log=lambda m: print(m))
    assets = _build_assets(cfg, regime, backend, surrogates)
    if baseline_only:
        points = reg.baseline_memoryless(assets, grid, cfg.master_seed, workers=args.workers)
        csv_name = "baseline.csv"
    else:
        points = reg.trace_region(assets, grid, cfg.master_seed, workers=args.workers)
        csv_name = "region.csv"

    csv_path = os.path.join(out_dir, csv_name)
    with atomic_write(csv_path) as fh:
        reg.write_region_csv(points, fh)
    artifacts = [csv_path]
    dist_dir = os.path.join(out_dir, "distributions")
    for p in points:
        name = "%s_%s_I%.6g_r%d_%s.csv" % (
            p.regime, _t_label(p.t_symbol), p.i_req, p.realization, p.scheme,
        )
        path = os.path.join(dist_dir, name)
        with atomic_write(path) as fh:
            reg.write_distribution_csv(assets.constellation, p.theta, fh)
        artifacts.append(path)
    _write_run_json(out_dir, cfg, "baseline" if baseline_only else "trace-region",
                    artifacts, started)

    frontier = reg.average_frontier(points, scheme="baseline" if baseline_only else "proposed")
    for (t_symbol, i_req), row in sorted(frontier.items()):
        print(
            "T=%.3g s I_req=%.3g bits: P=%.6g W R=%.6g bit/s (n=%d)"
            % (t_symbol, i_req, row["avg_power"], row["bit_rate"], row["count"])
        )
    print(f"wrote {len(points)} points to {csv_path}")
    return 0


def cmd_trace_region(cfg, args, out_dir):
    return _run_sweep(cfg, args, out_dir, baseline_only=False)


def cmd_baseline(cfg, args, out_dir):
    return _run_sweep(cfg, args, out_dir, baseline_only=True)


COMMANDS = {
    "validate-config": cmd_validate_config,
    "simulate-circuit": cmd_simulate_circuit,
    "gen-dataset": cmd_gen_dataset,
    "train-surrogate": cmd_train_surrogate,
    "optimize": cmd_optimize,
    "trace-region": cmd_trace_region,
    "baseline": cmd_baseline,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="swiptmem",
        description="Rate-power regions for SWIPT with a memory-bearing harvester",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="path to the YAML config document")
        p.add_argument(
            "--set", action="append", dest="overrides", default=[],
            metavar="DOTTED.KEY=VALUE", help="override one config key (repeatable)",
        )
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--out", help="override output_dir")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        p.add_argument("--backend", choices=["circuit", "surrogate"],
                       help="override solver.backend")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = []
    for item in args.overrides:
        if "=" not in item:
            print(f"error: --set expects DOTTED.KEY=VALUE, got {item!r}", file=sys.stderr)
            return 1
        key, _, value = item.partition("=")
        overrides.append((key.strip(), value))
    if args.seed is not None:
        overrides.append(("master_seed", str(args.seed)))
    if args.out is not None:
        overrides.append(("output_dir", args.out))
    if args.backend is not None:
        overrides.append(("solver.backend", args.backend))
    try:
        cfg = load_config(args.config, overrides)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, args, out_dir)
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
