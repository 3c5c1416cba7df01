"""Config-driven command line: forward simulation, reconstruction, pattern
optimization, the full two-step loop, and metrics.

File flow between subcommands: `forward` writes measurements.csv,
pattern.csv and truth.csv into --out; `reconstruct` consumes them and writes
recon.csv; `optimize` consumes recon.csv and writes next_pattern.csv.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import design, fem, forward, illum, io, jacobian, metrics, recon
from .config import ConfigError, RunConfig, parse_config
from .mesh import export_mesh_csv
from .pipeline import (build_state, run_loop, synthesize, write_loop_summary,
                       write_round_artifacts)

log = logging.getLogger("fmtlab")

THREAD_ENV_VAR = "FMTLAB_THREADS"


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.noise.seed = args.seed
    if getattr(args, "rounds", None) is not None:
        cfg.loop.rounds_max = args.rounds
    if getattr(args, "mu", None) is not None:
        cfg.illum.mu = args.mu
    if getattr(args, "lam", None) is not None:
        cfg.recon.lam = args.lam
    if getattr(args, "out", None):
        cfg.output.dir = args.out
    return cfg


def _read_pattern(path, state):
    sigma = np.zeros(state.mesh.n_nodes)
    with open(path) as f:
        header = f.readline()
        if not header.startswith("node_id"):
            raise ValueError(f"{path}: not a pattern CSV")
        for line in f:
            parts = line.strip().split(",")
            sigma[int(parts[0])] = float(parts[4])
    support = np.nonzero(state.mesh.illum_allowed)[0]
    return illum.IlluminationPattern(sigma=sigma, support=support,
                                     p_max=state.config.lasers.p_max)


def _read_measurements(path, L, M):
    P_e = np.zeros((L, M))
    P_f = np.zeros((L, M))
    Y = np.zeros((L, M))
    mask = np.zeros((L, M), dtype=bool)
    with open(path) as f:
        f.readline()
        for line in f:
            l, k, y, pe, pf, masked = line.strip().split(",")
            l, k = int(l), int(k)
            Y[l, k], P_e[l, k], P_f[l, k] = float(y), float(pe), float(pf)
            mask[l, k] = masked == "0"
    return forward.MeasurementSet(Y=Y, P_e=P_e, P_f=P_f, mask=mask)


def cmd_forward(args) -> int:
    cfg = _load_config(args)
    state = build_state(cfg)
    out = cfg.output.dir
    os.makedirs(out, exist_ok=True)
    _, ms = synthesize(state, state.pattern)
    forward.export_measurements_csv(ms, os.path.join(out, "measurements.csv"))
    illum.export_pattern_csv(state.pattern, state.mesh.node_coords,
                             os.path.join(out, "pattern.csv"))
    io.export_field_csv(state.mesh, state.C_true, os.path.join(out, "truth.csv"))
    export_mesh_csv(state.mesh, os.path.join(out, "mesh_nodes.csv"),
                    os.path.join(out, "mesh_tets.csv"))
    if not args.quiet:
        print(f"forward: {state.pattern.nnz} lasers, {int(ms.mask.sum())} usable "
              f"measurements -> {out}")
    return 0


def cmd_reconstruct(args) -> int:
    cfg = _load_config(args)
    state = build_state(cfg)
    out = cfg.output.dir
    os.makedirs(out, exist_ok=True)
    pattern_path = args.pattern or os.path.join(out, "pattern.csv")
    meas_path = args.measurements or os.path.join(out, "measurements.csv")
    pattern = _read_pattern(pattern_path, state)
    state.pattern = pattern
    sources = illum.split_pattern(pattern)
    Q = np.stack([fem.point_source_load(state.mesh.n_nodes, int(np.nonzero(q)[0][0]),
                                        q.max(), state.medium.zeta) for q in sources], axis=1)
    Phi_E = forward.excitation_fields(state.S_e, Q)
    ms = _read_measurements(meas_path, Q.shape[1], state.detector.n_pixels)
    W = jacobian.assemble_W(state.G, Phi_E, ms, state.medium.eta)
    y = ms.Y[ms.mask]
    rcfg = recon.ReconConfig(lam=cfg.recon.lam, alpha=cfg.recon.alpha,
                             max_iters=cfg.recon.max_iters, tol=cfg.recon.tol)
    image = recon.fista(W.W, y, rcfg)
    io.export_field_csv(state.mesh, image.C, os.path.join(out, "recon.csv"))
    io.export_slices(state.mesh, image.C, cfg.output.slice_axes, cfg.output.slice_coords,
                     os.path.join(out, "recon"))
    recon.export_iteration_log(image, os.path.join(out, "recon_iterations.csv"))
    report = metrics.evaluate(image.C, state.C_true)
    report.to_json(os.path.join(out, "recon_metrics.json"))
    if not args.quiet:
        print(f"reconstruct: {image.n_iters} iterations, dice {report.dice:.4f} -> {out}")
    return 0


def _design_inputs(cfg, args):
    state = build_state(cfg)
    out = cfg.output.dir
    pattern = _read_pattern(args.pattern or os.path.join(out, "pattern.csv"), state)
    state.pattern = pattern
    sources = illum.split_pattern(pattern)
    Q = np.stack([fem.point_source_load(state.mesh.n_nodes, int(np.nonzero(q)[0][0]),
                                        q.max(), state.medium.zeta) for q in sources], axis=1)
    Phi_E = forward.excitation_fields(state.S_e, Q)
    ms = _read_measurements(args.measurements or os.path.join(out, "measurements.csv"),
                            Q.shape[1], state.detector.n_pixels)
    C = io.read_field_csv(args.recon or os.path.join(out, "recon.csv"))
    support = np.nonzero(state.mesh.illum_allowed)[0]
    V = design.assemble_V(state.S_e, state.S_f, state.gamma, C, Phi_E,
                          state.medium.eta, support, ms=ms, G=state.G)
    Vt, Yt = design.extend_system(V.V, ms.Y[ms.mask], cfg.illum.gamma_interior)
    return state, pattern, support, Vt, Yt


def cmd_optimize(args) -> int:
    cfg = _load_config(args)
    out = cfg.output.dir
    os.makedirs(out, exist_ok=True)
    state, pattern, support, Vt, Yt = _design_inputs(cfg, args)

    if args.mu_sweep:
        lo, hi, n = args.mu_sweep
        mus = np.geomspace(lo, hi, n)
        with open(os.path.join(out, "mu_sweep.csv"), "w") as f:
            f.write("mu,n_lasers,total_power\n")
            for mu in mus:
                rw = illum.ReweightConfig(mu=mu, epsilon=cfg.illum.epsilon,
                                          outer_iters=cfg.illum.outer_iters,
                                          sweeps=cfg.illum.sweeps, tol=cfg.illum.tol,
                                          p_max=cfg.lasers.p_max)
                pat = illum.reweighted_l1(Vt, Yt, rw, pattern.sigma[support], support,
                                          n_nodes=state.mesh.n_nodes)
                f.write(f"{float(mu)!r},{pat.nnz},{float(pat.sigma.sum())!r}\n")
                if not args.quiet:
                    print(f"mu={mu:.3e}: {pat.nnz} lasers")
        return 0

    rw = illum.ReweightConfig(mu=cfg.illum.mu, epsilon=cfg.illum.epsilon,
                              outer_iters=cfg.illum.outer_iters, sweeps=cfg.illum.sweeps,
                              tol=cfg.illum.tol, p_max=cfg.lasers.p_max)
    next_pattern = illum.reweighted_l1(Vt, Yt, rw, pattern.sigma[support], support,
                                       n_nodes=state.mesh.n_nodes)
    illum.export_pattern_csv(next_pattern, state.mesh.node_coords,
                             os.path.join(out, "next_pattern.csv"))
    if not args.quiet:
        print(f"optimize: designed {next_pattern.nnz} lasers -> {out}/next_pattern.csv")
    return next_pattern.warn_all_zero


def cmd_loop(args) -> int:
    cfg = _load_config(args)
    out = cfg.output.dir
    os.makedirs(out, exist_ok=True)
    state = build_state(cfg)
    records = run_loop(state)
    for record in records:
        write_round_artifacts(state, record, out)
    write_loop_summary(records, out)
    if not args.quiet:
        for r in records:
            print(f"round {r.index}: {r.laser_count} lasers, dice {r.report.dice:.4f}, "
                  f"mse {r.report.mse:.5g}, snr {r.report.snr_db:.3f} dB")
    return 0


def cmd_metrics(args) -> int:
    x = io.read_field_csv(args.recon)
    x_true = io.read_field_csv(args.truth)
    report = metrics.evaluate(x, x_true)
    payload = report.to_json(args.json_out)
    if not args.quiet:
        print(payload)
    return 0


def _parse_mu_sweep(text):
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected lo:hi:n") from exc
    if lo <= 0 or hi <= 0 or n < 1:
        raise argparse.ArgumentTypeError("mu sweep bounds must be positive")
    return lo, hi, n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmtlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config path (defaults apply when omitted)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="noise seed override")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("forward", help="synthesize measurements from the initial pattern")
    common(p)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("reconstruct", help="FISTA reconstruction from measurement files")
    common(p)
    p.add_argument("--lambda", dest="lam", type=float, help="regularization weight override")
    p.add_argument("--pattern", help="pattern CSV (default <out>/pattern.csv)")
    p.add_argument("--measurements", help="measurement CSV (default <out>/measurements.csv)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("optimize", help="design the next illumination pattern")
    common(p)
    p.add_argument("--mu", type=float, help="design regularization weight override")
    p.add_argument("--mu-sweep", type=_parse_mu_sweep, metavar="lo:hi:n",
                   help="geometric mu sweep reporting laser counts")
    p.add_argument("--pattern", help="pattern CSV (default <out>/pattern.csv)")
    p.add_argument("--measurements", help="measurement CSV (default <out>/measurements.csv)")
    p.add_argument("--recon", help="reconstruction CSV (default <out>/recon.csv)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("loop", help="run the full two-step loop")
    common(p)
    p.add_argument("--rounds", type=int, help="round budget override")
    p.add_argument("--mu", type=float, help="design regularization weight override")
    p.add_argument("--lambda", dest="lam", type=float, help="recon weight override")
    p.set_defaults(func=cmd_loop)

    p = sub.add_parser("metrics", help="compare a reconstruction against a truth field")
    p.add_argument("--recon", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--json-out", help="also write the metrics JSON here")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    if THREAD_ENV_VAR in os.environ:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, os.environ[THREAD_ENV_VAR])
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"fmtlab {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
