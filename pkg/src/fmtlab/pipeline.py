"""Two-step loop: reconstruct the fluorescence distribution from the current
illumination pattern, design the next pattern from the reconstruction,
repeat until the pattern stabilizes. Measurements are re-synthesized from
the true distribution under each new pattern, simulating a fresh experiment
per round."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import design, fem, forward, illum, io, jacobian, metrics, recon
from .config import RunConfig
from .mesh import MeshGrid, build_phantom_mesh

__all__ = ["ExperimentState", "RoundRecord", "build_state", "run_round", "run_loop", "write_round_artifacts"]

log = logging.getLogger(__name__)

# Guard for relative pattern-change division.
CHANGE_DELTA = 1e-12


@dataclass
class RoundRecord:
    index: int
    pattern: illum.IlluminationPattern
    laser_count: int
    reconstruction: recon.FluorescenceImage
    report: metrics.MetricsReport
    next_pattern: illum.IlluminationPattern
    pattern_change: float           # vs previous round's pattern
    wall_time_s: float


@dataclass
class ExperimentState:
    config: RunConfig
    mesh: MeshGrid
    medium: fem.OpticalMedium
    S_e: fem.SystemMatrix
    S_f: fem.SystemMatrix
    detector: forward.DetectorPlane
    gamma: "object"                 # sparse M x N transport matrix
    G: np.ndarray                   # cached adjoint detector fields (N, M)
    C_true: np.ndarray
    pattern: illum.IlluminationPattern
    records: list = field(default_factory=list)


def ground_truth(mesh: MeshGrid, inclusions) -> np.ndarray:
    """Nodal fluorescence truth from axis-aligned inclusion boxes."""
    C = np.zeros(mesh.n_nodes)
    for box in inclusions:
        lo = np.asarray(box.min_corner, dtype=float)
        hi = np.asarray(box.max_corner, dtype=float)
        inside = np.all((mesh.node_coords >= lo - 1e-9) & (mesh.node_coords <= hi + 1e-9), axis=1)
        C[inside] = box.intensity
    return C


def initial_pattern(mesh: MeshGrid, lasers) -> illum.IlluminationPattern:
    """Snap the configured laser grid to the nearest top-face nodes."""
    top = np.nonzero(mesh.illum_allowed)[0]
    top_xy = mesh.node_coords[top, :2]
    sigma = np.zeros(mesh.n_nodes)
    cx, cy = lasers.grid_center
    for iy in range(lasers.ny):
        for ix in range(lasers.nx):
            x = cx + (ix - (lasers.nx - 1) / 2.0) * lasers.pitch_mm
            y = cy + (iy - (lasers.ny - 1) / 2.0) * lasers.pitch_mm
            node = top[np.argmin((top_xy[:, 0] - x) ** 2 + (top_xy[:, 1] - y) ** 2)]
            sigma[node] = min(sigma[node] + lasers.power, lasers.p_max)
    return illum.IlluminationPattern(sigma=sigma, support=top, p_max=lasers.p_max,
                                     L_max=lasers.L_max)


def build_state(cfg: RunConfig) -> ExperimentState:
    mesh = build_phantom_mesh(cfg.phantom.dims_mm, cfg.phantom.spacing_mm)
    medium = fem.OpticalMedium.homogeneous(
        mesh.n_nodes, cfg.phantom.mu_a, cfg.phantom.mu_s,
        g=cfg.phantom.g, zeta=cfg.phantom.zeta, eta=cfg.phantom.eta,
    )
    S = fem.assemble_system(mesh, medium)
    det = forward.DetectorPlane(
        rows=cfg.detector.rows, cols=cfg.detector.cols, pitch=cfg.detector.pitch_mm,
        height=cfg.detector.height_mm,
        center=(cfg.phantom.dims_mm[0] / 2.0, cfg.phantom.dims_mm[1] / 2.0),
    )
    gamma = forward.build_gamma(mesh, det)
    # Excitation and emission share the homogeneous medium, so one assembly
    # serves both wavelengths; the adjoint fields are pattern-independent.
    G = jacobian.adjoint_detector_fields(S, gamma)
    return ExperimentState(
        config=cfg, mesh=mesh, medium=medium, S_e=S, S_f=S, detector=det,
        gamma=gamma, G=G, C_true=ground_truth(mesh, cfg.inclusions),
        pattern=initial_pattern(mesh, cfg.lasers),
    )


def synthesize(state: ExperimentState, pattern: illum.IlluminationPattern):
    """Excitation fields and noisy Born measurements for one pattern."""
    cfg = state.config
    sources = illum.split_pattern(pattern)
    Q = np.stack([fem.point_source_load(state.mesh.n_nodes, int(np.nonzero(q)[0][0]),
                                        q.max(), state.medium.zeta)
                  for q in sources], axis=1)
    Phi_E = forward.excitation_fields(state.S_e, Q)
    Q_f = forward.emission_source(state.C_true, Phi_E, state.medium.eta)
    Phi_F = state.S_f.solve(Q_f)
    ms = forward.born_measurements(state.gamma, Phi_E, Phi_F)
    ms = forward.add_noise(ms, cfg.noise.model, cfg.noise.sigma_rel, cfg.noise.seed)
    return Phi_E, ms


def run_round(state: ExperimentState, C_override: np.ndarray | None = None) -> RoundRecord:
    """One loop round: measure, reconstruct, design the next pattern.

    C_override skips FISTA and designs directly from the given distribution
    (used for oracle checks)."""
    cfg = state.config
    t0 = time.perf_counter()
    index = len(state.records)
    pattern = state.pattern

    Phi_E, ms = synthesize(state, pattern)
    y, _ = ms.stacked()

    if C_override is not None:
        image = recon.FluorescenceImage(C=np.asarray(C_override, dtype=float))
    else:
        W = jacobian.assemble_W(state.G, Phi_E, ms, state.medium.eta)
        rcfg = recon.ReconConfig(lam=cfg.recon.lam, alpha=cfg.recon.alpha,
                                 max_iters=cfg.recon.max_iters, tol=cfg.recon.tol)
        image = recon.fista(W.W, y, rcfg)

    support = np.nonzero(state.mesh.illum_allowed)[0]
    V = design.assemble_V(state.S_e, state.S_f, state.gamma, image.C, Phi_E,
                          state.medium.eta, support, ms=ms, G=state.G)
    Vt, Yt = design.extend_system(V.V, y, cfg.illum.gamma_interior)
    rw = illum.ReweightConfig(mu=cfg.illum.mu, epsilon=cfg.illum.epsilon,
                              outer_iters=cfg.illum.outer_iters, sweeps=cfg.illum.sweeps,
                              tol=cfg.illum.tol, p_max=cfg.lasers.p_max)
    next_pattern = illum.reweighted_l1(Vt, Yt, rw, pattern.sigma[support], support,
                                       n_nodes=state.mesh.n_nodes)
    if next_pattern.warn_all_zero:
        log.warning("round %d designed an empty pattern (mu too large)", index)
    if cfg.lasers.L_max and next_pattern.nnz > cfg.lasers.L_max:
        log.warning("round %d designed %d lasers, above the target bound %d",
                    index, next_pattern.nnz, cfg.lasers.L_max)

    report = metrics.evaluate(image.C, state.C_true)
    prev = state.records[-1].pattern.sigma if state.records else pattern.sigma
    change = np.linalg.norm(pattern.sigma - prev) / max(np.linalg.norm(prev), CHANGE_DELTA)
    record = RoundRecord(
        index=index, pattern=pattern, laser_count=pattern.nnz,
        reconstruction=image, report=report, next_pattern=next_pattern,
        pattern_change=change, wall_time_s=time.perf_counter() - t0,
    )
    state.records.append(record)
    state.pattern = next_pattern
    return record


def run_loop(cfg_or_state, rounds_max: int | None = None,
             stop_tol: float | None = None) -> list[RoundRecord]:
    """Iterate run_round until the designed pattern stops changing or the
    round budget is reached. Partial records survive a mid-loop failure."""
    state = cfg_or_state if isinstance(cfg_or_state, ExperimentState) else build_state(cfg_or_state)
    cfg = state.config
    rounds_max = cfg.loop.rounds_max if rounds_max is None else rounds_max
    stop_tol = cfg.loop.stop_tol if stop_tol is None else stop_tol
    for _ in range(rounds_max):
        record = run_round(state)
        if record.next_pattern.warn_all_zero:
            log.warning("stopping loop: designed pattern is empty")
            break
        delta = np.linalg.norm(record.next_pattern.sigma - record.pattern.sigma)
        rel = delta / max(np.linalg.norm(record.pattern.sigma), CHANGE_DELTA)
        if rel < stop_tol:
            log.info("pattern stabilized after round %d (rel change %.2e)", record.index, rel)
            break
    return state.records


def write_round_artifacts(state: ExperimentState, record: RoundRecord, out_dir) -> None:
    cfg = state.config
    os.makedirs(out_dir, exist_ok=True)
    tag = f"round{record.index:02d}"
    illum.export_pattern_csv(record.pattern, state.mesh.node_coords,
                             os.path.join(out_dir, f"{tag}_pattern.csv"))
    io.export_field_csv(state.mesh, record.reconstruction.C,
                        os.path.join(out_dir, f"{tag}_recon.csv"))
    io.export_slices(state.mesh, record.reconstruction.C, cfg.output.slice_axes,
                     cfg.output.slice_coords, os.path.join(out_dir, tag))
    record.report.to_json(os.path.join(out_dir, f"{tag}_metrics.json"))


def write_loop_summary(records: list[RoundRecord], out_dir) -> None:
    summary = {
        "rounds": [
            {
                "index": r.index,
                "laser_count": r.laser_count,
                "pattern_change": r.pattern_change,
                "wall_time_s": r.wall_time_s,
                "metrics": {"mse": r.report.mse, "dice": r.report.dice,
                            "vr": r.report.vr, "snr_db": r.report.snr_db},
            }
            for r in records
        ],
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(os.path.join(out_dir, "loop_summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
