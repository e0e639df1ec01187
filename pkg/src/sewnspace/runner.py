"""
Experiment runner: one method per command, each writing its artifacts under the output directory.
"""

import json
import math
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from mcp.server.fastmcp.utilities.logging import get_logger

from .config import COMMANDS, ConvergeConfig, ProbeConfig, PullConfig, RunConfig, SewConfig, TunnelConfig
from .errors import AcceptanceError, ParameterError
from .tools.convergence_lab import mm_convergence_table, pulled_string_space
from .tools.metric_core import (
    FiniteMetricSpace,
    PulledSpace,
    SphereSample,
    check_metric,
    load_space,
    sample_sphere3,
    save_space,
    scalar_probe,
)
from .tools.revolution_geometry import (
    DEFAULT_SMOOTH_FRACTION,
    DEFAULT_STEP_FRACTION,
    TunnelSurface,
    tube_volume,
    tunnel_summary,
)
from .tools.sewing_sim import build_sewn, edited_diameter, graph_fidelity, place_balls, sewn_volume_report
from .tools.tunnel_curve import (
    CURVE_CSV_HEADER,
    build_step_profile,
    integrate_curve,
    smooth_profile,
    verify_bend_condition,
)
from .utils.cache import ResultCache
from .utils.file_handler import FileHandler

logger = get_logger(__name__)

PROBE_CSV_HEADER = ("r", "ball_vol", "ratio", "scal_est")
CONVERGENCE_CSV_HEADER = ("j", "delta", "n", "h", "distortion", "gh_upper", "mass", "neck_area")
BALL_CSV_HEADER = ("r", "ball_vol", "tube_target")


class ExperimentRunner:
    """
    Drives the construction modules for the CLI and the MCP server.

    Sphere samples and pulled spaces are cached by their parameters so one
    process never samples the same space twice.
    """

    def __init__(self, cache: Optional[ResultCache] = None):
        """Initialize the runner with a result cache."""
        self.cache = cache or ResultCache(max_entries=8, max_age_seconds=3600)
        self.file_handler = FileHandler()

    def _sphere(self, N: int, K: float, seed: int) -> SphereSample:
        return self.cache.get_or_build("sphere", lambda: sample_sphere3(N, K, seed), N=N, K=K, seed=seed)

    def _pulled(self, cfg) -> Tuple[SphereSample, PulledSpace, float]:
        params = dict(N=cfg.N, K=cfg.K, seed=cfg.seed, string_nodes=cfg.string_nodes, a_tube_factor=cfg.a_tube_factor)
        return self.cache.get_or_build("pulled", lambda: pulled_string_space(**params), **params)

    def _out(self, config: RunConfig) -> Path:
        return self.file_handler.prepare_output_dir(config.out)

    @staticmethod
    def _accept(operation: str, result: Dict[str, Any], checks: Dict[str, bool]) -> Dict[str, Any]:
        result["acceptance"] = checks
        failed = [name for name, ok in checks.items() if not ok]
        if failed:
            raise AcceptanceError(f"{operation}: acceptance failed ({', '.join(failed)})", checks)
        return result

    def tunnel(self, config: RunConfig) -> Dict[str, Any]:
        """Build one tunnel curve; write curve.csv, profile.json and summary.json."""
        cfg: TunnelConfig = config.tunnel
        config_hash = cfg.config_hash()
        out = self._out(config)

        profile = build_step_profile(cfg.K, cfg.delta0, cfg.alpha_bend, cfg.tail_length)
        width = DEFAULT_SMOOTH_FRACTION * min(profile.lengths) if cfg.smooth_width is None else cfg.smooth_width
        profile = smooth_profile(profile, width)
        curve = integrate_curve(profile, cfg.step or cfg.delta0 * DEFAULT_STEP_FRACTION)
        tunnel = TunnelSurface(curve=curve, K=cfg.K, delta=cfg.outer_delta, delta0=cfg.delta0, profile=profile)
        summary = tunnel_summary(tunnel, cfg.epsilon, search=cfg.search_delta0)
        bend = verify_bend_condition(curve)

        meta = {"K": cfg.K, "delta0": cfg.delta0, "smooth": profile.is_smooth}
        files = [
            self.file_handler.write_csv(out / "curve.csv", CURVE_CSV_HEADER, curve.rows(), config_hash, meta),
            self.file_handler.write_json(out / "profile.json", profile.to_dict(), config_hash),
            self.file_handler.write_json(out / "summary.json", {
                **summary.to_dict(),
                "smooth": profile.is_smooth,
                "L": curve.L,
                "theta_end": float(curve.theta[-1]),
                "min_x1": float(np.min(curve.x1)),
                "n_samples": curve.n_samples,
                "n_steps": profile.n_steps,
                "max_contraction_ratio": max(profile.contraction_ratios, default=0.0),
                "arclength_defect": curve.arclength_defect(),
                "x0_increasing": curve.x0_strictly_increasing(),
            }, config_hash),
        ]
        result = {
            "success": True,
            "operation": "tunnel",
            "config_hash": config_hash,
            "files": [str(f) for f in files],
            "min_scal": summary.min_scal,
            "bend_margin": bend.min_margin,
            "smooth": profile.is_smooth,
            "vol_bound_ok": summary.vol_bound_ok,
        }
        return self._accept("tunnel", result, {
            "min_scal_positive": summary.min_scal > 0.0,
            "bend_margin_positive": bend.ok,
        })

    def sew(self, config: RunConfig) -> Dict[str, Any]:
        """Sew the sphere sample along C; write plan.json, volume.json and sewn.npz."""
        cfg: SewConfig = config.sew
        config_hash = cfg.config_hash()
        out = self._out(config)

        X, _, _ = self._pulled(cfg)
        plan = place_balls(X, cfg.n, cfg.delta, cfg.delta0, cfg.shell_width)
        s = build_sewn(X, plan, cfg.rho_connect, cfg.shell_nodes, cfg.workers)
        volume = sewn_volume_report(s, cfg.epsilon)
        diam = edited_diameter(s)
        fidelity = graph_fidelity(s, cfg.fidelity_pairs, cfg.seed)

        files = [
            self.file_handler.write_json(out / "plan.json", plan.to_dict(), config_hash),
            self.file_handler.write_json(out / "volume.json", {
                **volume.to_dict(),
                "edited_diameter": diam,
                "H_delta": plan.H_delta,
                "n_nodes": s.metric.n,
                "n_edges": s.n_edges,
                "graph_fidelity": fidelity,
            }, config_hash),
            save_space(s.metric, out / "sewn.npz", {"config_hash": config_hash, **plan.to_dict()}),
        ]
        result = {
            "success": True,
            "operation": "sew",
            "config_hash": config_hash,
            "files": [str(f) for f in files],
            "edited_diameter": diam,
            "H_delta": plan.H_delta,
            "epsilon_measured": volume.epsilon_measured,
        }
        checks = {"epsilon_within": volume.ok}
        if plan.n:
            checks["diameter_bound"] = diam <= plan.H_delta
        return self._accept("sew", result, checks)

    def pull(self, config: RunConfig) -> Dict[str, Any]:
        """Pull the great circle of a sample to p0; write pulled.json (and pulled.npz when small)."""
        cfg: PullConfig = config.pull
        config_hash = cfg.config_hash()
        out = self._out(config)

        X, Y, a_tube = self._pulled(cfg)
        check = check_metric(Y, n_triples=cfg.n_triples, seed=cfg.seed)
        positive_x = int(np.count_nonzero(X.weight > 0))
        positive_y = int(np.count_nonzero(Y.weight > 0))
        positive_removed = int(np.count_nonzero(X.weight[Y.K_idx] > 0))
        mass_ok = positive_y + positive_removed == positive_x and math.isclose(
            Y.total_weight + Y.removed_weight, X.total_weight, rel_tol=1e-12
        )

        files = [self.file_handler.write_json(out / "pulled.json", {
            "K_set": cfg.K_set,
            "n": Y.n,
            "p0_index": Y.p0_index,
            "p0_label": int(Y.labels[Y.p0_index]),
            "a_tube": a_tube,
            "pulled_size": int(len(Y.K_idx)),
            "mass_X": X.total_weight,
            "mass_Y": Y.total_weight,
            "removed_weight": Y.removed_weight,
            "mass_ok": mass_ok,
            "metric_check": asdict(check),
        }, config_hash)]
        if Y.n <= cfg.max_dense:
            meta = {"config_hash": config_hash, "p0_index": Y.p0_index, "a_tube": a_tube}
            files.append(save_space(Y, out / "pulled.npz", meta))

        result = {
            "success": True,
            "operation": "pull",
            "config_hash": config_hash,
            "files": [str(f) for f in files],
            "n": Y.n,
            "p0_index": Y.p0_index,
            "mass_ok": mass_ok,
        }
        return self._accept("pull", result, {"mass_bookkeeping": mass_ok, "metric_axioms": check.ok})

    def _probe_space(self, cfg: ProbeConfig) -> Tuple[FiniteMetricSpace, Optional[int]]:
        if cfg.space == "sphere":
            return self._sphere(cfg.N, cfg.K, cfg.seed), None
        if cfg.space == "pulled":
            _, Y, _ = self._pulled(cfg)
            return Y, Y.p0_index
        space, meta = load_space(cfg.space)
        return space, meta.get("p0_index")

    def probe(self, config: RunConfig) -> Dict[str, Any]:
        """Volume-ratio scalar-curvature probe; write probe.csv and probe.json."""
        cfg: ProbeConfig = config.probe
        config_hash = cfg.config_hash()
        out = self._out(config)

        X, p0 = self._probe_space(cfg)
        if cfg.at == "all":
            centers = np.flatnonzero(X.weight > 0)
            if cfg.max_centers is not None and len(centers) > cfg.max_centers:
                rng = np.random.Generator(np.random.Philox(cfg.seed))
                centers = np.sort(rng.choice(centers, cfg.max_centers, replace=False))
        elif cfg.at == "p0":
            if p0 is None:
                raise ParameterError(f"space '{cfg.space}' has no pulled point p0")
            centers = p0
        else:
            if not 0 <= cfg.at < X.n:
                raise ParameterError(f"probe index {cfg.at} out of range for {X.n} points")
            centers = cfg.at

        report = scalar_probe(X, centers, cfg.r, min_points=cfg.min_points)
        radii = report.radii
        v_e = report.euclidean_vol
        tube_ratio = (v_e - tube_volume(radii, X.curvature or 1.0)) / (radii ** 2 * v_e)

        meta = {"space": cfg.space, "at": cfg.at, "seed": cfg.seed, "N": cfg.N}
        files = [
            self.file_handler.write_csv(out / "probe.csv", PROBE_CSV_HEADER, report.rows(), config_hash, meta),
            self.file_handler.write_json(out / "probe.json", {
                "space": cfg.space,
                "at": cfg.at,
                "n_centers": report.n_centers,
                "r": radii.tolist(),
                "ball_vol": report.ball_vol.tolist(),
                "ratio": report.ratio.tolist(),
                "scal_est": report.scal_est.tolist(),
                "mean_points": report.counts.tolist(),
                "ratio_r3": (report.ratio * radii ** 3).tolist(),
                "tube_ratio_r3": (tube_ratio * radii ** 3).tolist(),
                "scal_est_mean": float(np.mean(report.scal_est)),
            }, config_hash),
        ]
        return {
            "success": True,
            "operation": "probe",
            "config_hash": config_hash,
            "files": [str(f) for f in files],
            "n_centers": report.n_centers,
            "scal_est": report.scal_est.tolist(),
        }

    def converge(self, config: RunConfig) -> Dict[str, Any]:
        """Run the sewing schedule; write convergence.csv, ball_vol_j*.csv and report.json."""
        cfg: ConvergeConfig = config.converge
        config_hash = cfg.config_hash()
        out = self._out(config)

        report = mm_convergence_table(
            cfg.schedule,
            cfg.r,
            N=cfg.N,
            seed=cfg.seed,
            K=cfg.K,
            shell_nodes=cfg.shell_nodes,
            rho_connect=cfg.rho_connect,
            epsilon=cfg.epsilon,
            lip_pairs=cfg.lip_pairs,
            workers=cfg.workers,
            spaces=self._pulled(cfg),
        )

        meta = {"seed": cfg.seed, "schedule": [list(step) for step in cfg.schedule]}
        files = [self.file_handler.write_csv(
            out / "convergence.csv", CONVERGENCE_CSV_HEADER, report.table_rows(), config_hash, meta
        )]
        for record in report.records:
            files.append(self.file_handler.write_csv(
                out / f"ball_vol_j{record.j}.csv", BALL_CSV_HEADER, report.ball_rows(record.j),
                config_hash, {**meta, "j": record.j, "p0_node": record.p0_node},
            ))
        files.append(self.file_handler.write_json(out / "report.json", report.to_dict(), config_hash))

        result = {
            "success": True,
            "operation": "converge",
            "config_hash": config_hash,
            "files": [str(f) for f in files],
            "distortions": report.distortions,
            **report.flags(),
        }
        checks = {"masses_ok": report.masses_ok}
        if len(report.records) > 1:
            checks["distortion_strictly_decreasing"] = report.distortion_strictly_decreasing
            checks["distortion_quartered"] = report.distortion_quartered
        return self._accept("converge", result, checks)

    def run(self, command: str, config: RunConfig) -> Dict[str, Any]:
        """Dispatch a command by name."""
        handler = getattr(self, command) if command in COMMANDS else None
        if handler is None:
            raise ParameterError(f"unknown command '{command}'")
        logger.info("running %s (config %s)", command, config.section(command).config_hash())
        return handler(config)

    def _format_result(self, result: Dict[str, Any]) -> str:
        """Format result as JSON string."""
        return json.dumps(result, ensure_ascii=False, indent=2, default=str)

    def _error_response(self, message: str, operation: str, exit_code: int, checks: Optional[Dict[str, bool]] = None) -> str:
        """Format error response."""
        body = {
            "success": False,
            "error": message,
            "operation": operation,
            "exit_code": exit_code,
        }
        if checks:
            body["acceptance"] = checks
        return json.dumps(body, ensure_ascii=False, indent=2)
