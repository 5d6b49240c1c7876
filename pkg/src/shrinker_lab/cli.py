"""Command-line runner: ``shrinker-lab <subcommand> --config run.yaml``.

Every run validates the whole config before computing anything, writes its
results under the output directory and finishes with ``manifest.json``.
Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
import pydantic
import scipy
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import __version__
from . import barriers as bar
from .errors import NumericalError, ShrinkerLabError, ValidationError
from .flow import BoxSpec, ForcingSpec, PROFILE_OFF, evolve_until_exit, trajectory_rows
from .geometry import (
    CYLINDER,
    GAUSSIAN,
    ROUNDED_CONE,
    Background,
    make_cylinder,
    make_gaussian,
    make_rounded_cone,
    soliton_residuals,
    uniform_grid,
)
from .operator import assemble, spectrum
from .shooting import ShootConfig, ShootContext, find_p_star, initial_data, p_sweep, verify_waz_box

SUBCOMMANDS = ("background", "spectrum", "flow", "barrier", "shoot", "all")
ENV_OUT = "SHRINKER_LAB_OUT"


# ------------------------------------------------------------------ schema


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Strict):
    r_max: float = Field(gt=0)
    N: int = Field(ge=5)
    # default: 0 for the Gaussian, -r_max for the cylinder
    r_min: Optional[float] = None


class BackgroundConfig(_Strict):
    kind: Literal["Gaussian", "RoundCylinder", "RoundedCone"]
    n: Optional[int] = Field(default=None, ge=2)
    k: Optional[int] = Field(default=None, ge=2)
    c_link: Optional[float] = None
    R1: Optional[float] = Field(default=None, gt=0)
    grid: GridConfig

    @model_validator(mode="after")
    def _needs(self):
        if self.kind == GAUSSIAN and self.n is None:
            raise ValueError("Gaussian background needs n")
        if self.kind == CYLINDER and self.k is None:
            raise ValueError("RoundCylinder background needs k")
        if self.kind == ROUNDED_CONE and (self.c_link is None or self.R1 is None):
            raise ValueError("RoundedCone background needs c_link and R1")
        return self


class OperatorConfig(_Strict):
    m_modes: int = Field(default=8, ge=1)
    lambda_star: float = Field(default=-0.25, lt=0)


class ForcingConfig(_Strict):
    C0: float = Field(default=0.0, ge=0)
    Gamma0: float = Field(default=100.0, gt=1)
    profile: Literal["Off", "AngularBump"] = PROFILE_OFF


class FlowConfig(_Strict):
    dtau: float = Field(default=0.02, gt=0)
    tau0: float = 4.0
    tau_max: float = 24.0
    nonlinear: bool = True
    forcing: ForcingConfig = ForcingConfig()
    # initial coefficients on the top eigenmodes for the `flow` subcommand
    p: List[float] = []

    @model_validator(mode="after")
    def _order(self):
        if not self.tau0 < self.tau_max:
            raise ValueError("need tau0 < tau_max")
        return self


class BoxConfig(_Strict):
    mu_u: float = Field(default=1e-2, gt=0, le=1)
    mu_s: float = Field(default=1e-2, gt=0, le=1)
    eps0: float = Field(default=5e-2, gt=0, le=1)
    eps1: float = Field(default=5e-2, gt=0, le=1)
    eps2: float = Field(default=5e-2, gt=0, le=1)


class SweepConfig(_Strict):
    coordinate: int = Field(default=0, ge=0)
    values: List[float]


class ShootingConfig(_Strict):
    p_bar: float = Field(default=0.05, gt=0, le=1)
    gamma0: float = Field(default=0.5, gt=0, lt=1)
    K_active: int = Field(default=1, ge=1)
    sweep: Optional[SweepConfig] = None


class GlueConfig(_Strict):
    C1: float = 1.0
    delta: float = Field(default=1e-2, gt=0)
    C0: float = Field(default=1.0, ge=0)
    tau_scan: Tuple[float, float, float] = (25.0, 33.0, 0.25)


class BarrierConfig(_Strict):
    kind: Literal["Intermediate", "Large"]
    Cn: float = Field(default=4.0, gt=0)
    eps: float = Field(default=0.01, ge=0)
    Gamma: float = Field(default=50.0, gt=0)
    gamma: float = Field(default=0.01, gt=0)
    tau_window: Tuple[float, float] = (5.0, 10.0)
    tau_samples: int = Field(default=51, ge=1)
    A: float = 1.0
    B: float = 3.0
    kappa: float = 0.5
    omega: float = 1.0
    a: float = 1e-4
    B1: float = 1.0
    C0: float = 1.0
    # barriers need a much longer radial range than the spectral runs
    grid: Optional[GridConfig] = None
    glue: Optional[GlueConfig] = None

    def params(self) -> bar.BarrierParams:
        d = self.model_dump(exclude={"tau_samples", "grid", "glue"})
        return bar.BarrierParams(**d)


class OutputConfig(_Strict):
    dir: str = "out"
    stride: int = Field(default=1, ge=1)
    formats: List[Literal["csv", "json"]] = ["csv", "json"]


class ScenarioConfig(_Strict):
    background: BackgroundConfig
    operator: OperatorConfig = OperatorConfig()
    flow: FlowConfig = FlowConfig()
    box: BoxConfig = BoxConfig()
    shooting: Optional[ShootingConfig] = None
    barriers: Optional[BarrierConfig] = None
    output: OutputConfig = OutputConfig()

    def box_spec(self) -> BoxSpec:
        b = self.box
        return BoxSpec(self.operator.lambda_star, b.mu_u, b.mu_s, b.eps0, b.eps1, b.eps2, self.flow.tau0, self.flow.tau_max)

    def forcing_spec(self) -> ForcingSpec:
        f = self.flow.forcing
        return ForcingSpec(f.C0, f.Gamma0, f.profile)


def parse_config(text: str) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError("config must be a mapping")
    try:
        return ScenarioConfig.model_validate(data)
    except pydantic.ValidationError as exc:
        raise ValidationError(str(exc)) from exc


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True)


def config_hash(cfg: ScenarioConfig) -> str:
    canon = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# ------------------------------------------------------------------ emission


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows) -> Path:
    lines = ["# columns: " + ",".join(columns)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


class Emitter:
    def __init__(self, out: Path, formats: Sequence[str]):
        self.out = out
        self.formats = set(formats)
        self.files: List[str] = []
        self.summary: dict = {}

    def csv(self, name: str, columns, rows) -> None:
        if "csv" in self.formats:
            self.files.append(write_csv(self.out / name, columns, rows).name)

    def json(self, name: str, obj) -> None:
        if "json" in self.formats:
            self.files.append(write_json(self.out / name, obj).name)


# ------------------------------------------------------------------ pipelines


def build_background(cfg: BackgroundConfig, grid: Optional[GridConfig] = None) -> Background:
    g = grid or cfg.grid
    if cfg.kind == GAUSSIAN:
        return make_gaussian(cfg.n, uniform_grid(0.0 if g.r_min is None else g.r_min, g.r_max, g.N))
    if cfg.kind == CYLINDER:
        return make_cylinder(cfg.k, uniform_grid(-g.r_max if g.r_min is None else g.r_min, g.r_max, g.N))
    r_min = g.r_min if g.r_min is not None else g.r_max / (g.N - 1)
    return make_rounded_cone(cfg.c_link, cfg.R1, uniform_grid(r_min, g.r_max, g.N), n=cfg.n or 3)


class Context:
    """Lazily built background, operator and spectrum shared by the pipelines."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self._bg = self._opm = self._dec = None

    @property
    def bg(self) -> Background:
        if self._bg is None:
            self._bg = build_background(self.cfg.background)
        return self._bg

    @property
    def opm(self):
        if self._opm is None:
            self._opm = assemble(self.bg)
        return self._opm

    @property
    def dec(self):
        if self._dec is None:
            op = self.cfg.operator
            self._dec = spectrum(self.opm, self.bg, op.m_modes, op.lambda_star)
        return self._dec


def run_background(ctx: Context, em: Emitter) -> str:
    bg = ctx.bg
    cols = ["r", "psi", "psi1", "psi2", "K_rad", "K_sph", "R", "rm_norm"]
    arrays = [bg.nodes, bg.psi, bg.psi1, bg.psi2, bg.K_rad, bg.K_sph, bg.R, bg.rm_norm]
    if bg.f is not None:
        cols += ["f", "f1"]
        arrays += [bg.f, bg.f1]
    stride = ctx.cfg.output.stride
    em.csv("background.csv", cols, zip(*(a[::stride] for a in arrays)))
    info = {"kind": bg.kind, "dim": bg.dim, "params": bg.params, "nodes": bg.grid.size}
    if bg.is_soliton:
        res = soliton_residuals(bg)
        info["soliton_residuals"] = {"soliton_equation": res[0], "gradient_identity": res[1], "trace_identity": res[2]}
    em.json("background.json", info)
    return f"background {bg.kind} on {bg.grid.size} nodes"


def run_spectrum(ctx: Context, em: Emitter) -> str:
    dec = ctx.dec
    em.json("spectrum.json", dec.to_json())
    em.summary["eigenvalues"] = [float(v) for v in dec.eigenvalues]
    cols = ["r"] + [f"{p}_{j}" for j in range(len(dec.eigenfields)) for p in ("a", "b")]
    arrays = [ctx.bg.nodes] + [x for e in dec.eigenfields for x in (e.a, e.b)]
    stride = ctx.cfg.output.stride
    em.csv("eigenfields.csv", cols, zip(*(a[::stride] for a in arrays)))
    return "eigenvalues " + ", ".join("%.6g" % v for v in dec.eigenvalues)


TRAJ_COLS = ["tau", "l2f", "l2f_u", "l2f_s", "c0", "c1", "c2", "status"]


def run_flow(ctx: Context, em: Emitter) -> str:
    cfg = ctx.cfg
    box = cfg.box_spec()
    gamma0 = cfg.shooting.gamma0 if cfg.shooting else ShootingConfig().gamma0
    h0 = initial_data(cfg.flow.p, ctx.dec, ctx.bg, gamma0, box.tau0)
    res = evolve_until_exit(
        h0, box, ctx.bg, ctx.opm, ctx.dec, cfg.forcing_spec(), cfg.flow.dtau, cfg.output.stride, cfg.flow.nonlinear
    )
    em.csv("trajectory.csv", TRAJ_COLS, trajectory_rows(res.trajectory))
    em.json("flow.json", {"exit": res.exit.value, "tau_exit": res.tau_exit, "samples": len(res.trajectory)})
    em.summary["flow"] = {"exit": res.exit.value, "tau_exit": res.tau_exit}
    return f"flow {res.exit.value} at tau={res.tau_exit:.6g}"


def run_barrier(ctx: Context, em: Emitter, falsify: bool) -> Tuple[str, int]:
    bc = ctx.cfg.barriers
    if bc is None:
        raise ValidationError("config has no barriers section")
    bg = build_background(ctx.cfg.background, bc.grid) if bc.grid else ctx.bg
    p = bc.params()
    taus = np.linspace(p.tau_window[0], p.tau_window[1], bc.tau_samples)
    fn = bar.intermediate_defect if p.kind == bar.INTERMEDIATE else bar.large_defect
    rep = fn(bg, p, taus, falsify=falsify)
    out = rep.to_json()
    code, msg = 0, f"{p.kind} barrier min defect {rep.min_defect:.6g}"
    if rep.hypothesis_holds:
        if not rep.supersolution:
            out["verdict"] = "supersolution property fails despite the hypothesis"
            code = 2
        else:
            out["verdict"] = "supersolution verified"
    else:
        if rep.min_defect < 0:
            out["verdict"] = "falsified as expected"
        else:
            out["verdict"] = "hypothesis violated but no negative defect found"
            code = 2
    msg += f": {out['verdict']}"
    em.summary["barrier"] = {"min_defect": rep.min_defect, "verdict": out["verdict"]}
    if bc.glue is not None:
        g = bc.glue
        rec = bar.glue_recipe(bg, g.C1, g.delta, ctx.cfg.operator.lambda_star, g.C0, p.Cn)
        t0, t1, dt = g.tau_scan
        scan = np.arange(t0, t1 + 0.5 * dt, dt)
        checks, thr = bar.glue_tau_scan(bg, rec, scan)
        out["glue"] = {"recipe": rec.__dict__, "tau_threshold": thr}
        em.csv(
            "glue_scan.csv",
            ["tau", "f_plus", "f_minus", "gap_plus", "gap_minus", "holds"],
            [(c.tau, c.f_plus, c.f_minus, c.gap_plus, c.gap_minus, c.holds) for c in checks],
        )
    em.json("barrier.json", out)
    em.csv("barrier_per_tau.csv", ["tau", "min_defect", "r_argmin", "nodes"], rep.per_tau)
    em.csv("barrier_defect.csv", ["r", "tau", "defect"], bar.defect_rows(bg, p, taus, ctx.cfg.output.stride))
    return msg, code


def run_shoot(ctx: Context, em: Emitter, threads: int) -> str:
    cfg = ctx.cfg
    sc = cfg.shooting
    if sc is None:
        raise ValidationError("config has no shooting section")
    box = cfg.box_spec()
    scfg = ShootConfig(sc.p_bar, sc.gamma0, box, cfg.forcing_spec(), cfg.flow.dtau, sc.K_active, cfg.flow.nonlinear, cfg.output.stride)
    sctx = ShootContext(ctx.bg, ctx.opm, ctx.dec)
    if sc.K_active > ctx.dec.K:
        raise ValidationError("K_active exceeds the number of modes above lambda_star")
    if sc.sweep is not None:
        if sc.sweep.coordinate >= sc.K_active:
            raise ValidationError("sweep coordinate out of range")
        results = p_sweep(scfg, sctx, sc.sweep.values, sc.sweep.coordinate, threads)
        em.csv(
            "sweep.csv",
            ["p", "tau_exit", "exit"] + [f"F_{j}" for j in range(sc.K_active)],
            [(v, r.tau_exit, r.exit.value, *r.F) for v, r in zip(sc.sweep.values, results)],
        )
    res = find_p_star(scfg, sctx)
    waz = verify_waz_box(res.tuned.trajectory, ctx.dec, box, res.probes)
    out = res.to_json()
    out["waz_box"] = {"stable_ok": waz.stable_ok, "touches": waz.touches, "touches_outward": waz.touches_outward}
    em.json("shoot.json", out)
    em.csv("tuned_trajectory.csv", TRAJ_COLS, trajectory_rows(res.tuned.trajectory))
    em.summary["shoot"] = {"p_star": out["p_star"], "bracket_width": out["bracket_width"], "survived": out["survived"]}
    return "p_star " + ", ".join("%.6g" % v for v in res.p_star)


# ------------------------------------------------------------------ entry


def _output_dir(arg: Optional[str], cfg: ScenarioConfig) -> Path:
    return Path(arg or os.environ.get(ENV_OUT) or cfg.output.dir)


def _manifest(out: Path, sub: str, cfg: Optional[ScenarioConfig], code: int, msg: str, em: Emitter, t0: float) -> None:
    data = {
        "subcommand": sub,
        "exit_code": code,
        "message": msg,
        "config_sha256": config_hash(cfg) if cfg is not None else None,
        "versions": {
            "shrinker_lab": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pydantic": pydantic.VERSION,
            "python": platform.python_version(),
        },
        "wall_time_s": time.perf_counter() - t0,
        "outputs": sorted(em.files),
        "summary": em.summary,
    }
    write_json(out / "manifest.json", data)


def run(subcommand: str, config_path: str, falsify: bool = False, threads: int = 1, out: Optional[str] = None) -> int:
    t0 = time.perf_counter()
    cfg = None
    em = None
    try:
        if subcommand not in SUBCOMMANDS:
            raise ValidationError(f"unknown subcommand {subcommand!r}")
        if threads < 1:
            raise ValidationError("--threads must be at least 1")
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read config: {exc}") from exc
        cfg = parse_config(text)
        outdir = _output_dir(out, cfg)
        try:
            outdir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ValidationError(f"output directory not writable: {exc}") from exc
        em = Emitter(outdir, cfg.output.formats)
        ctx = Context(cfg)
        msgs, code = [], 0
        steps = [subcommand] if subcommand != "all" else ["background", "spectrum", "flow", "barrier", "shoot"]
        for s in steps:
            if subcommand == "all" and s == "barrier" and cfg.barriers is None:
                continue
            if subcommand == "all" and s == "shoot" and cfg.shooting is None:
                continue
            if s == "background":
                msgs.append(run_background(ctx, em))
            elif s == "spectrum":
                msgs.append(run_spectrum(ctx, em))
            elif s == "flow":
                msgs.append(run_flow(ctx, em))
            elif s == "barrier":
                m, c = run_barrier(ctx, em, falsify)
                msgs.append(m)
                code = max(code, c)
            else:
                msgs.append(run_shoot(ctx, em, threads))
        msg = "; ".join(msgs)
    except ValidationError as exc:
        code, msg = 1, f"invalid input: {exc}"
    except NumericalError as exc:
        code, msg = 2, f"numerical failure: {exc}"
    except OSError as exc:
        code, msg = 1, f"cannot write output: {exc}"
    except ShrinkerLabError as exc:
        code, msg = 2, str(exc)
    print(msg, file=sys.stderr if code else sys.stdout)
    try:
        if em is None:
            # the config never parsed, so only the flag or environment can name a directory
            fallback = out or os.environ.get(ENV_OUT)
            if fallback is None:
                return code
            em = Emitter(Path(fallback), ())
            em.out.mkdir(parents=True, exist_ok=True)
        _manifest(em.out, subcommand, cfg, code, msg, em, t0)
    except OSError:
        pass
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shrinker-lab", description="Desk-scale stability experiments on shrinking solitons.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="YAML scenario file")
    ap.add_argument("--falsify", action="store_true", help="evaluate barriers even when their hypothesis fails")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for p-sweeps")
    ap.add_argument("--out", default=None, help=f"output directory (overrides ${ENV_OUT} and the config)")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.subcommand, args.config, args.falsify, args.threads, args.out)


if __name__ == "__main__":
    sys.exit(main())
