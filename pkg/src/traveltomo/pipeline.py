"""Staged pipeline: phantom -> forward -> noise -> project -> reconstruct -> evaluate -> export.

Every stage writes into ``<workdir>/<stage>/`` together with a ``manifest.txt``
recording the settings digest it was produced with and the sha256 of each
output file.  A stage reads its predecessors' manifests, checks the digests
against the current configuration and the hashes against the files on disk,
and refuses to run on any mismatch.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .basis import build_basis
from .config import STAGE_KEYS, PipelineConfig, dump_config, format_value
from .dataprep import ProjectedData, prepare
from .forward import FACES, ExtendedGrid, SourceLine, TravelTimeData, add_noise, simulate
from .grid import GridSpec
from .inversion import InversionProblem, initialize_W, minimize
from .io import (FormatError, ensure_dir, read_f3d, read_manifest, sha256_file, write_f3d,
                 write_manifest, write_vtk)
from .metrics import Metrics, evaluate
from .phantoms import PhantomSpec, letter_spec, make_phantom, phantom_m, validate

log = logging.getLogger(__name__)

STAGES = ("phantom", "forward", "noise", "project", "reconstruct", "evaluate", "export")
REQUIRES = {
    "phantom": (),
    "forward": ("phantom",),
    "noise": ("forward",),
    "project": ("noise",),
    "reconstruct": ("project",),
    "evaluate": ("phantom", "reconstruct"),
    "export": ("phantom", "reconstruct"),
}
MANIFEST = "manifest.txt"
SWEEP_PARAMS = ("lambda", "N")
PROJECTED_FIELDS = ("G_top", "Gx_top", "Gy_top", "Gtilde")


class StageError(RuntimeError):
    """A stage cannot run: missing, corrupt or mismatched upstream artifacts."""


# ----------------------------------------------------------------- manifests
def stage_dir(workdir, stage: str) -> Path:
    return Path(workdir) / stage


def _write_stage_manifest(workdir, stage, cfg: PipelineConfig, outputs, extra=None):
    d = stage_dir(workdir, stage)
    entries = {
        "stage": stage,
        "version": __version__,
        "config_digest": cfg.digest(STAGE_KEYS[stage]),
    }
    for dep in REQUIRES[stage]:
        entries[f"input.{dep}/{MANIFEST}"] = sha256_file(stage_dir(workdir, dep) / MANIFEST)
    for name in outputs:
        entries[f"output.{name}"] = sha256_file(d / name)
    entries.update(extra or {})
    write_manifest(d / MANIFEST, entries)


def check_stage(workdir, stage: str, cfg: PipelineConfig, verify_files: bool = True) -> dict:
    """Load and validate the manifest of a finished stage."""
    path = stage_dir(workdir, stage) / MANIFEST
    if not path.is_file():
        raise StageError(f"stage '{stage}' has not been run: {path} is missing")
    try:
        man = read_manifest(path)
    except FormatError as exc:
        raise StageError(f"stage '{stage}': corrupt manifest ({exc})") from exc
    if man.get("stage") != stage or "config_digest" not in man:
        raise StageError(f"stage '{stage}': corrupt manifest {path}")
    want = cfg.digest(STAGE_KEYS[stage])
    if man["config_digest"] != want:
        raise StageError(f"stage '{stage}' was produced with a different configuration; "
                         f"rerun '{stage}' or use the matching config")
    if verify_files:
        for key, digest in man.items():
            if not key.startswith("output."):
                continue
            f = stage_dir(workdir, stage) / key[len("output."):]
            if not f.is_file():
                raise StageError(f"stage '{stage}': output {f} is missing")
            if sha256_file(f) != digest:
                raise StageError(f"stage '{stage}': output {f} does not match its manifest hash")
    return man


def _require(workdir, stage, cfg):
    return {dep: check_stage(workdir, dep, cfg) for dep in REQUIRES[stage]}


# ------------------------------------------------------------- in-memory core
def phantom_spec(cfg: PipelineConfig) -> PhantomSpec:
    if cfg.phantom == "ball":
        return PhantomSpec(kind="ball", n_inclusion=cfg.n_inclusion,
                           center=(cfg.ball_x, cfg.ball_y, cfg.ball_z),
                           radius=cfg.ball_radius, smoothing=cfg.smoothing)
    return letter_spec(cfg.phantom, n_inclusion=cfg.n_inclusion,
                       z_extent=(cfg.letter_z0, cfg.letter_z1), smoothing=cfg.smoothing)


def forward_grid(cfg: PipelineConfig) -> ExtendedGrid:
    return ExtendedGrid.around(cfg.grid(), cfg.forward_step, cfg.forward_pad)


def source_line(cfg: PipelineConfig) -> SourceLine:
    return SourceLine(cfg.a, cfg.b, cfg.d, cfg.z0, cfg.sources)


def true_n(cfg: PipelineConfig) -> np.ndarray:
    """Refractive index of the phantom on the inversion grid."""
    return np.sqrt(make_phantom(phantom_spec(cfg), cfg.grid()).values)


def phantom_on_forward_grid(cfg: PipelineConfig) -> np.ndarray:
    ps = phantom_spec(cfg)
    validate(ps, cfg.grid())
    return phantom_m(ps, *forward_grid(cfg).mesh())


def simulate_data(cfg: PipelineConfig, m_forward: np.ndarray,
                  threads: int | None = None) -> TravelTimeData:
    return simulate(m_forward, forward_grid(cfg), cfg.grid(), source_line(cfg),
                    cfg.detector_step, threads=threads)


def noisy_data(cfg: PipelineConfig, clean: TravelTimeData) -> TravelTimeData:
    return add_noise(clean, cfg.delta, cfg.seed, per_detector=cfg.noise_mode == "per_detector")


def project_data(cfg: PipelineConfig, data: TravelTimeData) -> ProjectedData:
    return prepare(data, cfg.grid(), build_basis(cfg.N, cfg.a, cfg.b), cfg.alpha_rule)


def reconstruct_data(cfg: PipelineConfig, pd: ProjectedData, callback=None):
    problem = InversionProblem(pd, lam=cfg.lam, beta=cfg.beta, u_floor=cfg.u_floor,
                               grad_tol=cfg.grad_tol, max_iter=cfg.max_iter)
    W0 = initialize_W(pd.spec, pd.basis, pd)
    return minimize(problem, W0, method=cfg.method, step0=cfg.step0, callback=callback)


def score(cfg: PipelineConfig, n_comp: np.ndarray, n_true: np.ndarray,
          J_final=float("nan"), iterations=0) -> Metrics:
    spec = cfg.grid()
    return evaluate(n_comp, n_true, (spec.x, spec.y, spec.z), J_final, iterations)


# -------------------------------------------------------------- bundle files
def _face_file(s: int, face: str) -> str:
    return f"src{s:03d}_{face}.f3d"


def write_bundle(directory, data: TravelTimeData, step: float) -> list:
    names = []
    for s in range(data.source_line.count):
        for face in FACES:
            name = _face_file(s, face)
            write_f3d(Path(directory) / name, data.faces[face][s][:, :, None], (step, step, 1.0))
            names.append(name)
    return names


def _bundle_entries(data: TravelTimeData) -> dict:
    sl = data.source_line
    return {
        "sources": sl.count, "source_a": sl.a, "source_b": sl.b, "source_d": sl.d,
        "source_z0": sl.z0, "source_alphas": sl.alphas, "detector_step": data.detector_step,
        "B": data.B, "rho": data.rho, "faces": " ".join(FACES),
        "noise_delta": float(data.noise["delta"]), "noise_seed": int(data.noise["seed"]),
        "noise_mode": data.noise["mode"],
    }


def read_bundle(directory, cfg: PipelineConfig) -> TravelTimeData:
    faces = {face: [] for face in FACES}
    for s in range(cfg.sources):
        for face in FACES:
            path = Path(directory) / _face_file(s, face)
            if not path.is_file():
                raise StageError(f"boundary bundle {directory} is incomplete: {path.name} missing")
            vals, _, _ = read_f3d(path)
            faces[face].append(vals[:, :, 0] if vals.ndim == 3 else vals)
    man = read_manifest(Path(directory) / MANIFEST)
    noise = {"delta": float(man.get("noise_delta", 0.0)), "seed": int(man.get("noise_seed", 0)),
             "mode": man.get("noise_mode", "none")}
    return TravelTimeData(source_line(cfg), cfg.detector_step, cfg.B, cfg.rho,
                          {k: np.stack(v) for k, v in faces.items()}, noise)


def _spacing(spec: GridSpec):
    return (spec.h, spec.h, spec.hz), (0.0, 0.0, spec.B)


def read_projected(directory, cfg: PipelineConfig) -> ProjectedData:
    spec = cfg.grid()
    vals = {name: read_f3d(Path(directory) / f"{name}.f3d")[0] for name in PROJECTED_FIELDS}
    for name in ("G_top", "Gx_top", "Gy_top"):
        vals[name] = vals[name][:, :, 0, :] if vals[name].ndim == 4 else vals[name][:, :, 0, None]
    Gt = vals["Gtilde"]
    if Gt.ndim == 3:
        Gt = Gt[..., None]
    return ProjectedData(spec=spec, basis=build_basis(cfg.N, cfg.a, cfg.b),
                         alphas=source_line(cfg).alphas, G_top=vals["G_top"],
                         Gx_top=vals["Gx_top"], Gy_top=vals["Gy_top"], Gtilde=Gt,
                         pinned=spec.pinned_mask(), rule=cfg.alpha_rule)


# -------------------------------------------------------------------- stages
def _prepare_dir(workdir, stage) -> Path:
    d = ensure_dir(stage_dir(workdir, stage))
    stale = d / MANIFEST
    if stale.exists():
        stale.unlink()
    return d


def run_phantom(cfg: PipelineConfig, workdir) -> Path:
    d = _prepare_dir(workdir, "phantom")
    eg = forward_grid(cfg)
    write_f3d(d / "m_forward.f3d", phantom_on_forward_grid(cfg), (eg.h,) * 3, eg.origin)
    spacing, origin = _spacing(cfg.grid())
    write_f3d(d / "n_true.f3d", true_n(cfg), spacing, origin)
    dump_config(cfg, Path(workdir) / "config.txt")
    _write_stage_manifest(workdir, "phantom", cfg, ["m_forward.f3d", "n_true.f3d"],
                          {"phantom": cfg.phantom, "forward_shape": eg.shape,
                           "forward_step": eg.h})
    return d


def run_forward(cfg: PipelineConfig, workdir, threads: int | None = None) -> Path:
    _require(workdir, "forward", cfg)
    m, _, _ = read_f3d(stage_dir(workdir, "phantom") / "m_forward.f3d")
    if m.shape != forward_grid(cfg).shape:
        raise StageError("stage 'phantom': forward-grid field has the wrong shape")
    d = _prepare_dir(workdir, "forward")
    data = simulate_data(cfg, m, threads)
    names = write_bundle(d, data, cfg.detector_step)
    _write_stage_manifest(workdir, "forward", cfg, names, _bundle_entries(data))
    return d


def run_noise(cfg: PipelineConfig, workdir) -> Path:
    _require(workdir, "noise", cfg)
    clean = read_bundle(stage_dir(workdir, "forward"), cfg)
    d = _prepare_dir(workdir, "noise")
    data = noisy_data(cfg, clean)
    names = write_bundle(d, data, cfg.detector_step)
    _write_stage_manifest(workdir, "noise", cfg, names, _bundle_entries(data))
    return d


def run_project(cfg: PipelineConfig, workdir) -> Path:
    _require(workdir, "project", cfg)
    data = read_bundle(stage_dir(workdir, "noise"), cfg)
    d = _prepare_dir(workdir, "project")
    pd = project_data(cfg, data)
    spacing, origin = _spacing(pd.spec)
    names = []
    for name in PROJECTED_FIELDS:
        vals = getattr(pd, name)
        if vals.ndim == 3:
            vals = vals[:, :, None, :]
        write_f3d(d / f"{name}.f3d", vals, spacing, origin)
        names.append(f"{name}.f3d")
    _write_stage_manifest(workdir, "project", cfg, names,
                          {"N": cfg.N, "a": cfg.a, "b": cfg.b, "nodes": pd.alphas.size,
                           "rule": pd.rule})
    return d


def run_reconstruct(cfg: PipelineConfig, workdir) -> Path:
    _require(workdir, "reconstruct", cfg)
    pd = read_projected(stage_dir(workdir, "project"), cfg)
    d = _prepare_dir(workdir, "reconstruct")
    res = reconstruct_data(cfg, pd)
    spacing, origin = _spacing(pd.spec)
    write_f3d(d / "W.f3d", res.W.values, spacing, origin)
    write_f3d(d / "m.f3d", res.m.values, spacing, origin)
    write_f3d(d / "n.f3d", res.n.values, spacing, origin)
    # wall-clock times are left out so the log is reproducible
    with open(d / "runlog.txt", "w") as fh:
        fh.write("# iteration J max|grad| step\n")
        for it, J, g, step, _ in res.J_history:
            fh.write(f"{it} {J!r} {g!r} {step!r}\n")
    last = res.J_history[-1]
    _write_stage_manifest(workdir, "reconstruct", cfg, ["W.f3d", "m.f3d", "n.f3d", "runlog.txt"],
                          {"J_final": float(last[1]), "iterations": int(last[0]),
                           "converged": res.converged, "message": res.message.replace("\n", " ")})
    return d


def write_metrics(path, metrics: Metrics) -> None:
    with open(path, "w") as fh:
        for key, val in metrics.as_dict().items():
            fh.write(f"{key} = {format_value(val)}\n")


def read_metrics(path) -> dict:
    out = {}
    for key, val in read_manifest(path).items():
        out[key] = int(val) if key == "iterations" else float(val)
    return out


def run_evaluate(cfg: PipelineConfig, workdir) -> Metrics:
    mans = _require(workdir, "evaluate", cfg)
    n_true, _, _ = read_f3d(stage_dir(workdir, "phantom") / "n_true.f3d")
    n_comp, _, _ = read_f3d(stage_dir(workdir, "reconstruct") / "n.f3d")
    rec = mans["reconstruct"]
    metrics = score(cfg, n_comp, n_true, float(rec["J_final"]), int(rec["iterations"]))
    d = _prepare_dir(workdir, "evaluate")
    write_metrics(d / "metrics.txt", metrics)
    _write_stage_manifest(workdir, "evaluate", cfg, ["metrics.txt"])
    return metrics


def mid_slices(values: np.ndarray) -> dict:
    i, j, l = (s // 2 for s in values.shape)
    return {"x": values[i, :, :], "y": values[:, j, :], "z": values[:, :, l]}


def run_export(cfg: PipelineConfig, workdir) -> Path:
    _require(workdir, "export", cfg)
    n_true, _, _ = read_f3d(stage_dir(workdir, "phantom") / "n_true.f3d")
    n_comp, _, _ = read_f3d(stage_dir(workdir, "reconstruct") / "n.f3d")
    spec = cfg.grid()
    spacing, origin = _spacing(spec)
    d = _prepare_dir(workdir, "export")
    names = ["n.vtk"]
    write_vtk(d / "n.vtk", {"n_computed": n_comp, "n_true": n_true}, spacing, origin)
    coords = {"x": (spec.x, "y", "z"), "y": (spec.x, "x", "z"), "z": (spec.z, "x", "y")}
    for label, field in (("computed", n_comp), ("true", n_true)):
        for axis, plane in mid_slices(field).items():
            where = coords[axis][0][len(coords[axis][0]) // 2]
            name = f"slice_{label}_{axis}.csv"
            rows, cols = coords[axis][1], coords[axis][2]
            header = f"n_{label} on {axis} = {where:.6g}; rows index {rows}, columns index {cols}"
            np.savetxt(d / name, plane, delimiter=",", fmt="%.10g", header=header)
            names.append(name)
    _write_stage_manifest(workdir, "export", cfg, names)
    return d


STAGE_FUNCS = {
    "phantom": run_phantom,
    "forward": run_forward,
    "noise": run_noise,
    "project": run_project,
    "reconstruct": run_reconstruct,
    "evaluate": run_evaluate,
    "export": run_export,
}


def run_all(cfg: PipelineConfig, workdir, stages=STAGES):
    out = None
    for stage in stages:
        log.info("stage %s", stage)
        out = STAGE_FUNCS[stage](cfg, workdir)
    return out


# --------------------------------------------------------------------- sweep
@dataclass
class SweepRow:
    value: float
    metrics: Metrics | None = None
    error: str = ""


def sweep(cfg: PipelineConfig, workdir, parameter: str, values) -> list:
    """Reconstruct once per value of ``lambda`` or ``N`` on the stored noisy data.

    Failures are recorded in the row and the sweep carries on.
    """
    if parameter not in SWEEP_PARAMS:
        raise ValueError(f"parameter must be one of {SWEEP_PARAMS}")
    values = list(values)
    rows: list = []
    if values:
        check_stage(workdir, "noise", cfg)
        check_stage(workdir, "phantom", cfg)
        data = read_bundle(stage_dir(workdir, "noise"), cfg)
        n_true, _, _ = read_f3d(stage_dir(workdir, "phantom") / "n_true.f3d")
    for v in values:
        try:
            if parameter == "lambda":
                run_cfg = cfg.replace(lam=float(v))
            else:
                if float(v) != int(v):
                    raise ValueError(f"N must be an integer, got {v}")
                run_cfg = cfg.replace(N=int(v))
            res = reconstruct_data(run_cfg, project_data(run_cfg, data))
            last = res.J_history[-1]
            rows.append(SweepRow(v, score(run_cfg, res.n.values, n_true, last[1], last[0])))
        except Exception as exc:  # noqa: BLE001 - recorded in the table
            log.warning("sweep %s=%s failed: %s", parameter, v, exc)
            rows.append(SweepRow(v, None, f"{type(exc).__name__}: {exc}"))
    write_sweep_table(Path(ensure_dir(workdir)) / f"sweep_{parameter}.txt", parameter, rows)
    return rows


SWEEP_COLUMNS = ("computed_contrast", "rel_L2_error", "centroid_error", "dice",
                 "background_error", "J_final", "iterations")


def format_sweep_table(parameter: str, rows) -> str:
    lines = ["\t".join((parameter,) + SWEEP_COLUMNS + ("status",))]
    for row in rows:
        if row.metrics is None:
            cells = ["nan"] * len(SWEEP_COLUMNS) + [f"failed: {row.error}"]
        else:
            d = row.metrics.as_dict()
            cells = [("%d" % d[c]) if c == "iterations" else ("%.6g" % d[c]) for c in SWEEP_COLUMNS]
            cells.append("ok")
        lines.append("\t".join([format_value(row.value)] + cells))
    return "\n".join(lines) + "\n"


def write_sweep_table(path, parameter: str, rows) -> None:
    Path(path).write_text(format_sweep_table(parameter, rows))


def parse_sweep_values(text: str) -> list:
    text = text.strip()
    if not text:
        return []
    out = []
    for tok in text.replace(",", " ").split():
        v = float(tok)
        if not math.isfinite(v):
            raise ValueError(f"sweep value {tok!r} is not finite")
        out.append(int(v) if v.is_integer() and "." not in tok and "e" not in tok.lower() else v)
    return out

