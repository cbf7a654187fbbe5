"""Batch driver: target generation, synthesis, verification, benchmarks.

Every run is reproducible from its config file plus seed; reports embed the
config and land in a fresh timestamped subdirectory, never overwriting
earlier runs.  Exit codes: 0 success, 2 usage, 3 planning, 4 solver /
fidelity floor, 5 I/O or parse, 6 internal consistency.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import click
import numpy as np

from . import __version__
from .backcast import (
    PlanPolicy,
    SolveSettings,
    forward_verify,
    plan_layers,
    result_from_json,
    result_to_json,
    synthesize,
)
from .errors import (
    ConsistencyError,
    ContractError,
    DegenerateHeraldError,
    FormatError,
    OqssError,
    PlanningError,
    SolverError,
)
from .fock import fock_from_text, fock_to_text, normalize, wigner_grid, wigner_grid_to_csv
from .gkp import GkpParams, gkp_coefficients, truncation_fidelity
from .hafnian import benchmark_hafnian, benchmark_rows_to_csv

EXIT_USAGE = 2
EXIT_PLANNING = 3
EXIT_SOLVER = 4
EXIT_IO = 5
EXIT_INTERNAL = 6


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _exit_code_for(exc: OqssError) -> int:
    if isinstance(exc, PlanningError):
        return EXIT_PLANNING
    if isinstance(exc, (SolverError, DegenerateHeraldError)):
        return EXIT_SOLVER
    if isinstance(exc, (FormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, ConsistencyError):
        return EXIT_INTERNAL
    return EXIT_USAGE


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        _fail(EXIT_IO, f"cannot read {path}: {exc}")


def _default_workers() -> int:
    env = os.environ.get("OQSS_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            _fail(EXIT_USAGE, f"OQSS_WORKERS must be an integer, got {env!r}")
    return os.cpu_count() or 1


@click.group()
@click.version_option(version=__version__, prog_name="oqss")
def main():
    """Synthesize linear-optical circuits for non-Gaussian Fock targets."""


# ---------------------------------------------------------------------------
# gkp-target
# ---------------------------------------------------------------------------


@main.command("gkp-target")
@click.option("--db", type=float, required=True, help="Squeezing level in dB.")
@click.option("--nmax", type=int, required=True, help="Fock cutoff of the emitted target.")
@click.option("--logical", type=click.Choice(["0", "1"]), default="0", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="-", show_default=True,
              help="Output file ('-' for stdout).")
def cmd_gkp_target(db: float, nmax: int, logical: str, out_path: str):
    """Emit the Fock coefficients of an approximate GKP codeword."""
    try:
        params = GkpParams(db, logical=int(logical))
        vector = gkp_coefficients(params, nmax)
        fid = truncation_fidelity(params, nmax)
    except OqssError as exc:
        _fail(_exit_code_for(exc), str(exc))
    text = fock_to_text(vector)
    if out_path == "-":
        click.echo(text, nl=False)
    else:
        Path(out_path).write_text(text)
    # keep stdout clean for the vector data when writing to '-'
    click.echo(f"truncation fidelity at n_max={nmax}: {fid:.6f}", err=(out_path == "-"))


# ---------------------------------------------------------------------------
# synthesize
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Parsed synthesis run configuration (one target spec, plan, solver)."""

    target_kind: str  # "gkp" | "fock-file"
    gkp: GkpParams | None
    gkp_n_max: int | None
    fock_path: str | None
    plan_n_max: int
    policy: PlanPolicy
    settings: SolveSettings
    output_dir: str
    fidelity_floor: float
    seed: int

    @classmethod
    def from_toml(cls, text: str, config_dir: Path) -> "RunConfig":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise FormatError(f"config is not valid TOML: {exc}") from exc

        target = raw.get("target", {})
        has_gkp = "db" in target
        has_file = "path" in target
        if has_gkp == has_file:
            raise FormatError("config must give exactly one target: [target] db=... or path=...")

        seed = int(raw.get("seed", 0))
        plan = raw.get("plan", {})
        if "n_max" not in plan:
            raise FormatError("config needs [plan] n_max")
        policy = PlanPolicy(
            leaf_inputs=int(plan.get("leaf_inputs", 3)),
            leaf_heralds=tuple(plan.get("leaf_heralds", (2, 2))),
            n_layers=int(plan["n_layers"]) if "n_layers" in plan else None,
        )
        opt = raw.get("optimizer", {})
        settings = SolveSettings(
            restarts=int(opt.get("restarts", 40)),
            max_evals=int(opt.get("max_evals", 3000)),
            tolerance=float(opt.get("tolerance", 1e-10)),
            seed=seed,
            workers=int(opt.get("workers", _default_workers())),
            r_max=float(opt.get("r_max", 2.0)),
            alpha_max=float(opt.get("alpha_max", 2.0)),
            interior_floor=float(opt.get("interior_floor", 0.999)),
            leaf_floor=float(opt.get("leaf_floor", 0.99)),
            probability_weight=float(opt.get("probability_weight", 0.01)),
        )
        out_dir = os.environ.get("OQSS_OUTPUT_DIR") or raw.get("output", {}).get("dir", "runs")
        fock_path = None
        if has_file:
            fock_path = str((config_dir / target["path"]).resolve())
        return cls(
            target_kind="gkp" if has_gkp else "fock-file",
            gkp=GkpParams(float(target["db"]), logical=int(target.get("logical", 0))) if has_gkp else None,
            gkp_n_max=int(target.get("n_max", plan["n_max"])) if has_gkp else None,
            fock_path=fock_path,
            plan_n_max=int(plan["n_max"]),
            policy=policy,
            settings=settings,
            output_dir=str(out_dir),
            fidelity_floor=float(raw.get("floors", {}).get("end_to_end", 0.99)),
            seed=seed,
        )

    def load_target(self):
        if self.target_kind == "gkp":
            return gkp_coefficients(self.gkp, self.gkp_n_max)
        vector = fock_from_text(Path(self.fock_path).read_text())
        if not vector.normalized:
            vector, _ = normalize(vector)
        return vector


def _run_directory(base: str, seed: int) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    root = Path(base)
    candidate = root / f"run-{stamp}-seed{seed}"
    counter = 1
    while candidate.exists():
        candidate = root / f"run-{stamp}-seed{seed}-{counter}"
        counter += 1
    candidate.mkdir(parents=True)
    return candidate


def _write_report(run_dir: Path, config_text: str, result, fid, p_suc, target_text: str, elapsed: float):
    (run_dir / "config.toml").write_text(config_text)
    (run_dir / "target.fv").write_text(target_text)
    (run_dir / "result.json").write_text(json.dumps(result_to_json(result), indent=2) + "\n")
    lines = [
        f"oqss {__version__} synthesis report",
        f"seed: {result.seed}",
        f"wall time: {elapsed:.1f} s",
        "",
    ]
    if result.complete:
        lines += [
            f"end-to-end fidelity (forward verified): {fid:.9f}",
            f"success probability (all heralds):      {p_suc:.6e}",
            f"success probability (first layer only): {result.p_success_first_layer:.6e}",
            "",
            "node table (layer, index): kind fidelity probability wall_s",
        ]
    else:
        lines += [f"FAILED at node {result.failed_node}: {result.failure_message}", ""]
    for node in result.nodes:
        prob = "-" if node.herald_probability is None else f"{node.herald_probability:.3e}"
        lines.append(
            f"  ({node.layer}, {node.index}): {node.kind:5s} "
            f"{node.local_fidelity:.6f} {prob} {node.wall_time_s:.1f}"
        )
    (run_dir / "report.txt").write_text("\n".join(lines) + "\n")


@main.command("synthesize")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
def cmd_synthesize(config_path: str):
    """Run the full plan/split/solve/verify pipeline from a TOML config."""
    config_text = _read_text(config_path)
    try:
        config = RunConfig.from_toml(config_text, Path(config_path).resolve().parent)
        target = config.load_target()
        plan = plan_layers(config.plan_n_max, config.policy)
    except OqssError as exc:
        _fail(_exit_code_for(exc), str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))

    t0 = time.perf_counter()
    try:
        result = synthesize(target, plan, config.settings)
    except OqssError as exc:
        _fail(_exit_code_for(exc), str(exc))
    run_dir = _run_directory(config.output_dir, config.seed)

    if not result.complete:
        _write_report(run_dir, config_text, result, None, None, fock_to_text(target), time.perf_counter() - t0)
        _fail(EXIT_SOLVER, f"synthesis failed at node {result.failed_node}: "
                           f"{result.failure_message} (report in {run_dir})")
    try:
        fid, p_suc = forward_verify(result, target)
    except ConsistencyError as exc:
        _fail(EXIT_INTERNAL, str(exc))
    _write_report(run_dir, config_text, result, fid, p_suc, fock_to_text(target), time.perf_counter() - t0)
    click.echo(f"report: {run_dir}")
    click.echo(f"end-to-end fidelity: {fid:.9f}")
    click.echo(f"success probability: {p_suc:.6e}")
    if fid < config.fidelity_floor:
        _fail(EXIT_SOLVER, f"fidelity {fid:.6f} below floor {config.fidelity_floor}")


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


@main.command("verify")
@click.argument("result_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("target_path", type=click.Path(exists=True, dir_okay=False))
def cmd_verify(result_path: str, target_path: str):
    """Forward-simulate a stored result against a target file."""
    try:
        result = result_from_json(json.loads(_read_text(result_path)))
        target = fock_from_text(_read_text(target_path))
        if not target.normalized:
            target, _ = normalize(target)
        fid, p_suc = forward_verify(result, target)
    except json.JSONDecodeError as exc:
        _fail(EXIT_IO, f"result file is not JSON: {exc}")
    except OqssError as exc:
        _fail(_exit_code_for(exc), str(exc))
    click.echo(f"fidelity: {fid:.9f}")
    click.echo(f"success probability: {p_suc:.6e}")


# ---------------------------------------------------------------------------
# hafnian-bench
# ---------------------------------------------------------------------------


@main.command("hafnian-bench")
@click.option("--dmin", type=int, default=8, show_default=True)
@click.option("--dmax", type=int, default=20, show_default=True)
@click.option("--step", type=int, default=2, show_default=True)
@click.option("--modes", type=int, default=4, show_default=True, help="Base matrix mode count.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="-", show_default=True)
def cmd_hafnian_bench(dmin: int, dmax: int, step: int, modes: int, out_path: str):
    """Time loop-hafnian evaluation over a size sweep; emit CSV."""
    if dmin < 1 or dmax < dmin or step < 1:
        _fail(EXIT_USAGE, "need 1 <= dmin <= dmax and step >= 1")
    sizes = []
    for d in range(dmin, dmax + 1, step):
        base, extra = divmod(d, modes)
        pattern = tuple(base + (1 if i < extra else 0) for i in range(modes))
        sizes.append((modes, pattern))
    try:
        rows = benchmark_hafnian(sizes)
    except OqssError as exc:
        _fail(_exit_code_for(exc), str(exc))
    csv = benchmark_rows_to_csv(rows)
    if out_path == "-":
        click.echo(csv, nl=False)
    else:
        Path(out_path).write_text(csv)
        click.echo(f"wrote {out_path}")
    if len(rows) >= 3:
        d_vals = np.array([r.d for r in rows], dtype=float)
        t_vals = np.array([r.wall_time_ns for r in rows], dtype=float)
        corrected = np.log2(t_vals) - 3.0 * np.log2(d_vals)
        slope = float(np.polyfit(d_vals, corrected, 1)[0])
        click.echo(f"exponential fit: log2(time) - 3 log2(D) slope = {slope:.3f} per unit D")


# ---------------------------------------------------------------------------
# wigner
# ---------------------------------------------------------------------------


@main.command("wigner")
@click.argument("fock_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--qmin", type=float, default=-6.0, show_default=True)
@click.option("--qmax", type=float, default=6.0, show_default=True)
@click.option("--pmin", type=float, default=-6.0, show_default=True)
@click.option("--pmax", type=float, default=6.0, show_default=True)
@click.option("--res", type=int, default=121, show_default=True, help="Grid points per axis.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="-", show_default=True)
def cmd_wigner(fock_path: str, qmin: float, qmax: float, pmin: float, pmax: float, res: int, out_path: str):
    """Sample the Wigner function of a stored Fock vector onto a CSV grid."""
    if res < 1 or qmax <= qmin or pmax <= pmin:
        _fail(EXIT_USAGE, "need res >= 1 and increasing axis ranges")
    try:
        vector = fock_from_text(_read_text(fock_path))
        if not vector.normalized:
            vector, _ = normalize(vector)
        grid = wigner_grid(vector, (qmin, qmax), (pmin, pmax), res)
    except OqssError as exc:
        _fail(_exit_code_for(exc), str(exc))
    csv = wigner_grid_to_csv(grid, (qmin, qmax), (pmin, pmax))
    if out_path == "-":
        click.echo(csv, nl=False)
    else:
        Path(out_path).write_text(csv)
        click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
