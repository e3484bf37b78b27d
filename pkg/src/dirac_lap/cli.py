"""Command line front end: config ingestion, dispatch, report emission.

One JSON file describes a run.  ``parse_config`` validates every field
up front and reports all violations together instead of stopping at
the first; ``run`` dispatches to the experiment modules and writes CSV
tables plus a summary JSON into the output directory.  Exit status 0
means success, 2 a validation failure, 3 a numerical failure; tables
computed before a failure are flushed, and nothing is ever written
outside the output directory.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import math
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, active_backend
from .clifford import build_dirac_matrices
from .fields import (
    POTENTIAL_KINDS,
    Grid,
    MultiplicationOperator,
    PotentialSpec,
    SpinorField,
    sample_potential,
    weight_values,
)
from .highenergy import (
    ProductSpec,
    classify_product,
    neumann_tail_check,
    product_norm,
    sphere_partition,
)
from .kernels import kernel_split
from .lap import complex_sweep, lap_sweep, regularity_check
from .propagator import (
    StrichartzQuery,
    _check_admissibility,
    discretize_hamiltonian,
    evolve,
    strichartz_table,
)

SUBCOMMANDS = (
    "matrices",
    "kernel-dump",
    "lap-sweep",
    "complex-sweep",
    "threshold",
    "directed",
    "neumann",
    "evolve",
    "strichartz",
)

# matrices and kernel-dump are grid-free closed-form dumps
_NEEDS_GRID = tuple(s for s in SUBCOMMANDS if s not in ("matrices", "kernel-dump"))
_NEEDS_SIGMA = ("lap-sweep", "complex-sweep", "threshold", "evolve")
_NEEDS_PERIODIC = ("evolve", "strichartz")

_LAP_HEADER = ("lambda", "gamma", "norm_weighted", "norm_b_bstar", "cond", "flag")
_HIGH_HEADER = ("spec", "class", "z", "M", "norm_lo", "norm_hi", "pass")
_STRICHARTZ_HEADER = ("p", "q", "theta", "T", "ratio")
_EVOLVE_HEADER = ("t", "l2_norm", "weighted_norm")
_KERNEL_HEADER = ("r", "Re", "Im", "osc_Re", "osc_Im", "loc_Re", "loc_Im")

# RuntimeError covers the solver/power-iteration/memory-cap family
_NUMERICAL_ERRORS = (RuntimeError, FloatingPointError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    """Carries every violation found in a run configuration."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n".join("  - " + v for v in self.violations)
        super().__init__("invalid configuration:\n" + lines)


@dataclass(eq=False)
class RunConfig:
    """Validated run description; ``potential is None`` means V = 0."""

    subcommand: str
    n: int
    mass: float
    potential: PotentialSpec | None
    grid: Grid | None
    sigma: float | None
    branch: str
    seed: int
    output_dir: str | None
    blocks: dict
    raw: dict = field(repr=False)

    def _key(self):
        g = self.grid
        grid_key = None if g is None else (g.n, g.L, g.points_per_axis, g.periodic)
        return (
            self.subcommand,
            self.n,
            self.mass,
            self.potential,
            grid_key,
            self.sigma,
            self.branch,
            self.seed,
            self.output_dir,
            self.blocks,
        )

    def __eq__(self, other):
        if not isinstance(other, RunConfig):
            return NotImplemented
        return self._key() == other._key()


@dataclass
class RunReport:
    subcommand: str
    config_echo: dict
    tool_version: str = __version__
    status: int = 0
    stages: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    tables: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    summary_path: str | None = None


# --------------------------------------------------------------------------
# config parsing


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _number_list(name: str, value, fail, required=True):
    if value is None:
        if required:
            fail(f"{name}: missing")
        return None
    if not isinstance(value, list) or not all(_is_number(v) for v in value):
        fail(f"{name}: must be a list of numbers, got {value!r}")
        return None
    return [float(v) for v in value]


def _parse_potential(data: dict, fail) -> PotentialSpec | None:
    raw = data.get("potential", data.get("V"))
    if raw is None or (isinstance(raw, str) and raw == "zero"):
        return None
    if isinstance(raw, str):
        fail(f"potential: string form must be 'zero', got {raw!r}")
        return None
    if not isinstance(raw, dict):
        fail(f"potential: must be an object or 'zero', got {raw!r}")
        return None
    kind = raw.get("kind")
    if kind == "zero":
        return None
    if kind not in POTENTIAL_KINDS:
        fail(
            "potential.kind: must be 'zero' or one of "
            f"{', '.join(POTENTIAL_KINDS)}, got {kind!r}"
        )
        return None
    coupling = raw.get("coupling")
    decay = raw.get("decay")
    profile = raw.get("matrix_profile", "scalar")
    radius = raw.get("radius", 1.0)
    if not _is_number(coupling):
        fail(f"potential.coupling: must be a real number, got {coupling!r}")
        return None
    if not _is_number(decay):
        fail(f"potential.decay: must be a positive number, got {decay!r}")
        return None
    if not _is_number(radius):
        fail(f"potential.radius: must be a positive number, got {radius!r}")
        return None
    try:
        return PotentialSpec(kind, float(coupling), float(decay), str(profile), float(radius))
    except ValueError as exc:
        fail(f"potential: {exc}")
        return None


def _parse_grid(data: dict, n, sub: str, fail) -> Grid | None:
    gspec = data.get("grid")
    if gspec is None:
        if sub in _NEEDS_GRID:
            fail("grid: missing (object with L and points_per_axis)")
        return None
    if not isinstance(gspec, dict):
        fail(f"grid: must be an object with L and points_per_axis, got {gspec!r}")
        return None
    L = gspec.get("L")
    pts = gspec.get("points_per_axis", gspec.get("points"))
    periodic = gspec.get("periodic", False)
    ok = True
    if not _is_number(L) or L <= 0:
        fail(f"grid.L: must be a positive number, got {L!r}")
        ok = False
    if not _is_int(pts) or pts < 2:
        fail(f"grid.points_per_axis: must be an integer >= 2, got {pts!r}")
        ok = False
    if not isinstance(periodic, bool):
        fail(f"grid.periodic: must be true or false, got {periodic!r}")
        ok = False
    if sub in _NEEDS_PERIODIC and periodic is not True:
        fail(f"grid.periodic: {sub} runs on a periodic grid; set grid.periodic = true")
    if not ok or n is None:
        return None
    try:
        return Grid(n, float(L), int(pts), periodic=periodic)
    except (ValueError, TypeError) as exc:
        fail(f"grid: {exc}")
        return None


def _parse_sigma(data: dict, sub: str, mass, fail):
    sigma = data.get("sigma")
    if sigma is not None and not _is_number(sigma):
        fail(f"sigma: must be a number, got {sigma!r}")
        return None
    if sigma is None:
        if sub in _NEEDS_SIGMA:
            fail(f"sigma: required for subcommand {sub}")
        return None
    sigma = float(sigma)
    if sub in ("lap-sweep", "complex-sweep") and not sigma > 0.5:
        fail(
            f"sigma: {sub} needs sigma > 1/2 for the weighted resolvent "
            f"bound to hold, got {sigma:g}"
        )
    if sub == "threshold" and mass is not None:
        if mass > 0 and not sigma > 1:
            fail(f"sigma: must exceed 1 when mass > 0 for the threshold suite, got {sigma:g}")
        if mass == 0 and not sigma > 0.5:
            fail(f"sigma: massless threshold analysis needs sigma > 1/2, got {sigma:g}")
    if sub == "evolve" and not sigma > 0:
        fail(f"sigma: weighted evolution norms need sigma > 0, got {sigma:g}")
    return sigma


def _parse_lap_block(data, mass, fail) -> dict:
    lambdas = _number_list("lambda_grid", data.get("lambda_grid"), fail)
    if lambdas is not None:
        if not lambdas:
            fail("lambda_grid: must be a nonempty list of energies")
        elif mass is not None:
            for lam in lambdas:
                if abs(lam) <= mass:
                    fail(
                        f"lambda_grid: entry {lam:g} must lie strictly above "
                        f"the continuum edge |lambda| > m = {mass:g}"
                    )
    include = data.get("include_b_bstar", False)
    if not isinstance(include, bool):
        fail(f"include_b_bstar: must be true or false, got {include!r}")
        include = False
    return {"lambda_grid": lambdas or [], "include_b_bstar": include}


def _parse_complex_block(data, mass, fail) -> dict:
    lam = data.get("lambda")
    if not _is_number(lam):
        fail(f"lambda: must be a real boundary energy, got {lam!r}")
        lam = 0.0
    elif mass is not None and abs(lam) <= mass:
        fail(
            f"lambda: must lie strictly above the continuum edge "
            f"|lambda| > m = {mass:g}, got {lam:g}"
        )
    gammas = _number_list("gamma_grid", data.get("gamma_grid"), fail)
    if gammas is not None:
        if not gammas:
            fail("gamma_grid: must be a nonempty list of positive offsets")
        for g in gammas:
            if g <= 0:
                fail(f"gamma_grid: entry {g:g} must be positive")
    return {"lambda": float(lam), "gamma_grid": gammas or []}


def _parse_threshold_block(data, n, mass, fail) -> dict:
    if n == 2 and mass is not None and mass > 0:
        fail("m: the massive edge operator exists in dimension 3 only; use n = 3 or m = 0")
    approach = _number_list(
        "approach_lambdas", data.get("approach_lambdas"), fail, required=False
    )
    if approach is not None:
        if not approach:
            fail("approach_lambdas: must be nonempty when given")
        elif mass is not None:
            for lam in approach:
                if lam <= mass:
                    fail(
                        f"approach_lambdas: entry {lam:g} must exceed the "
                        f"edge m = {mass:g}"
                    )
    return {"approach_lambdas": approach}


def _parse_kernel_block(data, fail) -> dict:
    z = data.get("z")
    if not _is_number(z) or z <= 0:
        fail(f"z: must be a positive frequency, got {z!r}")
        z = 1.0
    r_min = data.get("r_min", 1e-3)
    r_max = data.get("r_max", 10.0)
    samples = data.get("samples", 256)
    if not _is_number(r_min) or r_min <= 0:
        fail(f"r_min: must be a positive radius, got {r_min!r}")
        r_min = 1e-3
    if not _is_number(r_max) or r_max <= r_min:
        fail(f"r_max: must exceed r_min = {r_min:g}, got {r_max!r}")
        r_max = r_min + 1.0
    if not _is_int(samples) or samples < 2:
        fail(f"samples: must be an integer >= 2, got {samples!r}")
        samples = 2
    return {"z": float(z), "r_min": float(r_min), "r_max": float(r_max), "samples": int(samples)}


def _check_resolution_config(name: str, grid, z: float, fail) -> None:
    if grid is not None and grid.h > math.pi / (4.0 * z):
        fail(
            f"{name}: grid spacing {grid.h:g} cannot resolve frequency "
            f"{z:g}; need h <= pi / (4 z) = {math.pi / (4.0 * z):g}"
        )


def _parse_directed_block(data, n, grid, fail) -> dict:
    delta = data.get("partition_delta")
    partition = None
    if not _is_number(delta):
        fail(f"partition_delta: must be a number in (0, pi/2], got {delta!r}")
        delta = 0.0
    elif n is not None:
        try:
            partition = sphere_partition(n, float(delta))
        except ValueError as exc:
            fail(f"partition_delta: {exc}")
    products = data.get("products")
    specs = []
    if not isinstance(products, list) or not products:
        fail("products: must be a nonempty list of {indices, z, d} objects")
        products = []
    for i, entry in enumerate(products):
        if not isinstance(entry, dict):
            fail(f"products[{i}]: must be an object with indices, z, d")
            continue
        idx = entry.get("indices")
        z = entry.get("z")
        d = entry.get("d")
        if not isinstance(idx, list) or not idx:
            fail(f"products[{i}].indices: must be a nonempty list of cap numbers or 'd'")
            continue
        if not _is_number(z) or not _is_number(d):
            fail(f"products[{i}]: z and d must be positive numbers, got z={z!r} d={d!r}")
            continue
        try:
            spec = ProductSpec(tuple(idx), float(z), float(d))
        except ValueError as exc:
            fail(f"products[{i}]: {exc}")
            continue
        if partition is not None:
            for j in spec.indices:
                if j != "d" and not 0 <= j < partition.count:
                    fail(
                        f"products[{i}].indices: cap {j} out of range "
                        f"[0, {partition.count}) for partition_delta {delta:g}"
                    )
        _check_resolution_config(f"products[{i}].z", grid, spec.z, fail)
        specs.append(spec)
    return {"partition_delta": float(delta), "products": specs}


def _parse_neumann_block(data, grid, fail) -> dict:
    m_list = data.get("M_list")
    if (
        not isinstance(m_list, list)
        or not m_list
        or not all(_is_int(m) and m >= 1 for m in m_list)
    ):
        fail(f"M_list: must be a nonempty list of integers >= 1, got {m_list!r}")
        m_list = []
    z_list = _number_list("z_list", data.get("z_list"), fail)
    if z_list is not None:
        if not z_list:
            fail("z_list: must be a nonempty list of positive frequencies")
        for z in z_list:
            if z <= 0:
                fail(f"z_list: entry {z:g} must be positive")
            else:
                _check_resolution_config("z_list", grid, z, fail)
    return {"M_list": [int(m) for m in m_list], "z_list": z_list or []}


def _parse_evolve_block(data, grid, fail) -> dict:
    times = _number_list("times", data.get("times"), fail)
    if times is not None:
        if not times:
            fail("times: must be a nonempty list of evaluation times")
        else:
            for t in times:
                if t < 0:
                    fail(f"times: entry {t:g} must be >= 0")
            if grid is not None and max(times) > grid.L / 2 + 1e-12:
                fail(
                    f"times: largest entry {max(times):g} exceeds the "
                    f"wrap-free window L/2 = {grid.L / 2:g}"
                )
    return {"times": times or []}


def _parse_strichartz_block(data, n, mass, grid, fail) -> dict:
    entries = data.get("queries")
    queries = []
    if not isinstance(entries, list) or not entries:
        fail("queries: must be a nonempty list of {p, q, theta, time_window} objects")
        entries = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            fail(f"queries[{i}]: must be an object with p, q, theta, time_window")
            continue
        p = entry.get("p")
        if p == "inf":
            p = math.inf
        q = entry.get("q")
        theta = entry.get("theta")
        window = entry.get("time_window")
        samples = entry.get("time_samples")
        if not (p == math.inf or _is_number(p)) or not _is_number(q):
            fail(f"queries[{i}]: p and q must be numbers (p may be 'inf'), got p={p!r} q={q!r}")
            continue
        if not _is_number(theta) or not _is_number(window):
            fail(
                f"queries[{i}]: theta and time_window must be numbers, "
                f"got theta={theta!r} time_window={window!r}"
            )
            continue
        if samples is not None and not (_is_int(samples) and samples >= 2):
            fail(f"queries[{i}].time_samples: must be an integer >= 2, got {samples!r}")
            continue
        massive = entry.get("massive", mass is not None and mass > 0)
        if not isinstance(massive, bool):
            fail(f"queries[{i}].massive: must be true or false, got {massive!r}")
            continue
        if mass is not None and massive != (mass > 0):
            fail(f"queries[{i}].massive: flag {massive} does not match m = {mass:g}")
        try:
            query = StrichartzQuery(
                float(p), float(q), float(theta), massive, float(window),
                None if samples is None else int(samples),
            )
        except ValueError as exc:
            fail(f"queries[{i}]: {exc}")
            continue
        if n is not None:
            try:
                _check_admissibility(query, n)
            except ValueError as exc:
                fail(f"queries[{i}]: {exc}")
        if grid is not None and window > grid.L / 2 + 1e-12:
            fail(
                f"queries[{i}].time_window: {window:g} exceeds the "
                f"wrap-free window L/2 = {grid.L / 2:g}"
            )
        queries.append(query)
    return {"queries": queries}


def parse_config_data(data) -> RunConfig:
    """Validate a decoded config dict; raises ConfigError listing all problems."""
    if not isinstance(data, dict):
        raise ConfigError(["config: top level must be a JSON object"])
    bad: list[str] = []
    fail = bad.append

    sub = data.get("subcommand")
    if sub not in SUBCOMMANDS:
        fail(f"subcommand: must be one of {', '.join(SUBCOMMANDS)}, got {sub!r}")
        sub = ""

    n = data.get("n")
    if not _is_int(n) or n not in (2, 3):
        fail(f"n: must be the integer 2 or 3, got {n!r}")
        n = None

    mass = data.get("m", data.get("mass"))
    if mass is None and sub in ("matrices", "kernel-dump"):
        mass = 0.0
    if not _is_number(mass) or mass < 0:
        fail(f"m: must be a number >= 0, got {mass!r}")
        mass = None
    else:
        mass = float(mass)

    potential = _parse_potential(data, fail)
    grid = _parse_grid(data, n, sub, fail)
    sigma = _parse_sigma(data, sub, mass, fail)

    branch = data.get("branch", "+")
    if branch not in ("+", "-"):
        fail(f"branch: must be '+' or '-', got {branch!r}")
        branch = "+"

    seed = data.get("seed", 0)
    if not _is_int(seed):
        fail(f"seed: must be an integer, got {seed!r}")
        seed = 0

    output_dir = data.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        fail(f"output_dir: must be a path string, got {output_dir!r}")
        output_dir = None

    blocks: dict = {}
    if sub == "lap-sweep":
        blocks = _parse_lap_block(data, mass, fail)
    elif sub == "complex-sweep":
        blocks = _parse_complex_block(data, mass, fail)
    elif sub == "threshold":
        blocks = _parse_threshold_block(data, n, mass, fail)
    elif sub == "kernel-dump":
        blocks = _parse_kernel_block(data, fail)
    elif sub == "directed":
        blocks = _parse_directed_block(data, n, grid, fail)
    elif sub == "neumann":
        blocks = _parse_neumann_block(data, grid, fail)
    elif sub == "evolve":
        blocks = _parse_evolve_block(data, grid, fail)
    elif sub == "strichartz":
        blocks = _parse_strichartz_block(data, n, mass, grid, fail)

    if bad:
        raise ConfigError(bad)
    return RunConfig(
        subcommand=sub,
        n=n,
        mass=mass,
        potential=potential,
        grid=grid,
        sigma=sigma,
        branch=branch,
        seed=int(seed),
        output_dir=output_dir,
        blocks=blocks,
        raw=data,
    )


def parse_config(path) -> RunConfig:
    """Load and validate a JSON run configuration file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError([f"config: file not found: {p}"])
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: not valid JSON ({exc})"]) from exc
    return parse_config_data(data)


# --------------------------------------------------------------------------
# report emission


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def _emit(report: RunReport, out: Path, name: str, header, rows) -> Path:
    path = out / name
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(cell) for cell in row) + "\n")
    if name not in report.tables:
        report.tables.append(name)
    return path


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else "%.17g" % v
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": _jsonable(value.real), "im": _jsonable(value.imag)}
    return value


@contextlib.contextmanager
def _stage(report: RunReport, name: str):
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed = time.perf_counter() - start
        report.stages[name] = report.stages.get(name, 0.0) + elapsed


def _write_summary(config: RunConfig, out: Path, threads: int, report: RunReport) -> None:
    canonical = json.dumps(config.raw, sort_keys=True, separators=(",", ":"))
    summary = {
        "tool_version": report.tool_version,
        "backend": active_backend(),
        "subcommand": config.subcommand,
        "threads": threads,
        "status": report.status,
        "config_sha256": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "config_echo": config.raw,
        "stages_seconds": {k: round(v, 6) for k, v in report.stages.items()},
        "warnings": list(report.warnings),
        "tables": list(report.tables),
        "results": _jsonable(report.extras),
    }
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    report.summary_path = str(path)


# --------------------------------------------------------------------------
# subcommand handlers


def _build_operators(config: RunConfig):
    mats = build_dirac_matrices(config.n)
    if config.potential is None:
        shape = (config.grid.num_points, mats.spinor_dim, mats.spinor_dim)
        V = MultiplicationOperator(config.grid, np.zeros(shape, dtype=complex), label="V[zero]")
    else:
        V = sample_potential(config.potential, config.grid, mats)
    return mats, V


def _matrix_payload(m: np.ndarray) -> dict:
    return {
        "re": [[float(x) for x in row] for row in m.real],
        "im": [[float(x) for x in row] for row in m.imag],
    }


def _run_matrices(config, out, threads, report):
    with _stage(report, "build"):
        mats = build_dirac_matrices(config.n)
    payload = {
        "n": mats.dim,
        "spinor_dim": mats.spinor_dim,
        "alpha": [_matrix_payload(a) for a in mats.alphas],
        "beta": _matrix_payload(mats.beta),
    }
    with _stage(report, "write"):
        path = out / "matrices.json"
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        report.tables.append(path.name)
    report.extras["spinor_dim"] = mats.spinor_dim


def _run_kernel_dump(config, out, threads, report):
    b = config.blocks
    with _stage(report, "compute"):
        r = np.linspace(b["r_min"], b["r_max"], b["samples"])
        split = kernel_split(config.n, b["z"], r, config.branch)
        full = split.oscillatory + split.local
    rows = zip(
        split.radius,
        full.real,
        full.imag,
        split.oscillatory.real,
        split.oscillatory.imag,
        split.local.real,
        split.local.imag,
    )
    with _stage(report, "write"):
        _emit(report, out, "kernel.csv", _KERNEL_HEADER, rows)
    report.extras.update(
        {"z": b["z"], "cutoff_lo": split.cutoff_lo, "cutoff_hi": split.cutoff_hi}
    )


def _run_lap_sweep(config, out, threads, report):
    with _stage(report, "build"):
        mats, V = _build_operators(config)
    rows = []
    try:
        with _stage(report, "compute"):
            rep = lap_sweep(
                config.blocks["lambda_grid"],
                config.sigma,
                V,
                mats,
                config.grid,
                config.mass,
                branch=config.branch,
                include_b_bstar=config.blocks["include_b_bstar"],
                threads=threads,
            )
            b_bstar = rep.norms_b_bstar or [math.nan] * len(rep.lambdas)
            for lam, nw, nb, cond, flag in zip(
                rep.lambdas, rep.norms_weighted, b_bstar, rep.conditions, rep.flags
            ):
                rows.append((float(lam), 0.0, nw, nb, cond, flag))
                if flag:
                    report.warnings.append(f"lambda {float(lam):g}: {flag}")
            report.extras["sup_norm_weighted"] = rep.sup_norm
    finally:
        with _stage(report, "write"):
            _emit(report, out, "lap_sweep.csv", _LAP_HEADER, rows)


def _run_complex_sweep(config, out, threads, report):
    with _stage(report, "build"):
        mats, V = _build_operators(config)
    rows = []
    try:
        with _stage(report, "compute"):
            rep = complex_sweep(
                config.blocks["lambda"],
                config.blocks["gamma_grid"],
                config.sigma,
                V,
                mats,
                config.grid,
                config.mass,
            )
            for lam, nw, cond, flag in zip(
                rep.lambdas, rep.norms_weighted, rep.conditions, rep.flags
            ):
                rows.append((lam.real, lam.imag, nw, math.nan, cond, flag))
                if flag:
                    report.warnings.append(f"gamma {lam.imag:g}: {flag}")
            report.extras.update(
                {
                    "sup_norm_weighted": rep.sup_norm,
                    "boundary_gap": rep.boundary_gap,
                    "norm_unweighted": rep.norms_unweighted,
                }
            )
    finally:
        with _stage(report, "write"):
            _emit(report, out, "complex_sweep.csv", _LAP_HEADER, rows)


def _run_threshold(config, out, threads, report):
    with _stage(report, "build"):
        mats, V = _build_operators(config)
    rows = []
    try:
        with _stage(report, "compute"):
            rep = regularity_check(
                V,
                config.sigma,
                mats,
                config.mass,
                config.grid,
                approach_lambdas=config.blocks["approach_lambdas"],
            )
            for lam, norm in rep.blambda_decay:
                rows.append((lam, 0.0, norm, math.nan, math.nan, ""))
            report.extras.update(
                {
                    "smallest_singular_value": rep.smallest_singular_value,
                    "regular": rep.regular,
                    "resonance_profile_present": rep.resonance_profile is not None,
                }
            )
            if not rep.regular:
                report.warnings.append(
                    "threshold operator is singular: resonance or edge eigenvalue"
                )
    finally:
        with _stage(report, "write"):
            _emit(report, out, "threshold.csv", _LAP_HEADER, rows)


def _spec_label(spec: ProductSpec) -> str:
    return "|".join(str(i) for i in spec.indices)


def _run_directed(config, out, threads, report):
    with _stage(report, "build"):
        mats, V = _build_operators(config)
        partition = sphere_partition(config.n, config.blocks["partition_delta"])
    report.extras["cap_count"] = partition.count

    def one(spec):
        lo, hi = product_norm(
            spec, partition, V, mats, config.mass, config.grid, config.branch
        )
        label = _spec_label(spec)
        cls = classify_product(spec, partition)
        return (label, cls, spec.z, spec.M, lo, hi, bool(hi <= 0.5))

    rows = []
    try:
        with _stage(report, "compute"):
            specs = config.blocks["products"]
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    rows.extend(pool.map(one, specs))
            else:
                for spec in specs:
                    rows.append(one(spec))
    finally:
        with _stage(report, "write"):
            _emit(report, out, "high_energy.csv", _HIGH_HEADER, rows)


def _run_neumann(config, out, threads, report):
    with _stage(report, "build"):
        mats, V = _build_operators(config)
    rows = []
    bounds = {}
    try:
        with _stage(report, "compute"):
            for M in config.blocks["M_list"]:
                for z in config.blocks["z_list"]:
                    rep = neumann_tail_check(M, z, V, mats, config.mass, config.grid)
                    rows.append(
                        (f"full^{M}", "neumann", z, M, rep.norm_lo, rep.norm_hi, rep.passed)
                    )
                    if rep.inverse_bound is not None:
                        bounds[f"M={M},z={z:g}"] = rep.inverse_bound
                    if rep.submultiplicative_discrepancy:
                        report.warnings.append(
                            f"M={M}, z={z:g}: power norms grow faster than "
                            "submultiplicativity allows; brackets may be loose"
                        )
    finally:
        with _stage(report, "write"):
            _emit(report, out, "high_energy.csv", _HIGH_HEADER, rows)
        report.extras["inverse_bounds"] = bounds


def _initial_state(config: RunConfig, mats) -> SpinorField:
    """Seeded wave packet: complex noise under a box-scale envelope."""
    grid = config.grid
    rng = np.random.default_rng(config.seed)
    shape = (grid.num_points, mats.spinor_dim)
    values = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    values *= np.exp(-((grid.radii / (grid.L / 3.0)) ** 2))[:, None]
    if config.mass == 0:
        # massless space-time norms exclude the constant mode
        values -= values.mean(axis=0, keepdims=True)
    values /= grid.l2_norm(values)
    return SpinorField(grid, values)


def _discretized(config, report):
    mats = build_dirac_matrices(config.n)
    V = None
    if config.potential is not None:
        V = sample_potential(config.potential, config.grid, mats)
    with _stage(report, "discretize"):
        H = discretize_hamiltonian(mats, config.mass, V, config.grid)
    report.warnings.extend(H.classification_notes)
    report.extras["flagged_count"] = H.flagged_count
    return mats, H


def _run_evolve(config, out, threads, report):
    mats, H = _discretized(config, report)
    state = _initial_state(config, mats)
    times = config.blocks["times"]
    rows = []
    try:
        with _stage(report, "compute"):
            snapshots = evolve(H, state, times)
            weights = weight_values(config.grid, config.sigma)
            for t, snap in zip(times, snapshots):
                rows.append(
                    (
                        t,
                        config.grid.l2_norm(snap.values),
                        config.grid.l2_norm(weights[:, None] * snap.values),
                    )
                )
    finally:
        with _stage(report, "write"):
            _emit(report, out, "evolve.csv", _EVOLVE_HEADER, rows)


def _run_strichartz(config, out, threads, report):
    mats, H = _discretized(config, report)
    state = _initial_state(config, mats)
    rows = []
    try:
        with _stage(report, "compute"):
            table = strichartz_table(H, state, config.blocks["queries"], threads=threads)
            rows.extend(table)
    finally:
        with _stage(report, "write"):
            _emit(report, out, "strichartz.csv", _STRICHARTZ_HEADER, rows)


_HANDLERS = {
    "matrices": _run_matrices,
    "kernel-dump": _run_kernel_dump,
    "lap-sweep": _run_lap_sweep,
    "complex-sweep": _run_complex_sweep,
    "threshold": _run_threshold,
    "directed": _run_directed,
    "neumann": _run_neumann,
    "evolve": _run_evolve,
    "strichartz": _run_strichartz,
}


def run(config: RunConfig, out_dir, threads: int = 1) -> RunReport:
    """Execute one validated config; always writes summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = max(1, int(threads))
    report = RunReport(subcommand=config.subcommand, config_echo=config.raw)
    start = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            _HANDLERS[config.subcommand](config, out, threads, report)
        except _NUMERICAL_ERRORS as exc:
            report.status = 3
            report.warnings.append(f"numerical failure: {exc}")
        except ValueError as exc:
            # a library precondition the parser did not anticipate
            report.status = 2
            report.warnings.append(f"validation failure: {exc}")
    report.warnings.extend(str(w.message) for w in caught)
    report.stages["total"] = time.perf_counter() - start
    _write_summary(config, out, threads, report)
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dirac-lap",
        description=(
            "Dirac resolvent and dispersive-estimate experiments driven "
            "by a JSON config."
        ),
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="path to the JSON run configuration")
    parser.add_argument(
        "--out", default=None, help="output directory (default: output_dir from the config)"
    )
    parser.add_argument(
        "--threads", type=int, default=1, help="parallel workers for independent sweep points"
    )
    args = parser.parse_args(argv)

    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        for line in exc.violations:
            print(f"config error: {line}", file=sys.stderr)
        return 2
    if config.subcommand != args.subcommand:
        print(
            f"config error: subcommand: config names {config.subcommand!r} "
            f"but the command line asked for {args.subcommand!r}",
            file=sys.stderr,
        )
        return 2
    out_dir = args.out if args.out is not None else config.output_dir
    if out_dir is None:
        print("config error: output_dir: set it in the config or pass --out", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("config error: threads: must be >= 1", file=sys.stderr)
        return 2

    report = run(config, out_dir, threads=args.threads)
    for note in report.warnings:
        print(f"warning: {note}", file=sys.stderr)
    if report.status == 0:
        print(
            f"{config.subcommand}: wrote {len(report.tables)} table(s) "
            f"and summary.json to {out_dir}"
        )
    else:
        print(
            f"{config.subcommand}: failed with status {report.status} "
            f"(partial tables flushed to {out_dir})",
            file=sys.stderr,
        )
    return report.status


if __name__ == "__main__":
    sys.exit(main())
