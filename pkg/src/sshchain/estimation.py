"""Derivative-free estimation of circuit parameters from eigenfrequencies.

The fit minimizes the RMS difference between the sorted tight-binding
eigenfrequencies of a candidate circuit and a supplied frequency list,
using a Nelder-Mead simplex over the logarithms of the free parameters so
positivity is structural and relative steps mean the same thing for
nanohenries and femtofarads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .chain import CircuitSpec, _assemble_hamiltonian, _map_arrays
from .csvout import write_csv, write_json
from .errors import ValidationError

__all__ = [
    "NelderMeadOptions",
    "NelderMeadResult",
    "nelder_mead",
    "FitProblem",
    "FitResult",
    "PARAM_FAMILIES",
    "model_eigenfrequencies",
    "fit_circuit_params",
    "disorder_report",
    "fit_problem_from_dict",
    "write_fit_outputs",
]

PARAM_FAMILIES = ("c0", "l0", "cw", "lv")

_REFLECT = 1.0
_EXPAND = 2.0
_CONTRACT = 0.5
_SHRINK = 0.5


@dataclass(frozen=True)
class NelderMeadOptions:
    """Termination and initialization knobs for the simplex search.

    The search stops when the spread of vertex values drops below
    ``tol_f``, when the simplex size (max distance from the best vertex)
    drops below ``tol_x``, or after ``max_iter`` iterations. ``step``
    sets the per-coordinate offset of the initial simplex.
    """

    tol_f: float = 1e-7
    tol_x: float = 1e-9
    max_iter: int = 5000
    step: float = 0.02


@dataclass(frozen=True)
class NelderMeadResult:
    x: np.ndarray
    value: float
    iterations: int
    evaluations: int
    converged: bool


def nelder_mead(objective: Callable, start: Sequence[float],
                options: Optional[NelderMeadOptions] = None,
                on_iteration: Optional[Callable] = None) -> NelderMeadResult:
    """Minimize ``objective`` with the standard simplex method.

    Coefficients are reflection 1.0, expansion 2.0, contraction 0.5,
    shrink 0.5. The objective must be finite at the start point; values
    that come back non-finite during the run are treated as +inf, so the
    corresponding vertex is simply never kept. Fully deterministic for a
    given start and options.
    """
    opts = options or NelderMeadOptions()
    x0 = np.array(start, dtype=float, copy=True).ravel()
    if x0.size == 0:
        raise ValidationError("start vector must not be empty")
    ndim = x0.size
    evaluations = 0

    def f(x):
        nonlocal evaluations
        evaluations += 1
        val = float(objective(x))
        return val if math.isfinite(val) else math.inf

    f0 = f(x0)
    if not math.isfinite(f0):
        raise ValidationError("objective is not finite at the start point")

    steps = np.broadcast_to(np.asarray(opts.step, dtype=float), (ndim,))
    simplex = np.tile(x0, (ndim + 1, 1))
    values = np.empty(ndim + 1)
    values[0] = f0
    for i in range(ndim):
        simplex[i + 1, i] += steps[i] if steps[i] != 0 else 1e-4
        values[i + 1] = f(simplex[i + 1])

    converged = False
    iteration = 0
    for iteration in range(1, opts.max_iter + 1):
        order = np.argsort(values, kind="stable")
        simplex = simplex[order]
        values = values[order]

        spread = values[-1] - values[0]
        size = float(np.max(np.abs(simplex[1:] - simplex[0])))
        if spread < opts.tol_f or size < opts.tol_x:
            converged = True
            break

        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        reflected = centroid + _REFLECT * (centroid - worst)
        f_r = f(reflected)
        if f_r < values[0]:
            expanded = centroid + _EXPAND * (centroid - worst)
            f_e = f(expanded)
            if f_e < f_r:
                simplex[-1], values[-1] = expanded, f_e
            else:
                simplex[-1], values[-1] = reflected, f_r
        elif f_r < values[-2]:
            simplex[-1], values[-1] = reflected, f_r
        else:
            if f_r < values[-1]:
                contracted = centroid + _CONTRACT * (reflected - centroid)
                f_c = f(contracted)
                accept = f_c <= f_r
            else:
                contracted = centroid + _CONTRACT * (worst - centroid)
                f_c = f(contracted)
                accept = f_c < values[-1]
            if accept:
                simplex[-1], values[-1] = contracted, f_c
            else:
                for i in range(1, ndim + 1):
                    simplex[i] = simplex[0] + _SHRINK * (simplex[i] - simplex[0])
                    values[i] = f(simplex[i])

        if on_iteration is not None:
            best = int(np.argmin(values))
            on_iteration(iteration, simplex[best].copy(), float(values[best]))

    best = int(np.argmin(values))
    return NelderMeadResult(
        x=simplex[best].copy(),
        value=float(values[best]),
        iterations=iteration,
        evaluations=evaluations,
        converged=converged,
    )


def model_eigenfrequencies(circuit: CircuitSpec) -> np.ndarray:
    """Sorted tight-binding eigenfrequencies of a circuit, in GHz."""
    eps, v, w = _map_arrays(circuit.c0, circuit.l0, circuit.lv, circuit.cw)
    return np.linalg.eigvalsh(_assemble_hamiltonian(eps, v, w))


def _family_arrays(spec: CircuitSpec) -> dict:
    return {"c0": spec.c0, "l0": spec.l0, "cw": spec.cw, "lv": spec.lv}


def _normalize_mask(free, spec: CircuitSpec) -> dict:
    families = _family_arrays(spec)
    mask = {}
    for name, arr in families.items():
        requested = True if free is None else free.get(name, True)
        flags = np.broadcast_to(np.asarray(requested, dtype=bool), arr.shape).copy()
        if name == "lv":
            flags &= np.isfinite(arr)  # pinched junctions stay pinned
        mask[name] = flags
    if free is not None:
        unknown = sorted(set(free) - set(families))
        if unknown:
            raise ValidationError(f"unknown free-mask families: {unknown}")
    return mask


def _normalize_bounds(bounds, spec: CircuitSpec, mask: dict) -> dict:
    families = _family_arrays(spec)
    out = {}
    for name, arr in families.items():
        if bounds is not None and name in bounds:
            lo, hi = bounds[name]
            lo = np.broadcast_to(np.asarray(lo, dtype=float), arr.shape)
            hi = np.broadcast_to(np.asarray(hi, dtype=float), arr.shape)
        else:
            finite = np.where(np.isfinite(arr), arr, 1.0)
            lo = finite / 10.0
            hi = finite * 10.0
        sel = mask[name]
        if np.any(lo[sel] <= 0):
            raise ValidationError(f"{name} bounds must be positive")
        if np.any((arr[sel] < lo[sel]) | (arr[sel] > hi[sel])):
            raise ValidationError(f"start {name} values fall outside their bounds")
        out[name] = (np.array(lo), np.array(hi))
    if bounds is not None:
        unknown = sorted(set(bounds) - set(families))
        if unknown:
            raise ValidationError(f"unknown bounds families: {unknown}")
    return out


@dataclass(frozen=True)
class FitProblem:
    """Fit task: target frequency list, start circuit, freedom and bounds.

    ``free`` maps a parameter family to a boolean (or per-entry boolean
    list); omitted families are fully free. Non-finite lv entries are
    always held fixed. ``bounds`` maps a family to (lo, hi) scalars or
    per-entry arrays; defaults span a factor of ten around the start.
    """

    target_freqs: np.ndarray
    start: CircuitSpec
    free: Optional[dict] = None
    bounds: Optional[dict] = None

    def __post_init__(self):
        targets = np.sort(np.asarray(self.target_freqs, dtype=float).ravel())
        if targets.size != self.start.n_sites:
            raise ValidationError(
                f"need {self.start.n_sites} target frequencies, got {targets.size}")
        if not np.all(np.isfinite(targets)):
            raise ValidationError("target frequencies must be finite")
        targets.flags.writeable = False
        object.__setattr__(self, "target_freqs", targets)
        # validate eagerly so a bad problem fails before the optimizer runs
        mask = _normalize_mask(self.free, self.start)
        _normalize_bounds(self.bounds, self.start, mask)


@dataclass(frozen=True)
class FitResult:
    best: CircuitSpec
    residual_rms_kHz: float
    iterations: int
    evaluations: int
    restarts: int
    converged: bool
    clamped: int
    disorder_report_pct: dict


def disorder_report(spec: CircuitSpec) -> dict:
    """Relative spread (100 * stddev / mean) per parameter family.

    Infinite lv entries are excluded; families left with fewer than two
    finite entries are omitted from the report.
    """
    report = {}
    for name, arr in _family_arrays(spec).items():
        finite = arr[np.isfinite(arr)]
        if finite.size < 2:
            continue
        report[name] = float(100.0 * np.std(finite) / np.mean(finite))
    return report


def fit_circuit_params(problem: FitProblem,
                       options: Optional[NelderMeadOptions] = None,
                       max_restarts: int = 8,
                       target_rms_GHz: float = 1e-7,
                       multi_start: int = 1) -> FitResult:
    """Fit the circuit's eigenfrequencies to the target list.

    The optimizer walks the logs of the free parameters; vertices leaving
    their bounds are clamped (and counted) before evaluation, and masked
    parameters are carried over to the result bit-identically. When a
    converged run is still above ``target_rms_GHz``, the simplex is
    re-seeded around the best point with progressively smaller steps, up
    to ``max_restarts`` times; ``multi_start`` > 1 additionally retries
    from deterministically jittered copies of the start point and keeps
    the best outcome, which escapes occasional secondary minima.
    """
    opts = options or NelderMeadOptions()
    start = problem.start
    mask = _normalize_mask(problem.free, start)
    bounds = _normalize_bounds(problem.bounds, start, mask)
    coords = [(name, int(i)) for name in PARAM_FAMILIES
              for i in np.flatnonzero(mask[name])]
    if not coords:
        raise ValidationError("free mask selects no parameters to fit")

    log_lo = np.array([math.log(bounds[name][0][i]) for name, i in coords])
    log_hi = np.array([math.log(bounds[name][1][i]) for name, i in coords])
    x0 = np.array([math.log(_family_arrays(start)[name][i]) for name, i in coords])

    targets = problem.target_freqs
    base = {name: np.array(arr) for name, arr in _family_arrays(start).items()}
    clamped = 0

    def assemble(x):
        arrays = {name: arr.copy() for name, arr in base.items()}
        for (name, i), value in zip(coords, x):
            arrays[name][i] = math.exp(value)
        return arrays

    def objective(x):
        nonlocal clamped
        xc = np.clip(x, log_lo, log_hi)
        if np.any(xc != x):
            clamped += 1
            x[:] = xc
        arrays = assemble(xc)
        try:
            eps, v, w = _map_arrays(arrays["c0"], arrays["l0"],
                                    arrays["lv"], arrays["cw"])
        except ValidationError:
            return math.inf
        freqs = np.linalg.eigvalsh(_assemble_hamiltonian(eps, v, w))
        return float(np.sqrt(np.mean((freqs - targets) ** 2)))

    iterations = 0
    evaluations = 0
    restarts = 0

    def run_from(x_start):
        nonlocal iterations, evaluations, restarts
        result = nelder_mead(objective, x_start, opts)
        iterations += result.iterations
        evaluations += result.evaluations
        step = float(opts.step)
        while result.value > target_rms_GHz and restarts < max_restarts:
            restarts += 1
            step *= 0.5
            retry = NelderMeadOptions(tol_f=opts.tol_f, tol_x=opts.tol_x,
                                      max_iter=opts.max_iter, step=step)
            result = nelder_mead(objective, result.x, retry)
            iterations += result.iterations
            evaluations += result.evaluations
        return result

    result = run_from(x0)
    for attempt in range(1, max(int(multi_start), 1)):
        if result.value <= target_rms_GHz:
            break
        restarts = 0
        rng = np.random.default_rng([0x5517, attempt])
        jittered = np.clip(x0 + 0.02 * rng.uniform(-1.0, 1.0, x0.size),
                           log_lo, log_hi)
        retry = run_from(jittered)
        if retry.value < result.value:
            result = retry

    arrays = assemble(np.clip(result.x, log_lo, log_hi))
    best = CircuitSpec(start.n_cells, arrays["c0"], arrays["l0"],
                       arrays["lv"], arrays["cw"])
    return FitResult(
        best=best,
        residual_rms_kHz=float(result.value * 1e6),
        iterations=iterations,
        evaluations=evaluations,
        restarts=restarts,
        converged=result.converged,
        clamped=clamped,
        disorder_report_pct=disorder_report(best),
    )


def fit_problem_from_dict(data: dict) -> FitProblem:
    """Build a FitProblem from its JSON document form."""
    allowed = {"targets_GHz", "start", "free", "bounds"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ValidationError(f"unknown fit-problem keys: {unknown}")
    for key in ("targets_GHz", "start"):
        if key not in data:
            raise ValidationError(f"fit problem needs '{key}'")
    bounds = None
    if data.get("bounds") is not None:
        bounds = {name: (pair[0], pair[1]) for name, pair in data["bounds"].items()}
    return FitProblem(
        target_freqs=data["targets_GHz"],
        start=CircuitSpec.from_dict(data["start"]),
        free=data.get("free"),
        bounds=bounds,
    )


def write_fit_outputs(result: FitResult, json_path, sites_csv_path,
                      couplings_csv_path) -> None:
    """Emit the fit summary JSON and the per-site / per-coupling CSVs."""
    write_json(json_path, {
        "residual_rms_kHz": result.residual_rms_kHz,
        "iterations": result.iterations,
        "evaluations": result.evaluations,
        "restarts": result.restarts,
        "converged": result.converged,
        "clamped": result.clamped,
        "disorder_report_pct": result.disorder_report_pct,
        "best": result.best.to_dict(),
    })
    best = result.best
    site_rows = [(i, float(best.c0[i]), float(best.l0[i]))
                 for i in range(best.n_sites)]
    write_csv(sites_csv_path, ["site_index", "c0_fF", "l0_nH"], site_rows)
    coupling_rows = []
    for k in range(best.n_cells + 1):
        lv = float(best.lv[k]) if k < best.n_cells else ""
        coupling_rows.append((k, float(best.cw[k]), lv))
    write_csv(couplings_csv_path, ["coupling_index", "cw_fF", "lv_nH"],
              coupling_rows)
