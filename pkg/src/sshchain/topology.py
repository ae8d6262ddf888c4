"""Topological diagnostics: winding numbers, IPR, localization, disorder.

The real-space winding number follows the flatband construction: spectral
projectors of the shifted Hamiltonian build Q = P+ - P-, the sublattice
blocks Q_AB = P_A Q P_B enter a commutator with the cell-position operator,
and the trace is normalized per unit cell.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chain import ChainSpec, build_tb_hamiltonian, chiral_operator
from .csvout import write_csv, write_json
from .errors import (
    DegenerateMidgapError,
    FitUnsupportedError,
    GapClosingError,
    NumericalError,
    ValidationError,
)

__all__ = [
    "WindingResult",
    "DisorderConfig",
    "DisorderSample",
    "EnsembleResult",
    "flatband",
    "winding_number_real_space",
    "winding_number_k_space",
    "ipr",
    "localization_length_fit",
    "disorder_ensemble",
    "write_ensemble_outputs",
]

ZERO_TOL = 1e-12          # GHz; eigenvalues closer to zero need chiral splitting
AMPLITUDE_FLOOR = 1e-12   # |psi| below this is ignored by localization fits
RNG_NAME = "PCG64"


@dataclass(frozen=True)
class WindingResult:
    nu: float
    chain_length: int
    method: str


@dataclass(frozen=True)
class DisorderConfig:
    """Ensemble description: multiplicative strength, targets and seeding.

    ``targets`` is any subset of {"v", "w", "eps"}. Sample k draws from an
    independent PCG64 stream keyed by (seed, k), so results do not depend
    on evaluation order or thread count.
    """

    strength: float
    targets: tuple
    samples: int
    seed: int

    def __post_init__(self):
        strength = float(self.strength)
        if not (0.0 <= strength < 1.0):
            raise ValidationError(
                f"multiplicative disorder strength must be in [0, 1), got {strength}")
        targets = tuple(sorted(set(self.targets)))
        bad = [t for t in targets if t not in ("v", "w", "eps")]
        if bad:
            raise ValidationError(f"unknown disorder targets: {bad}")
        if not targets:
            raise ValidationError("disorder targets must not be empty")
        samples = int(self.samples)
        if samples < 1:
            raise ValidationError(f"sample count must be >= 1, got {samples}")
        object.__setattr__(self, "strength", strength)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class DisorderSample:
    index: int
    nu: float
    min_gap_GHz: float


@dataclass(frozen=True)
class EnsembleResult:
    samples: tuple
    mean_nu: float
    std_nu: float
    rejections: int
    seed: int
    generator: str = RNG_NAME


def flatband(h: np.ndarray, eps_ref: float, zero_tol: float = ZERO_TOL) -> np.ndarray:
    """Flatband image Q = P+ - P- of the shifted Hamiltonian H - eps_ref*I.

    Eigenvalues with |lambda| <= zero_tol cannot be assigned to a spectral
    half by sign. A protected pair of such zeros is split by its chirality
    eigenvalues (one state to each half, keeping Q involutory); anything
    else raises DegenerateMidgapError naming the offending indices.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] % 2 != 0:
        raise ValidationError(f"H must be square with even dimension, got {h.shape}")
    dim = h.shape[0]
    shifted = h - float(eps_ref) * np.eye(dim)
    evals, evecs = np.linalg.eigh(shifted)

    zero = np.abs(evals) <= zero_tol
    n_zero = int(np.count_nonzero(zero))
    q = (evecs * np.sign(evals) * (~zero)) @ evecs.T
    if n_zero == 0:
        return q
    idx = np.flatnonzero(zero)
    if n_zero != 2:
        raise DegenerateMidgapError(idx)
    gamma = chiral_operator(dim // 2).matrix
    sub = evecs[:, idx]
    block = sub.T @ gamma @ sub
    bvals, bvecs = np.linalg.eigh(block)
    if not (bvals[0] < -0.5 and bvals[1] > 0.5):
        raise DegenerateMidgapError(
            idx, f"zero modes at indices {tuple(idx)} are not chiral partners")
    states = sub @ bvecs  # columns: chirality -1 then +1
    q = q + np.outer(states[:, 1], states[:, 1]) - np.outer(states[:, 0], states[:, 0])
    return q


def winding_number_real_space(h: np.ndarray, eps_ref: float) -> WindingResult:
    """Trace-per-volume winding number of a finite chain Hamiltonian.

    The position operator counts unit cells 1..N, constant within a cell,
    and the trace runs over the bulk cells (the outermost cell on each end
    is excluded: over the full open chain the boundary contribution cancels
    the winding identically) while keeping the 1/N volume normalization.
    Quantization is therefore only approached for large N; small chains
    give intermediate values. The sign is fixed so the v < w phase winds
    to +1.
    """
    q = flatband(h, eps_ref)
    dim = q.shape[0]
    n_cells = dim // 2
    gamma = chiral_operator(n_cells).matrix
    p_a = 0.5 * (np.eye(dim) + gamma)
    p_b = 0.5 * (np.eye(dim) - gamma)
    x = np.repeat(np.arange(1, n_cells + 1, dtype=float), 2)
    q_ab = p_a @ q @ p_b
    q_ba = p_b @ q @ p_a
    comm = (x[:, None] * q_ab) - (q_ab * x[None, :])
    diag = np.einsum("ij,ji->i", q_ba, comm)
    bulk = slice(2, dim - 2) if n_cells > 2 else slice(0, dim)
    nu = float(np.sum(diag[bulk])) / n_cells
    return WindingResult(nu=nu, chain_length=n_cells, method="real-space")


def winding_number_k_space(v: float, w: float, min_points: int = 1024) -> WindingResult:
    """Winding of h(k) = v + w e^{ik} around the Brillouin zone.

    Midpoint quadrature of (1/2 pi i) Tr[h^-1 dh/dk] over at least 1024
    points, refined near the gap closing so the raw value is always within
    1e-6 of an integer; v = w raises GapClosingError.
    """
    v = float(v)
    w = float(w)
    if v < 0 or w < 0:
        raise ValidationError(f"hops must be >= 0, got v={v}, w={w}")
    if v == 0 and w == 0:
        raise ValidationError("v and w cannot both be zero")
    if v == w:
        raise GapClosingError(
            f"winding integrand is singular at v = w = {v}; the gap closes")
    # Quadrature error decays like exp(-M |log(v/w)|); pad the point count
    # accordingly when the gap is small.
    if v > 0 and w > 0:
        decay = abs(np.log(v / w))
        points = max(min_points, int(np.ceil(40.0 / decay)))
    else:
        points = min_points
    points = min(points, 1 << 22)
    k = 2.0 * np.pi * (np.arange(points) + 0.5) / points
    hk = v + w * np.exp(1j * k)
    dh = 1j * w * np.exp(1j * k)
    # midpoint rule for (1/2 pi i) * integral of h'/h over one period
    nu_raw = float(np.mean((dh / hk).imag))
    nu_int = round(nu_raw)
    if abs(nu_raw - nu_int) > 1e-6:
        raise NumericalError(
            f"k-space winding did not quantize: raw value {nu_raw!r}")
    return WindingResult(nu=float(nu_int), chain_length=0, method="k-space")


def ipr(state: Sequence[float]) -> float:
    """Inverse participation ratio sum|psi|^4 / (sum|psi|^2)^2."""
    psi = np.asarray(state, dtype=complex).ravel()
    norm2 = float(np.sum(np.abs(psi) ** 2))
    if norm2 == 0.0:
        raise ValidationError("IPR of the zero vector is undefined")
    return float(np.sum(np.abs(psi) ** 4) / norm2 ** 2)


def localization_length_fit(state: Sequence[float], sublattice: str) -> float:
    """Exponential-decay length of a state on one sublattice, in unit cells.

    Least-squares slope of log|psi| against the cell index over amplitudes
    above 1e-12; xi = -1/slope. Raises FitUnsupportedError when fewer than
    three usable points remain or the profile does not decay.
    """
    psi = np.asarray(state, dtype=float).ravel()
    if psi.size % 2 != 0:
        raise ValidationError(f"state length must be even, got {psi.size}")
    if sublattice not in ("A", "B"):
        raise ValidationError(f"sublattice must be 'A' or 'B', got {sublattice!r}")
    offset = 0 if sublattice == "A" else 1
    amp = np.abs(psi[offset::2])
    cells = np.arange(1, amp.size + 1, dtype=float)
    usable = amp > AMPLITUDE_FLOOR
    if int(np.count_nonzero(usable)) < 3:
        raise FitUnsupportedError(
            f"only {int(np.count_nonzero(usable))} usable amplitudes on "
            f"sublattice {sublattice}; need at least 3")
    slope, _ = np.polyfit(cells[usable], np.log(amp[usable]), 1)
    if slope >= 0:
        raise FitUnsupportedError(
            f"profile on sublattice {sublattice} does not decay (slope {slope:.3e})")
    return float(-1.0 / slope)


def _perturbed(values: np.ndarray, rng, delta: float) -> np.ndarray:
    return values * (1.0 + delta * rng.uniform(-1.0, 1.0, size=values.size))


def _draw_sample(base: ChainSpec, config: DisorderConfig, index: int):
    """One disorder realization; returns (sample, rejection count).

    The stream is keyed by (seed, index) and consumed in the fixed order
    eps, v, w for the targeted families, so samples are reproducible
    regardless of evaluation order.
    """
    rng = np.random.default_rng([config.seed & 0xFFFFFFFFFFFFFFFF, index])
    rejections = 0
    for _ in range(100):
        eps = _perturbed(base.eps, rng, config.strength) if "eps" in config.targets else base.eps
        v = _perturbed(base.v, rng, config.strength) if "v" in config.targets else base.v
        w = _perturbed(base.w, rng, config.strength) if "w" in config.targets else base.w
        if np.any(v < 0) or np.any(w < 0):
            rejections += 1
            continue
        chain = ChainSpec(base.n_cells, eps, v, w)
        eps_ref = float(np.mean(chain.eps))
        h = build_tb_hamiltonian(chain)
        nu = winding_number_real_space(h, eps_ref).nu
        evals = np.linalg.eigvalsh(h)
        min_gap = float(np.min(np.abs(evals - eps_ref)))
        return DisorderSample(index=index, nu=nu, min_gap_GHz=min_gap), rejections
    raise NumericalError(
        f"sample {index}: 100 consecutive draws produced negative hops")


def disorder_ensemble(base: ChainSpec, config: DisorderConfig,
                      threads: int = 1) -> EnsembleResult:
    """Seeded multiplicative-disorder ensemble of winding numbers.

    Each sample perturbs the targeted parameter families by x(1 + delta*u)
    with u uniform in [-1, 1], then records the real-space winding number
    and the smallest distance of any eigenvalue to the sample's mean
    on-site energy. Draws that would produce a negative hop are redrawn
    and counted.
    """
    indices = range(config.samples)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            drawn = list(pool.map(lambda k: _draw_sample(base, config, k), indices))
    else:
        drawn = [_draw_sample(base, config, k) for k in indices]
    samples = tuple(s for s, _ in drawn)
    rejections = int(sum(r for _, r in drawn))
    nus = np.array([s.nu for s in samples])
    return EnsembleResult(
        samples=samples,
        mean_nu=float(np.mean(nus)),
        std_nu=float(np.std(nus)),
        rejections=rejections,
        seed=config.seed,
    )


def write_ensemble_outputs(result: EnsembleResult, csv_path, json_path) -> None:
    """Emit the per-sample CSV and the JSON summary for an ensemble."""
    rows = [(s.index, s.nu, s.min_gap_GHz) for s in result.samples]
    write_csv(csv_path, ["sample_index", "nu", "min_gap_GHz"], rows)
    write_json(json_path, {
        "mean_nu": result.mean_nu,
        "std_nu": result.std_nu,
        "rejections": result.rejections,
        "seed": result.seed,
        "generator": result.generator,
    })
