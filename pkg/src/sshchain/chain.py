"""Chain data model: tight-binding and lumped-element circuit descriptions.

Units are fixed throughout the package: energies and frequencies in GHz,
inductances in nH, capacitances in fF. Planck's constant is absorbed so
on-site energies are quoted directly in frequency units.

Sites are ordered A1, B1, A2, B2, ... along the chain; cell ``n`` owns the
coupling inductor ``lv[n]`` between its A and B site, and coupling capacitor
``cw[k]`` sits on the bond between site ``2k-1`` and site ``2k`` (0-based),
with ``cw[0]`` and ``cw[N]`` connecting to the terminating coupling sites.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = [
    "ChainSpec",
    "CircuitSpec",
    "ChiralOperator",
    "build_tb_hamiltonian",
    "map_circuit_to_tb",
    "chiral_operator",
    "chiral_defect",
    "default_circuit",
]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.flags.writeable = False
    return arr


def _site_array(values, length: int, name: str, allow_inf: bool = False,
                positive: bool = False, nonnegative: bool = False) -> np.ndarray:
    """Coerce ``values`` to a read-only float array of ``length`` entries.

    Scalars broadcast to the full length. Raises ValidationError on shape,
    NaN, infinity (unless allowed) or sign violations.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(length, float(arr))
    if arr.shape != (length,):
        raise ValidationError(
            f"{name} must have length {length}, got shape {arr.shape}")
    if np.any(np.isnan(arr)):
        raise ValidationError(f"{name} contains NaN")
    if not allow_inf and not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} entries must be finite")
    if positive and not np.all(arr > 0):
        raise ValidationError(f"{name} entries must be > 0")
    if nonnegative and np.any(arr < 0):
        raise ValidationError(f"{name} entries must be >= 0")
    return _freeze(arr)


def _check_n_cells(n_cells) -> int:
    n = int(n_cells)
    if n < 1:
        raise ValidationError(f"n_cells must be >= 1, got {n_cells}")
    return n


def _json_list(arr: np.ndarray) -> list:
    return [("inf" if math.isinf(x) else float(x)) for x in arr]


def _from_json_values(values):
    def one(v):
        if v == "inf":
            return math.inf
        try:
            return float(v)
        except (TypeError, ValueError):
            raise ValidationError(
                f"expected a number or 'inf', got {v!r}") from None
    if isinstance(values, (int, float, str)):
        return one(values)
    return [one(v) for v in values]


@dataclass(frozen=True)
class ChainSpec:
    """Tight-binding description of a finite chain with two sites per cell.

    Parameters
    ----------
    n_cells : int
        Number of unit cells N; the chain has 2N sites.
    eps : array_like
        2N on-site energies in GHz (a scalar broadcasts).
    v : array_like
        N intra-cell hopping strengths in GHz, >= 0.
    w : array_like
        N-1 inter-cell hopping strengths in GHz, >= 0.
    """

    n_cells: int
    eps: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        n = _check_n_cells(self.n_cells)
        object.__setattr__(self, "n_cells", n)
        object.__setattr__(self, "eps", _site_array(self.eps, 2 * n, "eps"))
        object.__setattr__(self, "v", _site_array(self.v, n, "v", nonnegative=True))
        object.__setattr__(self, "w", _site_array(self.w, max(n - 1, 0), "w", nonnegative=True))

    @property
    def n_sites(self) -> int:
        return 2 * self.n_cells

    def to_dict(self) -> dict:
        return {
            "n_cells": self.n_cells,
            "eps_GHz": _json_list(self.eps),
            "v_GHz": _json_list(self.v),
            "w_GHz": _json_list(self.w),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChainSpec":
        allowed = {"n_cells", "eps_GHz", "v_GHz", "w_GHz"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ValidationError(f"unknown ChainSpec keys: {unknown}")
        missing = sorted(allowed - set(data))
        if missing:
            raise ValidationError(f"missing ChainSpec keys: {missing}")
        return cls(
            n_cells=data["n_cells"],
            eps=_from_json_values(data["eps_GHz"]),
            v=_from_json_values(data["v_GHz"]),
            w=_from_json_values(data["w_GHz"]),
        )

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ChainSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class CircuitSpec:
    """Lumped-element description of the resonator chain.

    Parameters
    ----------
    n_cells : int
        Number of unit cells N.
    c0 : array_like
        2N site capacitances in fF, > 0.
    l0 : array_like
        2N site inductances in nH, > 0.
    lv : array_like
        N coupling inductances in nH, > 0; ``inf`` marks a pinched-off
        junction.
    cw : array_like
        N+1 coupling capacitances in fF, > 0. The outer two belong to the
        terminating coupling sites.
    """

    n_cells: int
    c0: np.ndarray
    l0: np.ndarray
    lv: np.ndarray
    cw: np.ndarray

    def __post_init__(self):
        n = _check_n_cells(self.n_cells)
        object.__setattr__(self, "n_cells", n)
        object.__setattr__(self, "c0", _site_array(self.c0, 2 * n, "c0", positive=True))
        object.__setattr__(self, "l0", _site_array(self.l0, 2 * n, "l0", positive=True))
        object.__setattr__(self, "lv", _site_array(self.lv, n, "lv", allow_inf=True, positive=True))
        object.__setattr__(self, "cw", _site_array(self.cw, n + 1, "cw", positive=True))

    @property
    def n_sites(self) -> int:
        return 2 * self.n_cells

    def with_lv(self, lv) -> "CircuitSpec":
        """Copy with the coupling-inductance list replaced."""
        return CircuitSpec(self.n_cells, self.c0, self.l0, lv, self.cw)

    def to_dict(self) -> dict:
        return {
            "n_cells": self.n_cells,
            "c0_fF": _json_list(self.c0),
            "l0_nH": _json_list(self.l0),
            "lv_nH": _json_list(self.lv),
            "cw_fF": _json_list(self.cw),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CircuitSpec":
        allowed = {"n_cells", "c0_fF", "l0_nH", "lv_nH", "cw_fF"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ValidationError(f"unknown CircuitSpec keys: {unknown}")
        missing = sorted(allowed - set(data))
        if missing:
            raise ValidationError(f"missing CircuitSpec keys: {missing}")
        return cls(
            n_cells=data["n_cells"],
            c0=_from_json_values(data["c0_fF"]),
            l0=_from_json_values(data["l0_nH"]),
            lv=_from_json_values(data["lv_nH"]),
            cw=_from_json_values(data["cw_fF"]),
        )

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CircuitSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ChiralOperator:
    """Sublattice-sign operator: +1 on A sites, -1 on B sites."""

    n_cells: int
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _freeze(self.matrix))


def default_circuit(n_cells: int = 5, c0_fF: float = 660.0, l0_nH: float = 1.0,
                    cw_fF: float = 30.0, lv_nH: float = math.inf) -> CircuitSpec:
    """Uniform five-cell reference circuit.

    With these values the hopping balance v = w falls at lv = l0*c0/cw
    = 22 nH, and the pinched-off site frequency is close to 6.06 GHz.
    """
    return CircuitSpec(n_cells, c0_fF, l0_nH, lv_nH, cw_fF)


def _assemble_hamiltonian(eps: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    hop = np.empty(v.size + w.size)
    hop[0::2] = v
    hop[1::2] = w
    return np.diag(eps) + np.diag(hop, 1) + np.diag(hop, -1)


def build_tb_hamiltonian(spec: ChainSpec) -> np.ndarray:
    """Assemble the 2N x 2N real-symmetric tri-diagonal chain Hamiltonian.

    The diagonal carries the on-site energies; the first off-diagonal
    alternates v1, w1, v2, w2, ..., vN.
    """
    return _assemble_hamiltonian(spec.eps, spec.v, spec.w)


def _map_arrays(c0: np.ndarray, l0: np.ndarray, lv: np.ndarray, cw: np.ndarray):
    """Raw-array core of the circuit-to-chain mapping; returns (eps, v, w)."""
    n = lv.size
    # A site of cell k touches cw[k]; B site touches cw[k+1].
    cw_site = np.empty(2 * n)
    cw_site[0::2] = cw[:-1]
    cw_site[1::2] = cw[1:]
    c_t = c0 + cw_site
    lv_site = np.repeat(lv, 2)
    l_t = 1.0 / (1.0 / l0 + 1.0 / lv_site)
    if np.any(c_t <= 0) or np.any(l_t <= 0):
        raise ValidationError("effective L_T and C_T must be positive")
    # nH * fF = 1e-24 s^2, so f[GHz] = 1e3 / (2 pi sqrt(L[nH] C[fF]))
    eps = 1e3 / (2.0 * np.pi * np.sqrt(l_t * c_t))

    v_side = 0.5 * eps * (l_t / lv_site)
    v = 0.5 * (v_side[0::2] + v_side[1::2])

    w_side = 0.5 * eps * (cw_site / c_t)
    w = 0.5 * (w_side[1:-1:2] + w_side[2:-1:2]) if n > 1 else np.empty(0)
    return eps, v, w


def map_circuit_to_tb(spec: CircuitSpec) -> ChainSpec:
    """Map circuit parameters onto tight-binding parameters.

    Per site, the total node capacitance is C_T = C0 + Cw (the one coupling
    capacitor the site touches) and the parallel node inductance is
    L_T = (1/L0 + 1/Lv)^-1, so the site frequency is 1/(2*pi*sqrt(L_T C_T)).
    Hops follow eps = w_site, v = (eps/2)(L_T/Lv), w = (eps/2)(Cw/C_T); a
    bond between two sites with different local frequencies uses the
    arithmetic mean of the two per-site values. Pinched-off cells
    (lv = inf) map to v = 0 exactly.
    """
    eps, v, w = _map_arrays(spec.c0, spec.l0, spec.lv, spec.cw)
    return ChainSpec(n_cells=spec.n_cells, eps=eps, v=v, w=w)


def chiral_operator(n_cells: int) -> ChiralOperator:
    """Sublattice operator diag(+1, -1, +1, -1, ...) of dimension 2N."""
    n = _check_n_cells(n_cells)
    signs = np.ones(2 * n)
    signs[1::2] = -1.0
    return ChiralOperator(n_cells=n, matrix=np.diag(signs))


def chiral_defect(h: np.ndarray, eps_ref: float) -> float:
    """Largest-magnitude entry of the anticommutator {Gamma, H - eps_ref*I}.

    Zero iff the shifted Hamiltonian is chiral-symmetric. Same-sublattice
    couplings (e.g. a second-nearest-neighbor bond of strength g) show up
    as 2g.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValidationError(f"H must be square, got shape {h.shape}")
    dim = h.shape[0]
    if dim % 2 != 0:
        raise ValidationError(f"H must have even dimension, got {dim}")
    gamma = chiral_operator(dim // 2).matrix
    shifted = h - float(eps_ref) * np.eye(dim)
    anti = gamma @ shifted + shifted @ gamma
    return float(np.max(np.abs(anti)))
