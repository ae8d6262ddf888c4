"""Physical-layer models: gate-tunable nanowire inductance and two-port S21.

The chain is a two-port ladder driven from the left: a capacitance-only
terminating coupling site, the outer coupling capacitor, then per cell a
shunt site resonator (parallel L0/C0 to ground), the series coupling
inductor, the partner site and the next coupling capacitor, ending in the
right terminating site. An optional box mode bridges input to output in
parallel with the whole ladder.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.interpolate import PchipInterpolator
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.signal import find_peaks, peak_widths

from .chain import CircuitSpec
from .csvout import write_csv, write_json
from .errors import ExtrapolationError, NumericalError, ValidationError
from .spectral import Spectrum

__all__ = [
    "GateModel",
    "BoxMode",
    "S21Trace",
    "Peak",
    "nanowire_inductance",
    "apply_gate_setting",
    "s21_trace",
    "ladder_abcd",
    "abcd_to_s21",
    "circuit_mode_frequencies",
    "background_normalize",
    "extract_peaks",
    "mode_linewidths",
    "gate_sweep_spectrum",
    "joint_gate_settings",
    "single_gate_settings",
    "read_gate_table_csv",
    "write_trace_outputs",
]

# Pinched-off junctions enter the transmission ladder as a large finite
# inductor: an exactly open branch would null the whole trace, while the
# tight-binding mapping keeps v = 0 exactly for them.
PINCHED_LV_NH = 1000.0

_GHZ = 1e9
_NH = 1e-9
_FF = 1e-15


def _gate_array(values, length, name, positive=False) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(length, float(arr))
    if arr.shape != (length,):
        raise ValidationError(f"{name} must have length {length}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} entries must be finite")
    if positive and not np.all(arr > 0):
        raise ValidationError(f"{name} entries must be > 0")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GateModel:
    """Per-junction map from gate voltage and signal current to inductance.

    In parametric mode the low-power inductance follows
    ``l_min / s((v_g - v_p)/(v_o - v_p))`` with a clamped smoothstep ramp
    s, infinite at and below pinch-off. In table mode each junction
    carries measured (voltage, inductance) samples interpolated
    monotonically. The kinetic-inductance power factor
    ``1 + (i_s/i_star)^2`` applies multiplicatively in both modes.
    """

    n_junctions: int
    v_p: np.ndarray
    v_o: np.ndarray
    l_min: np.ndarray
    i_star: np.ndarray
    mode: str = "parametric"
    tables: Optional[tuple] = None

    def __post_init__(self):
        n = int(self.n_junctions)
        if n < 1:
            raise ValidationError(f"n_junctions must be >= 1, got {self.n_junctions}")
        object.__setattr__(self, "n_junctions", n)
        object.__setattr__(self, "v_p", _gate_array(self.v_p, n, "v_p"))
        object.__setattr__(self, "v_o", _gate_array(self.v_o, n, "v_o"))
        object.__setattr__(self, "l_min", _gate_array(self.l_min, n, "l_min", positive=True))
        object.__setattr__(self, "i_star", _gate_array(self.i_star, n, "i_star", positive=True))
        if np.any(self.v_p >= self.v_o):
            raise ValidationError("each junction needs v_p < v_o")
        if self.mode not in ("parametric", "table"):
            raise ValidationError(f"mode must be 'parametric' or 'table', got {self.mode!r}")
        if self.mode == "table":
            if self.tables is None:
                raise ValidationError("table mode requires voltage/inductance samples")
            tables = self.tables
            if isinstance(tables, np.ndarray) or (
                    len(tables) and np.asarray(tables[0]).ndim == 1):
                tables = tuple([tables] * n)
            if len(tables) != n:
                raise ValidationError(
                    f"need one table per junction ({n}), got {len(tables)}")
            frozen = []
            for j, tab in enumerate(tables):
                arr = np.asarray(tab, dtype=float)
                if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
                    raise ValidationError(
                        f"table {j} must be (M, 2) samples with M >= 2")
                if np.any(np.diff(arr[:, 0]) <= 0):
                    raise ValidationError(f"table {j} voltages must be strictly increasing")
                if np.any(arr[:, 1] <= 0):
                    raise ValidationError(f"table {j} inductances must be > 0")
                arr = arr.copy()
                arr.flags.writeable = False
                frozen.append(arr)
            object.__setattr__(self, "tables", tuple(frozen))
        elif self.tables is not None:
            raise ValidationError("tables are only allowed in table mode")


@dataclass(frozen=True)
class BoxMode:
    """Spurious enclosure resonance bridging the ports in parallel."""

    f_box: float = 6.0
    q_box: float = 10.0
    coupling: float = 1.0

    def __post_init__(self):
        if not (self.f_box > 0):
            raise ValidationError(f"f_box must be > 0, got {self.f_box}")
        if not (self.q_box > 0):
            raise ValidationError(f"q_box must be > 0, got {self.q_box}")
        if not (self.coupling > 0):
            raise ValidationError(f"coupling must be > 0, got {self.coupling}")


@dataclass(frozen=True)
class S21Trace:
    """Complex two-port transmission on a strictly increasing GHz grid."""

    freqs: np.ndarray
    s21: np.ndarray
    power_dBm: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        freqs = np.array(self.freqs, dtype=float, copy=True)
        s21 = np.array(self.s21, dtype=complex, copy=True)
        if freqs.ndim != 1 or freqs.size == 0:
            raise ValidationError("frequency grid must be a non-empty 1-D array")
        if np.any(np.diff(freqs) <= 0):
            raise ValidationError("frequency grid must be strictly increasing")
        if s21.shape != freqs.shape:
            raise ValidationError(
                f"s21 shape {s21.shape} does not match grid {freqs.shape}")
        freqs.flags.writeable = False
        s21.flags.writeable = False
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "s21", s21)
        object.__setattr__(self, "metadata", dict(self.metadata))


@dataclass(frozen=True)
class Peak:
    f0_GHz: float
    linewidth_GHz: float
    amplitude: float


def _smoothstep(u: float) -> float:
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    return u * u * (3.0 - 2.0 * u)


def nanowire_inductance(model: GateModel, junction: int, v_g: float,
                        i_s: float = 0.0) -> float:
    """Junction inductance in nH at gate voltage v_g and signal current i_s.

    Returns ``inf`` for a parametric junction at or below pinch-off. Table
    mode queries outside the sampled voltage range raise
    ExtrapolationError.
    """
    j = int(junction)
    if not (0 <= j < model.n_junctions):
        raise ValidationError(
            f"junction index {junction} outside 0..{model.n_junctions - 1}")
    i_s = float(i_s)
    if i_s < 0:
        raise ValidationError(f"signal current must be >= 0, got {i_s}")
    v_g = float(v_g)
    power_factor = 1.0 + (i_s / model.i_star[j]) ** 2
    if model.mode == "parametric":
        u = (v_g - model.v_p[j]) / (model.v_o[j] - model.v_p[j])
        ramp = _smoothstep(u)
        if ramp == 0.0:
            return math.inf
        return float(model.l_min[j] / ramp * power_factor)
    table = model.tables[j]
    if v_g < table[0, 0] or v_g > table[-1, 0]:
        raise ExtrapolationError(
            f"junction {j}: v_g={v_g} outside sampled range "
            f"[{table[0, 0]}, {table[-1, 0]}]")
    l0 = float(PchipInterpolator(table[:, 0], table[:, 1])(v_g))
    return l0 * power_factor


def apply_gate_setting(circuit: CircuitSpec, model: GateModel,
                       voltages: Sequence[float], i_s: float = 0.0) -> CircuitSpec:
    """Replace every coupling inductance by its gate-model value."""
    if model.n_junctions != circuit.n_cells:
        raise ValidationError(
            f"gate model has {model.n_junctions} junctions for "
            f"{circuit.n_cells} cells")
    voltages = np.asarray(voltages, dtype=float)
    if voltages.shape != (circuit.n_cells,):
        raise ValidationError(
            f"need one voltage per junction ({circuit.n_cells}), got {voltages.shape}")
    lv = [nanowire_inductance(model, j, voltages[j], i_s)
          for j in range(circuit.n_cells)]
    return circuit.with_lv(lv)


def joint_gate_settings(model: GateModel, steps: int) -> np.ndarray:
    """Synchronous sweep: every junction interpolates v_p -> v_o together."""
    if steps < 2:
        raise ValidationError(f"joint sweep needs >= 2 steps, got {steps}")
    u = np.linspace(0.0, 1.0, steps)
    return model.v_p[None, :] + u[:, None] * (model.v_o - model.v_p)[None, :]


def single_gate_settings(model: GateModel, junction: int,
                         voltages: Sequence[float]) -> np.ndarray:
    """Per-junction sweep with all other gates held at pinch-off."""
    j = int(junction)
    if not (0 <= j < model.n_junctions):
        raise ValidationError(
            f"junction index {junction} outside 0..{model.n_junctions - 1}")
    voltages = np.asarray(voltages, dtype=float)
    settings = np.tile(model.v_p, (voltages.size, 1))
    settings[:, j] = voltages
    return settings


def _validate_freqs(freqs) -> np.ndarray:
    freqs = np.asarray(freqs, dtype=float)
    if freqs.ndim != 1 or freqs.size == 0:
        raise ValidationError("frequency grid must be a non-empty 1-D array")
    if np.any(freqs <= 0):
        raise ValidationError(
            "frequency 0 (or below) makes reactive elements singular")
    if np.any(np.diff(freqs) <= 0):
        raise ValidationError("frequency grid must be strictly increasing")
    return freqs


def ladder_abcd(circuit: CircuitSpec, freqs: Sequence[float],
                pinched_lv_nH: float = PINCHED_LV_NH) -> np.ndarray:
    """ABCD matrices of the bare chain ladder, shape (n_freq, 2, 2)."""
    freqs = _validate_freqs(freqs)
    omega = 2.0 * np.pi * freqs * _GHZ
    a = np.ones_like(omega, dtype=complex)
    b = np.zeros_like(a)
    c = np.zeros_like(a)
    d = np.ones_like(a)

    def shunt(y):
        nonlocal a, c
        a = a + b * y
        c = c + d * y

    def series(z):
        nonlocal b, d
        b = b + a * z
        d = d + c * z

    n = circuit.n_cells
    lv = np.where(np.isfinite(circuit.lv), circuit.lv, pinched_lv_nH)
    shunt(1j * omega * circuit.c0[0] * _FF)          # left terminating site
    series(1.0 / (1j * omega * circuit.cw[0] * _FF))
    for cell in range(n):
        for site, nxt in ((2 * cell, None), (2 * cell + 1, cell + 1)):
            shunt(1j * omega * circuit.c0[site] * _FF
                  + 1.0 / (1j * omega * circuit.l0[site] * _NH))
            if nxt is None:
                series(1j * omega * lv[cell] * _NH)
            else:
                series(1.0 / (1j * omega * circuit.cw[nxt] * _FF))
    shunt(1j * omega * circuit.c0[-1] * _FF)         # right terminating site
    return np.stack([np.stack([a, b], axis=-1),
                     np.stack([c, d], axis=-1)], axis=-2)


def abcd_to_s21(abcd: np.ndarray, z0: float = 50.0) -> np.ndarray:
    """Convert a stack of ABCD matrices to S21 at reference impedance z0."""
    a = abcd[..., 0, 0]
    b = abcd[..., 0, 1]
    c = abcd[..., 1, 0]
    d = abcd[..., 1, 1]
    return 2.0 / (a + b / z0 + c * z0 + d)


def circuit_mode_frequencies(circuit: CircuitSpec,
                             pinched_lv_nH: float = PINCHED_LV_NH) -> np.ndarray:
    """Exact normal-mode frequencies of the unloaded ladder, in GHz.

    Solves the generalized eigenproblem of the network's inverse-inductance
    and capacitance matrices over all nodes including the terminating
    coupling sites, whose open inductors contribute two zero-frequency
    charge modes that are dropped. Unlike the tight-binding mapping this
    route keeps the full coupling structure, so it pins down where the
    transmission peaks of the same ladder must sit.
    """
    n = circuit.n_cells
    nn = 2 * n + 2
    c0 = circuit.c0 * _FF
    l0 = circuit.l0 * _NH
    lv = np.where(np.isfinite(circuit.lv), circuit.lv, pinched_lv_nH) * _NH
    cw = circuit.cw * _FF

    m = np.zeros((nn, nn))
    k = np.zeros((nn, nn))
    m[0, 0] = c0[0]
    m[nn - 1, nn - 1] = c0[-1]
    for i in range(2 * n):
        m[1 + i, 1 + i] += c0[i]
        k[1 + i, 1 + i] += 1.0 / l0[i]
    cap_links = [(0, 1, cw[0])]
    cap_links += [(2 * j, 2 * j + 1, cw[j]) for j in range(1, n)]
    cap_links += [(2 * n, 2 * n + 1, cw[n])]
    for a, b, c in cap_links:
        m[a, a] += c
        m[b, b] += c
        m[a, b] -= c
        m[b, a] -= c
    for j in range(n):
        a, b = 1 + 2 * j, 2 + 2 * j
        k[a, a] += 1.0 / lv[j]
        k[b, b] += 1.0 / lv[j]
        k[a, b] -= 1.0 / lv[j]
        k[b, a] -= 1.0 / lv[j]

    omega_sq = scipy.linalg.eigh(k, m, eigvals_only=True)
    omega_sq = omega_sq[omega_sq > 1e6]
    if omega_sq.size != 2 * n:
        raise NumericalError(
            f"expected {2 * n} finite circuit modes, found {omega_sq.size}")
    return np.sqrt(omega_sq) / (2.0 * np.pi) / _GHZ


def _box_bridge_admittance(box: BoxMode, omega: np.ndarray, z0: float) -> np.ndarray:
    """Series-LC bridge between the ports; lossless, resonant at f_box."""
    omega_b = 2.0 * np.pi * box.f_box * _GHZ
    z_char = 2.0 * z0 * box.q_box
    l_b = z_char / omega_b
    c_b = 1.0 / (z_char * omega_b)
    react = omega * l_b - 1.0 / (omega * c_b)
    # regularize the measure-zero exact-resonance grid point
    tiny = 1e-12 * z_char
    react = np.where(np.abs(react) < tiny, tiny, react)
    return box.coupling / (1j * react)


def s21_trace(circuit: CircuitSpec, freqs: Sequence[float], z0: float = 50.0,
              box: Optional[BoxMode] = None, power_dBm: Optional[float] = None,
              pinched_lv_nH: float = PINCHED_LV_NH,
              metadata: Optional[dict] = None) -> S21Trace:
    """Two-port transmission of the chain ladder, optionally with a box mode.

    The ladder is cascaded in ABCD form and converted to S21 at z0. A box
    mode is combined in parallel by adding Y parameters before the
    conversion. Pinched-off (infinite) coupling inductances are rendered
    as ``pinched_lv_nH``, recorded in the metadata.
    """
    if not (z0 > 0):
        raise ValidationError(f"port impedance must be > 0, got {z0}")
    freqs = _validate_freqs(freqs)
    abcd = ladder_abcd(circuit, freqs, pinched_lv_nH)
    if box is None:
        s21 = abcd_to_s21(abcd, z0)
    else:
        omega = 2.0 * np.pi * freqs * _GHZ
        a = abcd[:, 0, 0]
        b = abcd[:, 0, 1]
        c = abcd[:, 1, 0]
        d = abcd[:, 1, 1]
        det = a * d - b * c
        y_box = _box_bridge_admittance(box, omega, z0)
        y11 = d / b + y_box
        y22 = a / b + y_box
        y12 = -det / b - y_box
        y21 = -1.0 / b - y_box
        denom = (1.0 + y11 * z0) * (1.0 + y22 * z0) - y12 * y21 * z0 * z0
        s21 = -2.0 * y21 * z0 / denom
    peak = float(np.max(np.abs(s21)))
    if peak > 1.0 + 1e-6:
        raise NumericalError(
            f"lossless network produced |s21| = {peak:.6f} > 1")
    pinched = [int(i) for i in np.flatnonzero(~np.isfinite(circuit.lv))]
    meta = {
        "z0_ohm": float(z0),
        "box": None if box is None else {
            "f_box_GHz": box.f_box, "q_box": box.q_box, "coupling": box.coupling},
        "pinched_cells": pinched,
        "pinched_lv_nH": float(pinched_lv_nH) if pinched else None,
        "normalized": False,
    }
    if metadata:
        meta.update(metadata)
    return S21Trace(freqs=freqs, s21=s21, power_dBm=power_dBm, metadata=meta)


def background_normalize(trace: S21Trace,
                         exclusion_windows: Sequence) -> S21Trace:
    """Divide the trace by a linear background interpolated between windows.

    The background is the linear interpolation of |s21| through the points
    outside every exclusion window (the chain modes are expected inside
    them); at least two points must survive.
    """
    windows = [(float(lo), float(hi)) for lo, hi in exclusion_windows]
    for lo, hi in windows:
        if not (lo < hi):
            raise ValidationError(f"bad exclusion window ({lo}, {hi})")
    freqs = trace.freqs
    outside = np.ones(freqs.size, dtype=bool)
    for lo, hi in windows:
        outside &= ~((freqs >= lo) & (freqs <= hi))
    if int(np.count_nonzero(outside)) < 2:
        raise ValidationError(
            "exclusion windows cover the grid; need >= 2 background points")
    mag = np.abs(trace.s21)
    background = np.interp(freqs, freqs[outside], mag[outside])
    if np.any(background <= 0):
        raise NumericalError("background magnitude vanishes; cannot normalize")
    meta = dict(trace.metadata)
    meta["normalized"] = True
    meta["exclusion_windows_GHz"] = windows
    return S21Trace(freqs=freqs, s21=trace.s21 / background,
                    power_dBm=trace.power_dBm, metadata=meta)


def _lorentzian(f, f0, hwhm, amp, base):
    return base + amp * hwhm ** 2 / ((f - f0) ** 2 + hwhm ** 2)


def extract_peaks(trace: S21Trace, prominence: float,
                  max_peaks: int) -> list:
    """Locate and refine transmission peaks on a (normalized) trace.

    Local maxima of |s21| above the prominence threshold are refined by a
    least-squares Lorentzian over a window of five linewidth estimates on
    each side; points inside other candidates' cores are excluded from
    the fit. At most ``max_peaks`` peaks (largest prominence first) are
    returned, sorted by frequency. No peak above threshold gives an empty
    list.
    """
    if max_peaks < 1:
        raise ValidationError(f"max_peaks must be >= 1, got {max_peaks}")
    freqs = trace.freqs
    mag = np.abs(trace.s21)
    idx, props = find_peaks(mag, prominence=prominence)
    if idx.size == 0:
        return []
    order = np.argsort(props["prominences"], kind="stable")[::-1][:max_peaks]
    chosen = idx[order]
    widths, _, left_ips, right_ips = peak_widths(mag, chosen, rel_height=0.5)
    grid_pos = np.arange(freqs.size)
    fwhm_est = np.interp(right_ips, grid_pos, freqs) - np.interp(left_ips, grid_pos, freqs)
    min_width = float(np.min(np.diff(freqs)))
    fwhm_est = np.maximum(fwhm_est, min_width)

    peaks = []
    for n, i in enumerate(chosen):
        f0_est = freqs[i]
        half = 5.0 * fwhm_est[n]
        window = (freqs >= f0_est - half) & (freqs <= f0_est + half)
        for m, j in enumerate(chosen):
            if j == i:
                continue
            core = 1.5 * fwhm_est[m]
            window &= ~(np.abs(freqs - freqs[j]) <= core)
        window[i] = True
        f_fit = freqs[window]
        m_fit = mag[window]
        base0 = float(np.min(m_fit))
        amp0 = float(mag[i] - base0)
        p0 = [float(f0_est), float(fwhm_est[n] / 2), max(amp0, 1e-12), base0]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", OptimizeWarning)
                popt, _ = curve_fit(
                    _lorentzian, f_fit, m_fit, p0=p0,
                    bounds=([f0_est - half, min_width / 10, 0.0, 0.0],
                            [f0_est + half, 10.0 * half, np.inf, np.inf]),
                    maxfev=2000)
            f0, hwhm, amp, _ = popt
        except RuntimeError:
            f0, hwhm, amp = f0_est, fwhm_est[n] / 2, amp0
        peaks.append(Peak(f0_GHz=float(f0), linewidth_GHz=float(2 * hwhm),
                          amplitude=float(amp)))
    peaks.sort(key=lambda p: p.f0_GHz)
    return peaks


def mode_linewidths(spectrum: Spectrum, kappa_port: float) -> np.ndarray:
    """External linewidth per mode from the wavefunction weight on the ends.

    kappa_n = kappa_port * (|psi_n(first site)|^2 + |psi_n(last site)|^2);
    the values sum to 2 * kappa_port over a complete orthonormal basis.
    """
    vec = spectrum.eigenvectors
    weight = vec[0, :] ** 2 + vec[-1, :] ** 2
    return float(kappa_port) * weight


def gate_sweep_spectrum(circuit: CircuitSpec, model: GateModel,
                        settings: Sequence[Sequence[float]], i_s: float,
                        freqs: Sequence[float], box: Optional[BoxMode] = None,
                        z0: float = 50.0, threads: int = 1) -> list:
    """One transmission trace per gate setting.

    Each setting lists one voltage per junction; the coupling inductances
    are replaced through the gate model (including the power factor at
    signal current ``i_s``) before the ladder is evaluated.
    """
    settings = np.asarray(settings, dtype=float)
    if settings.ndim != 2 or settings.shape[1] != circuit.n_cells:
        raise ValidationError(
            f"settings must be (n_settings, {circuit.n_cells}), got {settings.shape}")

    def one(k):
        voltages = settings[k]
        gated = apply_gate_setting(circuit, model, voltages, i_s)
        return s21_trace(
            gated, freqs, z0=z0, box=box,
            metadata={"gate_setting_V": [float(v) for v in voltages],
                      "i_s_uA": float(i_s), "setting_index": int(k)})

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(settings.shape[0])))
    return [one(k) for k in range(settings.shape[0])]


def read_gate_table_csv(path) -> np.ndarray:
    """Load (v_gate_V, l_nH) samples from a CSV with that header."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if [h.strip() for h in header] != ["v_gate_V", "l_nH"]:
            raise ValidationError(
                f"gate table {path} must have header 'v_gate_V,l_nH', got {header}")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    try:
        table = np.array([[float(a), float(b)] for a, b in rows])
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"gate table {path} has malformed rows: {exc}") from None
    if table.size == 0:
        raise ValidationError(f"gate table {path} has no samples")
    return table


def write_trace_outputs(trace: S21Trace, csv_path, json_path) -> None:
    """Emit the trace CSV and its JSON metadata sidecar."""
    rows = [(float(f), float(s.real), float(s.imag), float(abs(s)))
            for f, s in zip(trace.freqs, trace.s21)]
    write_csv(csv_path, ["freq_GHz", "re_s21", "im_s21", "abs_s21"], rows)
    payload = dict(trace.metadata)
    payload["power_dBm"] = trace.power_dBm
    payload["n_points"] = int(trace.freqs.size)
    payload["f_start_GHz"] = float(trace.freqs[0])
    payload["f_stop_GHz"] = float(trace.freqs[-1])
    write_json(json_path, payload)
