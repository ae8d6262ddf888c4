import math

import numpy as np
import pytest

from sshchain import (
    BoxMode,
    ChainSpec,
    CircuitSpec,
    ExtrapolationError,
    GateModel,
    S21Trace,
    ValidationError,
    abcd_to_s21,
    apply_gate_setting,
    background_normalize,
    build_tb_hamiltonian,
    circuit_mode_frequencies,
    classify_modes,
    default_circuit,
    eigendecompose,
    extract_peaks,
    gate_sweep_spectrum,
    joint_gate_settings,
    map_circuit_to_tb,
    mode_linewidths,
    nanowire_inductance,
    s21_trace,
    single_gate_settings,
)
from sshchain.microwave import read_gate_table_csv, write_trace_outputs
from sshchain.spectral import PHASE_TOPOLOGICAL, PHASE_TRIVIAL

from oracles import lorentzian_mag, shunt_lc_s21

GATE = GateModel(5, v_p=0.4, v_o=1.8, l_min=9.0, i_star=1.0)


class TestGateModel:
    def test_requires_vp_below_vo(self):
        with pytest.raises(ValidationError):
            GateModel(2, v_p=1.0, v_o=1.0, l_min=5.0, i_star=1.0)

    def test_per_junction_arrays(self):
        model = GateModel(3, v_p=[0.4, 0.15, 0.43], v_o=[1.8, 1.8, 1.8],
                          l_min=[8.0, 9.0, 10.0], i_star=[0.8, 1.0, 1.2])
        assert model.v_p[1] == 0.15
        assert model.l_min[2] == 10.0

    def test_table_mode_needs_samples(self):
        with pytest.raises(ValidationError):
            GateModel(2, 0.4, 1.8, 9.0, 1.0, mode="table")

    def test_tables_rejected_in_parametric_mode(self):
        with pytest.raises(ValidationError):
            GateModel(2, 0.4, 1.8, 9.0, 1.0,
                      tables=[[0.0, 100.0], [2.0, 9.0]])

    def test_table_voltage_order_enforced(self):
        with pytest.raises(ValidationError):
            GateModel(1, 0.4, 1.8, 9.0, 1.0, mode="table",
                      tables=[[1.0, 10.0], [0.5, 20.0]])


class TestNanowireInductance:
    def test_pinched_off_is_infinite(self):
        for v_g in (-1.0, 0.0, 0.4):
            assert math.isinf(nanowire_inductance(GATE, 0, v_g))
            assert math.isinf(nanowire_inductance(GATE, 0, v_g, i_s=2.0))

    def test_fully_open_reaches_l_min(self):
        assert nanowire_inductance(GATE, 2, 1.8) == pytest.approx(9.0)

    def test_power_factor_doubles_at_critical_current(self):
        assert nanowire_inductance(GATE, 2, 1.8, i_s=1.0) == pytest.approx(18.0)

    def test_monotone_in_gate_and_current(self):
        voltages = np.linspace(0.3, 2.2, 40)
        values = [nanowire_inductance(GATE, 1, v) for v in voltages]
        assert all(b <= a for a, b in zip(values, values[1:]))
        currents = np.linspace(0.0, 3.0, 25)
        values = [nanowire_inductance(GATE, 1, 1.2, i) for i in currents]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_table_mode(self):
        table = [[0.5, 200.0], [1.0, 40.0], [1.5, 12.0], [2.0, 9.0]]
        model = GateModel(2, 0.4, 2.0, 9.0, 1.0, mode="table", tables=table)
        assert nanowire_inductance(model, 0, 1.0) == pytest.approx(40.0)
        between = nanowire_inductance(model, 0, 1.25)
        assert 12.0 < between < 40.0
        assert nanowire_inductance(model, 1, 1.0, i_s=1.0) == pytest.approx(80.0)
        with pytest.raises(ExtrapolationError):
            nanowire_inductance(model, 0, 2.5)

    def test_invalid_junction_or_current(self):
        with pytest.raises(ValidationError):
            nanowire_inductance(GATE, 9, 1.0)
        with pytest.raises(ValidationError):
            nanowire_inductance(GATE, 0, 1.0, i_s=-0.5)


class TestLadder:
    def test_empty_cascade_is_transparent(self):
        identity = np.broadcast_to(np.eye(2, dtype=complex), (11, 2, 2))
        assert np.allclose(abcd_to_s21(identity), 1.0)

    def test_single_shunt_resonator_closed_form(self):
        freqs = np.linspace(4.0, 14.0, 4001)
        omega = 2 * np.pi * freqs * 1e9
        y = 1j * omega * 300e-15 + 1.0 / (1j * omega * 1e-9)
        abcd = np.zeros((freqs.size, 2, 2), dtype=complex)
        abcd[:, 0, 0] = 1.0
        abcd[:, 1, 1] = 1.0
        abcd[:, 1, 0] = y
        s21 = abcd_to_s21(abcd)
        assert np.allclose(s21, shunt_lc_s21(freqs, 1.0, 300.0), atol=1e-12)
        # the parallel-LC shunt turns transparent at its resonance
        f_peak = freqs[np.argmax(np.abs(s21))]
        assert f_peak == pytest.approx(1e3 / (2 * np.pi * math.sqrt(300.0)), abs=0.005)
        assert f_peak == pytest.approx(9.19, abs=0.01)

    def test_zero_frequency_rejected(self):
        with pytest.raises(ValidationError):
            s21_trace(default_circuit(lv_nH=30.0), [0.0, 1.0])

    def test_passivity(self):
        rng = np.random.default_rng(17)
        freqs = np.linspace(4.5, 8.0, 2001)
        for k in range(4):
            circuit = CircuitSpec(
                5,
                660.0 * (1 + 0.05 * rng.uniform(-1, 1, 10)),
                1.0 * (1 + 0.05 * rng.uniform(-1, 1, 10)),
                rng.uniform(8.0, 80.0, 5),
                30.0 * (1 + 0.05 * rng.uniform(-1, 1, 6)),
            )
            box = None if k % 2 else BoxMode(6.0, 10.0, 0.5)
            trace = s21_trace(circuit, freqs, box=box)
            assert np.max(np.abs(trace.s21)) <= 1.0 + 1e-6

    def test_reciprocity_of_disordered_ladder(self):
        rng = np.random.default_rng(23)
        circuit = CircuitSpec(
            5,
            660.0 * (1 + 0.1 * rng.uniform(-1, 1, 10)),
            1.0 * (1 + 0.1 * rng.uniform(-1, 1, 10)),
            rng.uniform(10.0, 60.0, 5),
            30.0 * (1 + 0.1 * rng.uniform(-1, 1, 6)),
        )
        reversed_circuit = CircuitSpec(
            5, circuit.c0[::-1], circuit.l0[::-1],
            circuit.lv[::-1], circuit.cw[::-1])
        freqs = np.linspace(5.0, 7.5, 1501)
        fwd = s21_trace(circuit, freqs)
        rev = s21_trace(reversed_circuit, freqs)
        assert np.max(np.abs(np.abs(fwd.s21) - np.abs(rev.s21))) < 1e-9

    def test_peaks_sit_on_exact_circuit_modes(self):
        circuit = default_circuit(lv_nH=60.0)
        modes = circuit_mode_frequencies(circuit)
        freqs = np.linspace(modes[0] - 0.15, modes[-1] + 0.15, 30001)
        trace = s21_trace(circuit, freqs)
        normalized = background_normalize(
            trace, [(modes[0] - 0.05, modes[-1] + 0.05)])
        peaks = extract_peaks(normalized, prominence=0.05, max_peaks=12)
        assert len(peaks) == 9  # quasi-degenerate mid-gap pair merges
        for peak in peaks:
            dist = float(np.min(np.abs(modes - peak.f0_GHz)))
            assert dist <= peak.linewidth_GHz

    def test_peaks_track_tb_eigenfrequencies_at_mapping_accuracy(self):
        # the weak-coupling mapping carries an O((Cw/CT)^2) offset, about
        # 5 MHz for this circuit, so the comparison is correspondingly coarse
        circuit = default_circuit(lv_nH=60.0)
        chain = map_circuit_to_tb(circuit)
        tb = eigendecompose(build_tb_hamiltonian(chain)).eigenvalues
        modes = circuit_mode_frequencies(circuit)
        freqs = np.linspace(modes[0] - 0.15, modes[-1] + 0.15, 30001)
        normalized = background_normalize(
            s21_trace(circuit, freqs), [(modes[0] - 0.05, modes[-1] + 0.05)])
        peaks = extract_peaks(normalized, prominence=0.05, max_peaks=12)
        found = np.array([p.f0_GHz for p in peaks])
        for freq in tb:
            assert float(np.min(np.abs(found - freq))) < 6e-3

    def test_trace_metadata_flags_pinched_cells(self):
        circuit = default_circuit()  # all junctions pinched
        trace = s21_trace(circuit, np.linspace(5.5, 6.6, 101))
        assert trace.metadata["pinched_cells"] == [0, 1, 2, 3, 4]
        assert trace.metadata["pinched_lv_nH"] == 1000.0
        assert trace.metadata["normalized"] is False


class TestBackgroundNormalize:
    def test_flat_trace_normalizes_to_one(self):
        freqs = np.linspace(5.0, 7.0, 501)
        trace = S21Trace(freqs, np.full(501, 0.5 + 0.0j))
        normalized = background_normalize(trace, [(5.8, 6.2)])
        assert np.allclose(np.abs(normalized.s21), 1.0)
        assert normalized.metadata["normalized"] is True

    def test_linear_background_with_notch_preserved(self):
        freqs = np.linspace(5.0, 7.0, 2001)
        background = 0.2 + 0.1 * (freqs - 5.0)
        notch = 1.0 - 0.8 * lorentzian_mag(freqs, 6.0, 0.01, 1.0)
        trace = S21Trace(freqs, (background * notch).astype(complex))
        normalized = background_normalize(trace, [(5.9, 6.1)])
        outside = (freqs < 5.9) | (freqs > 6.1)
        assert np.max(np.abs(np.abs(normalized.s21)[outside] - 1.0)) < 1e-9
        depth = np.min(np.abs(normalized.s21))
        assert depth == pytest.approx(0.2, abs=1e-3)

    def test_box_background_flattened(self):
        circuit = default_circuit(lv_nH=60.0)
        modes = circuit_mode_frequencies(circuit)
        freqs = np.linspace(modes[0] - 0.3, modes[-1] + 0.3, 20001)
        trace = s21_trace(circuit, freqs, box=BoxMode(6.0, 8.0, 1.0))
        normalized = background_normalize(
            trace, [(modes[0] - 0.05, modes[-1] + 0.05)])
        outside = (freqs < modes[0] - 0.05) | (freqs > modes[-1] + 0.05)
        baseline = np.abs(normalized.s21)[outside]
        assert np.max(np.abs(baseline - 1.0)) < 0.05

    def test_full_cover_windows_rejected(self):
        freqs = np.linspace(5.0, 7.0, 101)
        trace = S21Trace(freqs, np.full(101, 0.5 + 0.0j))
        with pytest.raises(ValidationError):
            background_normalize(trace, [(4.0, 8.0)])


class TestExtractPeaks:
    def test_single_lorentzian_recovery(self):
        freqs = np.linspace(6.0, 6.08, 1601)
        mag = lorentzian_mag(freqs, 6.04, 0.002, 0.9, baseline=1.0)
        trace = S21Trace(freqs, mag.astype(complex), metadata={"normalized": True})
        peaks = extract_peaks(trace, prominence=0.1, max_peaks=3)
        assert len(peaks) == 1
        assert abs(peaks[0].f0_GHz - 6.04) < 1e-4
        assert peaks[0].linewidth_GHz == pytest.approx(0.002, rel=0.05)
        assert peaks[0].amplitude == pytest.approx(0.9, rel=0.05)

    def test_two_overlapping_lorentzians(self):
        kappa = 0.002
        freqs = np.linspace(6.0, 6.08, 3201)
        mag = (lorentzian_mag(freqs, 6.037, kappa, 0.8, baseline=1.0)
               + lorentzian_mag(freqs, 6.043, kappa, 0.6))
        trace = S21Trace(freqs, mag.astype(complex), metadata={"normalized": True})
        peaks = extract_peaks(trace, prominence=0.1, max_peaks=4)
        assert len(peaks) == 2
        assert abs(peaks[0].f0_GHz - 6.037) < kappa / 2
        assert abs(peaks[1].f0_GHz - 6.043) < kappa / 2

    def test_no_peaks_returns_empty(self):
        freqs = np.linspace(5.0, 7.0, 301)
        trace = S21Trace(freqs, np.full(301, 1.0 + 0.0j))
        assert extract_peaks(trace, prominence=0.05, max_peaks=5) == []

    def test_max_peaks_keeps_most_prominent(self):
        freqs = np.linspace(5.9, 6.2, 4001)
        mag = (lorentzian_mag(freqs, 6.0, 0.004, 1.0, baseline=1.0)
               + lorentzian_mag(freqs, 6.1, 0.004, 0.3))
        trace = S21Trace(freqs, mag.astype(complex), metadata={"normalized": True})
        peaks = extract_peaks(trace, prominence=0.05, max_peaks=1)
        assert len(peaks) == 1
        assert abs(peaks[0].f0_GHz - 6.0) < 1e-3


class TestModeLinewidths:
    def test_uniform_state(self):
        hadamard = np.array([[1, 1, 1, 1], [1, -1, 1, -1],
                             [1, 1, -1, -1], [1, -1, -1, 1]]) / 2.0
        from sshchain.spectral import Spectrum
        spectrum = Spectrum(np.arange(4.0), hadamard)
        kappas = mode_linewidths(spectrum, 8.0)
        assert kappas[0] == pytest.approx(8.0 * 2 / 4)

    def test_midgap_pair_carries_full_port_weight(self):
        spectrum = eigendecompose(build_tb_hamiltonian(ChainSpec(5, 6.5, 0.0, 0.5)))
        kappas = mode_linewidths(spectrum, 3.0)
        edge = np.argsort(np.abs(spectrum.eigenvalues - 6.5))[:2]
        for k in edge:
            assert kappas[k] == pytest.approx(3.0, abs=1e-9)

    def test_fully_dimerized_chain_splits_port_weight(self):
        # w = 0 pairs the end sites into dimers: half weight each, interior zero
        spectrum = eigendecompose(build_tb_hamiltonian(ChainSpec(5, 6.5, 1.0, 0.0)))
        kappas = np.sort(mode_linewidths(spectrum, 3.0))
        assert np.allclose(kappas[:6], 0.0, atol=1e-12)
        assert np.allclose(kappas[6:], 1.5, atol=1e-9)

    def test_completeness_sums_to_twice_port_rate(self):
        spectrum = eigendecompose(build_tb_hamiltonian(ChainSpec(5, 6.5, 0.3, 0.5)))
        assert float(np.sum(mode_linewidths(spectrum, 2.5))) == pytest.approx(5.0)


class TestGateSweep:
    def test_all_pinched_keeps_midgap_peak(self):
        circuit = default_circuit()
        settings = np.array([GATE.v_p])
        chain = map_circuit_to_tb(apply_gate_setting(circuit, GATE, GATE.v_p, 0.0))
        eps_ref = float(np.mean(chain.eps))
        freqs = np.linspace(eps_ref - 0.45, eps_ref + 0.45, 30001)
        trace = gate_sweep_spectrum(circuit, GATE, settings, 0.0, freqs)[0]
        normalized = background_normalize(
            trace, [(eps_ref - 0.3, eps_ref + 0.3)])
        peaks = extract_peaks(normalized, prominence=0.05, max_peaks=12)
        assert peaks, "no peaks in the pinched-phase trace"
        widest = max(peaks, key=lambda p: p.linewidth_GHz)
        assert abs(widest.f0_GHz - eps_ref) < 0.02

    def test_all_open_gives_two_bands_of_five(self):
        circuit = default_circuit()
        gated = apply_gate_setting(circuit, GATE, GATE.v_o, 0.02)
        modes = circuit_mode_frequencies(gated)
        freqs = np.linspace(modes[0] - 0.2, modes[-1] + 0.2, 40001)
        trace = gate_sweep_spectrum(circuit, GATE, np.array([GATE.v_o]),
                                    0.02, freqs)[0]
        normalized = background_normalize(
            trace, [(modes[0] - 0.05, modes[-1] + 0.05)])
        peaks = extract_peaks(normalized, prominence=0.02, max_peaks=12)
        assert len(peaks) == 10
        found = np.sort([p.f0_GHz for p in peaks])
        gap_at = int(np.argmax(np.diff(found)))
        assert gap_at == 4  # five modes below the main gap, five above

    def test_power_drives_frequencies_down_toward_topological(self):
        circuit = default_circuit()
        means = []
        tags = []
        splittings = []
        for i_s in (0.0, 0.7, 1.4, 2.0):
            gated = apply_gate_setting(circuit, GATE, GATE.v_o, i_s)
            chain = map_circuit_to_tb(gated)
            spectrum = eigendecompose(build_tb_hamiltonian(chain))
            cls = classify_modes(spectrum, float(np.mean(chain.eps)))
            means.append(float(np.mean(spectrum.eigenvalues)))
            tags.append(cls.phase_tag)
            splittings.append(cls.fsr_edge_edge)
        assert all(b < a for a, b in zip(means, means[1:]))
        assert all(b < a for a, b in zip(splittings, splittings[1:]))
        assert tags[0] == PHASE_TRIVIAL
        assert tags[-1] == PHASE_TOPOLOGICAL

    def test_settings_shape_validated(self):
        with pytest.raises(ValidationError):
            gate_sweep_spectrum(default_circuit(), GATE,
                                np.zeros((2, 3)), 0.0, [5.0, 6.0])

    def test_joint_and_single_setting_builders(self):
        joint = joint_gate_settings(GATE, 5)
        assert joint.shape == (5, 5)
        assert np.allclose(joint[0], GATE.v_p)
        assert np.allclose(joint[-1], GATE.v_o)
        single = single_gate_settings(GATE, 2, [0.5, 1.0, 1.5])
        assert single.shape == (3, 5)
        assert np.allclose(single[:, 0], GATE.v_p[0])
        assert np.allclose(single[:, 2], [0.5, 1.0, 1.5])


class TestBoxMode:
    def test_validation(self):
        with pytest.raises(ValidationError):
            BoxMode(f_box=0.0)
        with pytest.raises(ValidationError):
            BoxMode(q_box=-1.0)

    def test_bandpass_away_from_chain(self):
        # pinched chain transmits almost nothing; the box passes its band
        # (the terminating shunt capacitors keep the peak below unity)
        circuit = default_circuit()
        freqs = np.linspace(4.5, 7.5, 3001)
        bare = s21_trace(circuit, freqs)
        boxed = s21_trace(circuit, freqs, box=BoxMode(6.0, 10.0, 1.0))
        k = int(np.argmin(np.abs(freqs - 6.0)))
        assert np.abs(boxed.s21[k]) > 0.3
        assert np.abs(bare.s21[k]) < 1e-3
        assert np.abs(boxed.s21[k]) > 100.0 * np.abs(bare.s21[k])

    def test_distorts_lineshape_without_moving_peaks(self):
        circuit = default_circuit(lv_nH=60.0)
        modes = circuit_mode_frequencies(circuit)
        freqs = np.linspace(modes[0] - 0.15, modes[-1] + 0.15, 30001)
        windows = [(modes[0] - 0.05, modes[-1] + 0.05)]
        plain = extract_peaks(
            background_normalize(s21_trace(circuit, freqs), windows),
            prominence=0.05, max_peaks=12)
        boxed = extract_peaks(
            background_normalize(
                s21_trace(circuit, freqs, box=BoxMode(6.0, 10.0, 0.2)), windows),
            prominence=0.05, max_peaks=12)
        for peak in plain:
            partner = min(boxed, key=lambda p: abs(p.f0_GHz - peak.f0_GHz))
            shift = abs(partner.f0_GHz - peak.f0_GHz)
            assert shift <= max(peak.linewidth_GHz, partner.linewidth_GHz)


def test_trace_outputs_and_gate_table_round_trip(tmp_path):
    circuit = default_circuit(lv_nH=40.0)
    trace = s21_trace(circuit, np.linspace(5.8, 6.4, 51), power_dBm=-30.0)
    csv_path = tmp_path / "trace.csv"
    json_path = tmp_path / "trace.json"
    write_trace_outputs(trace, csv_path, json_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "freq_GHz,re_s21,im_s21,abs_s21"
    assert len(lines) == 52
    assert '"power_dBm": -30.0' in json_path.read_text()

    table_path = tmp_path / "gate.csv"
    table_path.write_text("v_gate_V,l_nH\n0.5,120\n1.0,30\n2.0,9\n")
    table = read_gate_table_csv(table_path)
    assert table.shape == (3, 2)
    assert table[1, 1] == 30.0
    with pytest.raises(ValidationError):
        bad = tmp_path / "bad.csv"
        bad.write_text("volts,l\n1,2\n")
        read_gate_table_csv(bad)
