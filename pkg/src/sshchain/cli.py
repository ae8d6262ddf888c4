"""Command-line front end: JSON config in, CSV/JSON artifacts out.

Each subcommand reads one JSON config document (optionally patched by
dotted ``--set`` overrides), validates it against a strict key schema,
dispatches into the library and writes ``<command>_<label>.*`` files into
the output directory. Identical config and seed produce byte-identical
CSVs regardless of ``--threads``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import chain as chain_mod
from . import estimation as est_mod
from . import microwave as mw_mod
from . import spectral as spec_mod
from . import topology as topo_mod
from .csvout import ensure_dir, fmt, write_csv, write_json
from .errors import NumericalError, ValidationError

OUT_DIR_ENV = "SSHCHAIN_OUT_DIR"

_CIRCUIT_KEYS = {"n_cells", "c0_fF", "l0_nH", "lv_nH", "cw_fF"}
_CHAIN_KEYS = {"n_cells", "eps_GHz", "v_GHz", "w_GHz"}
_GATE_KEYS = {"mode", "v_p_V", "v_o_V", "l_min_nH", "i_star_uA", "table_csv", "table"}
_BOX_KEYS = {"f_box_GHz", "q_box", "coupling"}
_FREQ_KEYS = {"start_GHz", "stop_GHz", "points"}
_COMMON_KEYS = {"label", "out_dir", "seed", "threads"}

SCHEMAS = {
    "spectrum": {"chain": _CHAIN_KEYS, "circuit": _CIRCUIT_KEYS, "eps_ref_GHz": None},
    "sweep": {"circuit": _CIRCUIT_KEYS,
              "lv_grid": {"start_nH", "stop_nH", "step_nH", "values_nH"},
              "cells": None},
    "winding": {"method": None, "v_GHz": None, "w_GHz": None,
                "chain": _CHAIN_KEYS, "eps_ref_GHz": None},
    "ipr": {"chain": _CHAIN_KEYS},
    "disorder": {"chain": _CHAIN_KEYS,
                 "disorder": {"strength", "targets", "samples", "seed"}},
    "s21": {"circuit": _CIRCUIT_KEYS, "freqs": _FREQ_KEYS, "z0_ohm": None,
            "box": _BOX_KEYS, "power_dBm": None},
    "gatesweep": {"circuit": _CIRCUIT_KEYS, "gate": _GATE_KEYS,
                  "sweep": {"kind", "steps", "junction", "start_V", "stop_V",
                            "points", "settings_V"},
                  "i_s_uA": None, "freqs": _FREQ_KEYS, "z0_ohm": None,
                  "box": _BOX_KEYS, "emit_traces": None},
    "powersweep": {"circuit": _CIRCUIT_KEYS, "gate": _GATE_KEYS,
                   "setting_V": None,
                   "i_s_grid": {"start_uA", "stop_uA", "points", "values_uA"},
                   "freqs": _FREQ_KEYS, "z0_ohm": None, "box": _BOX_KEYS,
                   "emit_traces": None},
    "fit": {"fit": {"targets_GHz", "start", "free", "bounds"},
            "options": {"tol_f", "tol_x", "max_iter", "step"},
            "max_restarts": None, "target_rms_GHz": None, "multi_start": None},
}


def _validate_keys(node, schema, path):
    """Reject unknown keys anywhere in the config; no silent ignores."""
    if not isinstance(node, dict):
        return []
    problems = []
    for key, value in node.items():
        if key not in schema:
            problems.append(f"{path}.{key}")
            continue
        sub = schema[key]
        if isinstance(sub, dict):
            problems.extend(_validate_keys(value, sub, f"{path}.{key}"))
        elif isinstance(sub, (set, frozenset)):
            if isinstance(value, dict):
                problems.extend(
                    f"{path}.{key}.{k}" for k in value if k not in sub)
    return problems


def _parse_set(expr: str):
    if "=" not in expr:
        raise ValidationError(f"--set needs key=value, got {expr!r}")
    key, raw = expr.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _apply_override(config: dict, dotted: str, value):
    parts = dotted.split(".")
    node = config
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            node = node[_list_index(node, part, dotted)]
        elif isinstance(node, dict):
            node = node.setdefault(part, {})
        else:
            raise ValidationError(
                f"--set {dotted}: cannot descend into scalar at {'.'.join(parts[:i])}")
    last = parts[-1]
    if isinstance(node, list):
        node[_list_index(node, last, dotted)] = value
    elif isinstance(node, dict):
        node[last] = value
    else:
        raise ValidationError(f"--set {dotted}: target is not settable")


def _list_index(node, part, dotted):
    try:
        idx = int(part)
    except ValueError:
        raise ValidationError(
            f"--set {dotted}: {part!r} is not a list index") from None
    if not (0 <= idx < len(node)):
        raise ValidationError(f"--set {dotted}: index {idx} out of range")
    return idx


def _require(config, key, command):
    if key not in config:
        raise ValidationError(f"'{command}' config needs '{key}'")
    return config[key]


def _chain_from(config, command) -> chain_mod.ChainSpec:
    if "chain" in config:
        return chain_mod.ChainSpec.from_dict(config["chain"])
    if "circuit" in config:
        return chain_mod.map_circuit_to_tb(
            chain_mod.CircuitSpec.from_dict(config["circuit"]))
    raise ValidationError(f"'{command}' config needs 'chain' or 'circuit'")


def _freq_grid(config) -> np.ndarray:
    spec = _require(config, "freqs", "this")
    for key in ("start_GHz", "stop_GHz", "points"):
        if key not in spec:
            raise ValidationError(f"freqs needs '{key}'")
    points = int(spec["points"])
    if points < 2:
        raise ValidationError("freqs.points must be >= 2")
    return np.linspace(float(spec["start_GHz"]), float(spec["stop_GHz"]), points)


def _box_from(config):
    if config.get("box") is None:
        return None
    box = config["box"]
    return mw_mod.BoxMode(
        f_box=float(box.get("f_box_GHz", 6.0)),
        q_box=float(box.get("q_box", 10.0)),
        coupling=float(box.get("coupling", 1.0)),
    )


def _gate_from(config, n_junctions) -> mw_mod.GateModel:
    gate = _require(config, "gate", "this")
    mode = gate.get("mode", "parametric")
    tables = None
    if "table_csv" in gate:
        path = gate["table_csv"]
        if not os.path.isfile(path):
            raise ValidationError(f"gate table file not found: {path}")
        tables = mw_mod.read_gate_table_csv(path)
    elif "table" in gate:
        tables = gate["table"]
    return mw_mod.GateModel(
        n_junctions=n_junctions,
        v_p=gate.get("v_p_V", 0.0),
        v_o=gate.get("v_o_V", 1.0),
        l_min=gate.get("l_min_nH", 9.0),
        i_star=gate.get("i_star_uA", 1.0),
        mode=mode,
        tables=tables,
    )


def _classify_circuit(circuit):
    mapped = chain_mod.map_circuit_to_tb(circuit)
    spectrum = spec_mod.eigendecompose(chain_mod.build_tb_hamiltonian(mapped))
    eps_ref = float(np.mean(mapped.eps))
    return mapped, spectrum, spec_mod.classify_modes(spectrum, eps_ref)


def _run_spectrum(config, out_dir, label, threads):
    chain = _chain_from(config, "spectrum")
    eps_ref = float(config.get("eps_ref_GHz", np.mean(chain.eps)))
    spectrum = spec_mod.eigendecompose(chain_mod.build_tb_hamiltonian(chain))
    cls = spec_mod.classify_modes(spectrum, eps_ref)
    rows = [(k, float(f), lab) for k, (f, lab)
            in enumerate(zip(spectrum.eigenvalues, cls.labels))]
    write_csv(os.path.join(out_dir, f"spectrum_{label}.csv"),
              ["mode_index", "freq_GHz", "label"], rows)
    write_json(os.path.join(out_dir, f"spectrum_{label}.json"), {
        "eps_ref_GHz": eps_ref,
        "fsr_edge_bulk_GHz": cls.fsr_edge_bulk,
        "fsr_edge_edge_GHz": cls.fsr_edge_edge,
        "phase_tag": cls.phase_tag,
    })
    return (f"phase={cls.phase_tag} fsr_edge_bulk_GHz={fmt(cls.fsr_edge_bulk)} "
            f"fsr_edge_edge_GHz={fmt(cls.fsr_edge_edge)}")


def _run_sweep(config, out_dir, label, threads):
    circuit = chain_mod.CircuitSpec.from_dict(_require(config, "circuit", "sweep"))
    grid_cfg = _require(config, "lv_grid", "sweep")
    if "values_nH" in grid_cfg:
        grid = [float(x) for x in grid_cfg["values_nH"]]
    else:
        start = float(grid_cfg["start_nH"])
        stop = float(grid_cfg["stop_nH"])
        step = float(grid_cfg["step_nH"])
        if step <= 0 or stop < start:
            raise ValidationError("lv_grid needs step_nH > 0 and stop >= start")
        grid = list(np.arange(start, stop + step / 2, step))
    cells = config.get("cells")
    sweep = spec_mod.sweep_coupling(circuit, grid, cells=cells, threads=threads)
    spec_mod.write_sweep_csv(
        sweep,
        os.path.join(out_dir, f"sweep_{label}.csv"),
        os.path.join(out_dir, f"sweep_{label}_summary.csv"))
    crossing = spec_mod.find_fsr_crossing(sweep)
    if crossing is None:
        return f"points={len(sweep)} crossing=none"
    return f"points={len(sweep)} crossing_lv_nH={fmt(crossing)}"


def _run_winding(config, out_dir, label, threads):
    method = config.get("method", "k-space")
    if method == "k-space":
        for key in ("v_GHz", "w_GHz"):
            if key not in config:
                raise ValidationError(f"k-space winding needs '{key}'")
        result = topo_mod.winding_number_k_space(
            float(config["v_GHz"]), float(config["w_GHz"]))
    elif method == "real-space":
        chain = _chain_from(config, "winding")
        eps_ref = float(config.get("eps_ref_GHz", np.mean(chain.eps)))
        result = topo_mod.winding_number_real_space(
            chain_mod.build_tb_hamiltonian(chain), eps_ref)
    else:
        raise ValidationError(
            f"winding method must be 'k-space' or 'real-space', got {method!r}")
    write_json(os.path.join(out_dir, f"winding_{label}.json"), {
        "nu": result.nu,
        "method": result.method,
        "chain_length": result.chain_length,
    })
    return f"nu={fmt(result.nu)} method={result.method}"


def _run_ipr(config, out_dir, label, threads):
    chain = _chain_from(config, "ipr")
    spectrum = spec_mod.eigendecompose(chain_mod.build_tb_hamiltonian(chain))
    values = [topo_mod.ipr(spectrum.eigenvectors[:, k])
              for k in range(spectrum.n_sites)]
    rows = [(k, float(spectrum.eigenvalues[k]), values[k])
            for k in range(spectrum.n_sites)]
    write_csv(os.path.join(out_dir, f"ipr_{label}.csv"),
              ["mode_index", "freq_GHz", "ipr"], rows)
    return f"modes={len(values)} ipr_min={fmt(min(values))} ipr_max={fmt(max(values))}"


def _run_disorder(config, out_dir, label, threads):
    chain = _chain_from(config, "disorder")
    cfg = _require(config, "disorder", "disorder")
    seed = cfg.get("seed", config.get("seed"))
    if seed is None:
        raise ValidationError("disorder runs need a seed (config 'seed' or --seed)")
    dconf = topo_mod.DisorderConfig(
        strength=cfg.get("strength", 0.1),
        targets=tuple(cfg.get("targets", ("v", "w"))),
        samples=cfg.get("samples", 100),
        seed=int(seed),
    )
    result = topo_mod.disorder_ensemble(chain, dconf, threads=threads)
    topo_mod.write_ensemble_outputs(
        result,
        os.path.join(out_dir, f"disorder_{label}.csv"),
        os.path.join(out_dir, f"disorder_{label}.json"))
    return (f"mean_nu={fmt(result.mean_nu)} std_nu={fmt(result.std_nu)} "
            f"rejections={result.rejections}")


def _run_s21(config, out_dir, label, threads):
    circuit = chain_mod.CircuitSpec.from_dict(_require(config, "circuit", "s21"))
    freqs = _freq_grid(config)
    trace = mw_mod.s21_trace(
        circuit, freqs,
        z0=float(config.get("z0_ohm", 50.0)),
        box=_box_from(config),
        power_dBm=config.get("power_dBm"),
    )
    mw_mod.write_trace_outputs(
        trace,
        os.path.join(out_dir, f"s21_{label}.csv"),
        os.path.join(out_dir, f"s21_{label}.json"))
    return f"points={trace.freqs.size} abs_s21_max={fmt(float(np.max(np.abs(trace.s21))))}"


def _gate_settings_from(config, model):
    sweep = _require(config, "sweep", "gatesweep")
    kind = sweep.get("kind", "joint")
    if kind == "joint":
        return mw_mod.joint_gate_settings(model, int(sweep.get("steps", 11)))
    if kind == "single":
        if "junction" not in sweep:
            raise ValidationError("single gate sweep needs 'junction'")
        voltages = np.linspace(float(sweep.get("start_V", model.v_p[int(sweep["junction"])])),
                               float(sweep.get("stop_V", model.v_o[int(sweep["junction"])])),
                               int(sweep.get("points", 11)))
        return mw_mod.single_gate_settings(model, int(sweep["junction"]), voltages)
    if kind == "explicit":
        if "settings_V" not in sweep:
            raise ValidationError("explicit gate sweep needs 'settings_V'")
        return np.asarray(sweep["settings_V"], dtype=float)
    raise ValidationError(
        f"sweep.kind must be joint, single or explicit, got {kind!r}")


def _classification_row(circuit, model, voltages, i_s):
    gated = mw_mod.apply_gate_setting(circuit, model, voltages, i_s)
    _, _, cls = _classify_circuit(gated)
    return gated, cls


def _run_gatesweep(config, out_dir, label, threads):
    circuit = chain_mod.CircuitSpec.from_dict(_require(config, "circuit", "gatesweep"))
    model = _gate_from(config, circuit.n_cells)
    settings = _gate_settings_from(config, model)
    i_s = float(config.get("i_s_uA", 0.0))
    freqs = _freq_grid(config)
    traces = mw_mod.gate_sweep_spectrum(
        circuit, model, settings, i_s, freqs,
        box=_box_from(config), z0=float(config.get("z0_ohm", 50.0)),
        threads=threads)
    emit_traces = bool(config.get("emit_traces", True))
    n_written = 0
    if emit_traces:
        for k, trace in enumerate(traces):
            mw_mod.write_trace_outputs(
                trace,
                os.path.join(out_dir, f"gatesweep_{label}_trace{k:03d}.csv"),
                os.path.join(out_dir, f"gatesweep_{label}_trace{k:03d}.json"))
            n_written += 1
    rows = []
    for k in range(settings.shape[0]):
        gated, cls = _classification_row(circuit, model, settings[k], i_s)
        rows.append(tuple([k] + [float(v) for v in settings[k]]
                          + [cls.fsr_edge_bulk, cls.fsr_edge_edge, cls.phase_tag]))
    header = (["setting_index"]
              + [f"v_g{j}_V" for j in range(circuit.n_cells)]
              + ["fsr_edge_bulk_GHz", "fsr_edge_edge_GHz", "phase_tag"])
    write_csv(os.path.join(out_dir, f"gatesweep_{label}_summary.csv"), header, rows)
    return f"settings={settings.shape[0]} traces_written={n_written}"


def _run_powersweep(config, out_dir, label, threads):
    circuit = chain_mod.CircuitSpec.from_dict(_require(config, "circuit", "powersweep"))
    model = _gate_from(config, circuit.n_cells)
    setting = config.get("setting_V", "open")
    if isinstance(setting, str):
        if setting == "open":
            voltages = np.array(model.v_o)
        elif setting == "pinch":
            voltages = np.array(model.v_p)
        else:
            raise ValidationError(
                f"setting_V must be 'open', 'pinch' or a voltage list, got {setting!r}")
    else:
        voltages = np.asarray(setting, dtype=float)
    grid_cfg = _require(config, "i_s_grid", "powersweep")
    if "values_uA" in grid_cfg:
        i_grid = [float(x) for x in grid_cfg["values_uA"]]
    else:
        i_grid = list(np.linspace(float(grid_cfg.get("start_uA", 0.0)),
                                  float(grid_cfg["stop_uA"]),
                                  int(grid_cfg.get("points", 9))))
    emit_traces = bool(config.get("emit_traces", False))
    rows = []
    phases = []
    for k, i_s in enumerate(i_grid):
        gated, cls = _classification_row(circuit, model, voltages, i_s)
        phases.append(cls.phase_tag)
        rows.append(tuple([float(i_s)] + [float(x) for x in gated.lv]
                          + [cls.fsr_edge_bulk, cls.fsr_edge_edge, cls.phase_tag]))
        if emit_traces:
            trace = mw_mod.s21_trace(
                gated, _freq_grid(config), z0=float(config.get("z0_ohm", 50.0)),
                box=_box_from(config),
                metadata={"i_s_uA": float(i_s),
                          "gate_setting_V": [float(v) for v in voltages]})
            mw_mod.write_trace_outputs(
                trace,
                os.path.join(out_dir, f"powersweep_{label}_trace{k:03d}.csv"),
                os.path.join(out_dir, f"powersweep_{label}_trace{k:03d}.json"))
    header = (["i_s_uA"] + [f"lv{j}_nH" for j in range(circuit.n_cells)]
              + ["fsr_edge_bulk_GHz", "fsr_edge_edge_GHz", "phase_tag"])
    write_csv(os.path.join(out_dir, f"powersweep_{label}.csv"), header, rows)
    return f"points={len(i_grid)} phase_first={phases[0]} phase_last={phases[-1]}"


def _run_fit(config, out_dir, label, threads):
    problem = est_mod.fit_problem_from_dict(_require(config, "fit", "fit"))
    opts_cfg = config.get("options", {})
    options = est_mod.NelderMeadOptions(
        tol_f=float(opts_cfg.get("tol_f", 1e-7)),
        tol_x=float(opts_cfg.get("tol_x", 1e-9)),
        max_iter=int(opts_cfg.get("max_iter", 5000)),
        step=float(opts_cfg.get("step", 0.02)),
    )
    result = est_mod.fit_circuit_params(
        problem, options=options,
        max_restarts=int(config.get("max_restarts", 8)),
        target_rms_GHz=float(config.get("target_rms_GHz", 1e-7)),
        multi_start=int(config.get("multi_start", 1)),
    )
    est_mod.write_fit_outputs(
        result,
        os.path.join(out_dir, f"fit_{label}.json"),
        os.path.join(out_dir, f"fit_{label}_sites.csv"),
        os.path.join(out_dir, f"fit_{label}_couplings.csv"))
    return (f"residual_rms_kHz={fmt(result.residual_rms_kHz)} "
            f"converged={result.converged} restarts={result.restarts}")


RUNNERS = {
    "spectrum": _run_spectrum,
    "sweep": _run_sweep,
    "winding": _run_winding,
    "ipr": _run_ipr,
    "disorder": _run_disorder,
    "s21": _run_s21,
    "gatesweep": _run_gatesweep,
    "powersweep": _run_powersweep,
    "fit": _run_fit,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sshchain",
        description="Bosonic SSH chain simulator: spectra, topology, "
                    "transmission and parameter estimation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path config override, e.g. circuit.lv_nH.2=15")
        p.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or .)")
        p.add_argument("--label", help="output file label (default: timestamp)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=None,
                       help="parallelism cap for sweeps and ensembles")
        p.add_argument("--dry-run", action="store_true",
                       help="validate the config and print the resolved "
                            "parameter set without computing")
    return parser


def _resolve_config(args) -> dict:
    config = {}
    if args.config:
        if not os.path.isfile(args.config):
            raise ValidationError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            try:
                config = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"config is not valid JSON: {exc}") from None
        if not isinstance(config, dict):
            raise ValidationError("config document must be a JSON object")
    for expr in args.set:
        key, value = _parse_set(expr)
        _apply_override(config, key, value)
    if args.seed is not None:
        config["seed"] = args.seed
    schema = dict(SCHEMAS[args.command])
    schema.update({k: None for k in _COMMON_KEYS})
    problems = _validate_keys(config, schema, args.command)
    if problems:
        raise ValidationError(f"unknown config keys: {', '.join(sorted(problems))}")
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
        if args.dry_run:
            print(json.dumps(config, indent=2, sort_keys=True))
            return 0
        out_dir = args.out_dir or config.get("out_dir") \
            or os.environ.get(OUT_DIR_ENV) or "."
        try:
            ensure_dir(out_dir)
        except OSError as exc:
            raise ValidationError(f"output directory not writable: {exc}") from None
        label = args.label or config.get("label") \
            or time.strftime("%Y%m%dT%H%M%S")
        threads = args.threads if args.threads is not None \
            else int(config.get("threads", 1))
        if threads < 1:
            raise ValidationError(f"threads must be >= 1, got {threads}")
        summary = RUNNERS[args.command](config, out_dir, label, threads)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
