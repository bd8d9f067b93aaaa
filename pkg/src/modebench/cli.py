"""Command-line driver for synthesis, simulation and the in-silico experiments.

Every command reads an optional JSON config (flags override file values),
seeds all randomness from one master seed, and writes its artifacts into the
output directory: mask images, CSV tables and JSON reports.  Re-running a
command with the same config reproduces the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import calib, modes, optsim, qops, serialize, synthesis, tomo

DEFAULT_OUT_ENV = "MODEBENCH_OUT"


# ---------------------------------------------------------------------------
# configuration plumbing

DEFAULT_CONFIG = {
    "seed": 1234,
    "out_dir": None,
    "layout": {
        "n_modes": 15,
        "focal_m": 0.4,
        "wavelength_m": 1.55e-6,
        "radius_m": None,
        "waist_m": None,
        "aperture_fraction": None,
        "file": None,
    },
    "grid": {"shape": [1024, 1024], "pitch_m": 18e-6},
    "setup": {
        "use_blazed_carrier": False,
        "grating_period_px": 4,
        "modulation_efficiency": 1.0,
        "substeps_2f": 2,
        "compensate_path_phases": True,
    },
    "target": {"kind": "qft", "file": None, "amount": 1},
    "noise": {
        "raw_rate_hz": 270.0,
        "loss_db": 32.0,
        "dark_per_min": 2.0,
        "duration_s": 120.0,
    },
    "synth": {"optimize": True, "max_iter": 300, "quad_pitch_m": 8e-6},
    "tomo": {
        "subset_size": 100,
        "loss_db": 13.7,
        "duration_s": 60.0,
        "state": "fourier:2",
        "trials": 5,
        "ratios": [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
    },
    "shor": {"register_size": 16, "modulus": 15, "base": 2},
    "calibrate": {"n_error_maps": 1, "error_scale_rad": 0.5},
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    cfg = DEFAULT_CONFIG
    if path:
        with open(path) as fh:
            cfg = _merge(cfg, json.load(fh))
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def _resolve_out(cfg: dict, cmd: str) -> Path:
    base = cfg.get("out_dir") or os.environ.get(DEFAULT_OUT_ENV) or "modebench-out"
    out = Path(base) / cmd
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_geometry(cfg: dict) -> tuple[modes.ModeLayout, optsim.SetupConfig]:
    lc = cfg["layout"]
    gc = cfg["grid"]
    grid = modes.GridSpec(tuple(gc["shape"]), gc["pitch_m"])
    setup_kwargs = dict(cfg["setup"])
    if lc.get("file"):
        layout = modes.ModeLayout.load(lc["file"])
        setup = optsim.SetupConfig(layout=layout, grid=grid,
                                   slm_separation=2.0 * layout.focal, **setup_kwargs)
        return layout, setup
    if lc.get("radius_m") and lc.get("waist_m"):
        chord = 2.0 * lc["radius_m"] * math.sin(math.pi / lc["n_modes"])
        frac = lc.get("aperture_fraction") or 0.4
        layout = modes.circle_layout(
            lc["n_modes"], lc["radius_m"], lc["waist_m"], lc["focal_m"],
            lc["wavelength_m"], aperture_radius=frac * chord,
        )
        setup = optsim.SetupConfig(layout=layout, grid=grid,
                                   slm_separation=2.0 * layout.focal, **setup_kwargs)
        return layout, setup
    return optsim.default_geometry(
        lc["n_modes"], focal=lc["focal_m"], wavelength=lc["wavelength_m"],
        grid=grid, **setup_kwargs,
    )


def build_target(cfg: dict, layout: modes.ModeLayout) -> np.ndarray:
    tc = cfg["target"]
    n = layout.n_modes
    kind = tc["kind"]
    if kind == "qft":
        return qops.qft_matrix(n)
    if kind == "identity":
        return np.eye(n, dtype=complex)
    if kind == "shift":
        return qops.shift_matrix(n, tc.get("amount", 1) % n)
    if kind == "clock":
        return qops.clock_matrix(n, tc.get("amount", 1) % n)
    if kind == "file":
        if not tc.get("file"):
            raise SystemExit("target.kind=file requires target.file")
        return serialize.load_complex(tc["file"])
    raise SystemExit(f"unknown target kind {kind!r}")


def build_noise(cfg: dict, seed: int, section: str = "noise") -> tomo.NoiseModel:
    nc = cfg[section] if section in cfg else cfg["noise"]
    return tomo.NoiseModel(
        raw_rate_hz=nc.get("raw_rate_hz", 270.0),
        loss_db=nc.get("loss_db", 32.0),
        dark_per_min=nc.get("dark_per_min", 2.0),
        duration_s=nc.get("duration_s", 60.0),
        seed=seed,
    )


def parse_state(spec: str, n: int) -> np.ndarray:
    """State selector: 'basis:K', 'fourier:K' or 'uniform'."""
    if spec == "uniform":
        return np.ones(n, dtype=complex) / math.sqrt(n)
    kind, _, idx = spec.partition(":")
    k = int(idx or 0)
    if kind == "basis":
        v = np.zeros(n, dtype=complex)
        v[k % n] = 1.0
        return v
    if kind == "fourier":
        return qops.fourier_basis(n)[:, k % n]
    raise SystemExit(f"unknown state spec {spec!r}")


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: dict) -> int:
    out = _resolve_out(cfg, "synth")
    layout, setup = build_geometry(cfg)
    target = build_target(cfg, layout)
    design = synthesis.design_for_target(target, layout)
    opts = synthesis.OptimizeOptions(
        max_iter=cfg["synth"]["max_iter"], quad_pitch=cfg["synth"]["quad_pitch_m"]
    )
    if cfg["synth"]["optimize"]:
        design, report = synthesis.optimize_design(design, opts)
    else:
        report = synthesis.design_report(design, quad_pitch=opts.quad_pitch)
    prep = optsim.PrepSpec(np.ones(layout.n_modes, dtype=complex) / math.sqrt(layout.n_modes))
    masks = {
        "slm0": optsim.slm0_mask(prep, setup),
        "slm1": optsim.slm1_mask(design, setup),
        "slm2": optsim.slm2_mask(design, setup),
    }
    for name, fld in masks.items():
        phase = np.angle(fld.grid)
        phase[fld.grid == 0] = 0.0
        serialize.save_mask_image(out / f"{name}.png", phase)
        serialize.save_phase_text(out / f"{name}_phase.txt", phase)
    serialize.save_complex(out / "mu.json", design.mu.astype(complex))
    serialize.save_complex(out / "nu.json", design.nu.astype(complex))
    _write_json(out / "report.json", report.to_dict())
    layout.save(out / "layout.json")
    print(f"synth: fidelity split/comb/total = "
          f"{report.fidelity_splitting:.6f}/{report.fidelity_combining:.6f}/"
          f"{report.fidelity_total:.6f} -> {out}")
    return 0


def cmd_simulate(cfg: dict) -> int:
    out = _resolve_out(cfg, "simulate")
    layout, setup = build_geometry(cfg)
    target = build_target(cfg, layout)
    design = synthesis.design_for_target(target, layout)
    t_exp = optsim.extract_transfer_matrix(design, setup)
    fid = synthesis.matrix_fidelity(t_exp, target)
    eff = synthesis.matrix_efficiency(t_exp, target)
    serialize.save_complex(out / "transfer_matrix.json", t_exp)
    _write_json(out / "report.json", {"fidelity": fid, "efficiency": eff,
                                      "setup": setup.to_dict()})
    print(f"simulate: transfer-matrix fidelity {fid:.6f}, efficiency {eff:.4f} -> {out}")
    return 0


def cmd_qft_test(cfg: dict) -> int:
    out = _resolve_out(cfg, "qft-test")
    seed = cfg["seed"]
    layout, setup = build_geometry(cfg)
    n = layout.n_modes
    F = qops.qft_matrix(n)
    design = synthesis.design_for_target(F, layout)
    omega = qops.fourier_basis(n)
    m_sim = optsim.run_states(design, list(omega.T), setup)
    fid_noiseless = synthesis.matrix_fidelity(m_sim, np.eye(n))
    # photon-counting readout of every |<phi_m|F omega_n>|^2
    noise = build_noise(cfg, seed)
    probs = np.abs(m_sim) ** 2
    probs = probs / probs.sum(axis=0, keepdims=True)
    counts = np.zeros((n, n))
    net = np.zeros((n, n))
    for col in range(n):
        col_noise = dataclasses.replace(noise, seed=seed + col)
        projectors = [np.diag((np.arange(n) == m).astype(complex)) for m in range(n)]
        rho = np.diag(probs[:, col]).astype(complex)
        recs = tomo.simulate_counts(rho, projectors, col_noise)
        counts[:, col] = [r.counts for r in recs]
        net[:, col] = [max(r.counts - r.dark_rate * r.duration, 0.0) for r in recs]
    fid_counts = synthesis.matrix_fidelity(net, np.eye(n))
    rows = [
        (m, col, probs[m, col], counts[m, col], net[m, col])
        for col in range(n) for m in range(n)
    ]
    serialize.save_csv(
        out / "qft_fourier_basis.csv",
        ["output_port", "fourier_input", "probability", "counts", "net_counts"],
        rows,
        comments=[f"noiseless transfer fidelity {fid_noiseless:.6f}",
                  f"count-matrix fidelity {fid_counts:.6f}"],
    )
    _write_json(out / "report.json", {
        "fidelity_noiseless": fid_noiseless,
        "fidelity_counts": fid_counts,
        "noise": dataclasses.asdict(noise),
    })
    print(f"qft-test: noiseless fidelity {fid_noiseless:.6f}, "
          f"counted fidelity {fid_counts:.4f} -> {out}")
    return 0


def cmd_sic(cfg: dict) -> int:
    out = _resolve_out(cfg, "sic")
    n = cfg["layout"]["n_modes"]
    fid = qops.find_sic_fiducial(n, seed=cfg["seed"])
    povm = qops.sic_povm(n, fid)
    serialize.save_complex(out / "fiducial.json", fid)
    dev = qops.sic_deviation(fid)
    _write_json(out / "report.json", {
        "d": n, "sic_deviation": dev,
        "completeness_residual": povm.completeness_residual(),
    })
    print(f"sic: d={n} deviation {dev:.2e} -> {out}")
    return 0


def cmd_tomo(cfg: dict) -> int:
    out = _resolve_out(cfg, "tomo")
    seed = cfg["seed"]
    n = cfg["layout"]["n_modes"]
    tc = cfg["tomo"]
    state = parse_state(tc["state"], n)
    fiducial = qops.find_sic_fiducial(n, seed=seed)
    povm = qops.sic_povm(n, fiducial)
    noise = tomo.NoiseModel(
        raw_rate_hz=cfg["noise"]["raw_rate_hz"], loss_db=tc["loss_db"],
        dark_per_min=cfg["noise"]["dark_per_min"], duration_s=tc["duration_s"],
        seed=seed,
    )
    records = tomo.simulate_counts(state, povm, noise)
    p_hat = tomo.probabilities_from_counts(records)
    p_true = povm.probabilities(state)
    f_stat = tomo.statistical_fidelity(p_hat, p_true)
    rng = np.random.default_rng(seed)
    subset = np.sort(rng.choice(povm.n_elements, size=tc["subset_size"], replace=False))
    sub_p = np.array([records[i].counts for i in subset])
    sub_net = np.clip(sub_p - noise.dark_rate_hz * noise.duration_s, 0.0, None)
    if sub_net.sum() == 0:
        raise SystemExit("no counts above dark background in the chosen subset")
    rho = tomo.cs_reconstruct(povm.elements[subset], sub_net / sub_net.sum())
    rho_true = np.outer(state, state.conj())
    fid = tomo.dm_fidelity(rho, rho_true)
    tdist = tomo.trace_distance(rho, rho_true)
    serialize.save_csv(
        out / "counts.csv",
        ["projector_id", "counts", "duration_s", "p_true", "p_hat"],
        [(r.projector_id, r.counts, r.duration, p_true[i], p_hat[i])
         for i, r in enumerate(records)],
    )
    serialize.save_complex(out / "rho.json", rho)
    _write_json(out / "report.json", {
        "state": tc["state"], "statistical_fidelity": f_stat,
        "dm_fidelity": fid, "trace_distance": tdist,
        "subset_size": tc["subset_size"],
        "noise": dataclasses.asdict(noise),
    })
    print(f"tomo: F_stat {f_stat:.4f}, DM fidelity {fid:.4f}, "
          f"trace distance {tdist:.4f} -> {out}")
    return 0


def cmd_sweep(cfg: dict) -> int:
    out = _resolve_out(cfg, "sweep")
    seed = cfg["seed"]
    n = cfg["layout"]["n_modes"]
    tc = cfg["tomo"]
    state = parse_state(tc["state"], n)
    povm = qops.sic_povm(n, qops.find_sic_fiducial(n, seed=seed))
    noise = tomo.NoiseModel(
        raw_rate_hz=cfg["noise"]["raw_rate_hz"], loss_db=tc["loss_db"],
        dark_per_min=cfg["noise"]["dark_per_min"], duration_s=tc["duration_s"],
        seed=seed,
    )
    rows = tomo.sampling_sweep(state, povm, noise, tc["ratios"],
                               trials=tc["trials"], seed=seed)
    serialize.save_csv(
        out / "sweep.csv",
        ["ratio", "n_projectors", "mean_fidelity", "std_fidelity",
         "mean_trace_distance", "std_trace_distance"],
        [(r.ratio, r.n_projectors, r.mean_fidelity, r.std_fidelity,
          r.mean_trace_distance, r.std_trace_distance) for r in rows],
    )
    _write_json(out / "report.json", {"rows": [r.to_dict() for r in rows]})
    print(f"sweep: {len(rows)} ratios -> {out}")
    return 0


def cmd_calibrate(cfg: dict) -> int:
    out = _resolve_out(cfg, "calibrate")
    seed = cfg["seed"]
    layout, setup = build_geometry(cfg)
    n = layout.n_modes
    target = build_target(cfg, layout)
    rng = np.random.default_rng(seed)
    eps_true = rng.uniform(-cfg["calibrate"]["error_scale_rad"],
                           cfg["calibrate"]["error_scale_rad"], size=(n, n))
    corrupted = calib.apply_phase_error(target, eps_true)
    design = synthesis.design_for_target(corrupted, layout)
    # magnitude pre-pass with the basis probes, then the two probe families
    basis_out = optsim.run_states(design, list(np.eye(n, dtype=complex)), setup,
                                  prep_mode="direct")
    mags = np.abs(basis_out)
    probe_out = optsim.run_states(design, calib.probe_vectors(n), setup,
                                  prep_mode="direct")
    recovered = calib.recover_phases(np.abs(probe_out) ** 2, mags)
    eps_hat = calib.error_map_from_relative(target, recovered)
    fixed = synthesis.design_for_target(calib.compensate(corrupted, eps_hat), layout)
    omega = qops.fourier_basis(n)
    retest = optsim.run_states(fixed, list(omega.T), setup)
    port_power = np.abs(retest) ** 2
    concentration = np.array([
        port_power[col, col] / port_power[:, col].sum() for col in range(n)
    ])
    np.savetxt(out / "phase_error_true.txt", eps_true, fmt="%.9e")
    np.savetxt(out / "phase_error_recovered.txt", eps_hat, fmt="%.9e")
    serialize.save_csv(out / "retest.csv",
                       ["fourier_input", "designated_port_fraction"],
                       list(enumerate(concentration)))
    _write_json(out / "report.json", {
        "min_port_concentration": float(concentration.min()),
        "mean_port_concentration": float(concentration.mean()),
    })
    print(f"calibrate: designated-port power fraction min "
          f"{concentration.min():.4f} -> {out}")
    return 0


def cmd_shor(cfg: dict) -> int:
    out = _resolve_out(cfg, "shor")
    sc = cfg["shor"]
    res = qops.order_finding_demo(sc["register_size"], sc["modulus"], sc["base"])
    serialize.save_csv(
        out / "joint_distribution.csv",
        ["register1"] + [f"f_{f}" for f in res.residues.tolist()],
        [(y, *res.joint[y].tolist()) for y in range(res.register_size)],
    )
    _write_json(out / "report.json", {
        "register_size": res.register_size, "modulus": res.modulus,
        "base": res.base, "period": res.period,
        "factors": list(res.factors) if res.factors else None,
    })
    factors = f" factors {res.factors[0]}x{res.factors[1]}" if res.factors else ""
    print(f"shor: period {res.period}{factors} -> {out}")
    return 0


def cmd_bell(cfg: dict) -> int:
    out = _resolve_out(cfg, "bell")
    n = cfg["layout"]["n_modes"]
    states = [qops.bell_state(n, m, p) for m in range(n) for p in range(n)]
    vecs = np.stack([s.vector for s in states])
    gram = vecs.conj() @ vecs.T
    max_off = float(np.max(np.abs(gram - np.eye(n * n))))
    base = qops.bell_state(n, 0, 0)
    overlaps = []
    for m in range(n):
        for p in range(n):
            u = qops.shift_matrix(n, m) @ qops.clock_matrix(n, p)
            switched = qops.BipartiteState(n, base.amps @ u.T)
            overlaps.append(abs(states[m * n + p].overlap(switched)))
    serialize.save_csv(out / "bell_overlaps.csv",
                       ["m", "p", "switch_overlap"],
                       [(m, p, overlaps[m * n + p]) for m in range(n) for p in range(n)])
    _write_json(out / "report.json", {
        "n": n, "gram_max_offdiag": max_off,
        "min_switch_overlap": float(min(overlaps)),
    })
    print(f"bell: {n*n} states, Gram residual {max_off:.2e}, "
          f"min switch overlap {min(overlaps):.6f} -> {out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "simulate": cmd_simulate,
    "qft-test": cmd_qft_test,
    "sic": cmd_sic,
    "tomo": cmd_tomo,
    "sweep": cmd_sweep,
    "calibrate": cmd_calibrate,
    "shor": cmd_shor,
    "bell": cmd_bell,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="modebench",
        description="Phase-only grating synthesis and simulation of linear "
                    "operations on discrete optical spatial modes.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", help="output directory root")
    parser.add_argument("--seed", type=int, help="master RNG seed")
    parser.add_argument("--n", type=int, help="mode count / dimension")
    parser.add_argument("--target", help="target kind: qft|identity|shift|clock|file")
    parser.add_argument("--target-file", help="matrix file for --target file")
    parser.add_argument("--state", help="tomography state, e.g. basis:4 or fourier:2")
    parser.add_argument("--base", type=int, help="order-finding base a")
    args = parser.parse_args(argv)

    overrides: dict = {}
    if args.out:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n is not None:
        overrides.setdefault("layout", {})["n_modes"] = args.n
    if args.target:
        overrides.setdefault("target", {})["kind"] = args.target
    if args.target_file:
        overrides.setdefault("target", {})["file"] = args.target_file
    if args.state:
        overrides.setdefault("tomo", {})["state"] = args.state
    if args.base is not None:
        overrides.setdefault("shor", {})["base"] = args.base

    cfg = load_config(args.config, overrides)
    try:
        return COMMANDS[args.command](cfg)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
