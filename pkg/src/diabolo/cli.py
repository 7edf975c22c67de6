"""Command-line entry point: ``diabolo <verb> [--config FILE] [--preset NAME] ...``.

Every verb writes plot-ready tables (CSV or JSON) plus ``manifest.json``
with the resolved config, the defaults that were filled in, the physical
constants and the library versions. Nothing time-dependent is written, so a
rerun with the same config and seed reproduces every file byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import warnings
from importlib import metadata
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import telegraph as tg
from .config import MODES, RunConfig, load_config, parse_override, resolve, _merge
from .constants import CONSTANTS
from .diabolic import dp_atlas, find_dps, reference_chain
from .errors import ConfigError, DataError, DiaboloError, InsufficientDataError
from .rates import (
    _site_fields,
    _spectrum,
    crystal_field,
    current_decomposition_fit,
    current_decomposition_fit_multi,
    current_sweep,
    lifetime_grid,
    lifetime_point,
)
from .spinmodel import basis_labels

log = logging.getLogger("diabolo")

LIFETIME_COLUMNS = ("Bx_T", "Bz_T", "gap_meV", "P01", "T_A_s", "T_B_s", "T_avg_s", "sx_quanta",
                    "pocket_overlap_A", "pocket_overlap_B")
DP_COLUMNS = ("j", "Bx_T", "gap_meV", "sx_quanta_after", "multiplicity")
ATLAS_COLUMNS = ("N", "J_over_absD", "j", "Bx_T", "Bx_over_Bx3", "gap_meV", "sx_quanta_after")
FIT_LIFETIME_COLUMNS = ("state", "T_s", "ci_low_s", "ci_high_s", "n_events", "method", "exponential_ok")
CURRENT_FIT_COLUMNS = ("Bx_T", "r_O_per_pA_s", "r_T_per_pA_s", "I0_pA", "r_O_stderr", "r_T_stderr")


# -- emission ------------------------------------------------------------


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".9g")
    return str(v)


def _json_value(v):
    if v is None or isinstance(v, (bool, np.bool_, str)):
        return bool(v) if isinstance(v, np.bool_) else v
    if isinstance(v, (int, np.integer)):
        return int(v)
    x = float(v)
    if not np.isfinite(x):
        return None
    return float(format(x, ".9g"))


def emit_results(path, columns: Sequence[str], rows: Sequence[Sequence], fmt: str = "csv") -> Path:
    """Write one table. Empty ``rows`` give a header-only file and a warning."""
    # append rather than replace: stems such as lifetime_site0_V2.75mV carry a dot
    path = Path(path)
    path = path.with_name(f"{path.name}.{fmt}")
    if not rows:
        warnings.warn(f"empty series; writing header only to {path.name}", stacklevel=2)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            lines = [",".join(columns)] + [",".join(_cell(v) for v in r) for r in rows]
            path.write_text("\n".join(lines) + "\n")
        else:
            data = {"columns": list(columns),
                    "rows": [{c: _json_value(v) for c, v in zip(columns, r)} for r in rows]}
            path.write_text(json.dumps(data, indent=1) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    return path


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("diabolo", "numpy", "scipy", "pyyaml"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def write_manifest(cfg: RunConfig, outputs: list, results: Optional[dict] = None) -> Path:
    manifest = {
        "mode": cfg.mode,
        "preset": cfg.preset,
        "config_file": cfg.source,
        "config": cfg.raw,
        "filled_defaults": sorted(cfg.filled_defaults),
        "constants": CONSTANTS,
        "versions": _versions(),
        "outputs": sorted(Path(p).name for p in outputs),
    }
    if results:
        manifest["results"] = {k: _json_value(v) if not isinstance(v, (dict, list)) else v
                               for k, v in results.items()}
    path = cfg.out_dir / "manifest.json"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=_json_value) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    return path


# -- verbs ---------------------------------------------------------------


def _need_chain(cfg: RunConfig):
    if cfg.chain is None:
        raise ConfigError(f"mode {cfg.mode} needs a chain (chain.D or a preset)")
    return cfg.chain


def run_spectrum(cfg: RunConfig) -> tuple:
    chain = _need_chain(cfg)
    tp = cfg.transport()
    k = min(int(cfg.section("spectrum")["n_states"]), chain.dim)
    rows, states = [], []
    labels = basis_labels(chain)
    for n, cfg_f in enumerate(cfg.sweep_fields()):
        bcrys, fields = _site_fields(chain, cfg_f, tp, cfg.probed_tip_field())
        spec = _spectrum(chain, fields, k, None)
        rows.append([*bcrys, *spec.energies[:k]])
        if n == 0:
            for s in range(min(k, 2)):
                vec = spec.states[:, s]
                for idx in np.argsort(-np.abs(vec), kind="stable")[:8]:
                    m = "|".join(format(v, "+g") for v in labels[idx])
                    states.append([s, m, float(vec[idx])])
    cols = ("Bx_T", "By_T", "Bz_T") + tuple(f"E{s}_meV" for s in range(k))
    out = [emit_results(cfg.out_dir / "spectrum", cols, rows, cfg.fmt),
           emit_results(cfg.out_dir / "states", ("state", "basis", "amplitude"), states, cfg.fmt)]
    return out, {}


def _bx_range(cfg: RunConfig) -> tuple:
    sw = cfg.section("field")["sweep"]
    if sw["axis"] == "z":
        raise ConfigError("dp-scan needs a transverse sweep (axis b1, b2 or x)")
    fields = cfg.sweep_fields()
    ends = [abs(crystal_field(fields[0])[0]), abs(crystal_field(fields[-1])[0])]
    return min(ends), max(ends)


def run_dp_scan(cfg: RunConfig) -> tuple:
    chain = _need_chain(cfg)
    opts = cfg.section("dp_scan")
    lo, hi = _bx_range(cfg)
    if opts["longitudinal"]:
        # follow the B_z that accompanies B_x along the configured sweep
        fields = cfg.sweep_fields()
        b0, b1 = crystal_field(fields[0]), crystal_field(fields[-1])
        ratio = (b1[2] - b0[2]) / (b1[0] - b0[0]) if b1[0] != b0[0] else 0.0
        dps = find_dps(chain, (lo, hi), lambda bx: ratio * bx, resolution=opts["resolution"],
                       gap_tolerance=opts["gap_tolerance"], xtol=opts["xtol"])
    else:
        dps = find_dps(reference_chain(chain), (lo, hi), 0.0, resolution=opts["resolution"],
                       gap_tolerance=opts["gap_tolerance"], xtol=opts["xtol"])
    rows = [[p.index_j, p.B_x, p.gap_at_point, p.sx_quanta_after, p.multiplicity] for p in dps]
    return [emit_results(cfg.out_dir / "dps", DP_COLUMNS, rows, cfg.fmt)], {"n_dps": len(rows)}


def run_atlas(cfg: RunConfig) -> tuple:
    chain = _need_chain(cfg)
    a = cfg.section("atlas")
    rows = dp_atlas(a["N"], a["J_over_absD"], chain.sites[0], Bx_max=a["bx_max"],
                    resolution=a["resolution"], max_dim=a["max_dim"], n_jobs=cfg.threads)
    table = [[r.N, r.J_over_absD, r.j, r.Bx_T, r.Bx_over_Bx3, r.gap_meV, r.sx_quanta_after] for r in rows]
    return [emit_results(cfg.out_dir / "atlas", ATLAS_COLUMNS, table, cfg.fmt)], {"n_rows": len(table)}


def _lifetime_row(p) -> list:
    return [p.field_crystal[0], p.field_crystal[2], p.gap, p.scattering_intensity, p.T_A, p.T_B,
            p.T_avg, p.sx_quanta, p.pocket_overlap_A, p.pocket_overlap_B]


def run_lifetime_curve(cfg: RunConfig) -> tuple:
    chain = _need_chain(cfg)
    t = cfg.section("transport")
    grid = lifetime_grid(chain, cfg.sweep_fields(), cfg.transport(), t["probed_sites"], biases=cfg.biases(),
                         n_states=t["n_states"], n_amplitudes=t["n_amplitudes"],
                         probed_tip_field=cfg.probed_tip_field(), pocket_threshold=t["pocket_threshold"],
                         n_jobs=cfg.threads)
    outputs, results = [], {}
    multi_bias = len(cfg.biases()) > 1
    for (site, bias), curve in grid.items():
        name = f"lifetime_site{site}" + (f"_V{format(bias, 'g')}mV" if multi_bias else "")
        outputs.append(emit_results(cfg.out_dir / name, LIFETIME_COLUMNS,
                                    [_lifetime_row(p) for p in curve], cfg.fmt))
        if curve:
            best = max(curve, key=lambda p: p.T_avg)
            results[f"{name}_peak_Bx_T"] = float(best.field_crystal[0])
            results[f"{name}_peak_T_avg_s"] = float(best.T_avg)
    return outputs, results


def _estimate_row(name, est) -> list:
    if est is None:
        return [name, float("nan"), float("nan"), float("nan"), 0, "none", None]
    return [name, est.T, est.ci_95[0], est.ci_95[1], est.n_events, est.method, est.exponential_ok]


def _fit_states(dwells, states, min_events, strict: bool) -> dict:
    out = {}
    for s in states:
        try:
            out[s] = tg.fit_dwell_times(dwells, s, min_events=min_events)
        except InsufficientDataError as exc:
            if strict:
                raise
            warnings.warn(str(exc), stacklevel=2)
            out[s] = None
    return out


def _analysis(cfg: RunConfig, trace: tg.TelegraphTrace, strict: bool, low_pocket="config") -> tuple:
    o = cfg.section("telegraph")
    low_pocket = o["low_pocket"] if low_pocket == "config" else low_pocket
    dwells = tg.detect_switches(trace, hysteresis=o["hysteresis"], min_dwell=o["min_dwell"],
                                low_pocket=low_pocket, median_window=o["median_window"])
    states = ("A", "B") if low_pocket else ("H", "L")
    fits = _fit_states(dwells, states, o["min_events"], strict)
    results = {f"T_{s}_s": (f.T if f else None) for s, f in fits.items()}
    if all(fits.values()):
        results["T_avg_s"] = tg.average_lifetime(*(fits[s].T for s in states))
        if o["temperature"]:
            # the high-current level is the one not mapped to the low pocket
            low = low_pocket or "L"
            high = [s for s in states if s != low][0]
            results["ratio_energy_ueV"] = tg.lifetime_ratio_energy(fits[high].T, fits[low].T, o["temperature"])
    rows = [_estimate_row(s, fits[s]) for s in states]
    return dwells, rows, results


def run_telegraph(cfg: RunConfig) -> tuple:
    o = cfg.section("telegraph")
    if o["rates"] is not None:
        rates = [float(v) for v in o["rates"]]
        if len(rates) != 2 or min(rates) <= 0:
            raise ConfigError("telegraph.rates needs two positive rates [out of A, out of B] in 1/s")
        truth = {"T_A_true_s": 1 / rates[0], "T_B_true_s": 1 / rates[1]}
    else:
        chain = _need_chain(cfg)
        t = cfg.section("transport")
        p = lifetime_point(chain, cfg.field_config(), cfg.transport(), n_states=t["n_states"],
                           n_amplitudes=t["n_amplitudes"], probed_tip_field=cfg.probed_tip_field(),
                           pocket_threshold=t["pocket_threshold"])
        rates = [1 / p.T_A, 1 / p.T_B]
        truth = {"T_A_true_s": p.T_A, "T_B_true_s": p.T_B}
    W = tg.two_state_rates(*rates)
    levels = [float(v) for v in o["levels_pA"]]
    if len(levels) != 2:
        raise ConfigError("telegraph.levels_pA needs two values [A, B]")
    traj = tg.simulate_trajectory(W, o["duration"], seed=cfg.seed)
    trace = tg.synthesize_trace(traj, tg.readout_levels(["A", "B"], *levels), noise_rms=o["noise_rms"],
                                sample_rate=o["sample_rate"], drift=o["drift"], seed=cfg.seed)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = cfg.out_dir / "trace.txt"
    tg.write_trace(trace_path, trace)
    # the synthesized polarity fixes which pocket sits on the low level
    low = ("A" if levels[0] < levels[1] else "B") if o["low_pocket"] else None
    dwells, rows, results = _analysis(cfg, trace, strict=False, low_pocket=low)
    dwell_path = cfg.out_dir / "dwells.csv"
    tg.write_dwells(dwell_path, dwells)
    outputs = [trace_path, dwell_path, emit_results(cfg.out_dir / "lifetimes", FIT_LIFETIME_COLUMNS, rows, cfg.fmt)]
    return outputs, {**truth, **results, "n_dwells": len(dwells)}


def run_analyze_trace(cfg: RunConfig) -> tuple:
    o = cfg.section("telegraph")
    path = Path(o["input"])
    if not path.is_file():
        raise DataError(f"trace file not found: {path}")
    trace = tg.read_trace(path)
    dwells, rows, results = _analysis(cfg, trace, strict=True)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    dwell_path = cfg.out_dir / "dwells.csv"
    tg.write_dwells(dwell_path, dwells)
    outputs = [dwell_path, emit_results(cfg.out_dir / "lifetimes", FIT_LIFETIME_COLUMNS, rows, cfg.fmt)]
    return outputs, {**results, "n_dwells": len(dwells)}


def _read_current_table(path: Path) -> dict:
    """CSV with columns ``Bx_T,current_pA,T_avg_s`` -> {Bx: (currents, T)}."""
    if not path.is_file():
        raise DataError(f"current table not found: {path}")
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    need = ("Bx_T", "current_pA", "T_avg_s")
    if any(h not in header for h in need):
        raise DataError(f"{path}: header must contain {', '.join(need)}")
    idx = [header.index(h) for h in need]
    table: dict = {}
    for n, ln in enumerate(lines[1:], 2):
        parts = ln.split(",")
        try:
            bx, cur, T = (float(parts[i]) for i in idx)
        except (ValueError, IndexError):
            raise DataError(f"{path}:{n}: malformed row {ln!r}") from None
        table.setdefault(bx, ([], []))
        table[bx][0].append(cur)
        table[bx][1].append(T)
    return table


def run_fit_current(cfg: RunConfig) -> tuple:
    f = cfg.section("fit_current")
    if f["input"]:
        table = _read_current_table(Path(f["input"]))
        fields = sorted(table)
        currents = np.asarray(table[fields[0]][0])
        for bx in fields:
            if not np.allclose(table[bx][0], currents):
                raise DataError("every field needs the same list of currents")
        T = np.array([table[bx][1] for bx in fields])
    else:
        chain = _need_chain(cfg)
        t = cfg.section("transport")
        fields = [float(v) for v in f["fields"]]
        currents = np.asarray(f["currents"], dtype=float)
        T = np.array([[p.T_avg for p in current_sweep(
            chain, cfg.field_config(b1=bx), cfg.transport(), currents, n_states=t["n_states"],
            n_amplitudes=t["n_amplitudes"], probed_tip_field=cfg.probed_tip_field(),
            pocket_threshold=t["pocket_threshold"])] for bx in fields])
    rows = []
    if f["I0"] is not None:
        for bx, Tk in zip(fields, T):
            fit = current_decomposition_fit(currents, Tk, I0=float(f["I0"]))
            rows.append([bx, fit.r_O, fit.r_T, fit.I0, fit.stderr["r_O"], fit.stderr["r_T"]])
    else:
        r_O, r_T, I0, err = current_decomposition_fit_multi(currents, T)
        for k, bx in enumerate(fields):
            rows.append([bx, r_O, r_T[k], I0, err["r_O"], err["r_T"][k]])
    data = [[bx, c, T[k, n]] for k, bx in enumerate(fields) for n, c in enumerate(currents)]
    outputs = [emit_results(cfg.out_dir / "current_fit", CURRENT_FIT_COLUMNS, rows, cfg.fmt),
               emit_results(cfg.out_dir / "current_data", ("Bx_T", "current_pA", "T_avg_s"), data, cfg.fmt)]
    return outputs, {}


VERBS = {
    "spectrum": run_spectrum,
    "dp-scan": run_dp_scan,
    "atlas": run_atlas,
    "lifetime-curve": run_lifetime_curve,
    "telegraph": run_telegraph,
    "analyze-trace": run_analyze_trace,
    "fit-current": run_fit_current,
}


def run(cfg: RunConfig) -> int:
    """Dispatch ``cfg.mode`` and write the manifest. Returns 0 on success."""
    outputs, results = VERBS[cfg.mode](cfg)
    outputs.append(write_manifest(cfg, outputs, results))
    for p in outputs:
        log.info("wrote %s", p)
    return 0


# -- argument parsing ----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diabolo", description="Spin-chain diabolic points and lifetimes.")
    ap.add_argument("verb", choices=MODES)
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--preset", help="bundled parameter set, e.g. fe5-afm-fig2d")
    ap.add_argument("--out", help="output directory (output.dir)")
    ap.add_argument("--seed", type=int, help="random seed")
    ap.add_argument("--threads", type=int, help="worker threads for sweeps")
    ap.add_argument("--format", choices=("csv", "json"), help="table format (output.format)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override any config key, e.g. --set transport.bias=5")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        over: dict = {"mode": args.verb}
        for item in args.set:
            over = _merge(over, parse_override(item))
        flags = {"seed": args.seed, "threads": args.threads}
        over.update({k: v for k, v in flags.items() if v is not None})
        out = {k: v for k, v in (("dir", args.out), ("format", args.format)) if v is not None}
        if out:
            over = _merge(over, {"output": out})
        if args.config:
            cfg = load_config(args.config, preset=args.preset, overrides=over)
        else:
            cfg = resolve({}, preset=args.preset, overrides=over)
        return run(cfg)
    except DiaboloError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # parameter validation inside the numerical modules
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
