"""Command line entry point: propagate, reference, compare, spectrum."""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from types import SimpleNamespace

import numpy as np

from .constraints import ConstraintSpec
from .errors import ConfigError, GwpError
from .grid import Grid2D, sample, split_operator_trace
from .integrator import propagate
from .observables import TimeSeries, spectral_peaks, spectrum
from .reporting import (
    read_timeseries_csv,
    render_autocorrelation_figure,
    render_deviation_figure,
    render_propagation_figures,
    render_spectrum_figure,
    write_checkpoint,
    write_deviation_csv,
    write_gamma_csv,
    write_summary_json,
    write_timeseries_csv,
)
from .scenarios import ScenarioConfig, load_scenario


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _load(path: str) -> ScenarioConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return load_scenario(fh.read())


def _prepare_out(scn: ScenarioConfig, outdir: str) -> None:
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "effective_config.ini"), "w",
              encoding="ascii", newline="\n") as fh:
        fh.write(scn.effective_ini)


def _progress_printer(total_records: int):
    every = max(1, total_records // 20)
    count = 0

    def cb(rec):
        nonlocal count
        count += 1
        if count % every == 0:
            print(f"  t={rec.t:.4f} dt={rec.dt_used:.3e} "
                  f"active={rec.active_count}", flush=True)

    return cb


def _gamma_min_of(specs) -> float | None:
    lows = [s.bound for s in specs if s.kind == "amplitude_lower"]
    return min(lows) if lows else None


def _run_variational(scn: ScenarioConfig, specs, quiet=False):
    total = int(round(scn.integrator.t_end / scn.integrator.record_stride))
    cb = None if quiet else _progress_printer(total)
    t0 = time.perf_counter()
    res = propagate(scn.initial, scn.potential, specs, scn.integrator,
                    autocorrelation_with=scn.initial, progress=cb)
    return res, time.perf_counter() - t0


def _write_run(outdir, res, prefix="", figures=True, gamma_min=None):
    name = (lambda base: os.path.join(outdir, prefix + base))
    write_timeseries_csv(name("timeseries.csv"), res.records,
                         res.autocorrelations)
    write_gamma_csv(name("gamma.csv"), res.records)
    for idx, (tc, wpc) in enumerate(res.checkpoints, start=1):
        write_checkpoint(name(f"checkpoint_{idx:04d}.txt"), tc, wpc)
    if figures:
        render_propagation_figures(outdir, res.records, res.autocorrelations,
                                   gamma_min=gamma_min)


def _cmd_propagate(scn: ScenarioConfig, outdir: str, seed) -> int:
    _prepare_out(scn, outdir)
    partial_exc = None
    try:
        res, wall = _run_variational(scn, scn.specs)
    except GwpError as exc:
        if getattr(exc, "partial", None) is None:
            raise
        res, wall, partial_exc = exc.partial, float("nan"), exc
    _write_run(outdir, res, figures=scn.figures,
               gamma_min=_gamma_min_of(scn.specs))
    summary = {
        "command": "propagate",
        "seed": seed,
        "n_gwp": scn.initial.n_gwp,
        "dim": scn.initial.dim,
        "n_steps": res.n_steps,
        "min_dt": res.min_dt,
        "n_records": len(res.records),
        "events": [{"t": e.t, "action": e.action, "kind": e.kind,
                    "target": e.target} for e in res.events],
        "wall_seconds": wall,
        "completed": partial_exc is None,
    }
    write_summary_json(os.path.join(outdir, "summary.json"), summary)
    if partial_exc is not None:
        raise partial_exc
    print(f"propagate: {res.n_steps} steps, {len(res.records)} records, "
          f"min dt {res.min_dt:.3e}, {wall:.1f}s")
    return 0


def _reference_rows(trace, dt):
    rows = []
    for i, t in enumerate(trace.times):
        rows.append(SimpleNamespace(
            t=float(t), dt_used=dt, active_count=0,
            cond_estimate=float("nan"), norm=float(trace.norms[i]),
            energy=float(trace.energies[i]),
        ))
    return rows


def _run_reference(scn: ScenarioConfig, progress=None):
    if scn.potential.dim != 2:
        raise ConfigError("the grid reference supports dim=2 only")
    ref = scn.reference
    grid = Grid2D(n_mu=ref.n_mu, n_nu=ref.n_nu, half_width=ref.half_width)
    field0 = sample(scn.initial, grid)
    stride = scn.integrator.record_stride
    k = ref.steps_per_stride
    dt = stride / k
    n_strides = int(round(scn.integrator.t_end / stride))
    n_steps = max(1, n_strides * k)
    t0 = time.perf_counter()
    trace = split_operator_trace(field0, scn.potential, dt, n_steps,
                                 record_every=k, leak_tol=ref.leak_tol,
                                 progress=progress)
    return trace, dt, time.perf_counter() - t0


def _cmd_reference(scn: ScenarioConfig, outdir: str, seed) -> int:
    _prepare_out(scn, outdir)

    def printer(t, k):
        if k % 2000 == 0:
            print(f"  grid t={t:.4f}", flush=True)

    trace, dt, wall = _run_reference(scn, progress=printer)
    rows = _reference_rows(trace, dt)
    write_timeseries_csv(os.path.join(outdir, "timeseries.csv"), rows,
                         list(trace.autocorr))
    summary = {
        "command": "reference",
        "seed": seed,
        "grid": [scn.reference.n_mu, scn.reference.n_nu],
        "half_width": scn.reference.half_width,
        "dt": dt,
        "n_steps": len(trace.times) - 1,
        "leak_max": trace.leak_max,
        "wall_seconds": wall,
        "completed": True,
    }
    write_summary_json(os.path.join(outdir, "summary.json"), summary)
    if scn.figures:
        render_autocorrelation_figure(outdir, trace.times, trace.autocorr)
    print(f"reference: {len(trace.times) - 1} steps, leak {trace.leak_max:.2e}, "
          f"{wall:.1f}s")
    return 0


def _variational_job(args):
    scn, specs, label = args
    res, wall = _run_variational(scn, specs, quiet=True)
    return label, res, wall


def _aligned_records(records, autocs, stride, n_strides):
    """Record/autocorrelation values on the exact stride grid."""
    out_t, out_c = [], []
    j = 0
    for rec, c in zip(records, autocs):
        target = j * stride
        if abs(rec.t - target) <= 1e-9 * max(1.0, target):
            out_t.append(rec.t)
            out_c.append(c)
            j += 1
            if j > n_strides:
                break
    return np.array(out_t), np.array(out_c)


def _cmd_compare(scn: ScenarioConfig, outdir: str, seed, serial: bool) -> int:
    _prepare_out(scn, outdir)
    frozen_specs = tuple(s for s in scn.specs if s.kind != "frozen_width")
    frozen_specs = frozen_specs + (ConstraintSpec(kind="frozen_width"),)
    jobs = [(scn, scn.specs, "constrained"), (scn, frozen_specs, "frozen")]

    results = {}
    if serial:
        for job in jobs:
            label, res, wall = _variational_job(job)
            results[label] = (res, wall)
            print(f"  {label}: {res.n_steps} steps, {wall:.1f}s", flush=True)
        trace, dt, ref_wall = _run_reference(scn)
    else:
        with ProcessPoolExecutor(max_workers=2) as pool:
            futures = [pool.submit(_variational_job, job) for job in jobs]
            trace, dt, ref_wall = _run_reference(scn)
            for fut in futures:
                label, res, wall = fut.result()
                results[label] = (res, wall)
                print(f"  {label}: {res.n_steps} steps, {wall:.1f}s",
                      flush=True)
    print(f"  reference: dt={dt:.2e}, {ref_wall:.1f}s", flush=True)

    stride = scn.integrator.record_stride
    n_strides = int(round(scn.integrator.t_end / stride))
    deviations = {}
    summary_methods = {}
    for label, (res, wall) in results.items():
        tv, cv = _aligned_records(res.records, res.autocorrelations,
                                  stride, n_strides)
        n = min(tv.size, trace.autocorr.size)
        dev = np.abs(cv[:n] - trace.autocorr[:n])
        deviations[label] = dev
        imax = int(np.argmax(dev))
        summary_methods[label] = {
            "max_abs_dc": float(dev[imax]),
            "t_of_max": float(tv[imax]),
            "n_steps": res.n_steps,
            "min_dt": res.min_dt,
            "wall_seconds": wall,
        }
        _write_run(outdir, res, prefix=f"{label}_", figures=False)

    n = min(len(dev) for dev in deviations.values())
    times = np.arange(n) * stride
    write_deviation_csv(os.path.join(outdir, "deviation.csv"), times,
                        {lab: dev[:n] for lab, dev in deviations.items()})
    rows = _reference_rows(trace, dt)
    write_timeseries_csv(os.path.join(outdir, "reference_timeseries.csv"),
                         rows, list(trace.autocorr))
    summary = {
        "command": "compare",
        "seed": seed,
        "methods": summary_methods,
        "reference": {"dt": dt, "leak_max": trace.leak_max,
                      "wall_seconds": ref_wall},
        "serial": serial,
        "completed": True,
    }
    write_summary_json(os.path.join(outdir, "summary.json"), summary)
    if scn.figures:
        render_deviation_figure(outdir, times,
                                {lab: dev[:n] for lab, dev in deviations.items()})
    for label, info in summary_methods.items():
        print(f"compare[{label}]: max |dC| = {info['max_abs_dc']:.4g} "
              f"at t = {info['t_of_max']:.3f}")
    return 0


def _cmd_spectrum(scn: ScenarioConfig, outdir: str, seed) -> int:
    _prepare_out(scn, outdir)
    src = os.path.join(outdir, scn.spectrum.source)
    if not os.path.isfile(src):
        raise ConfigError(f"spectrum source not found: {src}")
    cols = read_timeseries_csv(src)
    values = cols["re_c"] + 1j * cols["im_c"]
    if not np.all(np.isfinite(values)):
        raise ConfigError(f"{src} has no complete autocorrelation signal")
    series = TimeSeries(times=cols["t"], values=values, label="C(t)")
    energies, power = spectrum(series, window=scn.spectrum.window)
    peaks = spectral_peaks(energies, power, rel_height=scn.spectrum.rel_height)
    lines = ["energy,power"]
    for e, p in zip(energies, power):
        lines.append(f"{e:.17g},{p:.17g}")
    with open(os.path.join(outdir, "spectrum.csv"), "w", encoding="ascii",
              newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    write_summary_json(os.path.join(outdir, "spectrum.json"), {
        "command": "spectrum",
        "seed": seed,
        "window": scn.spectrum.window,
        "n_samples": int(series.times.size),
        "bin_width": float(energies[1] - energies[0]),
        "peaks": [float(p) for p in peaks],
    })
    if scn.figures:
        render_spectrum_figure(outdir, energies, power, peaks)
    print(f"spectrum: {len(peaks)} peaks, bin width "
          f"{energies[1] - energies[0]:.4g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gwpdyn",
                     description="Constrained Gaussian packet dynamics")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("propagate", "run the variational propagation"),
        ("reference", "run the split-operator grid reference"),
        ("compare", "propagate, reference, and deviation report"),
        ("spectrum", "Fourier spectrum of a recorded signal"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="INI scenario file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="seed echoed into summaries (randomized tests)")
        p.add_argument("--serial", action="store_true",
                       help="run compare phases sequentially")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        scn = _load(args.config)
        if args.command == "propagate":
            return _cmd_propagate(scn, args.out, args.seed)
        if args.command == "reference":
            return _cmd_reference(scn, args.out, args.seed)
        if args.command == "compare":
            return _cmd_compare(scn, args.out, args.seed, args.serial)
        return _cmd_spectrum(scn, args.out, args.seed)
    except GwpError as exc:
        payload = {"type": type(exc).__name__, "message": str(exc)}
        t_at = getattr(exc, "t", None)
        if t_at is not None:
            payload["t"] = t_at
        print("ERROR " + json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 3


if __name__ == "__main__":
    sys.exit(main())
