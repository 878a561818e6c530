"""Delimited output, checkpoint files, and figure rendering for runs.

All floats are written with repr-faithful %.17g so a rerun of the same
configuration reproduces files byte for byte.
"""
from __future__ import annotations

import json
import os

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import ConfigError, InvariantBroken  # noqa: E402
from .gaussians import GaussianParams, WavePacket  # noqa: E402

_CHECKPOINT_MAGIC = "gwpdyn-checkpoint 1"

TIMESERIES_HEADER = "t,re_c,im_c,norm,energy,dt_used,active_count,cond_estimate"


def _g(x) -> str:
    return "%.17g" % float(x)


def write_timeseries_csv(path, records, autocorr=None) -> None:
    """One row per record; re_c/im_c are NaN when no signal was tracked."""
    lines = [TIMESERIES_HEADER]
    for i, rec in enumerate(records):
        c = autocorr[i] if autocorr is not None else complex("nan")
        lines.append(",".join([
            _g(rec.t), _g(c.real), _g(c.imag), _g(rec.norm), _g(rec.energy),
            _g(rec.dt_used), str(rec.active_count), _g(rec.cond_estimate),
        ]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_gamma_csv(path, records) -> None:
    n = records[0].gamma_i.size
    header = "t," + ",".join(f"gamma_i_{k + 1}" for k in range(n))
    lines = [header]
    for rec in records:
        lines.append(",".join([_g(rec.t)] + [_g(v) for v in rec.gamma_i]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_deviation_csv(path, times, deviations: dict) -> None:
    """Columns: t then |dC| per labeled method, in given order."""
    labels = list(deviations)
    lines = ["t," + ",".join(f"abs_dc_{lab}" for lab in labels)]
    for i, t in enumerate(times):
        row = [_g(t)] + [_g(deviations[lab][i]) for lab in labels]
        lines.append(",".join(row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_summary_json(path, payload: dict) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_timeseries_csv(path):
    """Back-read a timeseries file into a dict of column arrays."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != TIMESERIES_HEADER:
            raise ConfigError(f"unexpected timeseries header in {path}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    cols = TIMESERIES_HEADER.split(",")
    return {name: data[:, i] for i, name in enumerate(cols)}


def write_checkpoint(path, t: float, wp: WavePacket) -> None:
    """Versioned flat text dump of every packet parameter.

    Layout after the magic line: 'n_gwp dim t', then per Gaussian four
    lines: Re A row-major, Im A row-major, p then q, Re gamma Im gamma.
    """
    d = wp.dim
    lines = [_CHECKPOINT_MAGIC, f"{wp.n_gwp} {d} {_g(t)}"]
    for g in wp.gwps:
        lines.append(" ".join(_g(v) for v in g.A.real.ravel()))
        lines.append(" ".join(_g(v) for v in g.A.imag.ravel()))
        lines.append(" ".join([_g(v) for v in g.p] + [_g(v) for v in g.q]))
        lines.append(f"{_g(g.gamma.real)} {_g(g.gamma.imag)}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_checkpoint(path):
    """Inverse of write_checkpoint; returns (t, WavePacket)."""
    with open(path, "r", encoding="ascii") as fh:
        magic = fh.readline().strip()
        if magic != _CHECKPOINT_MAGIC:
            raise ConfigError(f"not a checkpoint file: {path}")
        n_str, d_str, t_str = fh.readline().split()
        n, d, t = int(n_str), int(d_str), float(t_str)
        gwps = []
        for _ in range(n):
            a_re = np.array([float(v) for v in fh.readline().split()])
            a_im = np.array([float(v) for v in fh.readline().split()])
            pq = [float(v) for v in fh.readline().split()]
            g_re, g_im = (float(v) for v in fh.readline().split())
            if a_re.size != d * d or len(pq) != 2 * d:
                raise InvariantBroken(f"corrupt checkpoint row in {path}")
            gwps.append(GaussianParams(
                A=(a_re + 1j * a_im).reshape(d, d),
                p=np.array(pq[:d]), q=np.array(pq[d:]),
                gamma=complex(g_re, g_im),
            ))
    return t, WavePacket(gwps=tuple(gwps))


def _finish(fig, outdir, name):
    fig.tight_layout()
    fig.savefig(os.path.join(outdir, name), dpi=130)
    plt.close(fig)


def render_propagation_figures(outdir, records, autocorr=None,
                               gamma_min=None) -> list:
    """Render the standard run plots; returns the file names written."""
    t = np.array([r.t for r in records])
    written = []

    fig, ax = plt.subplots(figsize=(7, 4))
    gam = np.stack([r.gamma_i for r in records])
    for k in range(gam.shape[1]):
        ax.plot(t, gam[:, k], lw=0.8)
    if gamma_min is not None:
        ax.axhline(gamma_min, color="k", ls="--", lw=1.0)
    ax.set_xlabel("t")
    ax.set_ylabel("Im gamma per Gaussian")
    _finish(fig, outdir, "gamma.png")
    written.append("gamma.png")

    fig, axes = plt.subplots(2, 1, figsize=(7, 5.5), sharex=True)
    dt = np.array([r.dt_used for r in records])
    axes[0].semilogy(t, dt, ".-", ms=3)
    axes[0].set_ylabel("accepted step size")
    axes[1].step(t, [r.active_count for r in records], where="post")
    axes[1].set_ylabel("active constraints")
    axes[1].set_xlabel("t")
    _finish(fig, outdir, "stepsize.png")
    written.append("stepsize.png")

    fig, axes = plt.subplots(2, 1, figsize=(7, 5.5), sharex=True)
    norms = np.array([r.norm for r in records])
    ens = np.array([r.energy for r in records])
    axes[0].plot(t, norms)
    axes[0].set_ylabel("norm")
    axes[1].plot(t, ens)
    axes[1].set_ylabel("energy")
    axes[1].set_xlabel("t")
    _finish(fig, outdir, "conservation.png")
    written.append("conservation.png")

    if autocorr is not None:
        fig, ax = plt.subplots(figsize=(7, 4))
        c = np.asarray(autocorr)
        ax.plot(t, c.real, lw=0.9, label="Re C")
        ax.plot(t, np.abs(c), lw=0.9, label="|C|")
        ax.set_xlabel("t")
        ax.set_ylabel("autocorrelation")
        ax.legend()
        _finish(fig, outdir, "autocorrelation.png")
        written.append("autocorrelation.png")
    return written


def render_autocorrelation_figure(outdir, times, autocorr) -> str:
    fig, ax = plt.subplots(figsize=(7, 4))
    c = np.asarray(autocorr)
    ax.plot(times, c.real, lw=0.9, label="Re C")
    ax.plot(times, np.abs(c), lw=0.9, label="|C|")
    ax.set_xlabel("t")
    ax.set_ylabel("autocorrelation")
    ax.legend()
    _finish(fig, outdir, "autocorrelation.png")
    return "autocorrelation.png"


def render_deviation_figure(outdir, times, deviations: dict) -> str:
    fig, ax = plt.subplots(figsize=(7, 4))
    for lab, dev in deviations.items():
        ax.semilogy(times, np.maximum(np.asarray(dev), 1e-16), label=lab)
    ax.set_xlabel("t")
    ax.set_ylabel("|dC(t)|")
    ax.legend()
    _finish(fig, outdir, "deviation.png")
    return "deviation.png"


def render_spectrum_figure(outdir, energies, power, peaks=None) -> str:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(energies, power, lw=0.9)
    if peaks is not None and len(peaks):
        ax.plot(peaks, np.interp(peaks, energies, power), "v", ms=6)
    ax.set_xlabel("energy")
    ax.set_ylabel("spectral power")
    _finish(fig, outdir, "spectrum.png")
    return "spectrum.png"
