"""Scenario assembly from INI configs: potentials, packets, run settings.

Every key is validated; unknown sections or keys are rejected so typos
cannot silently fall back to defaults.  The effective configuration,
defaults included, can be rendered back out for the output directory.
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSpec
from .errors import ConfigError
from .gaussians import GaussianParams, WavePacket
from .integrator import IntegratorConfig, classical_period
from .moments import norm as packet_norm
from .potentials import (
    PolynomialPotential,
    build_diamagnetic_kepler,
    build_harmonic,
    find_minimum,
)

_KNOWN = {
    "potential": {"kind", "alpha", "beta", "omegas", "dim"},
    "initial": {"kind", "counts", "spacing", "width", "center", "normalize",
                "n_gwp"},
    "constraints": {"gamma_min", "gamma_max", "frozen_width", "targets"},
    "integrator": {"t_end", "t_end_cl", "rtol", "atol", "dt_init", "dt_min",
                   "dt_max", "record_stride", "record_stride_cl", "tol_event",
                   "cond_max", "m_max", "width_mode", "degree_cap",
                   "checkpoint_times", "max_steps"},
    "reference": {"n_mu", "n_nu", "half_width", "steps_per_stride",
                  "leak_tol"},
    "spectrum": {"window", "rel_height", "source"},
    "outputs": {"figures"},
}


@dataclass
class ReferenceSettings:
    n_mu: int = 512
    n_nu: int = 512
    half_width: float = 12.0
    steps_per_stride: int = 10
    leak_tol: float = 1e-8


@dataclass
class SpectrumSettings:
    window: str = "hann"
    rel_height: float = 0.05
    source: str = "timeseries.csv"


@dataclass
class ScenarioConfig:
    potential: PolynomialPotential
    initial: WavePacket
    specs: tuple
    integrator: IntegratorConfig
    reference: ReferenceSettings
    spectrum: SpectrumSettings
    figures: bool
    effective_ini: str


def _getfloat(sec, key, default=None):
    raw = sec.get(key, None)
    if raw is None or raw.strip() == "":
        if default is None:
            raise ConfigError(f"missing required key '{key}' in [{sec.name}]")
        return float(default)
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{sec.name}] {key} = {raw!r} is not a number") from exc


def _getint(sec, key, default=None):
    val = _getfloat(sec, key, default)
    if val != int(val):
        raise ConfigError(f"[{sec.name}] {key} must be an integer")
    return int(val)


def _getbool(sec, key, default):
    raw = sec.get(key, None)
    if raw is None or raw.strip() == "":
        return default
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{sec.name}] {key} = {raw!r} is not a boolean")


def _floats(sec, key, default=None):
    raw = sec.get(key, None)
    if raw is None or raw.strip() == "":
        if default is None:
            raise ConfigError(f"missing required key '{key}' in [{sec.name}]")
        return list(default)
    try:
        return [float(tok) for tok in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"[{sec.name}] {key} = {raw!r} is not a number list") from exc


def _parse_ini(text: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc
    for section in parser.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _KNOWN[section]
        for key in parser[section]:
            base = key.split(".")[0]
            if section == "initial" and base.startswith("gwp"):
                continue
            if section == "potential" and base == "term":
                continue
            if key not in allowed and base not in allowed:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
    return parser


def build_potential(parser) -> PolynomialPotential:
    if "potential" not in parser:
        raise ConfigError("missing [potential] section")
    sec = parser["potential"]
    kind = sec.get("kind", "").strip().lower()
    if kind == "diamagnetic_kepler":
        return build_diamagnetic_kepler(_getfloat(sec, "alpha", 0.5),
                                        _getfloat(sec, "beta", 0.2))
    if kind == "harmonic":
        omegas = np.asarray(_floats(sec, "omegas"))
        return build_harmonic(omegas)
    if kind == "polynomial":
        dim = _getint(sec, "dim")
        terms = {}
        for key in parser["potential"]:
            if not key.startswith("term."):
                continue
            expo = tuple(int(tok) for tok in key[len("term."):].split(","))
            terms[expo] = _getfloat(sec, key)
        if not terms:
            raise ConfigError("polynomial potential needs at least one term.*")
        return PolynomialPotential(terms=terms, dim=dim)
    raise ConfigError(f"unknown potential kind {kind!r}")


def build_grid_packet(V: PolynomialPotential, counts, spacing: float,
                      width: float, center=None,
                      normalize: bool = True) -> WavePacket:
    """Lattice of identical zero-momentum GWPs centered at the minimum.

    Each Gaussian gets unit individual norm through its gamma offset; the
    whole packet is then rescaled to unit total norm unless disabled.
    """
    d = V.dim
    counts = [int(c) for c in counts]
    if len(counts) != d or any(c < 1 for c in counts):
        raise ConfigError(f"counts {counts} do not fit dimension {d}")
    if spacing < 0 or width <= 0:
        raise ConfigError("need spacing >= 0 and width > 0")
    if center is None:
        center = find_minimum(V)
    center = np.asarray(center, dtype=float)

    axes = [spacing * (np.arange(c) - 0.5 * (c - 1)) for c in counts]
    mesh = np.meshgrid(*axes, indexing="ij")
    offsets = np.stack([m.ravel() for m in mesh], axis=-1)

    A0 = 1j * width * np.eye(d)
    gamma_i = 0.25 * math.log(math.pi ** d / np.linalg.det(2.0 * A0.imag))
    gwps = tuple(
        GaussianParams(A=A0, p=np.zeros(d), q=center + off,
                       gamma=complex(0.0, gamma_i))
        for off in offsets
    )
    wp = WavePacket(gwps=gwps)
    if normalize:
        total = packet_norm(wp)
        shift = complex(0.0, math.log(total))
        wp = WavePacket(gwps=tuple(
            GaussianParams(A=g.A, p=g.p, q=g.q, gamma=g.gamma + shift)
            for g in wp.gwps
        ))
    return wp


def build_initial(parser, V: PolynomialPotential) -> WavePacket:
    if "initial" not in parser:
        raise ConfigError("missing [initial] section")
    sec = parser["initial"]
    kind = sec.get("kind", "grid_packet").strip().lower()
    if kind == "grid_packet":
        counts = [int(v) for v in _floats(sec, "counts")]
        center_raw = sec.get("center", "auto").strip().lower()
        center = None if center_raw in ("", "auto") else _floats(sec, "center")
        return build_grid_packet(
            V, counts,
            spacing=_getfloat(sec, "spacing"),
            width=_getfloat(sec, "width", 0.5),
            center=center,
            normalize=_getbool(sec, "normalize", True),
        )
    if kind == "explicit":
        n = _getint(sec, "n_gwp")
        d = V.dim
        gwps = []
        for k in range(1, n + 1):
            q = np.asarray(_floats(sec, f"gwp{k}.q"))
            p = np.asarray(_floats(sec, f"gwp{k}.p", [0.0] * d))
            widths = _floats(sec, f"gwp{k}.width", [0.5] * d)
            if len(widths) == 1:
                widths = widths * d
            A0 = 1j * np.diag(widths)
            default_gi = 0.25 * math.log(
                math.pi ** d / np.linalg.det(2.0 * A0.imag))
            gi = _getfloat(sec, f"gwp{k}.gamma_i", default_gi)
            gr = _getfloat(sec, f"gwp{k}.gamma_r", 0.0)
            gwps.append(GaussianParams(A=A0, p=p, q=q, gamma=complex(gr, gi)))
        return WavePacket(gwps=tuple(gwps))
    raise ConfigError(f"unknown initial kind {kind!r}")


def build_specs(parser, n_gwp: int) -> tuple:
    if "constraints" not in parser:
        return ()
    sec = parser["constraints"]
    specs = []
    raw_min = sec.get("gamma_min", "").strip()
    raw_max = sec.get("gamma_max", "").strip()
    targets_raw = sec.get("targets", "all").strip().lower()
    if targets_raw in ("", "all"):
        targets = [None]
    else:
        targets = [int(tok) for tok in targets_raw.replace(",", " ").split()]
        bad = [t for t in targets if not 0 <= t < n_gwp]
        if bad:
            raise ConfigError(f"constraint targets out of range: {bad}")
    if raw_min:
        for tgt in targets:
            specs.append(ConstraintSpec(kind="amplitude_lower",
                                        bound=float(raw_min), target=tgt))
    if raw_max:
        for tgt in targets:
            specs.append(ConstraintSpec(kind="amplitude_upper",
                                        bound=float(raw_max), target=tgt))
    if _getbool(sec, "frozen_width", False):
        specs.append(ConstraintSpec(kind="frozen_width"))
    return tuple(specs)


def build_integrator(parser, V: PolynomialPotential) -> IntegratorConfig:
    if "integrator" not in parser:
        raise ConfigError("missing [integrator] section")
    sec = parser["integrator"]
    has_abs = sec.get("t_end", "").strip() != ""
    has_cl = sec.get("t_end_cl", "").strip() != ""
    if has_abs == has_cl:
        raise ConfigError("set exactly one of t_end, t_end_cl")
    t_cl = classical_period(V) if (has_cl or
                                   sec.get("record_stride_cl", "").strip()) else None
    t_end = _getfloat(sec, "t_end") if has_abs else (
        _getfloat(sec, "t_end_cl") * t_cl)
    if sec.get("record_stride_cl", "").strip():
        stride = _getfloat(sec, "record_stride_cl") * t_cl
    else:
        stride = _getfloat(sec, "record_stride", 0.05)
    cps = tuple(_floats(sec, "checkpoint_times", []))
    return IntegratorConfig(
        t_end=t_end,
        rtol=_getfloat(sec, "rtol", 1e-8),
        atol=_getfloat(sec, "atol", 1e-10),
        dt_init=_getfloat(sec, "dt_init", 1e-3),
        dt_min=_getfloat(sec, "dt_min", 1e-12),
        dt_max=_getfloat(sec, "dt_max", 0.5),
        record_stride=stride,
        tol_event=_getfloat(sec, "tol_event", 1e-10),
        cond_max=_getfloat(sec, "cond_max", 1e12),
        m_max=_getint(sec, "m_max", 16),
        width_mode=sec.get("width_mode", "bc").strip(),
        degree_cap=_getint(sec, "degree_cap", 12),
        checkpoint_times=cps,
        max_steps=_getint(sec, "max_steps", 2_000_000),
    )


def build_reference(parser) -> ReferenceSettings:
    if "reference" not in parser:
        return ReferenceSettings()
    sec = parser["reference"]
    return ReferenceSettings(
        n_mu=_getint(sec, "n_mu", 512),
        n_nu=_getint(sec, "n_nu", 512),
        half_width=_getfloat(sec, "half_width", 12.0),
        steps_per_stride=_getint(sec, "steps_per_stride", 10),
        leak_tol=_getfloat(sec, "leak_tol", 1e-8),
    )


def build_spectrum(parser) -> SpectrumSettings:
    if "spectrum" not in parser:
        return SpectrumSettings()
    sec = parser["spectrum"]
    window = sec.get("window", "hann").strip().lower()
    if window not in ("hann", "none"):
        raise ConfigError(f"unknown spectrum window {window!r}")
    return SpectrumSettings(
        window=window,
        rel_height=_getfloat(sec, "rel_height", 0.05),
        source=sec.get("source", "timeseries.csv").strip(),
    )


def load_scenario(text: str) -> ScenarioConfig:
    """Parse, validate, and assemble a scenario from INI text."""
    parser = _parse_ini(text)
    V = build_potential(parser)
    wp = build_initial(parser, V)
    specs = build_specs(parser, wp.n_gwp)
    integ = build_integrator(parser, V)
    ref = build_reference(parser)
    spect = build_spectrum(parser)
    figures = True
    if "outputs" in parser:
        figures = _getbool(parser["outputs"], "figures", True)
    effective = _render_effective(parser, V, wp, integ, ref, spect, figures)
    return ScenarioConfig(potential=V, initial=wp, specs=specs,
                          integrator=integ, reference=ref, spectrum=spect,
                          figures=figures, effective_ini=effective)


def _render_effective(parser, V, wp, integ, ref, spect, figures) -> str:
    """Round-trip the resolved settings into INI text for the output dir."""
    out = configparser.ConfigParser()
    out["potential"] = {"kind": "polynomial", "dim": str(V.dim)}
    for key, coeff in sorted(V.terms.items()):
        out["potential"]["term." + ",".join(str(e) for e in key)] = repr(coeff)
    out["initial"] = {"kind": "explicit", "n_gwp": str(wp.n_gwp)}
    flist = (lambda vals: ", ".join(repr(float(v)) for v in vals))
    for idx, g in enumerate(wp.gwps, start=1):
        out["initial"][f"gwp{idx}.q"] = flist(g.q)
        out["initial"][f"gwp{idx}.p"] = flist(g.p)
        out["initial"][f"gwp{idx}.width"] = flist(np.diag(g.A.imag))
        out["initial"][f"gwp{idx}.gamma_r"] = repr(g.gamma.real)
        out["initial"][f"gwp{idx}.gamma_i"] = repr(g.gamma.imag)
    if "constraints" in parser:
        out["constraints"] = dict(parser["constraints"])
    out["integrator"] = {
        "t_end": repr(integ.t_end), "rtol": repr(integ.rtol),
        "atol": repr(integ.atol), "dt_init": repr(integ.dt_init),
        "dt_min": repr(integ.dt_min), "dt_max": repr(integ.dt_max),
        "record_stride": repr(integ.record_stride),
        "tol_event": repr(integ.tol_event), "cond_max": repr(integ.cond_max),
        "m_max": str(integ.m_max), "width_mode": integ.width_mode,
        "degree_cap": str(integ.degree_cap),
        "max_steps": str(integ.max_steps),
    }
    out["reference"] = {
        "n_mu": str(ref.n_mu), "n_nu": str(ref.n_nu),
        "half_width": repr(ref.half_width),
        "steps_per_stride": str(ref.steps_per_stride),
        "leak_tol": repr(ref.leak_tol),
    }
    out["spectrum"] = {"window": spect.window,
                       "rel_height": repr(spect.rel_height),
                       "source": spect.source}
    out["outputs"] = {"figures": str(figures).lower()}
    buf = io.StringIO()
    out.write(buf)
    return buf.getvalue()
