"""YAML scenario files.

A scenario file describes one experiment: grid, FSK, code, noise, channel,
tags, detector settings, run length and sweep grids.  Noise variance, the
false-alarm targets and every tag's timing have no defaults and must be
written in the file (or overridden on the command line).

See ``scenarios/reference.yaml`` for a commented example.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .channel import PHASE_JITTER_MODES, ChannelCoeffs, GridParams, NoiseModel, ZedConfig, snap_fsk
from .harness import DetectorSettings, Scenario, TrialSpec
from .sequences import BitSequence, FskParams, barker13, npc25

NAMED_CODES = {"npc25": npc25, "barker13": barker13}


class ScenarioError(ValueError):
    """Invalid scenario; the message starts with the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ScenarioFile:
    spec: TrialSpec
    margins: tuple[float, ...] = ()
    eta2: tuple[float, ...] = ()
    p_d: tuple[float, ...] = ()
    roc_p_fa: tuple[float, ...] = ()
    tag_names: tuple[str, ...] = ()


_SECTIONS = {"grid", "fsk", "code", "noise", "channel", "tags", "detector", "run", "sweeps"}


def _section(doc: dict, name: str, required: bool = False) -> dict:
    val = doc.get(name)
    if val is None:
        if required:
            raise ScenarioError(name, "section is required")
        return {}
    if not isinstance(val, dict):
        raise ScenarioError(name, "must be a mapping")
    return val


def _check_keys(sec: dict, where: str, allowed: set[str]):
    extra = sorted(set(sec) - allowed)
    if extra:
        raise ScenarioError(f"{where}.{extra[0]}", f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _number(sec: dict, key: str, where: str, default: Any = None, required: bool = False,
            positive: bool = False, nonneg: bool = False, integer: bool = False):
    if key not in sec or sec[key] is None:
        if required:
            raise ScenarioError(f"{where}.{key}", "is required")
        return default
    val = sec[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ScenarioError(f"{where}.{key}", f"must be a number, got {val!r}")
    if integer and (not float(val).is_integer()):
        raise ScenarioError(f"{where}.{key}", f"must be an integer, got {val!r}")
    if not math.isfinite(val):
        raise ScenarioError(f"{where}.{key}", "must be finite")
    if positive and not val > 0:
        raise ScenarioError(f"{where}.{key}", f"must be positive, got {val!r}")
    if nonneg and val < 0:
        raise ScenarioError(f"{where}.{key}", f"must be non-negative, got {val!r}")
    return int(val) if integer else float(val)


def _complex(val, where: str) -> complex:
    if isinstance(val, bool):
        raise ScenarioError(where, "must be a number or [re, im]")
    if isinstance(val, (int, float)):
        return complex(val)
    if isinstance(val, (list, tuple)) and len(val) == 2 and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in val):
        return complex(val[0], val[1])
    raise ScenarioError(where, f"must be a number or [re, im], got {val!r}")


def _prob_list(val, where: str) -> tuple[float, ...]:
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        val = [val]
    if not isinstance(val, list) or not val:
        raise ScenarioError(where, "must be a non-empty list of probabilities")
    out = []
    for i, p in enumerate(val):
        if isinstance(p, bool) or not isinstance(p, (int, float)) or not 0.0 < p < 1.0:
            raise ScenarioError(f"{where}[{i}]", f"must lie in (0, 1), got {p!r}")
        out.append(float(p))
    return tuple(out)


def _float_list(val, where: str) -> tuple[float, ...]:
    if val is None:
        return ()
    if not isinstance(val, list):
        raise ScenarioError(where, "must be a list of numbers")
    out = []
    for i, v in enumerate(val):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ScenarioError(f"{where}[{i}]", f"must be a number, got {v!r}")
        out.append(float(v))
    return tuple(out)


def _code(doc: dict) -> BitSequence:
    val = doc.get("code", "npc25")
    if isinstance(val, str) and val in NAMED_CODES:
        return NAMED_CODES[val]()
    try:
        if isinstance(val, list):
            return BitSequence(tuple(int(b) for b in val))
        return BitSequence.from_string(str(val))
    except (TypeError, ValueError) as exc:
        raise ScenarioError("code", f"{exc} (use npc25, barker13 or a 0/1 list)") from None


def parse_scenario(doc: Any, overrides: dict | None = None) -> ScenarioFile:
    """Build a validated experiment from a parsed YAML document.

    ``overrides`` may set ``seed``, ``trials``, ``p_fa`` or ``sigma2``.
    """
    overrides = overrides or {}
    if not isinstance(doc, dict):
        raise ScenarioError("scenario", "top level must be a mapping")
    _check_keys(doc, "scenario", _SECTIONS)

    g = _section(doc, "grid")
    _check_keys(g, "grid", {"n_rb", "t_ofdm", "symbols_per_tti", "rs_symbol_indices", "pilot_power"})
    rs_idx = g.get("rs_symbol_indices", [0, 7])
    if not isinstance(rs_idx, list) or not all(isinstance(i, int) for i in rs_idx):
        raise ScenarioError("grid.rs_symbol_indices", "must be a list of integers")
    try:
        grid = GridParams(
            n_rb=_number(g, "n_rb", "grid", 6, positive=True, integer=True),
            t_ofdm=_number(g, "t_ofdm", "grid", 71.35e-6, positive=True),
            symbols_per_tti=_number(g, "symbols_per_tti", "grid", 14, positive=True, integer=True),
            rs_symbol_indices=tuple(rs_idx),
            pilot_power=_number(g, "pilot_power", "grid", 1.0, positive=True),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError("grid", str(exc)) from None

    f = _section(doc, "fsk")
    _check_keys(f, "fsk", {"f0", "f1", "bit_duration", "snap_to_grid"})
    code = _code(doc)
    f0 = _number(f, "f0", "fsk", 125.0, positive=True)
    f1 = _number(f, "f1", "fsk", 500.0, positive=True)
    tb = _number(f, "bit_duration", "fsk", 0.8 / code.n_bits, positive=True)
    try:
        fsk = snap_fsk(grid, f0, f1, tb) if f.get("snap_to_grid", True) else FskParams(f0, f1, tb)
    except ValueError as exc:
        raise ScenarioError("fsk", str(exc)) from None

    n = _section(doc, "noise", required=True)
    _check_keys(n, "noise", {"sigma2", "phase_jitter", "phase_step"})
    sigma2 = overrides.get("sigma2")
    if sigma2 is None:
        sigma2 = _number(n, "sigma2", "noise", required=True, nonneg=True)
    jitter = n.get("phase_jitter", "none")
    if jitter not in PHASE_JITTER_MODES:
        raise ScenarioError("noise.phase_jitter", f"must be one of {', '.join(PHASE_JITTER_MODES)}")
    noise = NoiseModel(sigma2=float(sigma2), phase_jitter=jitter,
                       phase_step=_number(n, "phase_step", "noise", 0.0, nonneg=True))

    c = _section(doc, "channel")
    _check_keys(c, "channel", {"gamma"})
    gamma = _complex(c.get("gamma", 1.0), "channel.gamma")

    raw_tags = doc.get("tags") or []
    if not isinstance(raw_tags, list):
        raise ScenarioError("tags", "must be a list")
    if len(raw_tags) > 2:
        raise ScenarioError("tags", "at most two tags are supported")
    tags, reflect, names = [], [], []
    seq = code.n_bits * fsk.bit_duration
    for i, t in enumerate(raw_tags):
        where = f"tags[{i}]"
        if not isinstance(t, dict):
            raise ScenarioError(where, "must be a mapping")
        _check_keys(t, where, {"name", "cycle", "wait", "start_offset", "reflect", "relative_db"})
        if ("cycle" in t) == ("wait" in t):
            raise ScenarioError(where, "give exactly one of cycle or wait")
        if "cycle" in t:
            cycle = _number(t, "cycle", where, positive=True)
            if cycle < seq - 1e-12:
                raise ScenarioError(f"{where}.cycle",
                                    f"{cycle} s is shorter than the sequence ({seq:.6g} s)")
            wait = cycle - seq
        else:
            wait = _number(t, "wait", where, nonneg=True)
        if ("reflect" in t) == ("relative_db" in t):
            raise ScenarioError(where, "give exactly one of reflect or relative_db")
        if "reflect" in t:
            r = _complex(t["reflect"], f"{where}.reflect")
        else:
            if i == 0:
                raise ScenarioError(f"{where}.relative_db", "the first tag needs an absolute reflect")
            rel = _number(t, "relative_db", where)
            # contrast is quadratic in the amplitude and levels are 20 log10,
            # so one amplitude dB is two level dB
            r = reflect[0] * 10 ** (rel / 40.0)
        tags.append(ZedConfig(code=code, fsk=fsk, wait=wait,
                              start_offset=_number(t, "start_offset", where, 0.0)))
        reflect.append(r)
        names.append(str(t.get("name", "AB"[i])))
    if len(tags) == 2 and abs(tags[0].cycle - tags[1].cycle) < 1e-12:
        raise ScenarioError("tags", "the two tags must have distinct cycles")

    d = _section(doc, "detector", required=True)
    _check_keys(d, "detector", {"p_fa", "cutoff", "order", "margin_db", "g_psl_db",
                                "exclusion_bits", "known_noise"})
    if overrides.get("p_fa") is not None:
        p_fa = _prob_list(list(overrides["p_fa"]), "--pfa")
    elif "p_fa" not in d:
        raise ScenarioError("detector.p_fa", "is required")
    else:
        p_fa = _prob_list(d["p_fa"], "detector.p_fa")
    # an explicit null disables the low-pass
    cutoff = None if "cutoff" in d and d["cutoff"] is None else \
        _number(d, "cutoff", "detector", 100.0, positive=True)
    if cutoff is not None:
        if cutoff >= grid.rs_rate / 2:
            raise ScenarioError("detector.cutoff",
                                f"{cutoff} Hz is not below the Nyquist rate {grid.rs_rate / 2:.6g} Hz")
    settings = DetectorSettings(
        cutoff=cutoff,
        order=_number(d, "order", "detector", 4, positive=True, integer=True),
        margin_db=_number(d, "margin_db", "detector", 6.0),
        g_psl_db=_number(d, "g_psl_db", "detector", None, positive=True),
        exclusion_bits=_number(d, "exclusion_bits", "detector", 1.5, nonneg=True),
        known_noise=bool(d.get("known_noise", True)),
    )

    r = _section(doc, "run", required=True)
    _check_keys(r, "run", {"duration", "t_obs", "trials", "seed", "randomize_offsets",
                           "randomize_phase", "calibration_duration"})
    duration = _number(r, "duration", "run", required=True, positive=True)
    for i, tag in enumerate(tags):
        if duration < tag.cycle - 1e-12:
            raise ScenarioError("run.duration",
                                f"{duration} s is shorter than tags[{i}] cycle {tag.cycle:.6g} s")
    if duration < fsk.bit_duration * code.n_bits:
        raise ScenarioError("run.duration", "shorter than one code sequence")
    trials = overrides.get("trials")
    if trials is None:
        trials = _number(r, "trials", "run", 1, integer=True)
    if trials < 1:
        raise ScenarioError("run.trials", "must be >= 1")
    seed = overrides.get("seed")
    if seed is None:
        seed = _number(r, "seed", "run", 0, nonneg=True, integer=True)

    scen = Scenario(grid=grid, fsk=fsk, tags=tuple(tags),
                    chans=ChannelCoeffs(gamma=gamma, reflect=tuple(reflect)), noise=noise, code=code)
    spec = TrialSpec(
        scenario=scen, duration=duration, n_trials=int(trials), p_fa_targets=p_fa,
        t_obs=_number(r, "t_obs", "run", None, positive=True), seed_base=int(seed),
        randomize_offsets=bool(r.get("randomize_offsets", True)),
        randomize_phase=bool(r.get("randomize_phase", True)),
        calibration_duration=_number(r, "calibration_duration", "run", 60.0, positive=True),
        detector=settings,
    )

    s = _section(doc, "sweeps")
    _check_keys(s, "sweeps", {"margins", "eta2", "p_d", "p_fa"})
    p_d = _float_list(s.get("p_d"), "sweeps.p_d")
    for i, v in enumerate(p_d):
        if not 0.0 < v < 1.0:
            raise ScenarioError(f"sweeps.p_d[{i}]", "must lie in (0, 1)")
    eta2 = _float_list(s.get("eta2"), "sweeps.eta2")
    if any(v < 0 for v in eta2):
        raise ScenarioError("sweeps.eta2", "values must be non-negative")
    roc_p_fa = _prob_list(s["p_fa"], "sweeps.p_fa") if "p_fa" in s else p_fa
    return ScenarioFile(spec=spec, margins=_float_list(s.get("margins"), "sweeps.margins"),
                        eta2=eta2, p_d=p_d, roc_p_fa=roc_p_fa, tag_names=tuple(names))


def load_scenario(path, overrides: dict | None = None) -> ScenarioFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(str(path), f"cannot read scenario file ({exc.strerror})") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(str(path), f"invalid YAML: {exc}") from None
    return parse_scenario(doc, overrides)

