"""Scenario files: link, signal, sweep grid, seeds and pipeline settings.

Scenario YAML keys follow the row names of the system and signal parameter
tables (``nonlinear_coefficient_gamma``, ``wdm_channel_spacing``, ...). Units
are given in each key's comment in the shipped files.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .constellation import Constellation, Pmf, make_square_qam, mb_pmf, symmetrize, uniform_pmf
from .egn import LinkConfig
from .ssfm import SignalConfig

__all__ = ["Scenario", "ProbeSpec", "load_scenario", "list_scenarios", "probe_pmf"]

_SYSTEM_KEYS = {
    "nonlinear_coefficient_gamma": "gamma",
    "chromatic_dispersion_D": "dispersion",
    "attenuation_alpha": "alpha",
    "edfa_noise_figure_nF": "nf",
    "laser_wavelength": "wavelength",
    "number_of_spans": "n_span",
    "span_length": "span_length",
    "step_size_h": "step",
    "precision": "precision",
}
_SIGNAL_KEYS = {
    "symbol_rate": "symbol_rate_gbd",
    "rrc_roll_off": "rolloff",
    "wdm_channel_number": "n_wdm",
    "wdm_channel_spacing": "spacing_ghz",
    "oversampling_factor_fos": "f_os",
    "number_of_symbols": "n_sym",
    "rrc_span": "rrc_span",
}


@dataclass(frozen=True)
class ProbeSpec:
    """A calibration probe PMF.

    ``family`` is ``uniform``, ``mb`` (self-normalized ``nu``), or ``poly``:
    ``P ~ exp(-value s - value2 s^2)`` with ``s = |c|^2 / mean|c|^2``.
    Negative ``value`` pushes mass outwards (moments below uniform); a
    positive ``value`` with negative ``value2`` loads the center and the
    corners, which moves mu6 off the MB curve.
    """

    family: str
    value: float = 0.0
    value2: float = 0.0

    @property
    def tag(self) -> str:
        if self.family == "uniform":
            return "uniform"
        if self.family == "mb":
            return f"mb{self.value:+g}"
        return f"poly{self.value:+g}{self.value2:+g}"


def probe_pmf(c: Constellation, probe: ProbeSpec) -> Pmf:
    if probe.family == "uniform":
        return uniform_pmf(c.size)
    if probe.family == "mb":
        return mb_pmf(c, probe.value)
    if probe.family == "poly":
        s = np.abs(c.points) ** 2
        s = s / s.mean()
        z = -probe.value * s - probe.value2 * s * s
        return symmetrize(Pmf.from_weights(np.exp(z - z.max())))
    raise ValueError(f"unknown probe family {probe.family!r}")


@dataclass(frozen=True)
class Scenario:
    name: str
    bits: int
    link: LinkConfig
    signal: SignalConfig
    p_total_dbm: tuple[float, float, float]  # start, stop, step (inclusive)
    seeds: tuple[int, ...] = (1,)
    probes: tuple[ProbeSpec, ...] = ()
    probe_offsets_db: tuple[float, ...] = (-2.0, 0.0, 2.0)
    holdout_probes: tuple[ProbeSpec, ...] = ()
    holdout_offsets_db: tuple[float, ...] = ()
    ssfm_ba: bool = False
    ba_n_sym: int = 2**14
    ba_max_outer: int = 20
    slow: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        start, stop, step = self.p_total_dbm
        if not step > 0:
            raise ValueError("sweep step must be positive")
        if stop < start:
            raise ValueError("sweep stop below start")
        if not self.seeds:
            raise ValueError("at least one seed")

    @property
    def constellation(self) -> Constellation:
        return make_square_qam(self.bits)

    def power_grid(self) -> np.ndarray:
        start, stop, step = self.p_total_dbm
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return np.round(start + step * np.arange(n), 10)

    def to_dict(self) -> dict:
        sys_rev = {v: k for k, v in _SYSTEM_KEYS.items()}
        sig_rev = {v: k for k, v in _SIGNAL_KEYS.items()}
        link = {sys_rev[k]: v for k, v in asdict(self.link).items()}
        sig = asdict(self.signal)
        seed = sig.pop("seed")
        return {
            "name": self.name,
            "modulation": f"{2 ** self.bits}QAM",
            "slow": self.slow,
            "system": link,
            "signal": {sig_rev[k]: v for k, v in sig.items()},
            "sweep": {"p_total_dbm": dict(zip(("start", "stop", "step"), self.p_total_dbm))},
            "seeds": list(self.seeds) if self.seeds else [seed],
            "calibration": {
                "probes": [asdict(p) for p in self.probes],
                "offsets_db": list(self.probe_offsets_db),
                "holdout_probes": [asdict(p) for p in self.holdout_probes],
                "holdout_offsets_db": list(self.holdout_offsets_db),
            },
            "ssfm_ba": {"enabled": self.ssfm_ba, "number_of_symbols": self.ba_n_sym,
                        "max_outer": self.ba_max_outer},
            **self.extra,
        }

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _bits_from_modulation(s) -> int:
    if isinstance(s, int):
        return s
    m = int(str(s).upper().replace("QAM", ""))
    bits = int(round(math.log2(m)))
    if 2**bits != m:
        raise ValueError(f"bad modulation {s!r}")
    return bits


def _probes(items) -> tuple[ProbeSpec, ...]:
    return tuple(ProbeSpec(str(d["family"]), float(d.get("value", 0.0)), float(d.get("value2", 0.0)))
                 for d in items or ())


def scenario_from_dict(d: dict) -> Scenario:
    known = {"name", "modulation", "slow", "system", "signal", "sweep", "seeds", "calibration", "ssfm_ba"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    sys_d = d.get("system", {})
    bad = set(sys_d) - set(_SYSTEM_KEYS)
    if bad:
        raise ValueError(f"unknown system keys: {sorted(bad)}")
    link = LinkConfig(**{_SYSTEM_KEYS[k]: (float(v) if k != "number_of_spans" and k != "precision" else v)
                         for k, v in sys_d.items()})
    sig_d = d.get("signal", {})
    bad = set(sig_d) - set(_SIGNAL_KEYS)
    if bad:
        raise ValueError(f"unknown signal keys: {sorted(bad)}")
    seeds = tuple(int(s) for s in d.get("seeds", [1]))
    if not seeds:
        raise ValueError("at least one seed")
    sig_kw = {_SIGNAL_KEYS[k]: v for k, v in sig_d.items()}
    signal = SignalConfig(seed=seeds[0], **sig_kw)
    sw = d["sweep"]["p_total_dbm"]
    cal = d.get("calibration", {})
    ba = d.get("ssfm_ba", {})
    return Scenario(
        name=str(d["name"]),
        bits=_bits_from_modulation(d["modulation"]),
        link=link,
        signal=signal,
        p_total_dbm=(float(sw["start"]), float(sw["stop"]), float(sw["step"])),
        seeds=seeds,
        probes=_probes(cal.get("probes")),
        probe_offsets_db=tuple(float(x) for x in cal.get("offsets_db", (-2.0, 0.0, 2.0))),
        holdout_probes=_probes(cal.get("holdout_probes")),
        holdout_offsets_db=tuple(float(x) for x in cal.get("holdout_offsets_db", ())),
        ssfm_ba=bool(ba.get("enabled", False)),
        ba_n_sym=int(ba.get("number_of_symbols", 2**14)),
        ba_max_outer=int(ba.get("max_outer", 20)),
        slow=bool(d.get("slow", False)),
    )


def list_scenarios() -> list[str]:
    files = resources.files("nlshape").joinpath("scenarios")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".yaml"))


def load_scenario(name_or_path) -> Scenario:
    """Load a scenario from a YAML path or by shipped name (e.g. ``64qam-9ch-desk``)."""
    p = Path(name_or_path)
    if p.suffix in (".yaml", ".yml") and p.exists():
        text = p.read_text()
    else:
        res = resources.files("nlshape").joinpath("scenarios", f"{name_or_path}.yaml")
        if not res.is_file():
            raise FileNotFoundError(f"no scenario file or shipped scenario named {name_or_path!r}")
        text = res.read_text()
    return scenario_from_dict(yaml.safe_load(text))
