"""Synthetic per-application DCI traffic.

Streaming apps buffer in sub-second bursts separated by multi-second idle
gaps; VoIP apps emit a steady stream of small transport blocks. Every
generator is a pure function of its arguments and seed.
"""
from __future__ import annotations

import configparser
import enum
import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .trace import Trace, TraceMeta, merge_traces

BITS_PER_RB = 500
MAX_RB = 273
MIN_TBS_BITS = 16
# Burst-to-burst spacing must leave at least this much silence.
MIN_BURST_SILENCE_MS = 1000


class ProfileError(ValueError):
    pass


class TrafficKind(str, enum.Enum):
    BURST_STREAMING = "BURST_STREAMING"
    CONTINUOUS_VOIP = "CONTINUOUS_VOIP"


def _check_range(name, rng, positive=True):
    if rng is None:
        raise ProfileError(f"{name} is required")
    lo, hi = rng
    if lo > hi:
        raise ProfileError(f"{name}: empty range [{lo}, {hi}]")
    if positive and lo <= 0:
        raise ProfileError(f"{name}: range must be positive")


@dataclass(frozen=True)
class AppProfile:
    """Generative traffic model for one application.

    ``tbs_dl`` and ``tbs_ul`` are (mu, sigma) of the natural log of the
    transport block size in bits. ``outlier_prob`` is the chance that an
    inter-burst gap is rescaled by a factor in ``outlier_scale``, modelling
    gaps that fall outside the nominal range; it is 0 by default.
    """

    name: str
    kind: TrafficKind
    tbs_dl: tuple[float, float]
    tbs_ul: tuple[float, float]
    ul_fraction: float
    burst_interval_s: tuple[float, float] | None = None
    burst_duration_ms: tuple[float, float] | None = None
    instances_per_burst: tuple[int, int] | None = None
    voip_period_ms: tuple[float, float] | None = None
    outlier_prob: float = 0.0
    outlier_scale: tuple[float, float] = (0.5, 2.0)

    def __post_init__(self):
        if not 0.0 <= self.ul_fraction <= 1.0:
            raise ProfileError(f"{self.name}: ul_fraction must be in [0, 1]")
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise ProfileError(f"{self.name}: outlier_prob must be in [0, 1]")
        for nm in ("tbs_dl", "tbs_ul"):
            if getattr(self, nm)[1] < 0:
                raise ProfileError(f"{self.name}: {nm} sigma must be >= 0")
        if self.kind == TrafficKind.BURST_STREAMING:
            _check_range("burst_interval_s", self.burst_interval_s)
            _check_range("burst_duration_ms", self.burst_duration_ms)
            _check_range("instances_per_burst", self.instances_per_burst)
            if self.burst_duration_ms[1] >= 1000:
                raise ProfileError(f"{self.name}: bursts must be sub-second")
            if self.burst_interval_s[0] * 1000 < self.burst_duration_ms[1] + MIN_BURST_SILENCE_MS:
                raise ProfileError(f"{self.name}: burst interval too short for burst duration")
        else:
            _check_range("voip_period_ms", self.voip_period_ms)

    def with_(self, **changes) -> "AppProfile":
        return replace(self, **changes)


def _ln(x):
    return math.log(x)


def builtin_profiles() -> dict[str, AppProfile]:
    """The default eight-app profile set, keyed by app name.

    Video intervals follow the measured buffering ranges (YouTube 10-15 s,
    Disney+/Prime Video 5-10 s, Netflix 50-60 s). Audio apps have no
    measured interval; they get long 60-120 s gaps with small bursts so they
    are the slowest to fill a window.
    """
    B, V = TrafficKind.BURST_STREAMING, TrafficKind.CONTINUOUS_VOIP
    profiles = [
        AppProfile("YouTube", B, (_ln(45000), 0.4), (_ln(2000), 0.5), 0.15,
                   burst_interval_s=(10, 15), burst_duration_ms=(300, 900),
                   instances_per_burst=(550, 800)),
        AppProfile("Netflix", B, (_ln(60000), 0.4), (_ln(1500), 0.5), 0.10,
                   burst_interval_s=(50, 60), burst_duration_ms=(400, 950),
                   instances_per_burst=(900, 1300)),
        AppProfile("Disney+", B, (_ln(25000), 0.4), (_ln(2000), 0.5), 0.20,
                   burst_interval_s=(5, 10), burst_duration_ms=(200, 800),
                   instances_per_burst=(450, 700)),
        AppProfile("PrimeVideo", B, (_ln(50000), 0.4), (_ln(1800), 0.5), 0.12,
                   burst_interval_s=(5, 10), burst_duration_ms=(300, 900),
                   instances_per_burst=(700, 1000)),
        AppProfile("YTMusic", B, (_ln(20000), 0.5), (_ln(1200), 0.5), 0.20,
                   burst_interval_s=(60, 120), burst_duration_ms=(150, 600),
                   instances_per_burst=(500, 800)),
        AppProfile("Spotify", B, (_ln(16000), 0.5), (_ln(1000), 0.5), 0.30,
                   burst_interval_s=(60, 120), burst_duration_ms=(100, 500),
                   instances_per_burst=(300, 450)),
        AppProfile("WhatsApp", V, (_ln(800), 0.3), (_ln(800), 0.3), 0.5,
                   voip_period_ms=(4, 12)),
        AppProfile("Telegram", V, (_ln(1200), 0.3), (_ln(1100), 0.3), 0.5,
                   voip_period_ms=(2, 5)),
    ]
    return {p.name: p for p in profiles}


def derive_seed(master_seed: int, index: int) -> int:
    """Independent child seed for stream ``index`` of ``master_seed``."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1, np.uint64)[0] >> 1)


def _sizes(rng, profile: AppProfile, n: int):
    ul = rng.random(n) < profile.ul_fraction
    mu = np.where(ul, profile.tbs_ul[0], profile.tbs_dl[0])
    sigma = np.where(ul, profile.tbs_ul[1], profile.tbs_dl[1])
    tbs = np.maximum(np.rint(np.exp(mu + sigma * rng.standard_normal(n))), MIN_TBS_BITS)
    efficiency = BITS_PER_RB * rng.uniform(0.75, 1.25, n)
    rb = np.clip(np.ceil(tbs / efficiency), 1, MAX_RB)
    return ul.astype(np.int8), tbs.astype(np.int64), rb.astype(np.int64)


def _burst_times(rng, p: AppProfile, duration_ms: float) -> np.ndarray:
    lo, hi = p.burst_interval_s
    starts = []
    t = rng.uniform(0, lo) * 1000.0
    min_gap = p.burst_duration_ms[1] + MIN_BURST_SILENCE_MS
    while t < duration_ms:
        starts.append(t)
        gap = rng.uniform(lo, hi) * 1000.0
        if p.outlier_prob and rng.random() < p.outlier_prob:
            gap = max(gap * rng.uniform(*p.outlier_scale), min_gap)
        t += gap
    if not starts:
        return np.empty(0, dtype=np.int64)
    starts = np.array(starts)
    n_inst = rng.integers(p.instances_per_burst[0], p.instances_per_burst[1] + 1, len(starts))
    dur = rng.uniform(*p.burst_duration_ms, len(starts))
    offsets = rng.random(int(n_inst.sum())) * np.repeat(dur, n_inst)
    owner = np.repeat(np.arange(len(starts)), n_inst)
    # sort by burst, then by offset inside the burst
    order = np.lexsort((offsets, owner))
    times = np.floor(np.repeat(starts, n_inst)[order] + offsets[order]).astype(np.int64)
    return times[times < duration_ms]


def _voip_times(rng, p: AppProfile, duration_ms: float) -> np.ndarray:
    lo, hi = p.voip_period_ms
    t0 = float(rng.integers(0, max(int(hi), 1)))
    chunks, t = [], t0
    chunk = int(duration_ms / ((lo + hi) / 2) * 1.1) + 16
    while t < duration_ms:
        steps = rng.uniform(lo, hi, chunk) if hi > lo else np.full(chunk, float(lo))
        ts = t + np.concatenate(([0.0], np.cumsum(steps[:-1])))
        chunks.append(ts)
        t = ts[-1] + steps[-1]
    times = np.floor(np.concatenate(chunks)).astype(np.int64) if chunks else np.empty(0, np.int64)
    return times[times < duration_ms]


def generate(profile: AppProfile, duration_s: float, rnti: int, seed: int) -> Trace:
    """Ground-truth (pre-capture) DCI trace of one UE running ``profile``."""
    if not duration_s > 0:
        raise ProfileError("duration_s must be positive")
    rng = np.random.default_rng(seed)
    duration_ms = duration_s * 1000.0
    if profile.kind == TrafficKind.BURST_STREAMING:
        times = _burst_times(rng, profile, duration_ms)
    else:
        times = _voip_times(rng, profile, duration_ms)
    ul, tbs, rb = _sizes(rng, profile, len(times))
    return Trace(times, np.full(len(times), rnti), ul, tbs, rb,
                 TraceMeta(label=profile.name, seed=seed))


def generate_cell(assignment: Mapping[int, AppProfile], duration_s: float, seed: int) -> Trace:
    """Multi-UE cell trace; UE ``i`` (in RNTI order) uses ``derive_seed(seed, i)``."""
    parts = [generate(prof, duration_s, rnti, derive_seed(seed, i))
             for i, (rnti, prof) in enumerate(sorted(assignment.items()))]
    cell = merge_traces(parts)
    cell.meta = TraceMeta(seed=seed)
    return cell


def round_robin_cell(n_ues: int, profiles: Mapping[str, AppProfile] | None = None,
                     first_rnti: int = 0x4601) -> dict[int, AppProfile]:
    """Assign profiles to ``n_ues`` consecutive RNTIs in round-robin order."""
    profs = list((profiles or builtin_profiles()).values())
    return {first_rnti + i: profs[i % len(profs)] for i in range(n_ues)}


# -- config files ---------------------------------------------------------

_RANGE_KEYS = ("burst_interval_s", "burst_duration_ms", "instances_per_burst",
               "voip_period_ms", "outlier_scale")


def save_profiles(profiles: Mapping[str, AppProfile], path) -> None:
    """Write profiles as an INI file, one section per app."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    for name, p in profiles.items():
        sec = {"kind": p.kind.value,
               "tbs_dl_mu": repr(p.tbs_dl[0]), "tbs_dl_sigma": repr(p.tbs_dl[1]),
               "tbs_ul_mu": repr(p.tbs_ul[0]), "tbs_ul_sigma": repr(p.tbs_ul[1]),
               "ul_fraction": repr(p.ul_fraction),
               "outlier_prob": repr(p.outlier_prob)}
        for key in _RANGE_KEYS:
            v = getattr(p, key)
            if v is not None:
                sec[key] = f"{v[0]!r}, {v[1]!r}"
        cp[name] = sec
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def load_profiles(path) -> dict[str, AppProfile]:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not cp.read(path, encoding="utf-8"):
        raise ProfileError(f"cannot read profile file {path}")
    out = {}
    for name in cp.sections():
        s = cp[name]
        try:
            kw = dict(
                name=name,
                kind=TrafficKind(s["kind"]),
                tbs_dl=(float(s["tbs_dl_mu"]), float(s["tbs_dl_sigma"])),
                tbs_ul=(float(s["tbs_ul_mu"]), float(s["tbs_ul_sigma"])),
                ul_fraction=float(s["ul_fraction"]),
                outlier_prob=float(s.get("outlier_prob", "0")),
            )
            for key in _RANGE_KEYS:
                if key in s:
                    lo, hi = (v.strip() for v in s[key].split(","))
                    if key == "instances_per_burst":
                        kw[key] = (int(float(lo)), int(float(hi)))
                    else:
                        kw[key] = (float(lo), float(hi))
        except (KeyError, ValueError) as e:
            raise ProfileError(f"profile {name}: {e}") from e
        out[name] = AppProfile(**kw)
    return out
