"""Synthetic benign-app traces and injected payload activity.

Benign traces come from three app archetypes. Payloads are sequences of
atomic actions that each add a fixed counter footprint, spread evenly over the
action's duration, on top of the benign trace.

Randomness is always derived from ``numpy.random.SeedSequence`` entropy tuples
so one trace never depends on the generation order of another.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .trace import (DEFAULT_CHANNELS, CounterTrace, PayloadInterval, PayloadKind,
                    _atomic_write, write_trace)

log = logging.getLogger(__name__)


class ArchetypeKind(str, enum.Enum):
    RegularNetwork = "RegularNetwork"
    BurstyUserDriven = "BurstyUserDriven"
    ComputeIntensive = "ComputeIntensive"


class DelayClass(str, enum.Enum):
    Zero = "Zero"
    Medium = "Medium"
    High = "High"


# gap between consecutive actions, in multiples of the action duration
DELAY_FACTOR = {DelayClass.Zero: 0.0, DelayClass.Medium: 2.0, DelayClass.High: 10.0}
DELAY_LETTER = {DelayClass.High: "H", DelayClass.Medium: "M", DelayClass.Zero: "Z"}


def rng_for(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) % 2**64 for k in key]))


@dataclass(frozen=True)
class AppArchetype:
    kind: ArchetypeKind
    base_rate: tuple
    noise_sigma: tuple
    burst_period_ms: float = 2000.0
    burst_duty: float = 0.3
    spike_rate_hz: float = 0.4
    spike_len_ms: float = 300.0
    # activity multiplier inside network bursts / user-driven spikes
    burst_gain: float = 2.0
    # rare large outliers per sample (only when noise is enabled)
    outlier_rate: float = 1e-4
    # slow usage phases: piecewise-constant level with lognormal spread phase_cv
    # and exponentially distributed phase lengths (mean phase_len_ms)
    phase_cv: float = 0.02
    phase_len_ms: float = 10_000.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ArchetypeKind(self.kind))
        object.__setattr__(self, "base_rate", tuple(float(v) for v in self.base_rate))
        object.__setattr__(self, "noise_sigma", tuple(float(v) for v in self.noise_sigma))
        if len(self.base_rate) != len(self.noise_sigma):
            raise ValueError("base_rate and noise_sigma lengths differ")
        if min(self.base_rate) < 0 or min(self.noise_sigma) < 0:
            raise ValueError("base_rate and noise_sigma must be non-negative")
        if not 0 < self.burst_duty <= 1:
            raise ValueError("burst_duty must lie in (0, 1]")
        if self.phase_cv < 0 or not self.phase_len_ms > 0:
            raise ValueError("phase_cv must be >= 0 and phase_len_ms positive")

    @property
    def app_id(self) -> str:
        return self.kind.value


def default_archetypes() -> list[AppArchetype]:
    """Radio-like, news/medical-like and game-like profiles (counts per ms)."""
    network = np.array([12.0, 900.0, 1000.0, 20.0, 200.0, 3000.0])
    bursty = np.array([8.0, 600.0, 700.0, 12.0, 150.0, 2000.0])
    compute = np.array([40.0, 3000.0, 3500.0, 60.0, 700.0, 10000.0])
    return [
        AppArchetype(ArchetypeKind.RegularNetwork, tuple(network), tuple(0.3 * network),
                     burst_period_ms=2000.0, burst_duty=0.3, burst_gain=1.8),
        AppArchetype(ArchetypeKind.BurstyUserDriven, tuple(bursty), tuple(0.3 * bursty),
                     spike_rate_hz=0.4, spike_len_ms=300.0, burst_gain=2.5),
        AppArchetype(ArchetypeKind.ComputeIntensive, tuple(compute), tuple(0.3 * compute)),
    ]


def archetype_by_name(name: str, archetypes=None) -> AppArchetype:
    for a in archetypes or default_archetypes():
        if a.kind.value == name:
            return a
    raise KeyError(f"unknown archetype {name!r}")


def activity_profile(archetype: AppArchetype, n: int, period_ms: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Per-sample activity multiplier (1 = base rate)."""
    t = np.arange(n) * period_ms
    level = np.ones(n)
    if archetype.kind is ArchetypeKind.RegularNetwork:
        phase = rng.uniform(0, archetype.burst_period_ms)
        on = ((t + phase) % archetype.burst_period_ms) < archetype.burst_duty * archetype.burst_period_ms
        level[on] = archetype.burst_gain
    elif archetype.kind is ArchetypeKind.BurstyUserDriven:
        duration = n * period_ms
        n_spikes = rng.poisson(archetype.spike_rate_hz * duration / 1000.0)
        for s in np.sort(rng.uniform(0, duration, n_spikes)):
            a = int(s / period_ms)
            b = int(min(n, math.ceil((s + archetype.spike_len_ms) / period_ms)))
            level[a:b] = archetype.burst_gain
    if archetype.phase_cv > 0:
        s = math.sqrt(math.log1p(archetype.phase_cv ** 2))
        duration = n * period_ms
        cuts = np.cumsum(rng.exponential(archetype.phase_len_ms,
                                         int(3 * duration / archetype.phase_len_ms) + 8))
        cuts = cuts[cuts < duration]
        gains = np.exp(s * rng.standard_normal(len(cuts) + 1) - 0.5 * s * s)
        level *= gains[np.searchsorted(cuts, t, side="right")]
    return level


def gen_benign(archetype: AppArchetype, len_ms: float, seed: int,
               sample_period_ms: float = 1.0, channels=DEFAULT_CHANNELS) -> CounterTrace:
    if not len_ms > 0:
        raise ValueError("trace length must be positive")
    rng = rng_for(seed, 0xB5)
    n = int(round(len_ms / sample_period_ms))
    base = np.asarray(archetype.base_rate)
    sigma = np.asarray(archetype.noise_sigma)
    level = activity_profile(archetype, n, sample_period_ms, rng)
    mean = level[:, None] * base[None, :]
    if not np.any(sigma > 0):
        return CounterTrace(mean, sample_period_ms, channels, archetype.app_id)
    # multiplicative lognormal with unit mean and coefficient of variation sigma/base,
    # plus additive Gaussian at a quarter of sigma
    cv = np.divide(sigma, base, out=np.zeros_like(sigma), where=base > 0)
    s = np.sqrt(np.log1p(cv ** 2))
    z = rng.standard_normal((n, len(base)))
    x = mean * np.exp(s * z - 0.5 * s ** 2)
    x += 0.25 * sigma * rng.standard_normal((n, len(base)))
    if archetype.outlier_rate > 0:
        hits = rng.random(n) < archetype.outlier_rate
        x[hits] *= rng.uniform(5.0, 20.0, (int(hits.sum()), 1))
    np.maximum(x, 0.0, out=x)
    return CounterTrace(x, sample_period_ms, channels, archetype.app_id)


@dataclass(frozen=True)
class PayloadConfig:
    payload_kind: PayloadKind
    action_duration_ms: float
    actions_per_trace: int
    delay_class: DelayClass
    footprint: tuple
    overhead_multiplier: float = 1.0
    config_id: str = ""
    size_level: int = 1

    def __post_init__(self):
        object.__setattr__(self, "payload_kind", PayloadKind(self.payload_kind))
        object.__setattr__(self, "delay_class", DelayClass(self.delay_class))
        object.__setattr__(self, "footprint", tuple(float(v) for v in self.footprint))
        if not self.action_duration_ms > 0:
            raise ValueError("action_duration_ms must be positive")
        if self.actions_per_trace < 0:
            raise ValueError("actions_per_trace must be non-negative")
        if min(self.footprint, default=0.0) < 0:
            raise ValueError("footprint must be non-negative")
        if self.overhead_multiplier < 1:
            raise ValueError("overhead_multiplier must be >= 1")

    @property
    def gap_ms(self) -> float:
        return DELAY_FACTOR[self.delay_class] * self.action_duration_ms

    def with_overhead(self, multiplier: float) -> "PayloadConfig":
        return PayloadConfig(self.payload_kind, self.action_duration_ms, self.actions_per_trace,
                             self.delay_class, self.footprint, multiplier, self.config_id,
                             self.size_level)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["payload_kind"] = self.payload_kind.value
        d["delay_class"] = self.delay_class.value
        d["footprint"] = list(self.footprint)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PayloadConfig":
        return cls(**d)


def inject_payload(trace: CounterTrace, cfg: PayloadConfig, seed: int,
                   start_ms: float | None = None) -> CounterTrace:
    """Add ``cfg.actions_per_trace`` atomic actions to a benign trace.

    Actions start at ``start_ms`` (drawn from the first 5-15% of the trace
    when omitted) and are separated by the delay-class gap. Each action adds
    ``footprint * overhead_multiplier`` counts spread uniformly over its
    duration. Actions that would run past the end of the trace are dropped.
    """
    if trace.n_samples == 0:
        raise ValueError("cannot inject into a zero-length trace")
    if trace.label_intervals:
        raise ValueError("payloads are injected into benign traces only")
    if cfg.actions_per_trace == 0:
        return trace
    period = trace.sample_period_ms
    span = trace.duration_ms
    if start_ms is None:
        start_ms = rng_for(seed, 0x1A).uniform(0.05, 0.15) * span
    footprint = np.asarray(cfg.footprint) * cfg.overhead_multiplier
    if footprint.shape != (len(trace.channels),):
        raise ValueError("footprint length does not match the trace channels")
    samples = np.array(trace.samples)
    intervals = []
    dur = cfg.action_duration_ms
    stride = dur + cfg.gap_ms
    dropped = 0
    for k in range(cfg.actions_per_trace):
        a = start_ms + k * stride
        # back-to-back actions must not overlap through rounding
        b = min(a + dur, start_ms + (k + 1) * stride)
        if b > span:
            dropped = cfg.actions_per_trace - k
            break
        i0 = int(math.floor(a / period))
        i1 = int(math.ceil(b / period))
        edges = np.arange(i0, i1 + 1) * period
        overlap = np.minimum(edges[1:], b) - np.maximum(edges[:-1], a)
        samples[i0:i1] += (overlap / dur)[:, None] * footprint[None, :]
        intervals.append(PayloadInterval(a, b, cfg.payload_kind, cfg.config_id))
    if dropped:
        log.warning("%s: %d of %d actions do not fit in the trace and were dropped",
                    cfg.config_id, dropped, cfg.actions_per_trace)
    return trace.replace(samples=samples, label_intervals=tuple(intervals))


# Atomic action duration (ms) and counter footprint per ms of action for each
# payload kind. SMS, contact and photo durations are the measured averages for
# one stolen item; everything else is a generator default.
PAYLOAD_PROFILES = {
    PayloadKind.SmsSteal: (120.0, (0.6, 90.0, 67.5, 1.5, 18.75, 300.0)),
    PayloadKind.ContactSteal: (360.0, (0.18, 45.0, 24.0, 0.75, 6.6, 126.0)),
    PayloadKind.FileSteal: (2860.0, (0.09, 48.0, 42.0, 0.24, 7.5, 135.0)),
    PayloadKind.IdGpsSteal: (400.0, (0.15, 21.0, 18.0, 0.45, 5.4, 78.0)),
    PayloadKind.ClickFraud: (400.0, (0.63, 21.0, 18.9, 0.945, 6.3, 92.4)),
    PayloadKind.Ddos: (1000.0, (0.36, 27.0, 21.0, 1.05, 12.0, 99.0)),
    PayloadKind.PasswordCracker: (500.0, (0.12, 18.0, 90.0, 0.15, 15.0, 180.0)),
}

# size levels (items handled per action) and delay classes for each kind
GRID_LAYOUT = {
    PayloadKind.SmsSteal: ((1, 2, 4, 8), (DelayClass.High, DelayClass.Medium, DelayClass.Zero)),
    PayloadKind.ContactSteal: ((1, 2, 4, 8), (DelayClass.High, DelayClass.Medium, DelayClass.Zero)),
    PayloadKind.FileSteal: ((1, 2, 4, 8), (DelayClass.High, DelayClass.Medium, DelayClass.Zero)),
    PayloadKind.IdGpsSteal: ((1, 2, 4), (DelayClass.Medium, DelayClass.Zero)),
    PayloadKind.ClickFraud: ((1, 2, 4, 8), (DelayClass.High, DelayClass.Medium, DelayClass.Zero)),
    PayloadKind.Ddos: ((1, 4), (DelayClass.High, DelayClass.Medium, DelayClass.Zero)),
    PayloadKind.PasswordCracker: ((1, 4), (DelayClass.High, DelayClass.Medium, DelayClass.Zero)),
}

MAX_ACTIONS = 2000
# duration of an action handling s items grows as s ** SIZE_DURATION_EXPONENT;
# at 0 the items are handled in one burst of the base duration, so the
# footprint per ms grows linearly with s
SIZE_DURATION_EXPONENT = 0.0


def default_grid(trace_len_ms: float = 300_000.0, fill: float = 0.75,
                 overhead_multiplier: float = 1.0) -> list[PayloadConfig]:
    """The 66-cell intensity grid, ordered by kind, size, then delay H, M, Z.

    Size level ``s`` means each action handles ``s`` items: its footprint
    scales by ``s`` and its duration by ``s ** SIZE_DURATION_EXPONENT``. The
    number of actions is chosen so the schedule covers about ``fill`` of the
    trace (1 to ``MAX_ACTIONS``).
    """
    grid = []
    for kind, (sizes, delays) in GRID_LAYOUT.items():
        base_dur, rate = PAYLOAD_PROFILES[kind]
        for size in sizes:
            for delay in delays:
                dur = base_dur * size ** SIZE_DURATION_EXPONENT
                stride = dur * (1.0 + DELAY_FACTOR[delay])
                n = int(max(1, min(MAX_ACTIONS, math.floor(fill * trace_len_ms / stride))))
                grid.append(PayloadConfig(
                    payload_kind=kind,
                    action_duration_ms=dur,
                    actions_per_trace=n,
                    delay_class=delay,
                    footprint=tuple(r * base_dur * size for r in rate),
                    overhead_multiplier=overhead_multiplier,
                    config_id=f"{kind.value}-s{size}-{DELAY_LETTER[delay]}",
                    size_level=size,
                ))
    return grid


@dataclass
class SuiteSpec:
    archetypes: list = field(default_factory=default_archetypes)
    payload_grid: list | None = None
    traces_per_cell: int = 10
    trace_len_ms: float = 300_000.0
    seed: int = 0
    sample_period_ms: float = 1.0
    overhead_multiplier: float = 1.0

    def grid(self) -> list[PayloadConfig]:
        if self.payload_grid is not None:
            return list(self.payload_grid)
        return default_grid(self.trace_len_ms, overhead_multiplier=self.overhead_multiplier)

    def to_dict(self) -> dict:
        return {
            "archetypes": [_archetype_dict(a) for a in self.archetypes],
            "payload_grid": None if self.payload_grid is None
            else [c.to_dict() for c in self.payload_grid],
            "traces_per_cell": self.traces_per_cell,
            "trace_len_ms": self.trace_len_ms,
            "seed": self.seed,
            "sample_period_ms": self.sample_period_ms,
            "overhead_multiplier": self.overhead_multiplier,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteSpec":
        known = {"archetypes", "payload_grid", "traces_per_cell", "trace_len_ms", "seed",
                 "sample_period_ms", "overhead_multiplier"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"suite: unknown field(s) {sorted(unknown)}")
        spec = cls()
        if d.get("archetypes") is not None:
            arch = []
            for i, a in enumerate(d["archetypes"]):
                if isinstance(a, str):
                    arch.append(archetype_by_name(a))
                else:
                    try:
                        arch.append(AppArchetype(**a))
                    except (TypeError, ValueError) as exc:
                        raise ValueError(f"suite.archetypes[{i}]: {exc}") from None
            spec.archetypes = arch
        if d.get("payload_grid") is not None:
            grid = []
            for i, c in enumerate(d["payload_grid"]):
                try:
                    grid.append(PayloadConfig.from_dict(c))
                except (TypeError, ValueError) as exc:
                    raise ValueError(f"suite.payload_grid[{i}]: {exc}") from None
            spec.payload_grid = grid
        for name, typ in (("traces_per_cell", int), ("trace_len_ms", float), ("seed", int),
                          ("sample_period_ms", float), ("overhead_multiplier", float)):
            if name in d:
                try:
                    setattr(spec, name, typ(d[name]))
                except (TypeError, ValueError):
                    raise ValueError(f"suite.{name}: expected {typ.__name__}") from None
        if spec.traces_per_cell < 1:
            raise ValueError("suite.traces_per_cell: must be >= 1")
        if spec.trace_len_ms < 1000:
            raise ValueError("suite.trace_len_ms: must be >= 1000")
        return spec


def _archetype_dict(a: AppArchetype) -> dict:
    d = asdict(a)
    d["kind"] = a.kind.value
    d["base_rate"] = list(a.base_rate)
    d["noise_sigma"] = list(a.noise_sigma)
    return d


def benign_seed(suite_seed: int, arch_index: int, k: int) -> int:
    return int(np.random.SeedSequence([suite_seed, arch_index, 1, k]).generate_state(1, np.uint64)[0])


def malicious_seed(suite_seed: int, arch_index: int) -> int:
    """Seed of the one benign background every payload of an archetype is injected into.

    Sharing the background (and payload start) across grid cells mirrors
    replaying the same recorded user input against each repackaged app, so
    cells differ only in their payload.
    """
    return int(np.random.SeedSequence([suite_seed, arch_index, 2]).generate_state(1, np.uint64)[0])


def iter_suite(spec: SuiteSpec, archetype_indices=None):
    """Yield ``(entry, trace)`` for every benign and injected trace of ``spec``.

    ``entry`` is the manifest record (relative path, app id, config id, seed).
    """
    grid = spec.grid()
    for ai, arch in enumerate(spec.archetypes):
        if archetype_indices is not None and ai not in archetype_indices:
            continue
        for k in range(spec.traces_per_cell):
            seed = benign_seed(spec.seed, ai, k)
            tr = gen_benign(arch, spec.trace_len_ms, seed, spec.sample_period_ms)
            yield ({"path": f"{arch.app_id}/benign_{k:03d}.csv", "app_id": arch.app_id,
                    "benign": True, "config_id": None, "seed": seed}, tr)
        seed = malicious_seed(spec.seed, ai)
        background = gen_benign(arch, spec.trace_len_ms, seed, spec.sample_period_ms) if grid else None
        for cfg in grid:
            tr = inject_payload(background, cfg, seed)
            yield ({"path": f"{arch.app_id}/{cfg.config_id}.csv", "app_id": arch.app_id,
                    "benign": False, "config_id": cfg.config_id, "seed": seed}, tr)


def gen_suite(spec: SuiteSpec, out_dir) -> list[dict]:
    """Write benign and injected traces for every archetype plus ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for entry, tr in iter_suite(spec):
        write_trace(tr, out_dir / entry["path"])
        manifest.append(entry)
    doc = {"suite": spec.to_dict(), "grid": [c.to_dict() for c in spec.grid()], "traces": manifest}
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    _atomic_write(out_dir / "manifest.json", text)
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    doc = json.loads(path.read_text())
    doc["root"] = path.parent
    return doc
