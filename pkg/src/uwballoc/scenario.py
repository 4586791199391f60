"""Monte Carlo harness: channels -> quality matrix -> allocators -> metrics.

One trial draws a channel per user, builds the K x B quality matrix, runs
each allocator once without primaries (the baseline) and then applies
interference control for every primary bandwidth and threshold level in the
sweep. Every trial gets its own RNG streams, so results do not depend on the
order or process in which trials run.
"""

from __future__ import annotations

import copy
import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .allocator.control import interference_control, interference_ledger
from .allocator.model import AllocationResult, SolverConfig
from .allocator.optimal import optimal_joint_allocation
from .allocator.suboptimal import equal_power_allocation, finish_suboptimal
from .channel import (CM_PROFILES, N_SUBCARRIERS, ChannelRealization, LinkBudget, cm_profile,
                      frequency_response, generate_channel, per_subcarrier_sinr)
from .errors import ConfigError, UwbAllocError
from .interference import BandPlan, PrimaryUserBand
from .mac import QosClass, UserProfile, priority_order
from .mcs import effective_sinr

log = logging.getLogger(__name__)

ALGORITHMS = ("optimal", "suboptimal")
PLACEMENTS = ("band", "hqos", "sqos")
DEFAULT_BANDWIDTHS_MHZ = (1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0)

CSV_COLUMNS = ("algorithm", "trial", "bandwidth_mhz", "i_th_level", "user_id", "class",
               "rate_target_mbps", "rate_achieved_mbps", "rate_satisfaction", "power_alloc_w",
               "power_red_w", "power_satisfaction", "i_before_mw", "i_after_mw",
               "i_reduction_ratio", "flags")
SUMMARY_COLUMNS = ("algorithm", "bandwidth_mhz", "i_th_level", "class", "n", "n_interfering",
                   "rate_satisfaction_mean", "rate_satisfaction_std",
                   "power_satisfaction_mean", "power_satisfaction_std",
                   "i_reduction_ratio_mean", "i_reduction_ratio_std",
                   "rate_satisfaction_interfering_mean", "power_satisfaction_interfering_mean",
                   "i_reduction_ratio_interfering_mean", "still_over_threshold",
                   "infeasible_targets")


# --------------------------------------------------------------------- config

@dataclass(frozen=True)
class ChannelConfig:
    model: str = "CM1"
    tx_psd_dbm_mhz: float = LinkBudget.tx_psd_dbm_mhz
    noise_psd_dbm_mhz: float = LinkBudget.noise_psd_dbm_mhz
    pathloss_db: float = LinkBudget.pathloss_db
    n_bands: int = 3

    @property
    def budget(self) -> LinkBudget:
        return LinkBudget(self.tx_psd_dbm_mhz, self.noise_psd_dbm_mhz, self.pathloss_db)

    @property
    def plan(self) -> BandPlan:
        return BandPlan(n_bands=self.n_bands)


@dataclass(frozen=True)
class PrimaryConfig:
    # one primary per entry; "hqos"/"sqos" follow the band held by the
    # highest-priority user of that class in the no-primary allocation
    placement: tuple[str, ...] = ("band",)
    band: int = 0
    offset_mhz: float = 0.0
    bandwidths_mhz: tuple[float, ...] = DEFAULT_BANDWIDTHS_MHZ
    # threshold as a fraction of the interference before control, or absolute
    i_th_fraction: tuple[float, ...] = (0.25,)
    i_th_mw: float | None = None

    @property
    def i_th_levels(self) -> tuple[float, ...]:
        return (self.i_th_mw,) if self.i_th_mw is not None else self.i_th_fraction


@dataclass(frozen=True)
class ScenarioConfig:
    users: tuple[UserProfile, ...]
    channel: ChannelConfig = ChannelConfig()
    primary: PrimaryConfig = PrimaryConfig()
    solver: SolverConfig = SolverConfig(assignment_mode="one_band_per_user")
    n_trials: int = 100
    seed: int = 0
    algorithms: tuple[str, ...] = ALGORITHMS
    P_T: float | None = None  # W; defaults to the PSD cap over all sub-bands
    workers: int = 1

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigError("run.n_trials must be >= 1")
        if not self.users:
            raise ConfigError("at least one user is required")
        ids = [u.id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ConfigError("user ids must be unique")
        if not self.algorithms or any(a not in ALGORITHMS for a in self.algorithms):
            raise ConfigError(f"run.algorithms must be a non-empty subset of {ALGORITHMS}")
        if self.channel.model.upper() not in CM_PROFILES:
            raise ConfigError(f"unknown channel model {self.channel.model!r}")
        if self.channel.n_bands < 1:
            raise ConfigError("channel.n_bands must be >= 1")
        p = self.primary
        if not p.placement or any(x not in PLACEMENTS for x in p.placement):
            raise ConfigError(f"primary.placement entries must be in {PLACEMENTS}")
        if not 0 <= p.band < self.channel.n_bands:
            raise ConfigError("primary.band is outside the band plan")
        if not p.bandwidths_mhz or any(not 0 < b < 528 for b in p.bandwidths_mhz):
            raise ConfigError("primary.bandwidths_mhz must be in (0, 528)")
        if p.i_th_mw is None and (not p.i_th_fraction or any(not f >= 0 for f in p.i_th_fraction)):
            raise ConfigError("primary.i_th_fraction must be non-negative")
        if p.i_th_mw is not None and p.i_th_mw < 0:
            raise ConfigError("primary.i_th_mw must be non-negative")
        if self.P_T is not None and not self.P_T > 0:
            raise ConfigError("run.P_T must be positive")
        if self.workers < 1:
            raise ConfigError("run.workers must be >= 1")

    @property
    def total_power(self) -> float:
        if self.P_T is not None:
            return float(self.P_T)
        return self.channel.budget.subband_power_w() * self.channel.n_bands


_SOLVER_KEYS = {"delta": "delta", "power_tol": "power_tolerance",
                "max_outer_iters": "max_outer_iters", "assignment_mode": "assignment_mode",
                "algo_variant": "algo_variant", "tighten_alpha": "tighten_alpha",
                "waterlevel_bisect_tol": "waterlevel_bisect_tol"}
_RUN_KEYS = {"n_trials", "seed", "algorithms", "P_T", "workers"}
_USER_KEYS = {"id", "qos_class", "requested_rate", "delay_tolerance"}
_SECTIONS = {"run", "channel", "users", "primary", "solver"}


def _check_keys(section: str, given: Mapping, allowed: Iterable[str]):
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _tuple(value) -> tuple:
    return tuple(value) if isinstance(value, (list, tuple)) else (value,)


def config_from_dict(data: Mapping[str, Any]) -> ScenarioConfig:
    _check_keys("top level", data, _SECTIONS)
    try:
        run = dict(data.get("run", {}))
        _check_keys("run", run, _RUN_KEYS)
        users_raw = data.get("users", [])
        if not isinstance(users_raw, list):
            raise ConfigError("[[users]] must be an array of tables")
        users = []
        for i, u in enumerate(users_raw):
            _check_keys(f"users.{i}", u, _USER_KEYS)
            users.append(UserProfile(id=int(u.get("id", i)), qos_class=QosClass.parse(u["qos_class"]),
                                     requested_rate=float(u["requested_rate"]),
                                     delay_tolerance=float(u.get("delay_tolerance", 10.0))))
        ch = dict(data.get("channel", {}))
        _check_keys("channel", ch, {f.name for f in fields(ChannelConfig)})
        channel = ChannelConfig(**ch)
        pr = dict(data.get("primary", {}))
        _check_keys("primary", pr, {f.name for f in fields(PrimaryConfig)})
        for key in ("placement", "bandwidths_mhz", "i_th_fraction"):
            if key in pr:
                pr[key] = _tuple(pr[key])
        if "bandwidths_mhz" in pr:
            pr["bandwidths_mhz"] = tuple(float(b) for b in pr["bandwidths_mhz"])
        primary = PrimaryConfig(**pr)
        sv = dict(data.get("solver", {}))
        _check_keys("solver", sv, _SOLVER_KEYS)
        solver_kwargs = {"assignment_mode": "one_band_per_user"}
        solver_kwargs.update({_SOLVER_KEYS[k]: v for k, v in sv.items()})
        solver = SolverConfig(**solver_kwargs)
        if "algorithms" in run:
            run["algorithms"] = _tuple(run["algorithms"])
        return ScenarioConfig(users=tuple(users), channel=channel, primary=primary,
                              solver=solver, **run)
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"missing required key {exc}") from None
    except (UwbAllocError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Resolved config in the same layout the TOML file uses."""
    run = {"n_trials": cfg.n_trials, "seed": cfg.seed, "algorithms": list(cfg.algorithms),
           "P_T": cfg.total_power, "workers": cfg.workers}
    users = [{"id": u.id, "qos_class": u.qos_class.value, "requested_rate": u.requested_rate,
              "delay_tolerance": u.delay_tolerance} for u in cfg.users]
    primary = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg.primary).items()}
    if primary["i_th_mw"] is None:
        del primary["i_th_mw"]
    solver = {k: getattr(cfg.solver, attr) for k, attr in _SOLVER_KEYS.items()}
    return {"run": run, "channel": asdict(cfg.channel), "users": users, "primary": primary,
            "solver": solver}


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides: Iterable[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; list items are addressed by index."""
    out = copy.deepcopy(data)
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not of the form key=value")
        parts = key.strip().split(".")
        node = out
        for part in parts[:-1]:
            if isinstance(node, list):
                try:
                    node = node[int(part)]
                except (ValueError, IndexError):
                    raise ConfigError(f"override {key!r}: bad list index {part!r}") from None
            else:
                node = node.setdefault(part, {})
        last = parts[-1]
        if isinstance(node, list):
            try:
                node[int(last)] = _parse_value(text.strip())
            except (ValueError, IndexError):
                raise ConfigError(f"override {key!r}: bad list index {last!r}") from None
        elif isinstance(node, dict):
            node[last] = _parse_value(text.strip())
        else:
            raise ConfigError(f"override {key!r} does not address a table")
    return out


def load_config_dict(path) -> dict:
    """Raw TOML contents. I/O errors propagate as OSError."""
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def load_config(path, overrides: Iterable[str] = ()) -> ScenarioConfig:
    return config_from_dict(apply_overrides(load_config_dict(path), overrides))


# ------------------------------------------------------------ quality matrix

def user_seed(base_seed: int, trial: int, user_id: int) -> int:
    """Channel seed of one user in one trial, independent of run order."""
    ss = np.random.SeedSequence([int(base_seed), int(trial), int(user_id)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def build_quality_matrix(channels: Sequence[ChannelRealization], plan: BandPlan,
                         budget: LinkBudget | Sequence[LinkBudget], lambdas: Sequence[float],
                         total_power: float) -> np.ndarray:
    """E[k, b]: EESM of user k's subcarrier SINRs in band b, per watt of band power.

    EESM is not scale invariant, so the compression runs at the operating
    point of an equal power split ``P_T / B`` spread over the subcarriers and
    the result is divided back by that band power.
    """
    if len(channels) != len(lambdas):
        raise ValueError("one channel and one lambda per user are required")
    budgets = [budget] * len(channels) if isinstance(budget, LinkBudget) else list(budget)
    p_ref = total_power / plan.n_bands
    E = np.empty((len(channels), plan.n_bands))
    for k, ch in enumerate(channels):
        for b in range(plan.n_bands):
            gains = frequency_response(ch, plan.center_ghz(b))
            sinr = per_subcarrier_sinr(gains, budgets[k]) * (p_ref / N_SUBCARRIERS)
            E[k, b] = effective_sinr(sinr, lambdas[k]) / p_ref
    return E


# -------------------------------------------------------------------- metrics

def power_satisfaction(alloc: AllocationResult) -> np.ndarray:
    """Share of each user's allocated power left after interference reduction."""
    total = alloc.power.sum(axis=1)
    red = alloc.reductions.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(total > 0, (total - red) / np.where(total > 0, total, 1.0), 1.0)


def rate_satisfaction(alloc: AllocationResult, baseline: AllocationResult) -> np.ndarray:
    """HQoS: min(1, R'/R). SQoS: R' over the same user's no-primary rate."""
    r = alloc.achieved_rates
    base = baseline.achieved_rates
    with np.errstate(divide="ignore", invalid="ignore"):
        hq = np.minimum(1.0, np.where(alloc.targets > 0, r / alloc.targets, 1.0))
        sq = np.where(base > 0, r / np.where(base > 0, base, 1.0), 1.0)
    return np.where(alloc.hqos, hq, sq)


def interference_reduction_ratio(alloc: AllocationResult) -> np.ndarray:
    """(I_before - I_after) / I_before per primary; 0 where nothing interfered."""
    before = np.asarray(alloc.interference_before, dtype=float)
    after = np.asarray(alloc.interference_after, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(before > 0, (before - after) / np.where(before > 0, before, 1.0), 0.0)


def user_reduction_ratio(alloc: AllocationResult) -> np.ndarray:
    """Per-user version of :func:`interference_reduction_ratio`, summed over primaries."""
    before = alloc.user_interference_before.sum(axis=0)
    after = alloc.user_interference_after.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(before > 0, (before - after) / np.where(before > 0, before, 1.0), 0.0)


# ----------------------------------------------------------------------- run

@dataclass(frozen=True)
class TrialRow:
    algorithm: str
    trial: int
    bandwidth_mhz: float
    i_th_level: float
    user_id: int
    qos_class: str
    rate_target_mbps: float
    rate_achieved_mbps: float
    rate_satisfaction: float
    power_alloc_w: float
    power_red_w: float
    power_satisfaction: float
    i_before_mw: float
    i_after_mw: float
    i_reduction_ratio: float
    flags: str

    @property
    def interfering(self) -> bool:
        return self.i_before_mw > 0


@dataclass
class MetricsReport:
    rows: list[TrialRow] = field(default_factory=list)

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        return MetricsReport(sorted(self.rows + other.rows, key=_row_key))

    def select(self, algorithm=None, bandwidth_mhz=None, qos_class=None, i_th_level=None,
               interfering=None) -> list[TrialRow]:
        return [r for r in self.rows
                if (algorithm is None or r.algorithm == algorithm)
                and (bandwidth_mhz is None or r.bandwidth_mhz == bandwidth_mhz)
                and (qos_class is None or r.qos_class == QosClass.parse(qos_class).value)
                and (i_th_level is None or r.i_th_level == i_th_level)
                and (interfering is None or r.interfering == interfering)]

    def mean(self, metric: str, **where) -> float:
        vals = [getattr(r, metric) for r in self.select(**where)]
        return float(np.mean(vals)) if vals else float("nan")

    def summary(self) -> list[dict]:
        groups: dict[tuple, list[TrialRow]] = {}
        for r in self.rows:
            groups.setdefault((r.algorithm, r.bandwidth_mhz, r.i_th_level, r.qos_class), []).append(r)
        out = []
        for key in sorted(groups, key=lambda g: (ALGORITHMS.index(g[0]), g[1], g[2], g[3])):
            rows = groups[key]
            hit = [r for r in rows if r.interfering]
            entry = {"algorithm": key[0], "bandwidth_mhz": key[1], "i_th_level": key[2],
                     "class": key[3], "n": len(rows), "n_interfering": len(hit)}
            for m in ("rate_satisfaction", "power_satisfaction", "i_reduction_ratio"):
                vals = np.array([getattr(r, m) for r in rows])
                entry[f"{m}_mean"] = float(vals.mean())
                entry[f"{m}_std"] = float(vals.std())
            for m in ("rate_satisfaction", "power_satisfaction", "i_reduction_ratio"):
                vals = [getattr(r, m) for r in hit]
                entry[f"{m}_interfering_mean"] = float(np.mean(vals)) if vals else float("nan")
            entry["still_over_threshold"] = sum("StillOverThreshold" in r.flags for r in rows)
            entry["infeasible_targets"] = sum("InfeasibleTargets" in r.flags for r in rows)
            out.append(entry)
        return out


def _row_key(r: TrialRow):
    return (ALGORITHMS.index(r.algorithm), r.trial, r.bandwidth_mhz, r.i_th_level, r.user_id)


def _class_band(alloc: AllocationResult, users: Sequence[UserProfile], hqos: bool) -> int | None:
    """Band carrying most power of the highest-priority user of one class."""
    for u in priority_order(users):
        if u.is_hqos != hqos:
            continue
        k = users.index(u)
        if alloc.power[k].sum() > 0:
            return int(np.argmax(alloc.power[k]))
    return None


def place_primaries(cfg: ScenarioConfig, base: AllocationResult, bandwidth_mhz: float,
                    users: Sequence[UserProfile]) -> list[PrimaryUserBand]:
    plan = cfg.channel.plan
    bands = []
    for where in cfg.primary.placement:
        if where == "band":
            b = cfg.primary.band
        else:
            b = _class_band(base, users, hqos=(where == "hqos"))
            if b is None:
                b = cfg.primary.band
        if b not in bands:
            bands.append(b)
    return [PrimaryUserBand((plan.center_mhz(b) + cfg.primary.offset_mhz) / 1e3, bandwidth_mhz,
                            plan=plan) for b in bands]


def _joint(algorithm: str, users, E, cfg: ScenarioConfig) -> AllocationResult:
    if algorithm == "optimal":
        return optimal_joint_allocation(users, E, cfg.total_power, cfg.solver)
    return equal_power_allocation(users, E, cfg.total_power, cfg.solver)


def _control(algorithm: str, base, primaries, users, E) -> AllocationResult:
    if algorithm == "optimal":
        return interference_control(base, primaries, users, E)
    return finish_suboptimal(base, primaries, users, E)


def trial_channels(cfg: ScenarioConfig, trial: int) -> list[ChannelRealization]:
    profile = cm_profile(cfg.channel.model)
    return [generate_channel(profile, user_seed(cfg.seed, trial, u.id)) for u in cfg.users]


def run_trial(cfg: ScenarioConfig, trial: int) -> list[TrialRow]:
    users = list(cfg.users)
    channels = trial_channels(cfg, trial)
    E = build_quality_matrix(channels, cfg.channel.plan, cfg.channel.budget,
                             [u.lam for u in users], cfg.total_power)
    rows = []
    for algorithm in cfg.algorithms:
        base = _joint(algorithm, users, E, cfg)
        for bw in cfg.primary.bandwidths_mhz:
            primaries = place_primaries(cfg, base, bw, users)
            before = interference_ledger(base, primaries).sum(axis=1)
            for level in cfg.primary.i_th_levels:
                if cfg.primary.i_th_mw is not None:
                    thresholds = [level] * len(primaries)
                else:
                    thresholds = [level * i for i in before]
                prims = [p.with_threshold(t) for p, t in zip(primaries, thresholds)]
                alloc = _control(algorithm, base, prims, users, E)
                rows.extend(_rows(algorithm, trial, bw, level, users, alloc, base))
    return rows


def _rows(algorithm, trial, bw, level, users, alloc: AllocationResult, base) -> list[TrialRow]:
    rs = rate_satisfaction(alloc, base)
    ps = power_satisfaction(alloc)
    ir = user_reduction_ratio(alloc)
    ib = alloc.user_interference_before.sum(axis=0)
    ia = alloc.user_interference_after.sum(axis=0)
    flags = "|".join(sorted(alloc.flags))
    return [TrialRow(algorithm, trial, float(bw), float(level), u.id, u.qos_class.value,
                     float(alloc.targets[k]), float(alloc.achieved_rates[k]), float(rs[k]),
                     float(alloc.power[k].sum()), float(alloc.reductions[k].sum()), float(ps[k]),
                     float(ib[k]), float(ia[k]), float(ir[k]), flags)
            for k, u in enumerate(users)]


def _run_chunk(args) -> list[TrialRow]:
    cfg, trials = args
    out = []
    for t in trials:
        out.extend(run_trial(cfg, t))
    return out


def run_scenario(cfg: ScenarioConfig, trials: Iterable[int] | None = None) -> MetricsReport:
    trials = list(range(cfg.n_trials)) if trials is None else list(trials)
    if cfg.workers > 1 and len(trials) > 1:
        chunks = [trials[i::cfg.workers] for i in range(cfg.workers)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(_run_chunk, [(cfg, c) for c in chunks if c]))
        rows = [r for part in parts for r in part]
    else:
        rows = []
        for t in trials:
            rows.extend(run_trial(cfg, t))
            log.debug("trial %d done", t)
    return MetricsReport(sorted(rows, key=_row_key))


# ------------------------------------------------------------------------ CSV

def _fmt(value) -> str:
    if isinstance(value, float):
        if not math.isfinite(value):
            return ""
        return format(value, ".9g")
    return str(value)


def rows_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        values = [getattr(r, f.name) for f in fields(TrialRow)]
        w.writerow([_fmt(v) for v in values])
    return buf.getvalue()


def summary_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for entry in report.summary():
        w.writerow([_fmt(entry[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()
