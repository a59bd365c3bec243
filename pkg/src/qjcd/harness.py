"""Experiment orchestration: config files, seeded Monte-Carlo sweeps, replica
sweeps, figure presets and CSV output.

Every trial is a pure function of (spec, trial index): the block for trial
``i`` is drawn from stream ``SeedSpec(master_seed, i)`` at every sweep point
and for every estimator, so comparisons are paired and the reduction order
(trial index) does not depend on how work was distributed.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .estimators import GampOptions, detect_known_channel, jcd_estimate, observation, pilot_only_pipeline
from .metrics import TrialMetrics, aggregate, trial_metrics
from .model import SystemConfig, generate_block
from .numerics import SeedSpec
from .quantizer import QuantizerSpec, make_quantizer, unquantized
from .replica import ReplicaConfig, ReplicaSolution, achievable_rate, solve_fixed_point

ESTIMATORS = ("jcd", "pilot-only", "known-csi")
SWEEP_VARIABLES = ("snr_db", "alpha")
CSV_VERSION = 1
DEFAULT_STEP = 0.5


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    system: SystemConfig
    estimators: tuple = ("jcd",)
    sweep_variable: str = "snr_db"
    grid: tuple = (10.0,)
    trials: int = 1
    master_seed: int = 0
    replica: bool = False
    quantizers: tuple = ()
    gamp: GampOptions = GampOptions()

    def __post_init__(self):
        if not self.grid:
            raise ConfigError("sweep.grid must be nonempty")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ConfigError(f"sweep.variable must be one of {SWEEP_VARIABLES}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ConfigError(f"estimators: unknown {bad}; expected a subset of {ESTIMATORS}")
        if not self.estimators and not self.replica:
            raise ConfigError("estimators is empty and replica is off: nothing to run")
        if not self.quantizers:
            object.__setattr__(self, "quantizers", (self.system.quantizer,))

    def point_config(self, quantizer: QuantizerSpec, value: float) -> SystemConfig:
        cfg = replace(self.system, quantizer=quantizer)
        if self.sweep_variable == "snr_db":
            return cfg.with_snr_db(value)
        N = int(round(value * cfg.K))
        if N < 1:
            raise ConfigError(f"sweep.grid: alpha = {value} gives N < 1")
        return replace(cfg, N=N)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "system": self.system.to_dict(),
            "estimators": list(self.estimators),
            "sweep": {"variable": self.sweep_variable, "grid": [float(g) for g in self.grid]},
            "trials": self.trials,
            "master_seed": self.master_seed,
            "replica": self.replica,
            "quantizers": [q.to_dict() for q in self.quantizers],
            "gamp": asdict(self.gamp),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ResultRow:
    experiment: str
    estimator: str
    bits: str
    sweep_variable: str
    sweep_value: float
    trials: Optional[int] = None
    ber: Optional[float] = None
    ber_pred: Optional[float] = None
    mse_x2: Optional[float] = None
    mse_x2_pred: Optional[float] = None
    mse_h: Optional[float] = None
    mse_h_pred: Optional[float] = None
    rate_pred: Optional[float] = None
    rate_pred_discounted: Optional[float] = None
    not_converged: Optional[int] = None
    wall_time: Optional[float] = None
    config_hash: str = ""
    master_seed: int = 0
    build_id: str = ""


REPLICA_COLUMNS = ("mode", "bits", "sweep_variable", "sweep_value", "q_H", "q_X2", "qt_H", "qt_X2", "mse_H",
                   "mse_X2", "ber_pred", "rate_pred", "rate_pred_discounted", "free_entropy", "converged")


def build_id() -> str:
    """Version plus a digest of the installed sources."""
    h = hashlib.sha256()
    here = Path(__file__).parent
    for p in sorted(here.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"qjcd-{__version__}+{h.hexdigest()[:12]}"


# ----------------------------------------------------------------------------
# config files


def _quantizer_list(raw: dict) -> tuple:
    bits = raw.get("bits", 3)
    step = raw.get("step", DEFAULT_STEP)
    if not isinstance(bits, list):
        bits = [bits]
    out = []
    for b in bits:
        if isinstance(b, str) and b.lower() in ("inf", "unquantized"):
            out.append(unquantized())
            continue
        try:
            out.append(make_quantizer(b, step))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"quantizer.bits / quantizer.step: {exc}") from None
    if not out:
        raise ConfigError("quantizer.bits must list at least one entry")
    return tuple(out)


def _pick(section: dict, where: str, allowed: Sequence[str]) -> dict:
    extra = sorted(set(section) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}")
    return section


def spec_from_dict(raw: dict) -> ExperimentSpec:
    _pick(raw, "top level", ("name", "master_seed", "trials", "estimators", "replica",
                              "system", "quantizer", "sweep", "gamp"))
    try:
        sysraw = dict(_pick(raw.get("system", {}), "system",
                            ("K", "N", "T1", "T2", "noise_var", "snr_db", "channel_var", "pilot_power",
                             "data_power", "pilot_constellation", "data_constellation")))
        quantizers = _quantizer_list(_pick(raw.get("quantizer", {}), "quantizer", ("bits", "step")))
        if "snr_db" in sysraw:
            if "noise_var" in sysraw:
                raise ConfigError("system: give noise_var or snr_db, not both")
            sysraw["noise_var"] = 10 ** (-float(sysraw.pop("snr_db")) / 10)
        sysraw.setdefault("noise_var", 0.1)
        missing = [k for k in ("K", "N", "T1", "T2") if k not in sysraw]
        if missing:
            raise ConfigError(f"system: missing {missing}")
        try:
            system = SystemConfig(quantizer=quantizers[0], **sysraw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"system: {exc}") from None

        sweep = _pick(raw.get("sweep", {}), "sweep", ("variable", "grid"))
        grid = sweep.get("grid")
        if grid is None:
            raise ConfigError("sweep.grid is required")
        gamp_raw = _pick(raw.get("gamp", {}), "gamp", [f.name for f in fields(GampOptions)])
        try:
            gamp = GampOptions(**gamp_raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"gamp: {exc}") from None
        seed = raw.get("master_seed", 2024)
        SeedSpec(int(seed), 0)
        return ExperimentSpec(
            name=str(raw.get("name", "experiment")),
            system=system,
            estimators=tuple(raw.get("estimators", ("jcd",))),
            sweep_variable=sweep.get("variable", "snr_db"),
            grid=tuple(float(g) for g in grid),
            trials=int(raw.get("trials", 200)),
            master_seed=int(seed),
            replica=bool(raw.get("replica", False)),
            quantizers=quantizers,
            gamp=gamp,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentSpec:
    """Parse a TOML experiment file. OSError propagates; bad content raises ConfigError."""
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return spec_from_dict(raw)


# ----------------------------------------------------------------------------
# presets

FIG_SYSTEM = dict(K=50, N=200, T1=50, T2=450)
ALL_BITS = (1, 2, 3, None)


def _quantizers(bits_list, step=DEFAULT_STEP):
    return tuple(unquantized() if b is None else make_quantizer(b, step) for b in bits_list)


def preset(name: str, trials: Optional[int] = None) -> ExperimentSpec:
    qs = _quantizers(ALL_BITS)
    if name == "fig2":
        system = SystemConfig(noise_var=0.1, quantizer=qs[0], **FIG_SYSTEM)
        return ExperimentSpec("fig2", system, ("jcd", "known-csi"), "snr_db",
                              tuple(float(s) for s in range(0, 21, 2)), trials or 10_000, 2024, True, qs)
    if name == "fig3":
        system = SystemConfig(noise_var=0.1, quantizer=qs[0], **FIG_SYSTEM)
        return ExperimentSpec("fig3", system, ("jcd", "pilot-only"), "snr_db",
                              tuple(float(s) for s in range(0, 16)), trials or 10_000, 2024, False, qs)
    if name == "fig4":
        system = SystemConfig(noise_var=0.1, quantizer=qs[0], data_constellation="gaussian", **FIG_SYSTEM)
        grid = tuple(float(a) for a in range(2, 41))
        return ExperimentSpec("fig4", system, (), "alpha", grid, trials or 1, 2024, True, qs)
    raise ConfigError(f"unknown preset {name!r}; expected fig2, fig3 or fig4")


# ----------------------------------------------------------------------------
# Monte-Carlo


def run_trial(cfg: SystemConfig, estimator: str, seed: SeedSpec, opts: GampOptions) -> TrialMetrics:
    block = generate_block(cfg, seed)
    obs = observation(block)
    hard_ok = cfg.data_constellation == "qpsk"
    if estimator == "jcd":
        res = jcd_estimate(obs, block.X1, cfg, opts)
    elif estimator == "pilot-only":
        res = pilot_only_pipeline(obs, block.X1, cfg, opts)
    elif estimator == "known-csi":
        res = detect_known_channel(obs.columns(slice(cfg.T1, None)), block.H, cfg, opts)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    return trial_metrics(block.X2, res.x2hat_soft, res.x2hat_hard if hard_ok else None,
                         block.H, res.hhat, res.converged)


def _run_chunk(args):
    spec, qi, vi, estimator, trials = args
    cfg = spec.point_config(spec.quantizers[qi], spec.grid[vi])
    return [run_trial(cfg, estimator, SeedSpec(spec.master_seed, t), spec.gamp) for t in trials]


def _chunks(n, size):
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def replica_for(spec: ExperimentSpec, cfg: SystemConfig, mode: str) -> ReplicaSolution:
    rcfg = ReplicaConfig(cfg.alpha, cfg.beta1, cfg.beta2, cfg.noise_var, cfg.quantizer,
                         data_prior=cfg.data_constellation, c_H=cfg.channel_var, c_X1=cfg.pilot_power,
                         c_X2=cfg.data_power, mode=mode)
    return solve_fixed_point(rcfg)


def _attach_prediction(row: ResultRow, sol: ReplicaSolution, cfg: SystemConfig):
    if cfg.data_constellation == "qpsk":
        row.ber_pred = sol.ber
    row.mse_x2_pred = sol.mse_X2
    row.mse_h_pred = sol.mse_H
    row.rate_pred = achievable_rate(sol.qt_X2, cfg.data_prior, cfg.beta1, cfg.beta2, discount=False)
    row.rate_pred_discounted = achievable_rate(sol.qt_X2, cfg.data_prior, cfg.beta1, cfg.beta2, discount=True)


def run_experiment(spec: ExperimentSpec, threads: Optional[int] = None, chunk: int = 8) -> list:
    """One row per (quantizer, sweep value, estimator); replica-only specs
    give one ``replica`` row per (quantizer, sweep value)."""
    threads = threads or os.cpu_count() or 1
    prov = dict(config_hash=spec.config_hash(), master_seed=spec.master_seed, build_id=build_id())
    points = [(qi, vi) for qi in range(len(spec.quantizers)) for vi in range(len(spec.grid))]

    tasks = []
    for qi, vi in points:
        for est in spec.estimators:
            for c in _chunks(spec.trials, chunk):
                tasks.append((spec, qi, vi, est, c))

    started = time.perf_counter()
    if threads == 1 or len(tasks) <= 1:
        outputs = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(_run_chunk, tasks))
    elapsed = time.perf_counter() - started

    merged = {}
    for task, out in zip(tasks, outputs):
        _, qi, vi, est, _ = task
        merged.setdefault((qi, vi, est), []).extend(out)

    rows = []
    for qi, vi in points:
        q = spec.quantizers[qi]
        cfg = spec.point_config(q, spec.grid[vi])
        preds = {}
        if spec.replica:
            preds["jcd"] = replica_for(spec, cfg, "jcd")
            if "known-csi" in spec.estimators:
                preds["known-csi"] = replica_for(spec, cfg, "perfect-csi")
        base = dict(experiment=spec.name, bits=q.label(), sweep_variable=spec.sweep_variable,
                    sweep_value=spec.grid[vi], **prov)
        for est in spec.estimators:
            m = aggregate(merged[(qi, vi, est)])
            row = ResultRow(estimator=est, trials=m.trials, mse_x2=m.mse_x2,
                            not_converged=m.not_converged, wall_time=elapsed, **base)
            if cfg.data_constellation == "qpsk":
                row.ber = m.ber
            if est != "known-csi":
                row.mse_h = m.mse_h
            if est in preds:
                _attach_prediction(row, preds[est], cfg)
            rows.append(row)
        if not spec.estimators:
            row = ResultRow(estimator="replica", **base)
            _attach_prediction(row, preds["jcd"], cfg)
            rows.append(row)
    return rows


def replica_sweep(spec: ExperimentSpec, modes: Sequence[str] = ("jcd",)) -> list:
    """Replica predictions over the sweep grid as dicts keyed by REPLICA_COLUMNS."""
    out = []
    for q in spec.quantizers:
        for v in spec.grid:
            cfg = spec.point_config(q, v)
            for mode in modes:
                sol = replica_for(spec, cfg, mode)
                out.append({
                    "mode": mode, "bits": q.label(), "sweep_variable": spec.sweep_variable, "sweep_value": v,
                    "q_H": sol.q_H, "q_X2": sol.q_X2, "qt_H": sol.qt_H, "qt_X2": sol.qt_X2,
                    "mse_H": sol.mse_H, "mse_X2": sol.mse_X2,
                    "ber_pred": sol.ber if cfg.data_constellation == "qpsk" else None,
                    "rate_pred": achievable_rate(sol.qt_X2, cfg.data_prior, cfg.beta1, cfg.beta2, discount=False),
                    "rate_pred_discounted": achievable_rate(sol.qt_X2, cfg.data_prior, cfg.beta1, cfg.beta2),
                    "free_entropy": sol.free_entropy, "converged": sol.converged,
                })
    return out


# ----------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".17g")
    return str(v)


def _csv_text(header, records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("csv_version",) + tuple(header))
    for rec in records:
        w.writerow([CSV_VERSION] + [_fmt(rec[h]) for h in header])
    return buf.getvalue()


def rows_to_csv(rows: Sequence[ResultRow], timing: bool = False) -> str:
    """Simulation rows as CSV text. Wall time is left out unless ``timing``
    is set, so identical specs give byte-identical files."""
    header = [f.name for f in fields(ResultRow) if timing or f.name != "wall_time"]
    return _csv_text(header, [asdict(r) for r in rows])


def replica_to_csv(records: Sequence[dict]) -> str:
    return _csv_text(REPLICA_COLUMNS, records)


def write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
