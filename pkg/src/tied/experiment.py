"""JSON-configured experiments: sampling and inversion runs, diagnostics, persistence.

A config is a JSON object with a ``"schema"`` field.  Unknown keys are
rejected.  Example::

    {
      "schema": "tied-experiment/1",
      "mode": "sample",
      "group": {"name": "so", "size": 10},
      "energy": {"name": "quadratic", "coef": 10},
      "method": "tied",
      "sampler": {"seed": 0, "chains": 1000, "noise_mode": "paths"},
      "trace": true,
      "outputs": "runs/so10"
    }

Schedule, step size and Monte Carlo size default per ``(group, energy)``
pairing from ``DEFAULTS``.  Pairings without an entry must set them.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .energies import (bimodal_circle_energy, constant_energy, gaussian_prior, oracle_density_circle,
                       quadratic_entry_energy)
from .errors import ConfigError, EstimationError
from .inversion import ActionDescriptor, PointCloud, act, data_distance, posterior_handle
from .lie import GroupDescriptor, GroupElement, angle2, inverse, make_group
from .noise import NoiseSchedule
from .sampler import EnergyHandle, SampleBatch, SamplerConfig, langevin_sample, tied_sample

log = logging.getLogger(__name__)

SCHEMA = "tied-experiment/1"

# (family, size, energy) -> (gamma_min, gamma_max, dt, mc_samples)
DEFAULTS = {
    ("so", 10, "quadratic"): (0.01, 10.0, 1 / 100, 100),
    ("so", 2, "bimodal"): (0.1, 10.0, 1 / 100, 100),
    ("so", 2, "constant"): (0.1, 10.0, 1 / 100, 100),
    ("aff", 2, "gaussian"): (0.1, 1.0, 1 / 50, 4),
    ("sl", 3, "gaussian"): (0.05, 0.5, 1 / 50, 4),
}

_TOP_KEYS = {"schema", "mode", "group", "energy", "action", "data", "method", "sampler", "langevin", "outputs",
             "trace", "monitor", "truth_angle", "oracle_bins"}
_SAMPLER_KEYS = {"gamma_min", "gamma_max", "dt", "mc_samples", "chains", "seed", "fd_step", "gradient",
                 "noise_mode", "block_size", "workers", "score_clip"}
_LANGEVIN_KEYS = {"steps", "step_size", "init", "record_every"}
_ENERGY_KEYS = {
    "quadratic": {"coef", "row", "col"},
    "bimodal": {"beta"},
    "constant": {"value"},
    "gaussian": {"template", "scale"},
}


@dataclass
class ExperimentConfig:
    mode: str
    group: GroupDescriptor
    energy: dict
    method: str
    sampler: SamplerConfig
    outputs: Path
    trace: bool = False
    action: ActionDescriptor | None = None
    data: Path | None = None
    langevin: dict = field(default_factory=dict)
    monitor: tuple[int, int] = (0, 0)
    truth_angle: float | None = None
    oracle_bins: int = 64
    raw: dict = field(default_factory=dict)

    def echo(self) -> dict:
        """Config with every default resolved, for the run report."""
        out = {
            "schema": SCHEMA,
            "mode": self.mode,
            "group": self.group.name,
            "energy": self.energy,
            "method": self.method,
            "sampler": self.sampler.to_dict(),
            "outputs": str(self.outputs),
            "trace": self.trace,
            "monitor": [self.monitor[0] + 1, self.monitor[1] + 1],
        }
        if self.action is not None:
            out["action"] = self.action.kind
            out["data"] = str(self.data)
        if self.method == "langevin":
            out["langevin"] = self.langevin
        if self.truth_angle is not None:
            out["truth_angle"] = self.truth_angle
        return out


@dataclass
class RunReport:
    samples_path: Path
    trace_path: Path | None
    diagnostics_path: Path
    diagnostics: dict
    seconds: float
    config: dict
    failures: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "samples": str(self.samples_path),
            "trace": None if self.trace_path is None else str(self.trace_path),
            "diagnostics_file": str(self.diagnostics_path),
            "diagnostics": self.diagnostics,
            "seconds": self.seconds,
            "config": self.config,
            "failures": {str(k): v for k, v in self.failures.items()},
        }


def _check_keys(section: dict, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")


def _group_from(entry) -> GroupDescriptor:
    try:
        if isinstance(entry, str):
            return make_group(entry)
        if isinstance(entry, dict):
            _check_keys(entry, {"name", "size"}, "group")
            if "name" not in entry:
                raise ConfigError("group.name is required")
            return make_group(entry["name"], entry.get("size"))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad group: {exc}") from exc
    raise ConfigError("group must be a name or {name, size}")


def _resolve(base: Path, p) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def parse_config(raw: dict, base_dir: Path | str = ".") -> ExperimentConfig:
    """Validate a config mapping; relative paths resolve against ``base_dir``."""
    base = Path(base_dir)
    _check_keys(raw, _TOP_KEYS, "config")
    if raw.get("schema") != SCHEMA:
        raise ConfigError(f"schema must be {SCHEMA!r}, got {raw.get('schema')!r}")
    mode = raw.get("mode", "sample")
    if mode not in ("sample", "invert"):
        raise ConfigError(f"mode must be 'sample' or 'invert', got {mode!r}")
    method = raw.get("method", "tied")
    if method not in ("tied", "langevin"):
        raise ConfigError(f"method must be 'tied' or 'langevin', got {method!r}")
    for key in ("group", "energy", "outputs", "sampler"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    group = _group_from(raw["group"])

    energy = raw["energy"]
    if isinstance(energy, str):
        energy = {"name": energy}
    if not isinstance(energy, dict) or energy.get("name") not in _ENERGY_KEYS:
        raise ConfigError(f"energy.name must be one of {sorted(_ENERGY_KEYS)}")
    _check_keys(energy, _ENERGY_KEYS[energy["name"]] | {"name"}, "energy")
    energy = dict(energy)

    samp = raw["sampler"]
    _check_keys(samp, _SAMPLER_KEYS, "sampler")
    if "seed" not in samp:
        raise ConfigError("sampler.seed is required")
    size = group.m if group.family in ("so", "sl") else group.m - 1
    dflt = DEFAULTS.get((group.family, size, energy["name"]))
    need = ("gamma_min", "gamma_max", "dt", "mc_samples")
    if dflt is None and any(k not in samp for k in need):
        raise ConfigError(f"no default schedule for {group.name}/{energy['name']}; set {', '.join(need)}")
    vals = dict(zip(need, dflt)) if dflt else {}
    vals.update({k: samp[k] for k in need if k in samp})
    try:
        sched = NoiseSchedule(float(vals["gamma_min"]), float(vals["gamma_max"]))
        extra = {k: samp[k] for k in _SAMPLER_KEYS - set(need) if k in samp}
        cfg = SamplerConfig(sched, float(vals["dt"]), mc_samples=int(vals["mc_samples"]),
                            trace=bool(raw.get("trace", False)), **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sampler settings: {exc}") from exc

    lang = raw.get("langevin", {})
    _check_keys(lang, _LANGEVIN_KEYS, "langevin")
    if method == "langevin":
        missing = {"steps", "step_size"} - set(lang)
        if missing:
            raise ConfigError(f"langevin method needs {sorted(missing)}")

    action = data = None
    if mode == "invert":
        if "action" not in raw or "data" not in raw:
            raise ConfigError("invert mode needs 'action' and 'data'")
        if energy["name"] != "gaussian":
            raise ConfigError("invert mode needs a data prior energy ('gaussian')")
        kind = raw["action"]["kind"] if isinstance(raw["action"], dict) else raw["action"]
        if isinstance(raw["action"], dict):
            _check_keys(raw["action"], {"kind"}, "action")
        try:
            action = ActionDescriptor(kind, group)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        data = _resolve(base, raw["data"])
        if not data.exists():
            raise ConfigError(f"data file not found: {data}")
    if energy["name"] == "gaussian":
        tmpl = energy.get("template")
        if tmpl is None:
            raise ConfigError("gaussian energy needs a template")
        if isinstance(tmpl, str):
            if not _resolve(base, tmpl).exists():
                raise ConfigError(f"template file not found: {tmpl}")
            energy["template"] = str(_resolve(base, tmpl))

    mon = raw.get("monitor", [1, 1])
    if (not isinstance(mon, list) or len(mon) != 2 or not all(isinstance(i, int) for i in mon)
            or not all(1 <= i <= group.m for i in mon)):
        raise ConfigError(f"monitor must be a 1-based [row, col] inside {group.m}x{group.m}")
    return ExperimentConfig(
        mode=mode, group=group, energy=energy, method=method, sampler=cfg,
        outputs=_resolve(base, raw["outputs"]), trace=bool(raw.get("trace", False)), action=action, data=data,
        langevin=dict(lang), monitor=(mon[0] - 1, mon[1] - 1), truth_angle=raw.get("truth_angle"),
        oracle_bins=int(raw.get("oracle_bins", 64)), raw=raw,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw, path.parent)


def build_energy(entry: dict) -> EnergyHandle:
    name = entry["name"]
    if name == "quadratic":
        return quadratic_entry_energy(entry.get("coef", 10.0), entry.get("row", 1) - 1, entry.get("col", 1) - 1)
    if name == "bimodal":
        return bimodal_circle_energy(entry.get("beta", 4.0))
    if name == "constant":
        return constant_energy(entry.get("value", 0.0))
    raise ConfigError(f"energy {name!r} is a data prior, not a group energy")


def _template(entry: dict) -> np.ndarray:
    tmpl = entry["template"]
    return PointCloud.read(tmpl).points if isinstance(tmpl, str) else PointCloud(tmpl).points


def diameter_proxy(group: GroupDescriptor) -> float | None:
    """Geodesic diameter of SO(n) in the coefficient metric; None for non-compact groups."""
    if group.family != "so":
        return None
    return math.pi * math.sqrt(group.m // 2)


def schedule_warnings(group: GroupDescriptor, sched: NoiseSchedule) -> list[str]:
    diam = diameter_proxy(group)
    if diam is not None and sched.gamma_max**2 < 4 * diam:
        return [f"gamma_max^2={sched.gamma_max**2:.4g} < 4*diameter={4 * diam:.4g}: "
                f"k_1 is far from uniform and the initialization is biased"]
    return []


def tv_distance(a, b, width=1.0) -> float:
    """Half the L1 distance between two binned densities on the same grid.

    With the default ``width=1`` the inputs are bin probabilities.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"bin grids differ: {a.shape} vs {b.shape}")
    w = np.broadcast_to(np.asarray(width, dtype=float), a.shape)
    for h in (a, b):
        if np.any(h < 0) or abs(float((h * w).sum()) - 1.0) > 1e-6:
            raise ValueError("histograms must be non-negative and normalized")
    return float(0.5 * (np.abs(a - b) * w).sum())


def angle_histogram(samples: np.ndarray, bins: int) -> np.ndarray:
    """Bin probabilities of SO(2) angles over ``bins`` equal arcs of ``[-pi, pi)``."""
    theta = angle2(samples)
    idx = np.floor((theta + math.pi) / (2 * math.pi) * bins).astype(int) % bins
    return np.bincount(idx, minlength=bins) / len(theta)


def trace_stats(batch: SampleBatch, coordinate=(0, 0)) -> np.ndarray:
    """Per-step ``(step, t, mean, var)`` of one matrix entry across chains."""
    if batch.trace is None:
        raise ValueError("batch has no trace; run with trace enabled")
    i, j = coordinate
    vals = batch.trace[:, :, i, j]
    steps = np.arange(vals.shape[1])
    if batch.method == "tied":
        t = batch.times
    else:
        t = batch.times * batch.config["step_size"]
    return np.column_stack([steps, t, vals.mean(axis=0), vals.var(axis=0)])


def write_samples(path, samples: np.ndarray, energies: np.ndarray) -> None:
    m = samples.shape[-1]
    header = ["chain"] + [f"g_{r + 1}_{c + 1}" for r in range(m) for c in range(m)] + ["energy"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for c, (mat, e) in enumerate(zip(samples, energies)):
            writer.writerow([c] + [f"{v:.17g}" for v in mat.ravel()] + [f"{e:.17g}"])


def read_samples(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    k = data.shape[1] - 2
    m = int(round(math.sqrt(k)))
    return data[:, 1:-1].reshape(-1, m, m), data[:, -1]


def write_trace(path, stats: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "t", "mean", "var"])
        for step, t, mean, var in stats:
            writer.writerow([int(step)] + [f"{v:.17g}" for v in (t, mean, var)])


def _json_dump(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sample(cfg: ExperimentConfig, energy: EnergyHandle) -> SampleBatch:
    if cfg.method == "tied":
        return tied_sample(energy, cfg.group, cfg.sampler)
    lang = cfg.langevin
    return langevin_sample(energy, cfg.group, int(lang["steps"]), float(lang["step_size"]), cfg.sampler,
                           init=lang.get("init", "identity"), record_every=lang.get("record_every"))


def run_experiment(config) -> RunReport:
    """Run one experiment from a config path or a parsed ``ExperimentConfig``.

    Files are written only after all chains finish.  Raises ``EstimationError``
    after writing outputs when any chain failed.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    start = time.perf_counter()
    notes = schedule_warnings(cfg.group, cfg.sampler.schedule)
    for msg in notes:
        log.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)

    diag: dict = {"warnings": notes}
    if cfg.mode == "invert":
        tmpl = _template(cfg.energy)
        prior = gaussian_prior(tmpl, cfg.energy.get("scale", 1.0))
        x_obs = PointCloud.read(cfg.data).points
        if x_obs.shape != tmpl.shape:
            raise ConfigError(f"data shape {x_obs.shape} does not match template {tmpl.shape}")
        energy = posterior_handle(prior, x_obs, cfg.action)
    else:
        energy = build_energy(cfg.energy)

    batch = _sample(cfg, energy)
    i, j = cfg.monitor
    entry = batch.samples[:, i, j]
    diag.update({
        "method": batch.method,
        "chains": batch.chains,
        "monitor": [i + 1, j + 1],
        "monitor_mean": float(entry.mean()),
        "monitor_var": float(entry.var()),
        "monitor_abs_mean": float(np.abs(entry).mean()),
        "monitor_positive_fraction": float((entry > 0).mean()),
        "energy_mean": float(np.mean(batch.energies)),
        **batch.diagnostics,
    })
    if cfg.group.name == "so2" and cfg.mode == "sample":
        oracle = oracle_density_circle(energy, 4096).bin_masses(cfg.oracle_bins)
        diag["tv_to_oracle"] = tv_distance(angle_histogram(batch.samples, cfg.oracle_bins), oracle)
        diag["oracle_bins"] = cfg.oracle_bins

    cfg.outputs.mkdir(parents=True, exist_ok=True)
    if cfg.mode == "invert":
        h = GroupElement(batch.samples[0], cfg.group)
        canon = act(inverse(h), x_obs, cfg.action)
        PointCloud(canon).to_csv(cfg.outputs / "canonical.csv")
        diag["data_distance"] = data_distance(canon, tmpl)
        if cfg.group.name == "so2":
            diag["recovered_angle"] = float(angle2(batch.samples[0]))
            if cfg.truth_angle is not None:
                err = (diag["recovered_angle"] - cfg.truth_angle + math.pi) % (2 * math.pi) - math.pi
                diag["angle_error"] = abs(float(err))

    samples_path = cfg.outputs / "samples.csv"
    write_samples(samples_path, batch.samples, batch.energies)
    trace_path = None
    if cfg.trace and batch.trace is not None:
        trace_path = cfg.outputs / "trace.csv"
        write_trace(trace_path, trace_stats(batch, cfg.monitor))
    diag["failures"] = {str(k): v for k, v in sorted(batch.failures.items())}
    diag_path = cfg.outputs / "diagnostics.json"
    _json_dump(diag_path, diag)
    report = RunReport(samples_path, trace_path, diag_path, diag, time.perf_counter() - start, cfg.echo(),
                       dict(batch.failures))
    _json_dump(cfg.outputs / "report.json", report.to_dict())
    if batch.failures:
        raise EstimationError(f"{len(batch.failures)} chain(s) failed; see {diag_path}")
    return report
