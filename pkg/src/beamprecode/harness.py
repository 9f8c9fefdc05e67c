"""End-to-end simulation pipeline and result emission.

A scenario runs channel generation, the pilot phase, power-matrix fitting,
posterior assembly, precoder solving and Monte-Carlo sum-rate evaluation
for every (method, SNR, aging) cell, and reports sum-rates with standard
errors plus solver traces.  Two ground-truth modes are supported:

* ``beam``: channels are drawn exactly from the beam-domain model built on
  the binned path powers (estimators are validated against a known truth).
* ``paths``: channels stay off-grid physical multipath sums; the beam model
  is only the fitted approximation the precoders work with, and evaluation
  samples the true per-path posterior.

Reproducibility: every random draw comes from a named substream of the
scenario seed (see :func:`stream`); evaluation streams are disjoint from
optimization streams by construction and the tags used are recorded in the
report.
"""

from __future__ import annotations

import csv
import io
import json
import time
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import channel as ch
from . import precoder as pc
from . import stats as st
from .steering import ArrayGeometry, build_grids, build_steering_matrices

SCHEMA_VERSION = "1"

# timing stays in the JSON report only: the CSV must be byte-identical
# across reruns of the same seed
CSV_COLUMNS = [
    "schema_version", "method", "snr_db", "beta", "f_k", "f_z", "f_x",
    "sum_rate", "stderr", "omega_nmse", "iterations", "error",
]

_FLOAT_COLUMNS = {"snr_db", "beta", "f_k", "f_z", "f_x", "sum_rate",
                  "stderr", "omega_nmse"}


def stream(seed: int, *tags) -> np.random.Generator:
    """Deterministic named random stream derived from the scenario seed."""
    keys = [zlib.crc32(str(t).encode()) for t in tags]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *keys]))


def _tag(*parts) -> str:
    return "/".join(str(p) for p in parts)


@dataclass
class ScenarioConfig:
    """Inputs of one simulation scenario (JSON-serializable)."""

    seed: int = 0
    # array and grid
    m_z: int = 4
    m_x: int = 4
    m_k: int = 1
    delta: float = 0.5
    f_k: float = 1.0
    f_z: float = 2.0
    f_x: float = 2.0
    # users and mobility
    n_users: int = 4
    d_k: int = 1
    weights: tuple = ()
    betas: tuple = (0.7,)
    speeds_kmh: tuple = ()
    carrier_ghz: float = 4.8
    slot_ms: float = 0.5
    n_blocks: int = 10
    # link and pilots (SNR = 1 / noise_var)
    snr_db: tuple = (20.0,)
    pilot_len: int = 0
    phi_slots: int = 500
    fit_omega: bool = True
    use_mmse_prev: bool = False
    # synthetic channels
    channel_mode: str = "beam"
    n_paths: int = 8
    angle_spread: float = 0.08
    path_power: float = 1.0
    # solver and evaluation
    methods: tuple = ("rzf", "slnr", "algorithm2")
    max_iters: int = 20
    tol: float = 0.0
    n_samples: int = 300
    n_eval: int = 2000

    def __post_init__(self):
        for name in ("weights", "betas", "speeds_kmh", "snr_db", "methods"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.n_users < 1 or self.n_blocks < 1 or self.n_eval < 1:
            raise ValueError("counts must be positive")
        if not self.snr_db:
            raise ValueError("snr_db list must not be empty")
        if self.channel_mode not in ("beam", "paths"):
            raise ValueError("channel_mode must be 'beam' or 'paths'")
        unknown = set(self.methods) - {"rzf", "slnr", "algorithm1", "algorithm2"}
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if not self.betas and not self.speeds_kmh:
            raise ValueError("provide betas or speeds_kmh")

    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(m_z=self.m_z, m_x=self.m_x, m_k=self.m_k,
                             delta_z=self.delta, delta_x=self.delta, delta_r=self.delta)

    def beta_values(self) -> tuple:
        """Aging coefficients for the mobility grid (speeds mapped via Jakes)."""
        if self.speeds_kmh:
            slot_s = self.slot_ms * 1e-3
            return tuple(ch.beta_from_speed(v, self.carrier_ghz * 1e9, slot_s, self.n_blocks)
                         for v in self.speeds_kmh)
        return self.betas

    def user_weights(self) -> np.ndarray:
        if self.weights:
            if len(self.weights) != self.n_users:
                raise ValueError("weights length must match n_users")
            return np.asarray(self.weights, dtype=float)
        return np.ones(self.n_users)

    def pilot_length(self) -> int:
        needed = self.n_users * self.m_k
        return max(self.pilot_len, needed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        return cls(**data)

    def to_json(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path: str) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class CellResult:
    """One (method, SNR, aging) cell of a run."""

    method: str
    snr_db: float
    beta: float
    f_k: float
    f_z: float
    f_x: float
    sum_rate: float = float("nan")
    stderr: float = float("nan")
    omega_nmse: float = float("nan")
    iterations: int = 0
    seconds: float = 0.0
    error: str = ""
    objective_trace: list = field(default_factory=list)

    def row(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "snr_db": self.snr_db,
            "beta": self.beta,
            "f_k": self.f_k,
            "f_z": self.f_z,
            "f_x": self.f_x,
            "sum_rate": self.sum_rate,
            "stderr": self.stderr,
            "omega_nmse": self.omega_nmse,
            "iterations": self.iterations,
            "seconds": self.seconds,
            "error": self.error,
        }


@dataclass
class RunReport:
    """All cells of a scenario plus provenance (config and stream tags)."""

    config: dict
    cells: list
    streams: list = field(default_factory=list)
    schema_version: str = SCHEMA_VERSION

    @property
    def failed(self) -> list:
        return [c for c in self.cells if c.error]

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "streams": list(self.streams),
            "cells": [dict(c.row(), objective_trace=[float(x) for x in c.objective_trace])
                      for c in self.cells],
        }

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n",
                                extrasaction="ignore")
        writer.writeheader()
        for cell in self.cells:
            writer.writerow({k: _format_value(v) for k, v in cell.row().items()})
        return buf.getvalue()


def _format_value(v) -> str:
    # 12 fractional mantissa digits keep the csv -> float round trip
    # within 1e-12 relative error
    if isinstance(v, float):
        return format(v, ".12e")
    return str(v)


def emit(report: RunReport, fmt: str, path: str):
    """Write a report as ``json`` or ``csv``; I/O errors carry the path."""
    if fmt not in ("json", "csv"):
        raise ValueError(f"unknown format {fmt!r}")
    try:
        with open(path, "w") as fh:
            if fmt == "json":
                json.dump(report.to_dict(), fh, indent=2)
            else:
                fh.write(report.csv_text())
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def parse_csv(path_or_text: str, from_text: bool = False) -> list:
    """Read emitted CSV rows back into typed dictionaries."""
    if from_text:
        fh = io.StringIO(path_or_text)
        rows = _parse_csv_handle(fh)
    else:
        with open(path_or_text) as fh:
            rows = _parse_csv_handle(fh)
    return rows


def _parse_csv_handle(fh) -> list:
    rows = []
    for raw in csv.DictReader(fh):
        row = dict(raw)
        for key in _FLOAT_COLUMNS:
            row[key] = float(row[key])
        row["iterations"] = int(row["iterations"])
        rows.append(row)
    return rows


def save_power_matrices(path: str, powers, grid, convention: str = "v-cols j*n_x+l"):
    """Serialize fitted power matrices with their grid metadata (.npz)."""
    omega = np.stack([p.omega for p in powers])
    np.savez(path, omega=omega, f_k=grid.f_k, f_z=grid.f_z, f_x=grid.f_x,
             u_r=grid.u_r, u_t=grid.u_t, v_t=grid.v_t,
             column_order=np.str_(convention), schema_version=np.str_(SCHEMA_VERSION))


def load_power_matrices(path: str):
    """Load serialized power matrices; returns (list of powers, metadata)."""
    data = np.load(path)
    powers = [ch.ChannelPowerMatrix.from_omega(om) for om in data["omega"]]
    meta = {k: data[k] for k in data.files if k != "omega"}
    return powers, meta


def save_channel_dump(path: str, h: np.ndarray):
    """Store externally generated channels, shape (n_slots, K, m_k, m_t)."""
    h = np.asarray(h, dtype=complex)
    if h.ndim != 4:
        raise ValueError("channel dump must have shape (n_slots, K, m_k, m_t)")
    np.savez(path, h=h, schema_version=np.str_(SCHEMA_VERSION))


def load_channel_dump(path: str) -> np.ndarray:
    data = np.load(path)
    h = data["h"]
    if h.ndim != 4:
        raise ValueError("channel dump must have shape (n_slots, K, m_k, m_t)")
    return h


def fit_power_from_channels(h_slots: np.ndarray, pilot: st.PilotConfig, steering,
                            rng: np.random.Generator, max_iters: int = 500,
                            tol: float = 1e-8) -> list:
    """Fit per-user power matrices from replayed channel snapshots.

    ``h_slots`` has shape (n_slots, K, m_k, m_t); each slot is turned into a
    received pilot block with fresh noise, then the KL fixed point runs on
    the per-user sample-averaged second moments.
    """
    n_slots, k_users = h_slots.shape[:2]
    ys = [st.pilot_slot_from_channels(list(h_slots[s]), pilot, rng) for s in range(n_slots)]
    results = []
    for k in range(k_users):
        transforms = st.build_transforms(pilot, steering, user=k)
        phi = st.compute_phi(ys, pilot, steering, user=k)
        results.append(st.fixed_point_fit(phi, transforms, max_iters=max_iters, tol=tol))
    return results


def _nmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    denom = float(np.sum(np.abs(truth) ** 2))
    if denom == 0:
        return float("nan")
    return float(np.sum(np.abs(estimate - truth) ** 2) / denom)


class _Scenario:
    """Shared state for one configuration (geometry, paths, true powers)."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.geom = config.geometry()
        self.grid = build_grids(self.geom, (config.f_k, config.f_z, config.f_x))
        self.steering = build_steering_matrices(self.geom, self.grid)
        self.weights = config.user_weights()
        self.tags = []
        self.paths = [ch.synth_paths(self._stream("paths", k), config.n_paths,
                                     spread=config.angle_spread,
                                     total_power=config.path_power)
                      for k in range(config.n_users)]
        self.omega_true = [ch.paths_to_omega(p, self.grid, self.geom) for p in self.paths]

    def _stream(self, *tags) -> np.random.Generator:
        self.tags.append(_tag(*tags))
        return stream(self.config.seed, *tags)

    def fit_powers(self, sigma2: float, snr_db: float) -> tuple[list, float]:
        """Pilot phase: fitted per-user power matrices and their mean NMSE."""
        cfg = self.config
        pilot = st.unitary_pilots([self.geom.m_k] * cfg.n_users, cfg.pilot_length(), sigma2)
        rng = self._stream("pilot-phase", snr_db)
        ys = []
        for _ in range(cfg.phi_slots):
            if cfg.channel_mode == "beam":
                gs = [ch.sample_beam_channel(om, rng) for om in self.omega_true]
                ys.append(st.simulate_pilot_slot(gs, pilot, self.steering, rng))
            else:
                hs = [ch.path_channel(_redraw_gains(p, rng), self.geom)
                      for p in self.paths]
                ys.append(st.pilot_slot_from_channels(hs, pilot, rng))
        powers, nmses = [], []
        for k in range(cfg.n_users):
            transforms = st.build_transforms(pilot, self.steering, user=k)
            phi = st.compute_phi(ys, pilot, self.steering, user=k)
            # accuracy is limited by the phi sampling noise, so a 1e-6
            # update tolerance is already beyond the useful precision
            fit = st.fixed_point_fit(phi, transforms, max_iters=1000, tol=1e-6)
            powers.append(fit.power)
            nmses.append(_nmse(fit.power.omega, self.omega_true[k].omega))
        return powers, float(np.mean(nmses))


def _redraw_gains(paths: ch.PathSet, rng: np.random.Generator) -> ch.PathSet:
    gain = np.sqrt(paths.power) * ch.crandn(rng, paths.n_paths)
    return ch.PathSet(u_r=paths.u_r, u_t=paths.u_t, v_t=paths.v_t,
                      power=paths.power, gain=gain)


def _paths_wsr(precoders: pc.PrecoderSet, posts, sigma2: float, weights,
               n_samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """Expected weighted sum-rate under the true per-path posterior."""
    total = np.zeros(n_samples)
    for k, post in enumerate(posts):
        m_k = post.geom.m_k
        c_int = np.zeros((post.geom.m_t, post.geom.m_t), dtype=complex)
        for l, p in enumerate(precoders.mats):
            if l != k:
                c_int += p @ p.conj().T
        mean = post.mean
        r = sigma2 * np.eye(m_k) + mean @ c_int @ mean.conj().T + post.eta(c_int)
        r = 0.5 * (r + r.conj().T)
        h = post.sample(rng, size=n_samples)
        hp = h @ precoders.mats[k]
        rinv_hp = np.linalg.solve(r, hp)
        inner = np.eye(hp.shape[2]) + np.einsum("nmd,nme->nde", hp.conj(), rinv_hp)
        _, logdets = np.linalg.slogdet(inner)
        total += weights[k] * logdets.real
    return float(total.mean()), float(total.std(ddof=1) / np.sqrt(n_samples))


def run_scenario(config: ScenarioConfig, powers_hat=None) -> RunReport:
    """Execute the full pipeline over the (method, SNR, aging) grid.

    ``powers_hat`` substitutes precomputed power matrices for the pilot
    phase (the precoders design against them; evaluation still uses the
    synthetic ground truth).  Per-cell failures are recorded in the cell's
    ``error`` field and do not abort the remaining cells.
    """
    scen = _Scenario(config)
    cfg = config
    injected = powers_hat
    cells = []
    for snr_db in cfg.snr_db:
        sigma2 = 10.0 ** (-snr_db / 10.0)
        if injected is not None:
            powers_hat = injected
            omega_nmse = float(np.mean([_nmse(p.omega, t.omega)
                                        for p, t in zip(injected, scen.omega_true)]))
        elif cfg.fit_omega:
            powers_hat, omega_nmse = scen.fit_powers(sigma2, snr_db)
        else:
            powers_hat, omega_nmse = scen.omega_true, 0.0
        pilot = st.unitary_pilots([scen.geom.m_k] * cfg.n_users, cfg.pilot_length(), sigma2)
        prev_rng = scen._stream("prev-slot", snr_db)
        if cfg.channel_mode == "beam":
            g_prev = [ch.sample_beam_channel(om, prev_rng) for om in scen.omega_true]
            if cfg.use_mmse_prev:
                y_prev = st.simulate_pilot_slot(g_prev, pilot, scen.steering, prev_rng)
                g_hat = [st.mmse_beam_estimate(y_prev, pilot, scen.steering,
                                               powers_hat[k], user=k)
                         for k in range(cfg.n_users)]
            else:
                g_hat = g_prev
        else:
            paths_prev = [_redraw_gains(p, prev_rng) for p in scen.paths]
            h_prev = [ch.path_channel(p, scen.geom) for p in paths_prev]
            y_prev = st.pilot_slot_from_channels(h_prev, pilot, prev_rng)
            g_hat = [st.mmse_beam_estimate(y_prev, pilot, scen.steering,
                                           powers_hat[k], user=k)
                     for k in range(cfg.n_users)]
        for beta in cfg.beta_values():
            links_design = [
                pc.UserLink(ch.posterior_model(g_hat[k], beta, powers_hat[k], scen.steering),
                            sigma2, scen.weights[k])
                for k in range(cfg.n_users)
            ]
            if cfg.channel_mode == "beam":
                links_true = [
                    pc.UserLink(ch.posterior_model(g_prev[k], beta, scen.omega_true[k],
                                                   scen.steering),
                                sigma2, scen.weights[k])
                    for k in range(cfg.n_users)
                ]
                posts_true = None
            else:
                links_true = None
                posts_true = [ch.PathPosterior(p, beta, scen.geom) for p in paths_prev]
            for method in cfg.methods:
                cell = CellResult(method=method, snr_db=float(snr_db), beta=float(beta),
                                  f_k=scen.grid.f_k, f_z=scen.grid.f_z, f_x=scen.grid.f_x,
                                  omega_nmse=omega_nmse)
                t0 = time.perf_counter()
                try:
                    precoders, trace, iters = _design(method, links_design, cfg, scen,
                                                      snr_db, beta)
                    eval_rng = scen._stream("eval", snr_db, beta, method)
                    if cfg.channel_mode == "beam":
                        rate, se = pc.expected_wsr_mc(precoders, links_true,
                                                      cfg.n_eval, eval_rng)
                    else:
                        rate, se = _paths_wsr(precoders, posts_true, sigma2,
                                              scen.weights, cfg.n_eval, eval_rng)
                    cell.sum_rate, cell.stderr = rate, se
                    cell.iterations = iters
                    cell.objective_trace = trace
                except Exception as exc:  # per-cell isolation
                    cell.error = f"{type(exc).__name__}: {exc}"
                cell.seconds = time.perf_counter() - t0
                cells.append(cell)
    return RunReport(config=cfg.to_dict(), cells=cells, streams=list(scen.tags))


def _design(method: str, links, cfg: ScenarioConfig, scen: _Scenario,
            snr_db: float, beta: float):
    d_list = [cfg.d_k] * cfg.n_users
    if method == "rzf":
        return pc.rzf_precoder(links, d_list), [], 0
    if method == "slnr":
        return pc.slnr_precoder(links, d_list), [], 0
    init = pc.rzf_precoder(links, d_list)
    rng = scen._stream("opt", snr_db, beta, method)
    precoders, report = pc.solve(init, links, method=method, max_iters=cfg.max_iters,
                                 tol=cfg.tol, n_samples=cfg.n_samples, rng=rng)
    return precoders, [float(x) for x in report.objective], report.iterations


def sweep(config: ScenarioConfig, axis: str, values=None, out_csv: str | None = None):
    """Run one scenario per value along ``axis`` and optionally merge CSVs.

    ``axis`` is one of ``snr`` (dB values), ``speed`` (km/h, mapped to aging
    coefficients via the Jakes model) or ``fine_factor`` (applied to both BS
    grid dimensions).
    """
    if axis not in ("snr", "speed", "fine_factor"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    if values is None:
        defaults = {"snr": config.snr_db, "speed": config.speeds_kmh,
                    "fine_factor": (config.f_z,)}
        values = defaults[axis]
    values = tuple(values)
    if not values:
        raise ValueError("sweep values must be supplied")
    reports = []
    for v in values:
        if axis == "snr":
            cfg = replace(config, snr_db=(float(v),))
        elif axis == "speed":
            cfg = replace(config, speeds_kmh=(float(v),), betas=())
        else:
            cfg = replace(config, f_z=float(v), f_x=float(v))
        reports.append(run_scenario(cfg))
    if out_csv is not None:
        merged = RunReport(config=config.to_dict(),
                           cells=[c for r in reports for c in r.cells])
        emit(merged, "csv", out_csv)
    return reports
