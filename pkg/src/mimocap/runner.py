"""Experiment orchestration: config parsing, SNR sweeps, CSV/manifest output.

Results are a pure function of (config, seed): frames are generated from
counter-style substreams keyed by (seed, point index, chunk index), and
histogram merging is exact integer addition, so worker count and scheduling
never change the emitted CSV bytes. Interrupted sweeps resume per SNR point
from a state file without double-counting frames.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import ergodic_point, quasi_static_rates
from .curves import snr_at_rate
from .demod import DemodSpec, MimoSystem

DESK_SAMPLING = {"n_frames": 20000, "bins": 128}
FULL_SAMPLING = {"n_frames": 100000, "bins": 256}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class SamplingConfig:
    n_frames: int = 20000
    bins: int = 128
    chunk: int = 2048
    n_blocks: int = 2000
    frames_per_block: int = 2000
    block_bins: int = 16


@dataclass
class ExperimentConfig:
    config_id: str
    mt: int
    mr: int
    constellation: str
    es: float
    fading: str
    csi_np: int | None
    snr_grid_db: list
    demodulators: list
    references: list
    sampling: SamplingConfig
    seed: int
    outage_target_rates: list = field(default_factory=list)
    outage_epsilons: list = field(default_factory=list)
    csi_np_values: list = field(default_factory=list)
    csi_target_rate: float | None = None
    csi_include_perfect: bool = True

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        def need(d, key, path):
            if key not in d:
                raise ConfigError(f"{path}.{key}", "missing required field")
            return d[key]

        system = need(raw, "system", "config")
        mt = int(need(system, "mt", "config.system"))
        mr = int(need(system, "mr", "config.system"))
        if mt < 1 or mr < 1:
            raise ConfigError("config.system", "antenna counts must be positive")
        constellation = str(need(system, "constellation", "config.system"))
        es = float(system.get("es", 1.0))
        if es <= 0:
            raise ConfigError("config.system.es", "transmit energy must be positive")

        fading = str(raw.get("fading", "ergodic")).lower()
        if fading not in ("ergodic", "quasistatic"):
            raise ConfigError("config.fading", f"unknown fading mode {fading!r}")

        csi = raw.get("csi", "perfect")
        if csi == "perfect":
            csi_np = None
        elif isinstance(csi, dict) and "np" in csi:
            csi_np = int(csi["np"])
            if csi_np <= mt:
                raise ConfigError("config.csi.np", f"training length must exceed mt={mt}")
        else:
            raise ConfigError("config.csi", "expected 'perfect' or {'np': <int>}")

        grid = [float(s) for s in need(raw, "snr_grid_db", "config")]
        if len(grid) < 1 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("config.snr_grid_db", "SNR grid must be strictly increasing")

        demods = list(raw.get("demodulators", []))
        try:
            [DemodSpec.parse(d) for d in demods]
        except ValueError as exc:
            raise ConfigError("config.demodulators", str(exc)) from exc

        references = [str(r) for r in raw.get("references", [])]
        for r in references:
            if r not in ("gaussian", "cm", "bicm"):
                raise ConfigError("config.references", f"unknown reference {r!r}")

        s_raw = raw.get("sampling", {})
        sampling = SamplingConfig(
            n_frames=int(s_raw.get("n_frames", DESK_SAMPLING["n_frames"])),
            bins=int(s_raw.get("bins", DESK_SAMPLING["bins"])),
            chunk=int(s_raw.get("chunk", 2048)),
            n_blocks=int(s_raw.get("n_blocks", 2000)),
            frames_per_block=int(s_raw.get("frames_per_block", 2000)),
            block_bins=int(s_raw.get("block_bins", 16)),
        )
        for name in ("n_frames", "bins", "chunk", "n_blocks", "frames_per_block", "block_bins"):
            if getattr(sampling, name) < 1:
                raise ConfigError(f"config.sampling.{name}", "must be positive")

        outage = raw.get("outage", {})
        if fading != "quasistatic" and outage:
            raise ConfigError("config.outage", "outage settings need fading=quasistatic")

        csi_sweep = raw.get("csi_sweep", {})
        cfg = cls(
            config_id=str(raw.get("config_id", "run")),
            mt=mt,
            mr=mr,
            constellation=constellation,
            es=es,
            fading=fading,
            csi_np=csi_np,
            snr_grid_db=grid,
            demodulators=demods,
            references=references,
            sampling=sampling,
            seed=int(raw.get("seed", 0)),
            outage_target_rates=[float(r) for r in outage.get("target_rates", [])],
            outage_epsilons=[float(e) for e in outage.get("epsilons", [])],
            csi_np_values=[int(v) for v in csi_sweep.get("np_values", [])],
            csi_target_rate=(
                float(csi_sweep["target_rate"]) if "target_rate" in csi_sweep else None
            ),
            csi_include_perfect=bool(csi_sweep.get("include_perfect", True)),
        )
        try:
            cfg.system()  # constellation id must resolve
        except ValueError as exc:
            raise ConfigError("config.system.constellation", str(exc)) from exc
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def system(self) -> MimoSystem:
        return MimoSystem.from_config(self.mt, self.mr, self.constellation, self.es)

    def demod_specs(self):
        return [DemodSpec.parse(d) for d in self.demodulators]

    def canonical_json(self) -> str:
        def enc(obj):
            if isinstance(obj, SamplingConfig):
                return vars(obj)
            raise TypeError(type(obj))

        return json.dumps(vars(self), sort_keys=True, default=enc)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# sweep plumbing


def _format(value) -> str:
    if isinstance(value, float):
        return repr(float(value))  # shortest round-trip form, plain-float repr
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    text = str(value)
    if any(ch in text for ch in ',"\n'):  # demod labels can carry commas
        return '"' + text.replace('"', '""') + '"'
    return text


def write_csv(path: Path, columns, rows) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format(row[c]) for c in columns))
    path.write_text("\n".join(lines) + "\n")


class _State:
    """Per-point result cache allowing interrupted sweeps to resume."""

    def __init__(self, out_dir: Path, cfg_hash: str, kind: str, resume: bool):
        self.path = out_dir / f"{cfg_hash}.{kind}.state.json"
        self.points: dict[str, list] = {}
        if resume and self.path.exists():
            self.points = json.loads(self.path.read_text()).get("points", {})

    def done(self, idx: int) -> bool:
        return str(idx) in self.points

    def rows(self, idx: int) -> list:
        return self.points[str(idx)]

    def store(self, idx: int, rows: list) -> None:
        self.points[str(idx)] = rows
        self.path.write_text(json.dumps({"points": self.points}))

    def cleanup(self) -> None:
        if self.path.exists():
            self.path.unlink()


def _run_points(cfg, indices, task, workers: int, state: _State):
    pending = [i for i in indices if not state.done(i)]
    if workers <= 1:
        for idx in pending:
            state.store(idx, task(cfg, idx))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(task, cfg, idx): idx for idx in pending}
            for fut in as_completed(futures):
                state.store(futures[fut], fut.result())
    out = []
    for idx in indices:
        out.extend(state.rows(idx))
    return out


def _write_manifest(out_dir: Path, cfg, wall, points, warnings_list, extra=None):
    manifest = {
        "config_hash": cfg.config_hash(),
        "config_id": cfg.config_id,
        "tool_version": __version__,
        "wall_time_s": wall,
        "points": points,
        "warnings": warnings_list,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


CAPACITY_COLUMNS = ["config_id", "demod", "snr_db", "rate_bpcu", "ci", "n_frames", "bias_bound"]


def _capacity_point(cfg: ExperimentConfig, idx: int) -> list:
    snr_db = cfg.snr_grid_db[idx]
    rho = 10.0 ** (snr_db / 10.0)
    res = ergodic_point(
        cfg.system(),
        cfg.demod_specs(),
        rho,
        cfg.sampling.n_frames,
        cfg.sampling.bins,
        cfg.seed,
        idx,
        references=cfg.references,
        csi_train=cfg.csi_np,
        chunk=cfg.sampling.chunk,
        enforce_sampling=False,
    )
    rows = []
    for name, pe in res.items():
        rows.append(
            {
                "config_id": cfg.config_id,
                "demod": name,
                "snr_db": snr_db,
                "rate_bpcu": pe.rate,
                "ci": pe.ci,
                "n_frames": pe.n_frames,
                "bias_bound": pe.bias_bound,
            }
        )
    return rows


def run_capacity_sweep(cfg: ExperimentConfig, out_dir, workers: int = 1, resume: bool = True,
                       allow_small_sample: bool = False):
    """Ergodic system-capacity sweep; writes capacity.csv plus a manifest."""
    if cfg.fading != "ergodic":
        raise ConfigError("config.fading", "capacity sweep requires ergodic fading")
    if not cfg.demodulators and not cfg.references:
        raise ConfigError("config.demodulators", "no demodulators or references configured")
    warnings_list = _sampling_warnings(cfg, allow_small_sample)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    state = _State(out_dir, cfg.config_hash(), "capacity", resume)
    rows = _run_points(cfg, range(len(cfg.snr_grid_db)), _capacity_point, workers, state)
    rows.sort(key=lambda r: (r["demod"], r["snr_db"]))
    csv_path = out_dir / "capacity.csv"
    write_csv(csv_path, CAPACITY_COLUMNS, rows)
    points = [{"snr_db": s, "n_frames": cfg.sampling.n_frames} for s in cfg.snr_grid_db]
    _write_manifest(out_dir, cfg, time.time() - t0, points, warnings_list)
    state.cleanup()
    return {"csv": csv_path, "rows": rows}


def _sampling_warnings(cfg, allow_small_sample):
    warnings_list = []
    if cfg.sampling.n_frames < 100 * cfg.sampling.bins:
        msg = (
            f"n_frames={cfg.sampling.n_frames} < 100*bins={100 * cfg.sampling.bins}; "
            "estimator bias bound degrades"
        )
        if not allow_small_sample:
            raise ConfigError("config.sampling", msg)
        warnings_list.append(msg)
    return warnings_list


POUT_COLUMNS = ["config_id", "demod", "snr_db", "rbar", "pout"]
EPS_COLUMNS = ["config_id", "demod", "snr_db", "epsilon", "c_eps"]
MEAN_COLUMNS = ["config_id", "demod", "snr_db", "mean_rate_bpcu", "n_blocks"]


def _outage_point(cfg: ExperimentConfig, idx: int) -> list:
    snr_db = cfg.snr_grid_db[idx]
    rho = 10.0 ** (snr_db / 10.0)
    recs = quasi_static_rates(
        cfg.system(),
        cfg.demod_specs(),
        rho,
        cfg.sampling.n_blocks,
        cfg.sampling.frames_per_block,
        cfg.sampling.block_bins,
        cfg.seed,
        idx,
        csi_train=cfg.csi_np,
        chunk=cfg.sampling.chunk,
        enforce_sampling=False,
    )
    rows = []
    for name, rec in recs.items():
        for rbar in cfg.outage_target_rates:
            rows.append(
                {"kind": "pout", "config_id": cfg.config_id, "demod": name, "snr_db": snr_db,
                 "rbar": rbar, "pout": rec.outage_probability(rbar)}
            )
        for eps in cfg.outage_epsilons:
            rows.append(
                {"kind": "eps", "config_id": cfg.config_id, "demod": name, "snr_db": snr_db,
                 "epsilon": eps, "c_eps": rec.eps_capacity(eps)}
            )
        rows.append(
            {"kind": "mean", "config_id": cfg.config_id, "demod": name, "snr_db": snr_db,
             "mean_rate_bpcu": rec.mean_rate, "n_blocks": cfg.sampling.n_blocks}
        )
    return rows


def run_outage_sweep(cfg: ExperimentConfig, out_dir, workers: int = 1, resume: bool = True,
                     allow_small_sample: bool = False):
    """Quasi-static sweep: outage probability and epsilon-capacity versus SNR."""
    if cfg.fading != "quasistatic":
        raise ConfigError("config.fading", "outage requires quasistatic fading")
    if not cfg.demodulators:
        raise ConfigError("config.demodulators", "no demodulators configured")
    if not cfg.outage_target_rates and not cfg.outage_epsilons:
        raise ConfigError("config.outage", "need target_rates and/or epsilons")
    warnings_list = []
    if cfg.sampling.frames_per_block < 100 * cfg.sampling.block_bins:
        msg = "frames_per_block < 100*block_bins; conditional-rate bias bound degrades"
        if not allow_small_sample:
            raise ConfigError("config.sampling", msg)
        warnings_list.append(msg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    state = _State(out_dir, cfg.config_hash(), "outage", resume)
    rows = _run_points(cfg, range(len(cfg.snr_grid_db)), _outage_point, workers, state)
    by_kind = {"pout": [], "eps": [], "mean": []}
    for row in rows:
        by_kind[row.pop("kind")].append(row)
    paths = {}
    for kind, columns, fname in (
        ("pout", POUT_COLUMNS, "outage_pout.csv"),
        ("eps", EPS_COLUMNS, "outage_eps.csv"),
        ("mean", MEAN_COLUMNS, "outage_mean.csv"),
    ):
        rws = by_kind[kind]
        rws.sort(key=lambda r: tuple(_format(r[c]) for c in columns))
        path = out_dir / fname
        write_csv(path, columns, rws)
        paths[kind] = path
    points = [
        {"snr_db": s, "n_blocks": cfg.sampling.n_blocks,
         "frames_per_block": cfg.sampling.frames_per_block}
        for s in cfg.snr_grid_db
    ]
    _write_manifest(out_dir, cfg, time.time() - t0, points, warnings_list)
    state.cleanup()
    return {"paths": paths, "rows_by_kind": by_kind}


CSI_CURVE_COLUMNS = ["config_id", "csi_np", "demod", "snr_db", "rate_bpcu", "ci", "n_frames", "bias_bound"]
CSI_SNR_COLUMNS = ["config_id", "csi_np", "demod", "target_rate_bpcu", "min_snr_db"]


def _csi_point(cfg: ExperimentConfig, idx: int) -> list:
    plan = _csi_plan(cfg)
    np_val, snr_idx = plan[idx]
    snr_db = cfg.snr_grid_db[snr_idx]
    rho = 10.0 ** (snr_db / 10.0)
    res = ergodic_point(
        cfg.system(),
        cfg.demod_specs(),
        rho,
        cfg.sampling.n_frames,
        cfg.sampling.bins,
        cfg.seed,
        idx,
        references=(),
        csi_train=np_val if np_val > 0 else None,
        chunk=cfg.sampling.chunk,
        enforce_sampling=False,
    )
    rows = []
    for name, pe in res.items():
        rows.append(
            {"config_id": cfg.config_id, "csi_np": np_val, "demod": name, "snr_db": snr_db,
             "rate_bpcu": pe.rate, "ci": pe.ci, "n_frames": pe.n_frames, "bias_bound": pe.bias_bound}
        )
    return rows


def _csi_plan(cfg: ExperimentConfig):
    np_values = ([0] if cfg.csi_include_perfect else []) + list(cfg.csi_np_values)
    return [(np_val, snr_idx) for np_val in np_values for snr_idx in range(len(cfg.snr_grid_db))]


def run_csi_sweep(cfg: ExperimentConfig, out_dir, workers: int = 1, resume: bool = True,
                  allow_small_sample: bool = False):
    """Training-length sweep: capacity curves per Np plus required SNR at a target rate.

    csi_np = 0 denotes perfect CSI.
    """
    if not cfg.csi_np_values:
        raise ConfigError("config.csi_sweep.np_values", "need at least one training length")
    if cfg.csi_target_rate is None:
        raise ConfigError("config.csi_sweep.target_rate", "missing target rate")
    system = cfg.system()
    if cfg.csi_target_rate >= system.n_bits:
        raise ConfigError("config.csi_sweep.target_rate",
                          f"target rate must be below R0={system.n_bits}")
    for np_val in cfg.csi_np_values:
        if np_val <= cfg.mt:
            raise ConfigError("config.csi_sweep.np_values", f"training length {np_val} <= mt={cfg.mt}")
    if not cfg.demodulators:
        raise ConfigError("config.demodulators", "no demodulators configured")
    warnings_list = _sampling_warnings(cfg, allow_small_sample)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    plan = _csi_plan(cfg)
    state = _State(out_dir, cfg.config_hash(), "csi", resume)
    rows = _run_points(cfg, range(len(plan)), _csi_point, workers, state)
    rows.sort(key=lambda r: (r["csi_np"], r["demod"], r["snr_db"]))
    curves_path = out_dir / "csi_curves.csv"
    write_csv(curves_path, CSI_CURVE_COLUMNS, rows)

    snr_rows = []
    demod_names = sorted({r["demod"] for r in rows})
    np_values = ([0] if cfg.csi_include_perfect else []) + list(cfg.csi_np_values)
    for np_val in np_values:
        for name in demod_names:
            pts = [r for r in rows if r["csi_np"] == np_val and r["demod"] == name]
            snrs = [r["snr_db"] for r in pts]
            rates = [r["rate_bpcu"] for r in pts]
            try:
                min_snr = snr_at_rate(np.array(snrs), np.array(rates), cfg.csi_target_rate)
            except ValueError:
                min_snr = float("nan")
            snr_rows.append(
                {"config_id": cfg.config_id, "csi_np": np_val, "demod": name,
                 "target_rate_bpcu": cfg.csi_target_rate, "min_snr_db": min_snr}
            )
    required_path = out_dir / "csi_required_snr.csv"
    write_csv(required_path, CSI_SNR_COLUMNS, snr_rows)
    points = [{"csi_np": p[0], "snr_db": cfg.snr_grid_db[p[1]], "n_frames": cfg.sampling.n_frames}
              for p in plan]
    _write_manifest(out_dir, cfg, time.time() - t0, points, warnings_list)
    state.cleanup()
    return {"curves_csv": curves_path, "required_csv": required_path, "rows": rows,
            "required_rows": snr_rows}
