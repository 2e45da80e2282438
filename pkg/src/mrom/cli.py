"""Batch experiment driver: ``offline``, ``online``, ``sweep`` and ``inspect`` commands."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import (ErrorReport, error_bound_check, lipschitz_estimate,
                       manifold_projection_error, optimal_projection_error, projection_error,
                       relative_error)
from .autoencoder import AE_MAGIC, load_checkpoint, save_checkpoint
from .config import METHODS, ConfigError, ExperimentConfig
from .fom import Trajectory, simulate_fom
from .fom.core import TRJ_MAGIC
from .io import FormatError, fnv1a64_file
from .offline import (POD_MAGIC, SNP_MAGIC, PodBasis, SnapshotMatrix, collect_snapshots,
                      pod_basis, train_autoencoder)
from .rom import ROM_MAGIC, RomSolution, manifold_from_autoencoder, manifold_from_pod, rom_simulate

log = logging.getLogger("mrom")

MANIFEST = "manifest.txt"
PARTIAL = ".partial"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"offline stage '{stage}' failed: {cause}")
        self.stage = stage


# ---------------------------------------------------------------------------
# Artifacts


class ArtifactStage:
    """Collects files written as ``name.partial``; renames them when the stage completes."""

    def __init__(self, out: Path, name: str):
        self.out, self.name, self.files = out, name, []

    def path(self, filename: str) -> Path:
        self.files.append(filename)
        return self.out / (filename + PARTIAL)

    def commit(self):
        for f in self.files:
            os.replace(self.out / (f + PARTIAL), self.out / f)


def write_manifest(out: Path, files, config: ExperimentConfig):
    lines = [f"# config {config.offline_hash()}"]
    for f in sorted(files):
        lines.append(f"{fnv1a64_file(out / f)}  {f}")
    (out / MANIFEST).write_text("\n".join(lines) + "\n")


def verify_manifest(out: Path, config: ExperimentConfig | None = None) -> dict:
    path = out / MANIFEST
    if not path.exists():
        raise FormatError(f"no manifest in {out}; run the offline stage first")
    hashes = {}
    for line in path.read_text().splitlines():
        if line.startswith("# config "):
            cfg_hash = line.split()[-1]
            if config is not None and cfg_hash != config.offline_hash():
                raise FormatError("offline artifacts were built from a different configuration")
            continue
        h, name = line.split("  ", 1)
        if not (out / name).exists():
            raise FormatError(f"artifact {name} is missing")
        actual = fnv1a64_file(out / name)
        if actual != h:
            raise FormatError(f"checksum mismatch for {name}: {actual} != {h}")
        hashes[name] = h
    return hashes


# ---------------------------------------------------------------------------
# Offline


def run_offline(cfg: ExperimentConfig, out: Path) -> list[str]:
    """FOM sweeps, snapshot matrix, POD basis and one autoencoder per reduced dimension."""
    out.mkdir(parents=True, exist_ok=True)
    fom, scheme = cfg.fom(), cfg.scheme()
    written = []

    def stage(name, body):
        st = ArtifactStage(out, name)
        log.info("offline stage %s", name)
        try:
            result = body(st)
        except Exception as exc:
            raise StageError(name, exc) from exc
        st.commit()
        written.extend(st.files)
        return result

    def fom_stage(st):
        trs = []
        for i, mu in enumerate(cfg.training_points()):
            tr = simulate_fom(fom, scheme, mu, cfg.time.n_steps)
            tr.save(st.path(f"train_{i:03d}.trj"))
            trs.append(tr)
        return trs

    trajectories = stage("fom", fom_stage)
    t = cfg.training

    def snapshot_stage(st):
        snaps = collect_snapshots(trajectories, t.subset, t.subset_size or None, t.zero_column)
        snaps.save(st.path("snapshots.snp"))
        return snaps

    snaps = stage("snapshots", snapshot_stage)

    def pod_stage(st):
        basis = pod_basis(snaps.W, max(cfg.rom.dims))
        basis.save(st.path("pod.pod"))

    stage("pod", pod_stage)
    if cfg.uses_autoencoder:
        for p in cfg.rom.dims:
            def ae_stage(st, p=p):
                res = train_autoencoder(snaps, cfg.autoencoder_spec(p), cfg.train)
                save_checkpoint(res.model, st.path(f"ae_p{p}.ae"))
                res.save_history(st.path(f"loss_p{p}.csv"))
                log.info("p=%d: best epoch %d, validation loss %.4e", p, res.best_epoch,
                         res.history[res.best_epoch][2])

            stage(f"autoencoder p={p}", ae_stage)
    (out / "config.ini").write_text(cfg.to_text())
    write_manifest(out, written + ["config.ini"], cfg)
    return written


# ---------------------------------------------------------------------------
# Online


RESULT_FIELDS = ("config_hash", "sweep", "sweep_value", "mu_index", "status") + ErrorReport.CSV_FIELDS


def _manifold_for(cfg, method, p, offline: Path, x0, pod: PodBasis, models):
    if method.startswith("pod") or (cfg.rom.force_affine and method.startswith("manifold")):
        return manifold_from_pod(pod.truncate(p).phi, x0), method.split("-", 1)[1]
    if p not in models:
        models[p] = load_checkpoint(offline / f"ae_p{p}.ae")
    kind = "encoder-galerkin" if method == "encoder-galerkin" else method.split("-", 1)[1]
    return manifold_from_autoencoder(models[p], x0), kind


def run_online(cfg: ExperimentConfig, offline: Path, out: Path, sweep: str = "",
               sweep_value: str = "") -> tuple[list[dict], int]:
    """Run every (online mu, dim, method) cell; returns CSV rows and the failure count."""
    verify_manifest(offline, cfg)
    out.mkdir(parents=True, exist_ok=True)
    fom, scheme = cfg.fom(), cfg.scheme()
    pod = PodBasis.load(offline / "pod.pod")
    models = {}
    if cfg.uses_autoencoder:
        for p in cfg.rom.dims:
            models[p] = load_checkpoint(offline / f"ae_p{p}.ae")
    cfg_hash = cfg.hash()
    online = cfg.online_points()
    refs = []
    for k, mu in enumerate(online):
        tr = simulate_fom(fom, scheme, mu, cfg.time.n_steps)
        tr.save(out / f"fom_mu{k}.trj")
        refs.append(tr)
    kappas = {}
    if cfg.metrics.error_bound:
        for k, tr in enumerate(refs):
            idx = np.unique(np.linspace(0, tr.n_steps, 11).astype(int))
            kappas[k] = cfg.metrics.safety_factor * lipschitz_estimate(fom, tr.states[:, idx], tr.mu)

    cells = [(k, p, m) for k in range(len(online)) for p in cfg.rom.dims for m in cfg.rom.methods]

    def run_cell(cell):
        k, p, method = cell
        tr = refs[k]
        name = f"{method}_p{p}_mu{k}"
        try:
            man, kind = _manifold_for(cfg, method, p, offline, tr.states[:, 0], pod, models)
            sol = rom_simulate(man, scheme, tr.mu, cfg.time.n_steps, kind, fom, cfg.rom.solver())
            sol.method = method
            sol.save(out / f"rom_{name}.rom")
            rep = ErrorReport(method, [float(v) for v in tr.mu], p, relative_error(tr, sol),
                              iterations=int(sol.iterations.sum()))
            m = cfg.metrics
            if m.pod_projection:
                rep.pod_projection_error = projection_error(tr, pod.truncate(p).phi)
            if m.optimal_projection:
                rep.optimal_projection_error = optimal_projection_error(tr, p)
            if m.manifold_projection:
                rep.manifold_projection_error = manifold_projection_error(tr, man)
            if m.error_bound:
                chk = error_bound_check(tr, sol, scheme, kappas[k], fom)
                rep.kappa, rep.h, rep.gamma = kappas[k], chk.h, chk.gamma
                rep.bound_applicable = chk.applicable
                rep.bound = [float(v) for v in chk.bound]
                rep.true_error = [float(v) for v in chk.error]
                rep.bound_violations = chk.violations
            (out / f"report_{name}.json").write_text(rep.to_json() + "\n")
            return rep, "ok"
        except Exception as exc:       # a failing cell is recorded, the run continues
            log.warning("cell %s failed: %s", name, exc)
            return ErrorReport(method, [float(v) for v in tr.mu], p), \
                f"failed: {type(exc).__name__}: {exc}"

    threads = max(1, cfg.run.threads)
    if threads == 1:
        results = [run_cell(c) for c in cells]
    else:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run_cell, cells))
    rows, failures = [], 0
    for (k, p, m), (rep, status) in zip(cells, results):
        failures += status != "ok"
        rows.append({"config_hash": cfg_hash, "sweep": sweep, "sweep_value": sweep_value,
                     "mu_index": k, "status": status, **rep.csv_row()})
    write_rows(out / "results.csv", rows)
    return rows, failures


def write_rows(path: Path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# Sweeps


def sweep_configs(cfg: ExperimentConfig, axis: str):
    """``(label, config, needs_offline)`` per sweep point."""
    if axis == "dim":
        return [("all", cfg, True)]
    if axis == "ntrain":
        return [(str(n), replace(cfg, training=replace(cfg.training, design="count", count=n)), True)
                for n in cfg.sweep.ntrain]
    if axis == "subset":
        return [(str(m), replace(cfg, training=replace(cfg.training, subset=cfg.sweep.subset_rule,
                                                       subset_size=m)), True)
                for m in cfg.sweep.subset_sizes]
    raise ConfigError(f"unknown sweep axis {axis!r}")


def run_sweep(cfg: ExperimentConfig, out: Path, axis: str) -> tuple[list[dict], int]:
    rows, failures = [], 0
    for label, c, _ in sweep_configs(cfg, axis):
        c.validate()
        point = out / f"{axis}_{label}"
        run_offline(c, point / "offline")
        r, f = run_online(c, point / "offline", point / "online", axis, label)
        rows += r
        failures += f
    write_rows(out / f"sweep_{axis}.csv", rows)
    return rows, failures


# ---------------------------------------------------------------------------
# Inspect


def inspect(path) -> str:
    path = Path(path)
    magic = path.read_bytes()[:8]
    if magic == TRJ_MAGIC:
        tr = Trajectory.load(path)
        return (f"trajectory: N={tr.states.shape[0]} steps={tr.n_steps} dt={tr.dt!r} "
                f"mu={np.asarray(tr.mu).tolist()}")
    if magic == SNP_MAGIC:
        s = SnapshotMatrix.load(path)
        return f"snapshots: N={s.n_dofs} n_s={s.n_snapshots} zero_column={s.zero_column}"
    if magic == POD_MAGIC:
        b = PodBasis.load(path)
        return f"pod basis: N={b.phi.shape[0]} p={b.dim} sigma={np.round(b.sigma, 6).tolist()}"
    if magic == AE_MAGIC:
        m = load_checkpoint(path)
        return (f"autoencoder: {m.spec.n_params()} parameters, scaling lo={np.asarray(m.scaling.lo).tolist()} "
                f"hi={np.asarray(m.scaling.hi).tolist()}\n{m.spec.to_text()}")
    if magic == ROM_MAGIC:
        s = RomSolution.load(path)
        return (f"rom solution: method={s.method} p={s.xi.shape[0]} N={s.states.shape[0]} "
                f"steps={s.n_steps} dt={s.dt!r} mu={np.asarray(s.mu).tolist()} "
                f"mean iterations={s.iterations.mean() if s.n_steps else 0:.3f}")
    raise FormatError(f"{path}: unknown magic {magic!r}")


# ---------------------------------------------------------------------------
# Entry point


def _list(text, conv=str):
    return tuple(conv(v.strip()) for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mrom", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("offline", "online", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the rng seed (u64)")
        p.add_argument("--threads", type=int, help="worker threads for online cells")
        p.add_argument("--method", help="comma-separated methods: " + ",".join(METHODS))
        p.add_argument("--dims", help="comma-separated reduced dimensions")
        if name == "online":
            p.add_argument("--offline", help="offline artifact directory (default OUT/offline)")
        if name == "sweep":
            p.add_argument("--axis", choices=("dim", "ntrain", "subset"), default="dim")
    p = sub.add_parser("inspect")
    p.add_argument("paths", nargs="+")
    for p in sub.choices.values():
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return ap


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be a u64")
        cfg = cfg.with_seed(args.seed)
    rom = cfg.rom
    if args.method:
        rom = replace(rom, methods=_list(args.method))
    if args.dims:
        rom = replace(rom, dims=_list(args.dims, int))
    cfg = replace(cfg, rom=rom)
    if args.threads is not None:
        cfg = replace(cfg, run=replace(cfg.run, threads=args.threads))
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "inspect":
            for p in args.paths:
                print(f"{p}: {inspect(p)}")
            return 0
        cfg = load_config(args)
        out = Path(args.out)
        if args.command == "offline":
            run_offline(cfg, out / "offline")
            return 0
        if args.command == "online":
            offline = Path(args.offline) if args.offline else out / "offline"
            rows, failures = run_online(cfg, offline, out / "online")
        else:
            rows, failures = run_sweep(cfg, out, args.axis)
        for r in rows:
            print(f"{r['method']:18s} p={r['dim']:<3} mu{r['mu_index']} "
                  f"{r['sweep_value']:>5s} err={r['relative_error']:<24s} {r['status']}")
        return 0 if failures == 0 else 1
    except (ConfigError, FormatError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
