"""Command-line pipeline: simulate, reduce, train, evaluate, report.

Every verb takes one or more ``--config`` files and an ``--out`` directory.
Artifacts of a model live under ``<out>/<model id>/``::

    config.ini                         canonical echo of the config used
    manifest.json                      digests and parents of everything below
    snapshots/<SPS|DPS>/traj_NNN.bin   full-order trajectories
    references/<test>.bin              test references (refined integrator)
    bases/<SPS|DPS>.bin                POD basis with the largest requested N_r
    bases/<SPS|DPS>_spectrum.csv       singular values up to the numerical rank
    models/<kind>/<arch>/nrNN/seedSS.bin       trained networks
    models/<kind>/<arch>/nrNN/seedSS_loss.csv  per-epoch training loss
    models/<kind>/<arch>/nrNN/failed.json      marker for a diverged ensemble

``evaluate`` and ``report`` write to ``<out>/report/`` with a manifest at
``<out>/manifest.json``. Inputs are checked against their manifest digest
before use.

Exit codes: 0 success, 1 missing input or IO error, 2 config or usage
error, 3 numerical failure, 4 provenance or digest error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import (ConfigError, MissingInputError, NiromError, ProvenanceError, ShapeError,
                     UsageError)
from .evaluation import (CELL_COLUMNS, Cell, EvalReport, evaluate_ensemble, make_tests,
                         member_seeds, render_tables, simulate_batch, sps_vs_dps_summary,
                         step_size_study, train_ensemble)
from .fom import initial_state, integrate_reference
from .pod import SnapshotSet, assemble_snapshot_matrix, compute_pod
from .storage import (Manifest, atomic_write_bytes, load_basis, load_net, load_trajectory,
                      save_basis, save_net, save_trajectory, write_csv, write_spectrum)

log = logging.getLogger("nirom")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PROVENANCE = 0, 1, 2, 3, 4

STEP_STUDY_ARCH = "direct_tau"


def step_study_sampling(cfg):
    """Sampling kind whose networks feed the step-size study."""
    return "DPS" if "DPS" in cfg.sampling_kinds else cfg.sampling_kinds[0]


def model_root(out, cfg):
    return Path(out) / cfg.model_id


def _open_manifest(root, cfg):
    """Manifest of ``root``; refuses a directory produced by another config."""
    manifest = Manifest.load(root)
    digest = cfg.digest()
    if manifest.artifacts and manifest.config_hash != digest:
        raise ProvenanceError(f"{root} holds artifacts of a different config; "
                              "use a fresh --out directory")
    manifest.config_hash = digest
    config_path = root / "config.ini"
    if not config_path.exists() or config_path.read_text(encoding="utf-8") != cfg.to_text():
        atomic_write_bytes(config_path, cfg.to_text().encode("utf-8"))
    manifest.add(config_path, "config")
    return manifest


def _verified_manifest(root, cfg):
    manifest = Manifest.load(root)
    if not manifest.artifacts:
        raise MissingInputError(f"no artifacts under {root}; run the earlier stages first")
    if manifest.config_hash != cfg.digest():
        raise ProvenanceError(f"{root} was produced by a different config")
    manifest.verify(root / "config.ini")
    return manifest


def _simulate_kind(job):
    cfg, kind = job
    signals, results = simulate_batch(cfg, cfg.build_model(), kind)
    return signals, [(None, f"{type(r).__name__}: {r}") if isinstance(r, Exception) else (r, None)
                     for r in results]


def _simulate_reference(job):
    cfg, test = job
    model = cfg.build_model()
    try:
        return integrate_reference(model, initial_state(model, test.initial_temperature),
                                   test.load_signal, cfg.t_end, cfg.k,
                                   refine=cfg.reference_refine), None
    except NiromError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _imap(fn, jobs, n_jobs):
    """Results in job order, yielded as soon as each is available."""
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            yield from pool.map(fn, jobs)
    else:
        for j in jobs:
            yield fn(j)


def _map(fn, jobs, n_jobs):
    return list(_imap(fn, jobs, n_jobs))


def cmd_simulate(cfg, out, n_jobs=1):
    """Snapshot trajectories for every sampling kind plus the test references."""
    root = model_root(out, cfg)
    manifest = _open_manifest(root, cfg)
    config_path = root / "config.ini"
    failures = 0
    batches = _map(_simulate_kind, [(cfg, kind) for kind in cfg.sampling_kinds], n_jobs)
    for kind, (signals, results) in zip(cfg.sampling_kinds, batches):
        for i, (signal, (traj, err)) in enumerate(zip(signals, results)):
            path = root / "snapshots" / kind / f"traj_{i:03d}.bin"
            marker = path.with_suffix(".failed")
            if traj is None:
                failures += 1
                log.error("%s %s trajectory %d failed: %s", cfg.model_id, kind, i, err)
                atomic_write_bytes(marker, (err + "\n").encode("utf-8"))
                manifest.remove(path)
                continue
            marker.unlink(missing_ok=True)
            save_trajectory(path, traj, signal, {"sampling": kind, "index": i})
            manifest.add(path, "trajectory", [config_path])
    tests = make_tests(cfg)
    refs = _map(_simulate_reference, [(cfg, t) for t in tests], n_jobs)
    for test, (traj, err) in zip(tests, refs):
        path = root / "references" / f"{test.label}.bin"
        if traj is None:
            failures += 1
            log.error("%s reference %s failed: %s", cfg.model_id, test.label, err)
            continue
        save_trajectory(path, traj, test.load_signal,
                        {"test": test.label, "refine": cfg.reference_refine})
        manifest.add(path, "reference", [config_path])
    manifest.save()
    return EXIT_NUMERIC if failures else EXIT_OK


def _load_snapshots(root, manifest, cfg, kind):
    paths = []
    for i in range(cfg.n_s):
        path = root / "snapshots" / kind / f"traj_{i:03d}.bin"
        if not path.exists():
            raise MissingInputError(f"missing snapshot {path}")
        manifest.verify(path)
        paths.append(path)
    trajs, signals = [], []
    for path in paths:
        traj, signal, _ = load_trajectory(path)
        trajs.append(traj)
        signals.append(signal)
    return SnapshotSet(trajs, signals, kind), paths


def cmd_reduce(cfg, out, n_jobs=1):
    """POD basis and singular value spectrum per sampling kind."""
    root = model_root(out, cfg)
    manifest = _verified_manifest(root, cfg)
    for kind in cfg.sampling_kinds:
        snaps, paths = _load_snapshots(root, manifest, cfg, kind)
        basis = compute_pod(assemble_snapshot_matrix(snaps), cfg.max_n_r, center=cfg.center,
                            source_hash=snaps.digest())
        if basis.rank_warning:
            log.warning("%s %s: %s", cfg.model_id, kind, basis.rank_warning)
        path = root / "bases" / f"{kind}.bin"
        save_basis(path, basis, {"sampling": kind})
        manifest.add(path, "basis", paths)
        spec = root / "bases" / f"{kind}_spectrum.csv"
        write_spectrum(spec, basis.singular_values[:basis.rank])
        manifest.add(spec, "spectrum", [path])
    manifest.save()
    return EXIT_OK


def _group_dir(root, kind, arch, n_r):
    return root / "models" / kind / arch / f"nr{n_r:02d}"


def _net_path(group, seed):
    return group / f"seed{seed:02d}.bin"


def _train_groups(cfg):
    groups = []
    for kind in cfg.sampling_kinds:
        for arch in cfg.architectures:
            for n_r in cfg.n_r_list:
                groups.append((kind, arch, n_r))
    extra = (step_study_sampling(cfg), STEP_STUDY_ARCH, cfg.step_study_n_r)
    if STEP_STUDY_ARCH not in cfg.architectures and cfg.step_study_n_r in cfg.n_r_list:
        groups.append(extra)
    return groups


def _train_job(job):
    cfg, snaps, basis, arch, seeds = job
    try:
        nets, histories = train_ensemble(cfg, snaps, basis, arch, seeds)
        return nets, histories, None
    except NiromError as exc:
        return None, None, {"error": type(exc).__name__, "message": str(exc),
                            "epoch": getattr(exc, "epoch", None)}


def cmd_train(cfg, out, n_jobs=1):
    """Train every ensemble; verified existing members are kept (resume)."""
    root = model_root(out, cfg)
    manifest = _verified_manifest(root, cfg)
    cache = {}
    work = []
    for kind, arch, n_r in _train_groups(cfg):
        group = _group_dir(root, kind, arch, n_r)
        marker = group / "failed.json"
        if marker.exists():
            try:
                manifest.verify(marker)
                log.info("skipping %s: recorded as failed", group)
                continue
            except ProvenanceError:
                marker.unlink()
        todo = []
        for seed in member_seeds(cfg):
            path = _net_path(group, seed)
            try:
                manifest.verify(path)
                manifest.verify(path.with_name(path.stem + "_loss.csv"))
            except ProvenanceError:
                todo.append(seed)
        if not todo:
            continue
        if kind not in cache:
            snaps, _ = _load_snapshots(root, manifest, cfg, kind)
            bpath = root / "bases" / f"{kind}.bin"
            if not bpath.exists():
                raise MissingInputError(f"missing basis {bpath}; run reduce first")
            manifest.verify(bpath)
            basis, _ = load_basis(bpath)
            cache[kind] = (snaps, basis, bpath)
        snaps, basis, bpath = cache[kind]
        if n_r > basis.n_r:
            _write_failure(manifest, group, bpath, {"error": "ShapeError",
                                                    "message": basis.rank_warning})
            continue
        work.append(((kind, arch, n_r), (cfg, snaps, basis.truncate(n_r), arch, todo)))
    results = _imap(_train_job, [w[1] for w in work], n_jobs)
    failures = 0
    for i, (((kind, arch, n_r), job), (nets, histories, err)) in enumerate(zip(work, results)):
        log.info("trained %s/%s/%s/nr%02d (%d of %d)", cfg.model_id, kind, arch, n_r, i + 1,
                 len(work))
        group = _group_dir(root, kind, arch, n_r)
        bpath = cache[kind][2]
        if err is not None:
            failures += 1
            log.error("%s/%s/%s/nr%02d failed: %s", cfg.model_id, kind, arch, n_r,
                      err["message"])
            _write_failure(manifest, group, bpath, err)
            continue
        for seed, net, hist in zip(job[4], nets, histories):
            path = _net_path(group, seed)
            save_net(path, net, {"sampling": kind, "n_r": n_r, "model": cfg.model_id})
            manifest.add(path, "model", [bpath])
            loss = path.with_name(path.stem + "_loss.csv")
            write_csv(loss, ["epoch", "loss"], [(i, v) for i, v in enumerate(hist)])
            manifest.add(loss, "loss", [path])
        manifest.save()
    manifest.save()
    return EXIT_NUMERIC if failures else EXIT_OK


def _write_failure(manifest, group, parent, info):
    marker = group / "failed.json"
    atomic_write_bytes(marker, (json.dumps(info, sort_keys=True) + "\n").encode("utf-8"))
    manifest.add(marker, "failure", [parent])
    manifest.save()


def _load_references(root, manifest, cfg):
    refs, paths = {}, {}
    for test in cfg.tests:
        path = root / "references" / f"{test.label}.bin"
        if not path.exists():
            raise MissingInputError(f"missing reference {path}")
        manifest.verify(path)
        refs[test.label] = load_trajectory(path)[0]
        paths[test.label] = path
    return refs, paths


def _load_group(root, manifest, cfg, kind, arch, n_r):
    """Trained ensemble of one group, or the failure record."""
    group = _group_dir(root, kind, arch, n_r)
    marker = group / "failed.json"
    if marker.exists():
        manifest.verify(marker)
        return None, json.loads(marker.read_text(encoding="utf-8")), [marker]
    nets, paths = [], []
    for seed in member_seeds(cfg):
        path = _net_path(group, seed)
        if not path.exists():
            raise MissingInputError(f"missing model {path}; run train first")
        manifest.verify(path)
        nets.append(load_net(path)[0])
        paths.append(path)
    return nets, None, paths


def _evaluate_config(cfg, out):
    root = model_root(out, cfg)
    manifest = _verified_manifest(root, cfg)
    refs, ref_paths = _load_references(root, manifest, cfg)
    tests = make_tests(cfg)
    cells, parents, studies = [], list(ref_paths.values()), []
    bases = {}
    for kind in cfg.sampling_kinds:
        bpath = root / "bases" / f"{kind}.bin"
        if not bpath.exists():
            raise MissingInputError(f"missing basis {bpath}; run reduce first")
        manifest.verify(bpath)
        bases[kind] = load_basis(bpath)[0]
        parents.append(bpath)
        for arch in cfg.architectures:
            for n_r in cfg.n_r_list:
                nets, failure, paths = _load_group(root, manifest, cfg, kind, arch, n_r)
                parents.extend(paths)
                for test in tests:
                    if failure is not None:
                        cells.append(Cell(cfg.model_id, kind, arch, n_r, test.label,
                                          status=f"failed:{failure['error']}"))
                        continue
                    try:
                        cells.append(evaluate_ensemble(nets, bases[kind].truncate(n_r), test,
                                                       refs[test.label], cfg.model_id, kind,
                                                       arch))
                    except (NiromError, FloatingPointError) as exc:
                        cells.append(Cell(cfg.model_id, kind, arch, n_r, test.label,
                                          status=f"failed:{type(exc).__name__}"))
    kind = step_study_sampling(cfg)
    n_r = cfg.step_study_n_r
    if n_r in cfg.n_r_list and n_r <= bases[kind].n_r:
        nets = {}
        for arch in ("rknn", STEP_STUDY_ARCH, "direct"):
            if arch == STEP_STUDY_ARCH or arch in cfg.architectures:
                group, failure, paths = _load_group(root, manifest, cfg, kind, arch, n_r)
                parents.extend(paths)
                nets[arch] = group
        model = cfg.build_model()
        for test in tests:
            try:
                rows = step_size_study(model, bases[kind].truncate(n_r), test,
                                       cfg.step_factors, rknn=nets.get("rknn"),
                                       direct_tau=nets.get(STEP_STUDY_ARCH),
                                       direct=nets.get("direct"), refine=cfg.reference_refine)
            except (NiromError, FloatingPointError) as exc:
                log.error("step study %s %s failed: %s", cfg.model_id, test.label, exc)
                continue
            for row in rows:
                studies.append({"model": cfg.model_id, "sampling": kind, "n_r": n_r,
                                "test": test.label, **row})
    return cells, parents, studies


STUDY_COLUMNS = ["model", "sampling", "n_r", "test", "factor", "tau", "k",
                 "e_rknn", "rel_rknn", "e_direct_tau", "rel_direct_tau",
                 "e_direct", "rel_direct"]


def _report_manifest(out, cfgs):
    digest = hashlib.sha256("".join(c.digest() for c in cfgs).encode()).hexdigest()
    manifest = Manifest.load(out)
    manifest.config_hash = digest
    return manifest


def cmd_evaluate(cfgs, out, n_jobs=1):
    """Matrix report, tables and step-size study from trained artifacts."""
    out = Path(out)
    cells, parents, studies = [], [], []
    results = _map(_evaluate_job, [(c, out) for c in cfgs], n_jobs)
    for c, p, s in results:
        cells.extend(c)
        parents.extend(Path(x) for x in p)
        studies.extend(s)
    report = EvalReport(cells)
    rdir = out / "report"
    manifest = _report_manifest(out, cfgs)
    csv_path = report.write_csv(rdir / "report.csv")
    manifest.add(csv_path, "report", parents)
    tables = rdir / "tables.txt"
    atomic_write_bytes(tables, render_tables(report).encode("utf-8"))
    manifest.add(tables, "tables", [csv_path])
    study = rdir / "step_study.csv"
    write_csv(study, STUDY_COLUMNS,
              [[row.get(c, float("nan")) for c in STUDY_COLUMNS] for row in studies])
    manifest.add(study, "step_study", parents)
    manifest.save()
    return EXIT_NUMERIC if any(not c.ok for c in cells) else EXIT_OK


def _evaluate_job(job):
    cfg, out = job
    cells, parents, studies = _evaluate_config(cfg, out)
    return cells, [str(p) for p in parents], studies


def cmd_report(cfgs, out, n_jobs=1):
    """Tables, SPS/DPS summary, spectra and error curves from a saved report."""
    out = Path(out)
    rdir = out / "report"
    csv_path = rdir / "report.csv"
    if not csv_path.exists():
        raise MissingInputError(f"missing {csv_path}; run evaluate first")
    manifest = Manifest.load(out)
    manifest.verify(csv_path)
    report = EvalReport.read_csv(csv_path)
    if not report.cells:
        raise ShapeError("report is empty")
    tables = rdir / "tables.txt"
    atomic_write_bytes(tables, render_tables(report).encode("utf-8"))
    manifest.add(tables, "tables", [csv_path])
    rows = []
    for (model, test), s in sps_vs_dps_summary(report).items():
        rows.append([model, test, s["mean_difference"], s["dps_wins"], s["sps_wins"],
                     s["ties"], s["n"], str(s["partial"]).lower()])
    summary = rdir / "sps_vs_dps.csv"
    write_csv(summary, ["model", "test", "mean_difference", "dps_wins", "sps_wins", "ties",
                        "n", "partial"], rows)
    manifest.add(summary, "summary", [csv_path])
    curves = rdir / "error_curves.csv"
    write_csv(curves, ["model", "test", "sampling", "architecture", "n_r", "e_ann_rollout",
                       "e_ann_one_step", "e_pod"],
              [[c.model, c.test, c.sampling, c.architecture, c.n_r, c.e_ann_rollout,
                c.e_ann_one_step, c.e_pod]
               for c in sorted(report.cells,
                               key=lambda c: (c.model, c.test, c.sampling, c.architecture,
                                              c.n_r))])
    manifest.add(curves, "error_curves", [csv_path])
    spec_rows, spec_parents = [], []
    for cfg in cfgs:
        root = model_root(out, cfg)
        model_manifest = Manifest.load(root)
        for kind in cfg.sampling_kinds:
            path = root / "bases" / f"{kind}_spectrum.csv"
            if not path.exists():
                continue
            model_manifest.verify(path)
            spec_parents.append(path)
            basis_path = root / "bases" / f"{kind}.bin"
            model_manifest.verify(basis_path)
            basis = load_basis(basis_path)[0]
            total = float((basis.singular_values ** 2).sum())
            for i, s in enumerate(basis.singular_values[:basis.rank]):
                spec_rows.append([cfg.model_id, kind, i + 1, float(s), float(s * s / total)])
    spectra = rdir / "spectra.csv"
    write_csv(spectra, ["model", "sampling", "index", "sigma", "energy_fraction"], spec_rows)
    manifest.add(spectra, "spectra", spec_parents)
    manifest.save()
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "reduce": cmd_reduce,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}
MULTI = ("evaluate", "report")


def build_parser():
    parser = argparse.ArgumentParser(prog="nirom", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "run the full-order model for sampled parameters and tests",
        "reduce": "compute POD bases and spectra",
        "train": "train surrogate ensembles (resumes verified members)",
        "evaluate": "build the comparison report and step-size study",
        "report": "render tables and plotting CSVs from a report",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", action="append", required=True, metavar="PATH",
                       help="pipeline config file; repeat for several models")
        p.add_argument("--out", required=True, metavar="DIR", help="artifact directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the sampling and training seeds")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None):
    """Run a command; returns the exit code instead of exiting."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfgs = [load_config(p).with_overrides(seed=args.seed)
                for p in args.config]
        ids = [c.model_id for c in cfgs]
        if len(set(ids)) != len(ids):
            raise ConfigError("configs must have distinct model ids")
        if args.command in MULTI:
            return COMMANDS[args.command](cfgs, args.out, args.jobs)
        code = EXIT_OK
        for cfg in cfgs:
            code = max(code, COMMANDS[args.command](cfg, args.out, args.jobs))
        return code
    except (ConfigError, UsageError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ProvenanceError as exc:
        log.error("%s", exc)
        return EXIT_PROVENANCE
    except MissingInputError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (NiromError, FloatingPointError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


def main(argv=None):
    sys.exit(run(argv))


__all__ = ["main", "run", "build_parser", "COMMANDS", "CELL_COLUMNS"]
