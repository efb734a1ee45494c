"""Comparison experiments and error metrics.

The relative approximation error of a surrogate is measured in reduced
coordinates, so projection error does not leak into it::

    E_ann = ||Y_r,ref - Y_r,pred||_F / ||Y_r,ref||_F / (N_s k)

with ``Y_r,ref = V^T Y_ref``. Both the scaled value and the plain relative
error are reported, for teacher-forced (one-step) and closed-loop
(rollout) predictions.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import DivisionGuardError, NiromError, ShapeError
from .fom import initial_state, integrate_batch, integrate_reference
from .pod import (SnapshotSet, assemble_snapshot_matrix, compute_pod, project,
                  relative_reprojection_error)
from .sampling import sample_dps, sample_sps
from .surrogate import (TrainingConfig, build_tau_transitions, build_transitions,
                        fit_normalizer, make_net, one_step_predictions, rollout,
                        train_members)

__all__ = [
    "TestCase",
    "Cell",
    "EvalReport",
    "make_tests",
    "reduced_error",
    "e_ann",
    "sampled_signals",
    "simulate_batch",
    "simulate_snapshots",
    "reference_trajectories",
    "train_ensemble",
    "evaluate_ensemble",
    "run_matrix",
    "step_size_study",
    "sps_vs_dps_summary",
    "render_tables",
    "format_delta_cell",
]

ARCH_LABEL = {"direct": "MLP", "rknn": "RKNN", "direct_tau": "MLP-tau"}


@dataclass(frozen=True)
class TestCase:
    model_id: str
    initial_temperature: float
    load_signal: object
    t_end: float
    k: int
    label: str


def make_tests(cfg):
    """Test cases declared in a pipeline config."""
    return [TestCase(cfg.model_id, t.initial_temperature, t.signal(), cfg.t_end, cfg.k, t.label)
            for t in cfg.tests]


def reduced_error(ref_r, pred_r, n_s=1, k=None, prefactor=True):
    """Relative Frobenius error, optionally divided by ``n_s * k``."""
    ref_r = np.asarray(ref_r, dtype=float)
    pred_r = np.asarray(pred_r, dtype=float)
    if ref_r.shape != pred_r.shape:
        raise ShapeError(f"prediction shape {pred_r.shape} differs from reference {ref_r.shape}")
    denom = np.linalg.norm(ref_r)
    if denom == 0.0:
        raise DivisionGuardError("reference is zero")
    err = float(np.linalg.norm(ref_r - pred_r) / denom)
    if prefactor:
        if k is None:
            k = ref_r.shape[1] - 1 if ref_r.ndim == 2 and ref_r.shape[1] > 1 else 1
        err /= n_s * k
    return err


def _check_grid(test, reference):
    expected = np.linspace(0.0, test.t_end, test.k + 1)
    if reference.times.shape != expected.shape or not np.allclose(reference.times, expected,
                                                                  rtol=1e-12, atol=1e-12):
        raise ShapeError("reference grid does not match the test grid")


def _predict(net, basis, test, reference, mode):
    ref_r = project(basis, reference.states)
    if mode == "rollout":
        return ref_r, rollout(net, ref_r[:, 0], test.load_signal, test.t_end, test.k)
    if mode == "one_step":
        return ref_r, one_step_predictions(net, ref_r, test.load_signal, reference.times)
    raise ValueError(f"mode must be 'one_step' or 'rollout', got {mode!r}")


def e_ann(basis, nets, test, reference, mode="rollout", prefactor=True):
    """Approximation error of a network (or ensemble mean) on one test.

    ``basis`` must have as many modes as the networks' reduced dimension.
    """
    _check_grid(test, reference)
    members = nets if isinstance(nets, (list, tuple)) else [nets]
    errs = []
    for net in members:
        if net.n_r != basis.n_r:
            raise ShapeError(f"network has N_r={net.n_r}, basis has {basis.n_r}")
        ref_r, pred = _predict(net, basis, test, reference, mode)
        errs.append(reduced_error(ref_r, pred, 1, test.k, prefactor))
    return float(np.mean(errs))


def sampled_signals(cfg, kind):
    """Parameter signals of one sampling kind."""
    if kind == "SPS":
        return sample_sps(cfg.space, cfg.n_s, cfg.sampling_method, cfg.sampling_seed)
    return sample_dps(cfg.space, cfg.n_s, cfg.sampling_method, cfg.sampling_seed, cfg.omega,
                      cfg.dps_phase)


def simulate_batch(cfg, model, kind):
    """Signals of one sampling kind and their trajectories, integrated as one batch.

    Failed trajectories appear as the exception that stopped them.
    """
    signals = sampled_signals(cfg, kind)
    y0s = [initial_state(model, s.base_point[model.initial_index]) for s in signals]
    return signals, integrate_batch(model, y0s, signals, cfg.t_end, cfg.k)


def simulate_snapshots(cfg, model, kind):
    """Run the full-order model for every sampled signal of one sampling kind."""
    signals, results = simulate_batch(cfg, model, kind)
    for r in results:
        if isinstance(r, Exception):
            raise r
    return SnapshotSet(results, signals, kind)


def reference_trajectories(cfg, model, factor=1.0, tests=None):
    """High-accuracy test references on the grid refined by ``1/factor``."""
    k = _factor_steps(cfg.k, factor)
    out = {}
    for t in tests or make_tests(cfg):
        out[t.label] = integrate_reference(model, initial_state(model, t.initial_temperature),
                                           t.load_signal, cfg.t_end, k,
                                           refine=cfg.reference_refine)
    return out


def _factor_steps(k, factor):
    if not factor > 0:
        raise ValueError("step factor must be positive")
    steps = k / factor
    if abs(steps - round(steps)) > 1e-9:
        raise ValueError(f"factor {factor} does not give an integer number of steps")
    return int(round(steps))


def member_config(base, seed):
    return TrainingConfig(**{**base.to_dict(), "seed": seed})


def member_seeds(cfg):
    return [cfg.training.seed + i for i in range(cfg.ensemble_size)]


def train_ensemble(cfg, snapshots, basis, arch, seeds=None):
    """Train one network per seed, all in one stacked pass.

    Returns ``(nets, histories)``. Divergence of any member propagates as
    :class:`~nirom.errors.TrainingDivergence`.
    """
    if arch == "direct_tau":
        data = build_tau_transitions(snapshots, basis)
    else:
        data = build_transitions(snapshots, basis)
    normalizer = fit_normalizer(data)
    configs = [member_config(cfg.training, s)
               for s in (seeds if seeds is not None else member_seeds(cfg))]
    nets = [make_net(arch, normalizer, snapshots.tau, tc) for tc in configs]
    return train_members(nets, data, configs)


@dataclass
class Cell:
    """One entry of the comparison matrix."""

    model: str
    sampling: str
    architecture: str
    n_r: int
    test: str
    status: str = "ok"
    members: int = 0
    e_ann_one_step: float = math.nan
    e_ann_one_step_std: float = math.nan
    e_ann_rollout: float = math.nan
    e_ann_rollout_std: float = math.nan
    rel_one_step: float = math.nan
    rel_rollout: float = math.nan
    e_pod: float = math.nan
    rel_pod: float = math.nan

    @property
    def key(self):
        return (self.model, self.sampling, self.architecture, self.n_r, self.test)

    @property
    def ok(self):
        return self.status == "ok"


CELL_COLUMNS = [f.name for f in fields(Cell)]


def evaluate_ensemble(nets, basis, test, reference, model_id, sampling, arch):
    """Cell for one trained ensemble on one test."""
    cell = Cell(model_id, sampling, arch, basis.n_r, test.label, members=len(nets))
    per = {key: [] for key in ("one_step", "rollout")}
    rel = {key: [] for key in ("one_step", "rollout")}
    for net in nets:
        for mode in ("one_step", "rollout"):
            ref_r, pred = _predict(net, basis, test, reference, mode)
            per[mode].append(reduced_error(ref_r, pred, 1, test.k, True))
            rel[mode].append(reduced_error(ref_r, pred, 1, test.k, False))
    cell.e_ann_one_step = float(np.mean(per["one_step"]))
    cell.e_ann_one_step_std = float(np.std(per["one_step"]))
    cell.e_ann_rollout = float(np.mean(per["rollout"]))
    cell.e_ann_rollout_std = float(np.std(per["rollout"]))
    cell.rel_one_step = float(np.mean(rel["one_step"]))
    cell.rel_rollout = float(np.mean(rel["rollout"]))
    cell.rel_pod = relative_reprojection_error(basis, reference.states)
    cell.e_pod = cell.rel_pod / test.k
    return cell


def _failed_cells(model_id, sampling, arch, n_r, tests, exc):
    return [Cell(model_id, sampling, arch, n_r, t.label, status=f"failed:{type(exc).__name__}")
            for t in tests]


def _cell_job(job):
    cfg, snapshots, basis, arch, tests, references = job
    start = time.perf_counter()
    try:
        nets, _ = train_ensemble(cfg, snapshots, basis, arch)
        cells = [evaluate_ensemble(nets, basis, t, references[t.label], cfg.model_id,
                                   snapshots.sampling_kind, arch) for t in tests]
    except (NiromError, FloatingPointError, ValueError) as exc:
        nets = []
        cells = _failed_cells(cfg.model_id, snapshots.sampling_kind, arch, basis.n_r, tests, exc)
    return cells, nets, time.perf_counter() - start


@dataclass
class EvalReport:
    cells: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    bases: dict = field(default_factory=dict)

    def sorted_cells(self):
        return sorted(self.cells, key=lambda c: c.key)

    def get(self, model, sampling, arch, n_r, test):
        for c in self.cells:
            if c.key == (model, sampling, arch, n_r, test):
                return c
        raise KeyError((model, sampling, arch, n_r, test))

    def rows(self):
        return [[getattr(c, name) for name in CELL_COLUMNS] for c in self.sorted_cells()]

    def write_csv(self, path):
        from .storage import write_csv

        return write_csv(path, CELL_COLUMNS, self.rows())

    @classmethod
    def read_csv(cls, path):
        from .storage import read_csv

        header, rows = read_csv(path)
        if header != CELL_COLUMNS:
            raise ShapeError(f"unexpected report columns {header}")
        cells = []
        for row in rows:
            d = dict(zip(header, row))
            d["n_r"] = int(d["n_r"])
            d["members"] = int(d["members"])
            for name in CELL_COLUMNS[7:]:
                d[name] = float(d[name])
            for name in ("model", "sampling", "architecture", "test", "status"):
                d[name] = str(d[name])
            cells.append(Cell(**d))
        return cls(cells)


def run_matrix(configs, jobs=1, keep_models=False, architectures=None, n_r_list=None,
               samplings=None, progress=None):
    """Snapshot generation, POD, ensemble training and testing for every cell.

    Parameters
    ----------
    configs : PipelineConfig or list of them
        One config per model.
    jobs : int
        Worker processes for the cell jobs.
    keep_models : bool
        Keep trained ensembles in ``report.models`` keyed like the cells
        without the test label.
    architectures, n_r_list, samplings
        Restrict the matrix; default to what each config declares.
    """
    if not isinstance(configs, (list, tuple)):
        configs = [configs]
    report = EvalReport()
    work = []
    for cfg in configs:
        model = cfg.build_model()
        tests = make_tests(cfg)
        t0 = time.perf_counter()
        references = reference_trajectories(cfg, model, tests=tests)
        report.timings[(cfg.model_id, "references")] = time.perf_counter() - t0
        for kind in samplings or cfg.sampling_kinds:
            t0 = time.perf_counter()
            snaps = simulate_snapshots(cfg, model, kind)
            full = compute_pod(assemble_snapshot_matrix(snaps), max(n_r_list or cfg.n_r_list),
                               center=cfg.center)
            report.timings[(cfg.model_id, kind, "simulate+pod")] = time.perf_counter() - t0
            report.bases[(cfg.model_id, kind)] = full
            for arch in architectures or cfg.architectures:
                for n_r in n_r_list or cfg.n_r_list:
                    if n_r > full.n_r:
                        exc = ShapeError(full.rank_warning)
                        report.cells.extend(_failed_cells(cfg.model_id, kind, arch, n_r, tests,
                                                          exc))
                        continue
                    work.append((cfg, snaps, full.truncate(n_r), arch, tests, references))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_job, work))
    else:
        results = []
        for i, job in enumerate(work):
            results.append(_cell_job(job))
            if progress:
                progress(i + 1, len(work), results[-1][0])
    for job, (cells, nets, wall) in zip(work, results):
        cfg, snaps, basis, arch = job[:4]
        key = (cfg.model_id, snaps.sampling_kind, arch, basis.n_r)
        report.cells.extend(cells)
        report.timings[key] = wall
        if keep_models:
            report.models[key] = nets
    return report


def step_size_study(model, basis, test, factors, rknn=None, direct_tau=None, direct=None,
                    refine=10):
    """Rollout errors when the learned models are stepped at ``factor * tau``.

    Each of ``rknn``, ``direct_tau`` and ``direct`` may be a network or an
    ensemble. The RKNN re-steps its learned right-hand side with the new
    step; the tau-aware MLP receives the new step as input; the plain MLP
    is applied unchanged, as if the grid had not moved. Returns one dict
    per factor.
    """
    rows = []
    y0 = initial_state(model, test.initial_temperature)
    for factor in factors:
        k = _factor_steps(test.k, factor)
        sub = TestCase(test.model_id, test.initial_temperature, test.load_signal, test.t_end, k,
                       test.label)
        ref = integrate_reference(model, y0, test.load_signal, test.t_end, k, refine=refine)
        row = {"factor": float(factor), "tau": test.t_end / k, "k": k}
        for name, nets in (("rknn", rknn), ("direct_tau", direct_tau), ("direct", direct)):
            if nets is None:
                continue
            row[f"e_{name}"] = e_ann(basis, nets, sub, ref, "rollout", True)
            row[f"rel_{name}"] = e_ann(basis, nets, sub, ref, "rollout", False)
        rows.append(row)
    return rows


def sps_vs_dps_summary(report, architecture="direct", metric="e_ann_rollout"):
    """Per (model, test): mean over N_r of ``E_SPS - E_DPS`` and win counts.

    Negative differences favour SPS. ``partial`` is set when some N_r lacks
    an ok cell for either sampling.
    """
    groups = {}
    for c in report.cells:
        if c.architecture != architecture:
            continue
        groups.setdefault((c.model, c.test), {}).setdefault(c.n_r, {})[c.sampling] = c
    summary = {}
    for key, by_nr in sorted(groups.items()):
        diffs = []
        partial = False
        for n_r, pair in sorted(by_nr.items()):
            sps, dps = pair.get("SPS"), pair.get("DPS")
            if sps is None or dps is None or not (sps.ok and dps.ok):
                partial = True
                continue
            diffs.append((n_r, getattr(sps, metric) - getattr(dps, metric)))
        d = np.array([v for _, v in diffs])
        summary[key] = {
            "mean_difference": float(d.mean()) if d.size else math.nan,
            "dps_wins": int(np.sum(d > 0)),
            "sps_wins": int(np.sum(d < 0)),
            "ties": int(np.sum(d == 0)),
            "n": int(d.size),
            "differences": dict(diffs),
            "partial": partial,
        }
    return summary


def format_delta_cell(value, delta):
    """``"0.15(−0.23)"``: value and signed difference, both two decimals."""
    sign = "−" if delta < 0 or (delta == 0 and math.copysign(1, delta) < 0) else "+"
    return f"{value:.2f}({sign}{abs(delta):.2f})"


def _table(title, header, rows):
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    line = "  ".join("-" * w for w in widths)
    out = [title, line, "  ".join(h.ljust(w) for h, w in zip(header, widths)), line]
    out += ["  ".join(str(v).ljust(w) for v, w in zip(r, widths)) for r in rows]
    out.append(line)
    return "\n".join(out)


def _fmt_value(c, metric):
    return f"{100 * getattr(c, metric):.2f}" if c is not None and c.ok else "failed"


def render_tables(report, metric="e_ann_rollout"):
    """Text tables in percent: SPS vs DPS for the MLP, then MLP vs RKNN on DPS data."""
    if not report.cells:
        raise ShapeError("empty report")
    index = {c.key: c for c in report.cells}
    blocks = []
    models = sorted({c.model for c in report.cells})
    for model in models:
        tests = sorted({c.test for c in report.cells if c.model == model})
        n_rs = sorted({c.n_r for c in report.cells if c.model == model})
        comparisons = [
            ("SPS versus DPS", ("SPS", "direct"), ("DPS", "direct")),
            ("MLP versus RKNN", ("DPS", "direct"), ("DPS", "rknn")),
        ]
        for title, left, right in comparisons:
            for test in tests:
                rows = []
                for n_r in n_rs:
                    a = index.get((model, left[0], left[1], n_r, test))
                    b = index.get((model, right[0], right[1], n_r, test))
                    if a is None and b is None:
                        continue
                    if a is not None and b is not None and a.ok and b.ok:
                        va, vb = 100 * getattr(a, metric), 100 * getattr(b, metric)
                        right_txt = format_delta_cell(vb, round(vb, 2) - round(va, 2))
                    else:
                        right_txt = _fmt_value(b, metric)
                    rows.append([str(n_r), _fmt_value(a, metric), right_txt])
                if not rows:
                    continue
                header = ["N_r", f"{ARCH_LABEL[left[1]]} + {left[0]}",
                          f"{ARCH_LABEL[right[1]]} + {right[0]}"]
                blocks.append(_table(f"{title}: {model}, {test}, relative error (%)",
                                     header, rows))
    if not blocks:
        raise ShapeError("report has no comparable cells")
    return "\n\n".join(blocks) + "\n"


def cell_dict(cell):
    return asdict(cell)
