"""Direct MLP against the Runge-Kutta network on one reduced heat-sink model.

Trains a small ensemble of each architecture on DPS snapshots at N_r = 3,
evaluates closed-loop predictions on both tests, then steps both models
on a grid twice as fine. The RKNN learns a right-hand side, so it can be
re-stepped; the plain MLP learned one fixed step and cannot.

Run from the repository root (about two minutes on one core)::

    python demos/mlp_vs_rknn.py
"""

from nirom.config import load_config
from nirom.evaluation import (evaluate_ensemble, make_tests, reference_trajectories,
                              simulate_snapshots, step_size_study, train_ensemble)
from nirom.pod import assemble_snapshot_matrix, compute_pod

cfg = load_config("configs/heat_sink.ini")
model = cfg.build_model()
snaps = simulate_snapshots(cfg, model, "DPS")
basis = compute_pod(assemble_snapshot_matrix(snaps), 3)
tests = make_tests(cfg)
refs = reference_trajectories(cfg, model, tests=tests)
seeds = [0, 1, 2]

nets = {}
for arch in ("direct", "rknn"):
    nets[arch], histories = train_ensemble(cfg, snaps, basis, arch, seeds)
    print(f"{arch}: final training loss {[f'{h[-1]:.2e}' for h in histories]}")

print("\nrollout error, mean of 3 seeds (percent, unscaled)")
for test in tests:
    for arch, ens in nets.items():
        cell = evaluate_ensemble(ens, basis, test, refs[test.label], cfg.model_id, "DPS", arch)
        print(f"  {test.label:8s} {arch:6s} {100 * cell.rel_rollout:.3f}")

rows = step_size_study(model, basis, tests[0], [1.0, 0.5], rknn=nets["rknn"],
                       direct=nets["direct"])
print("\nconstant-load test stepped at tau and tau/2")
for row in rows:
    print(f"  tau = {row['tau']:4.1f} s  RKNN {100 * row['rel_rknn']:.3f}%  "
          f"MLP {100 * row['rel_direct']:.3f}%")
print(f"  degradation: RKNN x{rows[1]['rel_rknn'] / rows[0]['rel_rknn']:.2f}, "
      f"MLP x{rows[1]['rel_direct'] / rows[0]['rel_direct']:.2f}")
