"""Snapshots of the heat-sink model and their POD spectra.

Simulates the 30 SPS and 30 DPS trajectories of the shipped heat-sink
config, compares the two singular value spectra and prints how the
re-projection error of the constant-load test falls with N_r.

Run from the repository root::

    python demos/pod_spectra.py
"""

import numpy as np

from nirom.config import load_config
from nirom.evaluation import make_tests, reference_trajectories, simulate_snapshots
from nirom.pod import assemble_snapshot_matrix, compute_pod, relative_reprojection_error

cfg = load_config("configs/heat_sink.ini")
model = cfg.build_model()
print(f"heat sink: N = {model.n_state}, tau = {cfg.tau:g} s, k = {cfg.k}")

bases = {}
for kind in ("SPS", "DPS"):
    snaps = simulate_snapshots(cfg, model, kind)
    y = assemble_snapshot_matrix(snaps)
    bases[kind] = compute_pod(y, 10)
    print(f"{kind}: snapshot matrix {y.shape}, numerical rank {bases[kind].rank}")

# normalised spectra; the two sampling strategies should nearly coincide
print("\n  i   sigma_i/sigma_1 (SPS)   (DPS)")
for i in range(10):
    s = bases["SPS"].singular_values
    d = bases["DPS"].singular_values
    print(f"{i + 1:3d}   {s[i] / s[0]:.3e}           {d[i] / d[0]:.3e}")

# how much of the test trajectory each basis can represent
test = make_tests(cfg)[0]
ref = reference_trajectories(cfg, model, tests=[test])[test.label]
print(f"\nrelative re-projection error of the {test.label} test")
print(" N_r   SPS         DPS")
for n_r in (1, 2, 3, 4, 5, 10):
    row = [relative_reprojection_error(bases[k].truncate(n_r), ref.states) for k in ("SPS", "DPS")]
    print(f"{n_r:4d}   {row[0]:.3e}   {row[1]:.3e}")

energy = np.cumsum(bases["DPS"].singular_values ** 2) / np.sum(bases["DPS"].singular_values ** 2)
print(f"\nDPS energy captured by 3 modes: {energy[2]:.10f}")
