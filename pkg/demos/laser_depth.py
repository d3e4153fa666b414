"""Nonclassicality depth of a truncated laser state and of its reconstructions.

A Poissonian state truncated to 20 photons is no longer classical: its
R function turns negative for small tau. The depth is the smallest tau above
which R is nonnegative everywhere. Reconstructing from displaced
photon-counting data in too small a space inflates it.

    python3 demos/laser_depth.py          (about 20 s)
"""

from mlmetomo.quasiprob import PhaseSpaceGrid, nonclassicality_depth
from mlmetomo.studies import TmdStudyConfig, run_tmd_study
from mlmetomo.tmd import laser_state

grid = PhaseSpaceGrid.parse("-6:6:0.1")
print("true state depth:", round(nonclassicality_depth(laser_state(4.0, 20), grid, 1e-2), 3))

report = run_tmd_study(TmdStudyConfig(d_rec_list=(5, 8, 11), grid="-6:6:0.1", tau_tolerance=1e-2,
                                      include_truth=False, emit_surfaces=False))
for r in report.records:
    print(f"D_rec = {r['d_rec']:>2} ({r['estimator']:>4}): depth {r['tau']:.3f}, "
          f"trace distance to truth {r['trace_distance']:.3f}")

# The 5-dimensional space is small enough for the displaced click patterns
# to be informationally complete, yet its estimate looks strongly
# nonclassical. Larger spaces with the entropy term stay closer to the truth.
