"""Why the detection efficiency belongs in the likelihood.

A qubit is measured with a two-outcome POM whose effects sum to less than
the identity: some copies are never registered, and how many depends on the
state. Reconstructing as if every copy had been detected biases the
estimate; the lossy likelihood accounts for it.

    python3 demos/qubit_losses.py
"""

import numpy as np

from mlmetomo import EngineConfig, reconstruct, simulate_counts, trace_distance
from mlmetomo.measurement import random_imperfect_pom, validate_pom
from mlmetomo.operators import random_hs_state

rng = np.random.default_rng(12)
rho = random_hs_state(2, rng)
pom = random_imperfect_pom(2, 2, rng)
print("largest eigenvalue of G:", round(validate_pom(pom).g_max_eigenvalue, 3))

for copies in (5_000, 500_000):
    d = {"perfect": [], "lossy": []}
    for _ in range(20):
        data = simulate_counts(rho, pom, copies, rng)
        for mode in d:
            est = reconstruct(data, pom, EngineConfig(), mode=mode).estimator
            d[mode].append(trace_distance(est, rho))
    print(f"N = {copies:>7}: mean trace distance ignoring losses {np.mean(d['perfect']):.4f}, "
          f"accounting for them {np.mean(d['lossy']):.4f}")

# Two outcomes cannot pin down a qubit (3 parameters), so neither estimate
# converges to the truth: both settle on a member of the family of states
# that fit the data. Ignoring the losses, however, fits the wrong family and
# adds a large systematic error that more data does not remove.
