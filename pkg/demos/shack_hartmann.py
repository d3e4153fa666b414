"""A Shack-Hartmann sensor as a tomographic measurement.

Each of 35 microlenses keeps one focal-plane pixel, giving a rank-one effect
on the span of nine Laguerre-Gaussian modes. Thirty-five outcomes cannot fix
a 9x9 coherence matrix (81 parameters), but maximum-entropy regularization
still recovers the beam.

    python3 demos/shack_hartmann.py
"""

import numpy as np

from mlmetomo import EngineConfig, fidelity, reconstruct
from mlmetomo.measurement import hermitian_rank
from mlmetomo.shackhartmann import LgBasis, build_sensor_pom, hex_aperture_array, simulate_intensities, superposition_state

basis = LgBasis()
sensor = build_sensor_pom(basis, hex_aperture_array())
target = superposition_state(basis)

for d in range(3, 10):
    rank = hermitian_rank(sensor.truncated(d).effects)
    print(f"D_sub = {d}: {rank:>2} independent outcomes of {d * d} needed"
          + ("  (complete)" if rank >= d * d else ""))

for noise in (0.0, 0.05):
    record = simulate_intensities(target, sensor, noise, np.random.default_rng(0))
    rep = reconstruct(record.to_dataset(sensor), sensor.pom, EngineConfig(lam=1e-4), mode="lossy")
    print(f"relative intensity noise {noise:.0%}: fidelity {fidelity(rep.estimator, target):.4f}")
