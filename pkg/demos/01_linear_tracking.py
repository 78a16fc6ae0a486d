"""Distributed Kalman filtering of a coupled four-state linear plant.

The plant is open-loop unstable and split into two subsystems of two states;
each local estimator measures one coordinate of its own block but receives
the full measurement vector through the exchange protocol.  The estimators
start from a 10 percent offset with a wide prior and lock onto the truth
within a few instants.

Run:  python demos/01_linear_tracking.py
"""

import numpy as np

from partkf import get_benchmark, run_dkf, simulate

bench = get_benchmark("linear-4state")
print("plant: 4 states, 2 subsystems, open-loop spectral radius "
      f"{np.max(np.abs(np.linalg.eigvals(bench.model.A))):.4f}")
print(f"initial truth : {bench.x0}")
print(f"initial guess : {bench.design.x0_guess}")

traj = simulate(bench.model, bench.x0, 50, bench.noise(seed=1))
record = run_dkf(bench.model, bench.design, traj)

print("\n  k   rmse      truth[0]    estimate[0]")
for k in (0, 1, 2, 5, 10, 20, 50):
    print(f"{k:>3}   {record.rmse[k]:<8.4f}  {traj.xs[k, 0]:>9.4f}   "
          f"{record.xhat_post[k, 0]:>9.4f}")

rmse0 = np.sqrt(np.sum((bench.design.x0_guess - bench.x0) ** 2) / 4)
print(f"\ninitial guess error (RMSE)     : {rmse0:.4f}")
print(f"mean RMSE over the last 20 steps: {record.rmse[30:].mean():.4f}")
print("the filter holds the estimate inside the noise floor, far below the "
      "initial error")
