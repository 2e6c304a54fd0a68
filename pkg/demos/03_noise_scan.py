"""Fixed hyperparameters, varying training noise.

Without noise the closed loop drifts off the attractor; with too much the
readout learns a blurred map. In between, prediction is best. The full
experiment re-optimizes the other hyperparameters at every noise level
(see 05_sweep.py); this scan keeps them fixed to show the effect alone.
"""

import numpy as np

from noisyrc.dynsys import build_dataset
from noisyrc.errors import ReservoirDiverged
from noisyrc.metrics import Projection, deviation_value, rmse
from noisyrc.reservoir import Hyperparams, predict, train

ds = build_dataset("MG", train_len=30_000, test_len=3_000)  # tau = 30
proj = Projection.mg(30)

for log_sigma in (-8, -4, -3, -2.5, -2, -1.5, -1, -0.5):
    hp = Hyperparams(rho=0.9, gamma=0.5, alpha=0.6, beta=1e-6, p=0.05, sigma=10.0 ** log_sigma,
                     n_nodes=300)
    scores, dvs = [], []
    for seed in range(6):
        model = train(ds, hp, seed=seed)
        try:
            pred = predict(model, ds.warmup(100), 3_000)
        except ReservoirDiverged as exc:
            pred = np.full((1, 3_000), np.nan)
            pred[:, :exc.partial.shape[1]] = exc.partial
        scores.append(rmse(pred[:, :300], ds.test[:, :300]))
        dvs.append(deviation_value(pred, ds.train, proj, subsample=10))
    print(f"sigma=1e{log_sigma:<5} median RMSE {np.median(scores):7.3f}   median DV {np.median(dvs):.3f}")
