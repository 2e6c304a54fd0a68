"""A larger reservoir on the 64-channel Kuramoto-Sivashinsky field.

The prediction horizon is reported in Lyapunov times; the threshold is on
the per-step RMS error over the grid in normalized units.
"""

from noisyrc.dynsys import build_dataset
from noisyrc.metrics import horizon
from noisyrc.reservoir import PUBLISHED_OPTIMA, Hyperparams, predict, train

ds = build_dataset("KS", train_len=12_000, test_len=400, transient=1_000)
# published optimum for this system, on a quarter of the published reservoir size
hp = Hyperparams(**{**PUBLISHED_OPTIMA["KS"].to_dict(), "n_nodes": 1000})
model = train(ds, hp, seed=0)
pred = predict(model, ds.warmup(100), 400)
t_s = horizon(pred, ds.test[:, :400], r_c=0.5, dt=ds.dt)
print(f"fit RMSE {model.fit_rmse:.2e}; valid for {t_s / ds.lyapunov_time:.2f} Lyapunov times")
