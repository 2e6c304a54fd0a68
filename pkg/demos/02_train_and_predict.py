"""Train an echo state network on Mackey-Glass and run it in closed loop.

The readout is fitted by ridge regression on [r; r^2]. Prediction starts
from 100 steps of ground truth, then the output is fed back as input.
"""

from noisyrc.dynsys import MGConfig, MGParams, build_dataset
from noisyrc.metrics import horizon, rmse
from noisyrc.reservoir import Hyperparams, predict, train

ds = build_dataset("MG", MGConfig(params=MGParams(tau=17)), train_len=20_000, test_len=1_000)
hp = Hyperparams(rho=0.9, gamma=0.5, alpha=0.6, beta=1e-6, p=0.05, sigma=1e-4, n_nodes=500)

model = train(ds, hp, seed=0)
print(f"training one-step RMSE: {model.fit_rmse:.2e}")

pred = predict(model, ds.warmup(100), 900)
truth = ds.test[:, :900]
t_s = horizon(pred, truth, r_c=0.1, dt=ds.dt)
print(f"valid for {t_s:.0f} steps ({t_s / ds.lyapunov_time:.1f} Lyapunov times)")
print(f"RMSE over the first 300 steps: {rmse(pred[:, :300], truth[:, :300]):.3f}")

try:
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(truth[0], label="truth")
    ax.plot(pred[0], label="reservoir", lw=1)
    ax.axvline(t_s, color="k", ls=":")
    ax.set_xlabel("steps after warmup")
    ax.legend()
    fig.savefig("mg17_prediction.svg")
except ImportError:
    pass
