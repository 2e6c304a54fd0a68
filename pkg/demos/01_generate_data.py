"""Generate the two benchmark systems and look at their basic statistics.

Mackey-Glass is integrated with RK4 on a fine step and sampled every unit
of time; Kuramoto-Sivashinsky uses the exponential time-differencing
scheme on a 64-point periodic grid. Both come back z-scored with the split
into a training and a test window already recorded.
"""

from noisyrc.dynsys import MGConfig, MGParams, build_dataset

mg = build_dataset("MG", MGConfig(params=MGParams(tau=17)), train_len=20_000, test_len=2_000)
print("MG tau=17:", mg.data.shape, "dt =", mg.dt, "Lyapunov time =", round(mg.lyapunov_time), "steps")
print("  raw range:", mg.raw().min().round(3), "to", mg.raw().max().round(3))

ks = build_dataset("KS", train_len=4_000, test_len=1_000, transient=1_000)
print("KS L=60:", ks.data.shape, "dt =", ks.dt, "Lyapunov time =", round(ks.lyapunov_time, 2))
# one shared mean/std across the grid keeps the spatial profile intact
print("  shared std:", ks.norm.std[0].round(4), "channel stds:", ks.data.std(axis=1)[:4].round(3))

mg.save("mg17.npz")
print("saved mg17.npz with", mg.split)
