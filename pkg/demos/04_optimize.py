"""Surrogate search over the five reservoir hyperparameters at a fixed noise level.

The search space is the unit cube mapped onto each dimension's bounds
(log scale for the ridge and noise amplitudes). Each evaluation trains and
predicts three reservoirs, so keep the budget small here.
"""

from noisyrc.dynsys import build_dataset
from noisyrc.hyperopt import make_objective, optimize, reservoir_space, write_trace

ds = build_dataset("MG", train_len=10_000, test_len=1_000)
space = reservoir_space(sigma=1e-3)
objective = make_objective(ds, space, n_nodes=150, n_rep=2, t_opt=100)


def show(entry):
    if entry.value == entry.incumbent:
        print(f"eval {entry.index:3d}: new best {entry.value:.4f}")


result = optimize(objective, space, budget=40, seed=1, callback=show)
print("best:", ", ".join(f"{k}={v:.3g}" for k, v in result.best_dict().items()))
write_trace(result, "trace.csv")
