"""
Bayesian optimization of a one-dimensional proportion
=====================================================

A Matérn-5/2 Gaussian process with expected improvement searches [0.5, 0.9].
Here the objective is a cheap stand-in with a known minimum.
"""

import numpy as np

from entropy_select.bayesopt import BOConfig, SearchSpace, gp_fit, gp_posterior, minimize


def objective(x):
    return (x - 0.7) ** 2 + 0.01 * np.sin(40 * x)


trace = minimize(objective, SearchSpace(0.5, 0.9), BOConfig(total_calls=50, random_starts=15, seed=4))
print(f"best x {trace.best_x:.4f}, best y {trace.best_y:.6f}")
for call in trace.calls[14:20]:
    print(call.index, call.phase, round(call.x, 4), call.hyperparameters)

# Refit the surrogate on the whole trace and inspect its uncertainty.
space = trace.space
u = space.to_unit([c.x for c in trace.calls])
gp = gp_fit(u, [c.y for c in trace.calls])
mean, var = gp_posterior(gp, np.linspace(0, 1, 5))
print("posterior mean", np.round(mean, 5))
print("posterior sd  ", np.round(np.sqrt(var), 5))
