"""Every stage of the pipeline against its closed form.

A single-Gaussian prior with a linear-Gaussian measurement is the one setting
where nothing needs approximating: the diffused marginal, the denoiser, the
guidance term, and the posterior are all available in closed form.  This
script walks the pipeline through those checkpoints and finishes with a
guided sampling run whose cloud is overlaid on the exact posterior.

Run from anywhere; figures land in demos/output/.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from rdplab import mixtures
from rdplab.operators import Mask
from rdplab.samplers import (
    InverseProblem,
    SamplerConfig,
    TemperatureRule,
    run_chains,
)
from rdplab.schedules import make_linear_schedule

OUT = Path(__file__).resolve().parent / "output"
OUT.mkdir(exist_ok=True)

# A 2-d conjugate problem: isotropic Gaussian prior, observe both
# coordinates through noise.
m0, v0 = np.array([0.3, -0.2]), 0.8
prior = mixtures.GaussianMixture(
    weights=np.array([1.0]), means=m0[None, :], covs=np.array([[v0, v0]])
)
sigma_y = 0.6
y = np.array([0.9, -0.7])
sched = make_linear_schedule(1e-4, 0.02, 500)

# Checkpoint 1: the posterior-mean denoiser agrees with the conjugate update
# E[x0 | x_t] = (m0/v0 + sqrt(ab) x_t/(1-ab)) / (1/v0 + ab/(1-ab)).
rng = np.random.default_rng(1)
print("denoiser vs conjugate update:")
for t in (1, 250, 500):
    x_t = rng.standard_normal(2)
    ab = sched.alpha_bar(t)
    prec = 1.0 / v0 + ab / (1.0 - ab)
    closed = (m0 / v0 + np.sqrt(ab) * x_t / (1.0 - ab)) / prec
    got = mixtures.tweedie_denoise(
        x_t, mixtures.score(mixtures.marginal_at_t(prior, sched, t), x_t), t, sched
    )
    print(f"  t={t:3d}  max abs gap {np.abs(got - closed).max():.2e}")

# Checkpoint 2: the exact posterior.
post = mixtures.posterior_linear(prior, np.eye(2), sigma_y, y)
mean_true = post.weights @ post.means
print(f"exact posterior mean {mean_true}, sd {np.sqrt(np.diag(post.covs[0]))}")

# Checkpoint 3: guided sampling.  With the variance-matched temperature the
# guidance equals the exact conditional-likelihood score on this problem, so
# the only remaining errors are time discretization and Monte Carlo noise.
cfg = SamplerConfig(
    method="dps",
    schedule=sched,
    weight_fn=None,
    adaptive_q=None,
    temperature=TemperatureRule("variance_matched", 1.0, prior_var=v0),
    seed=7,
)
res = run_chains(
    cfg,
    InverseProblem(model=Mask(np.ones(2)), y=y, sigma_y=sigma_y),
    mixtures.MixtureScore(prior, sched),
    2000,
    master_seed=7,
    n_workers=4,
)
est = res.samples.mean(axis=0)
se = np.sqrt(np.diag(post.covs[0])) / np.sqrt(len(res.samples))
print(f"sampled mean {est}")
print(f"|error| in units of one MC standard error: {np.abs(est - mean_true) / se}")

# Overlay the cloud on exact posterior contours.
grid = np.linspace(-1.5, 2.5, 200)
gx, gy = np.meshgrid(grid, grid - 1.0)
pts = np.column_stack([gx.ravel(), gy.ravel()])
dens = np.exp(mixtures.log_density(post, pts)).reshape(gx.shape)

fig, ax = plt.subplots(figsize=(5, 5))
ax.scatter(res.samples[:, 0], res.samples[:, 1], s=4, alpha=0.25, label="sampler")
ax.contour(gx, gy, dens, levels=6, colors="k", linewidths=0.8)
ax.plot(*mean_true, "r+", markersize=12, label="exact mean")
ax.set_title("guided chains vs exact posterior")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "conjugate_posterior.svg")
print(f"wrote {OUT / 'conjugate_posterior.svg'}")
