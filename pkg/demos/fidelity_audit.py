"""Does the generator reproduce the data?  A PCA-based audit on a 10-D Gaussian.

The audit projects real and synthetic rows onto the real data's principal
components, then runs a two-sample t-test on each component's mean and an
F-test on its variance.  It passes when all p-values exceed 0.05.

We train once with the plain defaults (equal learning rates) and once with a
critic that learns forty times faster, with weight averaging and decaying
rates. Then we plant a 10-sigma shift to show the audit catching a gross error.
"""

import sys

import numpy as np

from piwad import GanConfig, fidelity_audit, sample_synthetic, train_wgan
from piwad.data import FeatureTable
from piwad.synth import gaussian_fixture, gen_synthetic

quick = "--quick" in sys.argv
real, _ = gen_synthetic(gaussian_fixture(n=2000, m=10, rho=0.8, seed=0))

configs = {
    "defaults": GanConfig(iterations=600 if quick else 3000),
    "fast critic + averaging + decay": GanConfig(
        iterations=1500 if quick else 10000, lr=5e-5, lr_critic=2e-3, ema=0.999, lr_decay=True
    ),
}
for name, cfg in configs.items():
    gan = train_wgan(real, cfg, seed=0)
    syn = sample_synthetic(gan, 2000, np.random.default_rng(1))
    rep = fidelity_audit(real, syn, k=10)
    worst = min(min(c.t_pvalue, c.f_pvalue) for c in rep.components)
    print(f"{name}, {cfg.iterations} iterations: audit {'passes' if rep.passed else 'fails'} (smallest p-value {worst:.3g})")

print(
    "All 20 tests must clear p = 0.05 against the training sample itself. Fresh draws from the"
    "\ntrue Gaussian rarely manage that, so a near-miss on one test is the typical good outcome."
)

shifted = syn.X.copy()
shifted[:, 3] += 10 * real.X[:, 3].std()
rep = fidelity_audit(real, FeatureTable(syn.names, shifted), k=10)
print(f"planted +10 sigma shift on x4: audit {'passes' if rep.passed else 'fails'}")
rep.write_csv("fidelity_demo.csv")
print("component table written to fidelity_demo.csv")
