"""Why a model's linear weights can mislead, and what the total effect reports instead.

We build two synthetic datasets whose true effects are known:

* a linear law y = 20 + 2*x1 + 3*x2, where every reading should agree;
* a planted interaction y = 1 + x1*x2 with x2 ~ U(2, 6), where the effect of
  x1 is E[x2] = 4 at every value of x1.

For each we fit a predictor and a WGAN-GP sampler, then compare the main
effect (average slope of the piecewise part) with the Monte-Carlo total effect.
The second interaction model is trained with a heavy ridge on the piecewise
weights, so its main effect collapses while the total effect stays at 4.

Runtime is a few minutes on one CPU core. Pass ``--quick`` for a rough version.
"""

import sys

import numpy as np

from piwad import GanConfig, TrainConfig, effect_report, train, train_wgan
from piwad.synth import gen_synthetic, interaction_fixture, linear_fixture
from piwad.training import split_indices

quick = "--quick" in sys.argv
gan_cfg = GanConfig(iterations=1500 if quick else 8000, lr=2e-5, lr_critic=2e-4, ema=0.999)
well_trained = TrainConfig(lr=1e-2, epsilon=1e-4, min_epochs=100, epochs=300, piecewise_init="least-squares")
suppressed = well_trained.replace(piecewise_init="random", l2_piecewise=1.0)

cases = [
    ("linear law, well-trained", linear_fixture(n=2000, m=2), well_trained),
    ("interaction, well-trained", interaction_fixture(), well_trained),
    ("interaction, main effect suppressed", interaction_fixture(), suppressed),
]

gans = {}
for title, spec, cfg in cases:
    table, oracle = gen_synthetic(spec)
    tr, va, _ = split_indices(table.n, seed=0)
    result = train(cfg, table.subset(tr), table.subset(va))
    if spec.family not in gans:
        print(f"training the sampler for the {spec.family} data ...")
        gans[spec.family] = train_wgan(table, gan_cfg, seed=0)
    report = effect_report(result.model, gans[spec.family], k=512, seed=0)

    print(f"\n== {title}")
    print(f"   validation MSE after {len(result.history)} epochs: {result.history[-1][2]:.4f}")
    for r in report.reports:
        truth = float(np.mean(oracle(r.j, np.asarray(r.grid))))
        flag = "  <- flagged" if r.feature in report.flagged else ""
        print(
            f"   {r.feature}: true {truth:6.3f}   total {r.total_grid_mean:6.3f} +/- {r.total_grid_mean_se:.3f}"
            f"   main {r.main_effect:6.3f}{flag}"
        )

print(
    "\nThe total effect tracks the truth in every case. The main effect agrees only when"
    "\nthe piecewise part carries the additive signal, which is exactly what the flag reports."
)
