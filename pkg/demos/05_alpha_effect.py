"""How the Winners-Take-All fraction alpha shapes the learned posterior.

Three regimes on a k-mode scene:
  * alpha well below 1/k: only a handful of samples are supervised per
    step; training is slow and noisy, densities smear out.
  * alpha between 0 and 1/k: modes form cleanly (the default 0.20).
  * alpha = 1: every sample is dragged toward every label, so symmetric
    labels average out into a single compromise blob between the modes.

Shortened recipe; expect a few minutes.

Run:  python3 demos/05_alpha_effect.py
"""

import numpy as np

from ambipose import (
    RecallThreshold,
    builtin_scene,
    generate_dataset,
    load_dataset,
    mode_coverage,
    oracle_modes,
    predict_posterior,
    recall,
)
from ambipose.trainer import TrainConfig, train

out = generate_dataset(builtin_scene("dinner_table"), 64, 16, seed=9,
                       out_dir="demo_out/alpha_sweep")
ds = load_dataset(out)
th = RecallThreshold(0.1 * ds.spec.scale, 10.0, gamma=0.1)

rows = []
for alpha in (0.01, 0.20, 1.00):
    cfg = TrainConfig(alpha=alpha, epochs=150, M=500, seed=4)
    model, _ = train(ds, cfg)
    r = recall(ds.test, model, th, M=1000, seed=0)
    covs = np.array([
        mode_coverage(
            predict_posterior(model, ds.test.observations[i], 1000, seed=i),
            oracle_modes(ds.spec, ds.test.pose(i)), th)
        for i in range(len(ds.test))
    ])
    rows.append((alpha, r, covs.mean(axis=0)))
    print(f"alpha={alpha:4.2f}: recall={r:.2f}, mean mode coverage={np.round(covs.mean(0), 3)}")

print("\nsummary (higher recall and balanced coverage are better):")
for alpha, r, cov in rows:
    bar = "#" * int(round(r * 40))
    print(f"  alpha={alpha:4.2f}  recall {r:4.2f}  {bar}")
