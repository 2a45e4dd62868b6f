"""Emit position and orientation heatmaps for a predicted posterior.

Position: 2D histogram over the xy-plane (height marginalized).
Orientation: the viewing-axis image on the 2-sphere (rotations about the
axis marginalized), flattened by the equal-area Mollweide projection.

Outputs land in demo_out/ as binary PPM images plus CSV count sidecars.

Run:  python3 demos/04_heatmaps.py
"""

from pathlib import Path

from ambipose import (
    builtin_scene,
    emit_heatmap_image,
    generate_dataset,
    load_dataset,
    orientation_heatmap,
    position_heatmap,
    predict_posterior,
)
from ambipose.trainer import TrainConfig, train

out = generate_dataset(builtin_scene("round_table"), 64, 8, seed=5,
                       out_dir="demo_out/round")
ds = load_dataset(out)
print("training a quick model (truncated recipe) ...")
model, _ = train(ds, TrainConfig(epochs=120, M=500, seed=2))

samples = predict_posterior(model, ds.test.observations[0], M=2000, seed=0)

b = ds.spec.bounds
pos = position_heatmap(samples, (b.mins[0], b.maxs[0], b.mins[1], b.maxs[1]), 100, 100)
ori = orientation_heatmap(samples, 100, 50)

dest = Path("demo_out")
ppm, csv = emit_heatmap_image(pos, dest / "position.ppm")
print(f"position heatmap: {ppm} ({pos.counts.sum()} binned, {pos.clamped} clamped)")
ppm, csv = emit_heatmap_image(ori, dest / "orientation.ppm")
print(f"orientation heatmap: {ppm}")
print("view with any PPM-capable tool, e.g.  feh demo_out/position.ppm")
