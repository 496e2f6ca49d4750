"""
A maize map for a region with no ground truth
=============================================

Train a lidar-height forest where labels exist (alpha), use it to label the
lidar shots of a second region (beta), then train an optical forest on those
pseudo-labels and classify every cropland cell of beta. Beta's truth raster
is only opened at the end, to score the map.
"""
import io
import time

import numpy as np

from gedicrop.experiments import prepare_region
from gedicrop.forest import ForestConfig, deserialize_forest, predict, serialize_forest, train_forest
from gedicrop.ingest import write_label_raster
from gedicrop.mapgen import cropland_cells, map_report, predict_map
from gedicrop.synth import crop_grid, default_regions, gen_feature_raster, gen_region

alpha_spec, beta_spec = default_regions(n_shots=3000, cell_size=0.004)
alpha = gen_region(alpha_spec)
beta = gen_region(beta_spec)
src, _ = prepare_region("alpha", alpha.shots, alpha.series, alpha.truth, alpha_spec.maize_code)
dst, _ = prepare_region("beta", beta.shots, beta.series, beta.truth, beta_spec.maize_code)
dst = dst.features_only()  # from here on beta has no labels
cfg = ForestConfig(n_trees=100, seed=11)

# stage 1: canopy height says tall or short, in any region
labeller = train_forest(src.rh, src.is_maize, cfg, "RH11")
pseudo = predict(labeller, dst.rh).astype(bool)
print(f"beta: {len(dst)} shots pseudo-labelled, {pseudo.mean():.1%} maize")

# stage 2: optical harmonics learned from beta's own calendar
mapper = train_forest(dst.s2, pseudo, cfg, "HARM20")

# models are plain bytes and round-trip exactly
blob = serialize_forest(mapper)
assert serialize_forest(deserialize_forest(blob)) == blob
print(f"map model: {len(mapper.trees)} trees, {len(blob) / 1e6:.1f} MB")

# wall-to-wall: features for every cell, prediction only where there is cropland
features = gen_feature_raster(beta_spec)
cropland = crop_grid(beta_spec)  # crop classes double as the cropland mask
t0 = time.perf_counter()
classes, confidence = predict_map(mapper, features, cropland, workers=4)
print(f"classified {int((classes.cells != classes.nodata).sum())} cells "
      f"in {time.perf_counter() - t0:.1f} s")

report = map_report(classes, beta.truth)
print(f"map accuracy against beta truth: {report['accuracy']:.3f}")
print(f"maize area: predicted {report['predicted_maize_area_deg2']:.3f} deg2, "
      f"true {report['true_maize_area_deg2']:.3f} deg2")

# uncertain cells sit where fewer than 70% of trees agree
mask = cropland_cells(cropland)
shaky = np.abs(confidence[mask] - 0.5) < 0.2
print(f"{shaky.mean():.2%} of cropland cells have a vote split closer than 70/30")

# a coarse text preview of the north-west corner: M maize, . other crop, blank non-crop
corner = classes.cells[:40:2, :80:2]
for row in corner:
    print("  " + "".join({1: "M", 0: "."}.get(int(v), " ") for v in row))

# ASCII grid text, as the CLI writes it
buf = io.StringIO()
write_label_raster(classes, buf)
print("\n".join(buf.getvalue().splitlines()[:6]))
