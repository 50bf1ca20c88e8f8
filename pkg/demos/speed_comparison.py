"""
Post-processing speed on a 5,000-box image
==========================================

Times the removal and fusion algorithms on one large synthetic image.
Only the post-processing call is timed; the first call is a discarded
warm-up and the median of the repetitions is reported.
"""

from boxfuse import ImageMeta
from boxfuse.evaluation import bench
from boxfuse.fusion import FusionModel
from boxfuse.synth import PerturbSpec, generate_scene

meta = ImageMeta(6000, 6000, "big")
scene = generate_scene(PerturbSpec(seed=5, length_range=(0.04, 0.1), boxes_per_instance=(25, 25)), 200, meta)
print(f"{len(scene.dense)} boxes from {len(scene.ground_truth)} objects")

# Inference cost does not depend on the weight values, so an untrained
# model of the right shape is enough here.
model = FusionModel.init(128, seed=0, cluster_threshold=0.3)

for name in ("skew", "locality", "gfnet", "polygon", "standard"):
    res = bench(name, [(scene.dense, meta)], repetitions=3, model=model)
    print(f"{name:10s} median {res.median_ms:8.1f} ms   IQR {res.iqrs[0]:6.1f} ms")

# Skew NMS prunes far-apart pairs with a circle test. Locality-aware NMS
# and the fusion network only compare boxes near each other in the row
# scan, and their timings are close. Polygon NMS clips every remaining pair,
# so it is slowest.
