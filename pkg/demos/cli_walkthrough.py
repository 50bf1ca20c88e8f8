"""
The command-line pipeline end to end
====================================

Runs every ``boxfuse`` subcommand in a scratch directory: generate data,
cluster, suppress, train, fuse, evaluate, sweep and benchmark. The same
steps work from a shell, e.g. ``boxfuse synth --out data --scenes 20``.
"""

import os
import tempfile
from pathlib import Path

from boxfuse.cli import main

work = Path(tempfile.mkdtemp(prefix="boxfuse-demo-"))
os.chdir(work)
print(f"working in {work}")


def run(*argv):
    print("$ boxfuse " + " ".join(argv))
    code = main(list(argv))
    if code:
        raise SystemExit(code)


run("synth", "--out", "data", "--scenes", "40", "--seed", "1")
run("cluster", "--input", "data/detections.jsonl", "--out", "clusters")
run("nms", "--algo", "locality", "--input", "data/detections.jsonl", "--out", "locality")
run("nms", "--algo", "polygon", "--iou", "0.3", "--input", "data/detections.jsonl", "--out", "polygon")
run(
    "train", "--detections", "data/detections.jsonl", "--ground-truth", "data/ground_truth.jsonl",
    "--out", "model", "--node-count", "32", "--steps", "500", "--lr", "1e-3", "--cluster-threshold", "0.3",
)
run("fuse", "--model", "model/model.json", "--input", "data/detections.jsonl", "--out", "fused")
run("eval", "--pred", "fused/detections.jsonl", "--gt", "data/ground_truth.jsonl", "--out", "eval", "--iou", "0.5", "0.8")
run(
    "sweep", "--gt", "data/ground_truth.jsonl", "--out", "sweep",
    "--pred", "gfnet=fused/detections.jsonl", "--pred", "locality=locality/detections.jsonl",
    "--pred", "polygon=polygon/detections.jsonl",
)
run("bench", "--input", "data/detections.jsonl", "--out", "bench", "--repetitions", "3", "--model", "model/model.json")

# %%
# Every output directory holds its artifacts plus ``config.json``, the
# effective configuration of the run that produced them.
print()
print(Path("sweep/sweep.csv").read_text())
print(Path("model/train_log.csv").read_text().splitlines()[-1])
