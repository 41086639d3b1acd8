#!/usr/bin/env python3
"""Regenerate the bundled example models under models/.

Weights are seeded so the emitted blobs are reproducible.
"""

import json
import random
from pathlib import Path

import numpy as np

MODELS = Path(__file__).resolve().parent.parent / "models"


def _blob(rng, size):
    return np.array([rng.randint(-128, 127) for _ in range(size)], dtype=np.int8)


def write_model(name, doc, seed):
    rng = random.Random(seed)
    MODELS.mkdir(exist_ok=True)
    (MODELS / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    parts = [_blob(rng, size) for size in doc["weight_sizes"].values()]
    np.concatenate(parts).tofile(MODELS / doc["weights_file"])


smallcnn = {
    "input": {"dims": [16, 16, 8]},
    "layers": [
        {"id": "conv1", "op": "Conv2D",
         "attrs": {"in_channels": 8, "out_channels": 16, "kernel_h": 3, "kernel_w": 3,
                   "stride": 1, "padding": 1, "shift": 5},
         "inputs": ["input"], "weights": "conv1.w"},
        {"id": "relu1", "op": "ReLU", "inputs": ["conv1"]},
        {"id": "conv2", "op": "Conv2D",
         "attrs": {"in_channels": 16, "out_channels": 16, "kernel_h": 3, "kernel_w": 3,
                   "stride": 1, "padding": 1, "shift": 6},
         "inputs": ["relu1"], "weights": "conv2.w"},
        {"id": "relu2", "op": "ReLU", "inputs": ["conv2"]},
        {"id": "pool", "op": "MaxPool2D", "attrs": {"window": 2, "stride": 2}, "inputs": ["relu2"]},
        {"id": "flat", "op": "Flatten", "inputs": ["pool"]},
        {"id": "fc", "op": "Dense", "attrs": {"in_features": 1024, "out_features": 10, "shift": 7},
         "inputs": ["flat"], "weights": "fc.w"},
    ],
    "weights_file": "smallcnn.bin",
    "weight_sizes": {"conv1.w": 16 * 8 * 3 * 3, "conv2.w": 16 * 16 * 3 * 3, "fc.w": 10 * 1024},
}

tinymlp = {
    "input": {"dims": [64]},
    "layers": [
        {"id": "fc1", "op": "Dense", "attrs": {"in_features": 64, "out_features": 32, "shift": 4},
         "inputs": ["input"], "weights": "fc1.w"},
        {"id": "act1", "op": "ReLU", "inputs": ["fc1"]},
        {"id": "fc2", "op": "Dense", "attrs": {"in_features": 32, "out_features": 10, "shift": 4},
         "inputs": ["act1"], "weights": "fc2.w"},
    ],
    "weights_file": "tinymlp.bin",
    "weight_sizes": {"fc1.w": 32 * 64, "fc2.w": 10 * 32},
}


if __name__ == "__main__":
    write_model("smallcnn", smallcnn, seed=1)
    write_model("tinymlp", tinymlp, seed=2)
    print(f"wrote models to {MODELS}")
