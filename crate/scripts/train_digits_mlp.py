#!/usr/bin/env python3
"""Regenerates the digit fixtures under data/.

Writes a train/test split of the UCI optical-digits set (8x8, 0..16 pixels)
and a 64-16-10 ReLU MLP with weights quantized to signed 8-bit magnitudes
(|w| <= 255), which the simulator maps onto differential weight planes.
"""
import json
import os

import numpy as np
from sklearn.datasets import load_digits
from sklearn.neural_network import MLPClassifier

OUT = os.path.join(os.path.dirname(__file__), "..", "data")
W_MAX = 255
PIXEL_MAX = 16


def write_csv(path, x, y):
    with open(path, "w", newline="\n") as f:
        f.write(",".join([f"p{i}" for i in range(64)] + ["label"]) + "\n")
        for row, label in zip(x, y):
            f.write(",".join(str(int(v)) for v in row) + f",{int(label)}\n")


def main():
    digits = load_digits()
    x = digits.data.astype(np.int64)
    y = digits.target.astype(np.int64)
    idx = np.arange(len(y))
    test = idx % 5 == 0
    write_csv(os.path.join(OUT, "digits_train.csv"), x[~test], y[~test])
    write_csv(os.path.join(OUT, "digits_test.csv"), x[test], y[test])

    xf = x / PIXEL_MAX
    clf = MLPClassifier(hidden_layer_sizes=(16,), activation="relu",
                        max_iter=2000, random_state=0, alpha=1e-3)
    clf.fit(xf[~test], y[~test])
    print("float test accuracy", clf.score(xf[test], y[test]))

    # Input codes are round(pixel * 255 / 16); layer inputs are therefore
    # real = code * input_scale with input_scale = 1/255 on the [0, 1] pixel axis.
    layers = []
    for w, b in zip(clf.coefs_, clf.intercepts_):
        scale = float(np.abs(w).max() / W_MAX)
        q = np.clip(np.rint(w / scale), -W_MAX, W_MAX).astype(int)
        layers.append({
            "in_dim": int(w.shape[0]),
            "out_dim": int(w.shape[1]),
            "weights": q.T.tolist(),
            "weight_scale": scale,
            "bias": [float(v) for v in b],
        })
    model = {"name": "digits-64-16-10", "input_max": float(PIXEL_MAX),
             "input_scale": 1.0 / 255.0, "layers": layers}
    with open(os.path.join(OUT, "digits_mlp.json"), "w") as f:
        json.dump(model, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
