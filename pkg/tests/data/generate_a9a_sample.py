"""Regenerate ``a9a_sample.txt``: 100 synthetic rows in a9a layout.

a9a rows carry 14 binary features out of 123, one per categorical group;
labels come from a fixed random linear model with 10% label noise.
"""

from pathlib import Path

import numpy as np

GROUP_SIZES = [9, 16, 7, 15, 6, 5, 2, 5, 5, 5, 5, 5, 17, 21]  # sums to 123


def main(path=Path(__file__).with_name("a9a_sample.txt"), n=100, seed=2020):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(sum(GROUP_SIZES))
    lines = []
    for _ in range(n):
        idx, start = [], 1
        for size in GROUP_SIZES:
            idx.append(start + int(rng.integers(size)))
            start += size
        score = w[np.array(idx) - 1].sum() - 0.5
        label = 1 if score > 0 else -1
        if rng.random() < 0.1:
            label = -label
        feats = " ".join(f"{i}:1" for i in idx)
        lines.append(f"{'+1' if label > 0 else '-1'} {feats}")
    path.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
