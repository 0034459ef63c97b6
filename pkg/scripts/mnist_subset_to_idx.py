"""Write the 5000-image MNIST subset bundled with mlxtend as gzipped IDX files.

    pip install mlxtend
    python scripts/mnist_subset_to_idx.py data/mnist5k

produces ``<prefix>-images-idx3-ubyte.gz`` and ``<prefix>-labels-idx1-ubyte.gz``.
The subset holds 500 images per digit, ordered by label; runs draw their
train/test split from it with a seeded shuffle.
"""

import sys

import numpy as np
from mlxtend.data import mnist_data

from kfan.data import ImageSet, write_idx


def main(prefix):
    x, y = mnist_data()
    images = ImageSet(x.astype(np.float64) / 255.0, 28, 28, y.astype(np.int64))
    write_idx(f"{prefix}-images-idx3-ubyte.gz", images)
    write_idx(f"{prefix}-labels-idx1-ubyte.gz", images.labels)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/mnist5k")
