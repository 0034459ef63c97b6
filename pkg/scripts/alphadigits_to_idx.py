"""Convert ``binaryalphadigs.mat`` (binary 20x16 alphadigits) to IDX files.

    python scripts/alphadigits_to_idx.py binaryalphadigs.mat data/usps-alpha

Only the 26 letter classes are kept (labels 0..25 for A..Z), 39 images each.
"""

import sys

import numpy as np
from scipy.io import loadmat

from kfan.data import ImageSet, write_idx


def main(src, prefix):
    mat = loadmat(src)
    cells = mat["dat"]  # (36 classes, 39 examples), each a 20x16 array
    images, labels = [], []
    for cls in range(10, 36):
        for ex in range(cells.shape[1]):
            images.append(np.asarray(cells[cls, ex], dtype=np.float64).reshape(-1))
            labels.append(cls - 10)
    data = ImageSet(np.array(images), 20, 16, np.array(labels))
    write_idx(f"{prefix}-images-idx3-ubyte.gz", data)
    write_idx(f"{prefix}-labels-idx1-ubyte.gz", data.labels)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2] if len(sys.argv) > 2 else "data/usps-alpha")
