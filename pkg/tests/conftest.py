import os

import numpy as np
import pytest

import discrimnet as dn


@pytest.fixture(autouse=True)
def _float64_default():
    # Tests and oracles run in 64-bit; individual tests opt into float32.
    dn.set_default_dtype(np.float64)
    yield
    dn.set_default_dtype(np.float64)


def finite_difference(f, x, h=1e-5):
    """Central-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(a, b):
    """Max-norm relative disagreement between two arrays.

    The floor keeps the ratio meaningful when both sides sit below
    central-difference resolution (~1e-10 at h=1e-5 in float64); such
    gradients are indistinguishable from zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def data_root():
    candidates = [os.environ.get("DISCRIM_DATA_DIR"), "data", "/root/data"]
    for root in candidates:
        if root and os.path.isdir(os.path.join(root, "mnist")):
            return root
    return None


@pytest.fixture(scope="session")
def mnist_root():
    root = data_root()
    if root is None:
        pytest.skip(
            "MNIST IDX files not found; set DISCRIM_DATA_DIR to a directory "
            "containing mnist/train-images-idx3-ubyte etc. (see README)"
        )
    return root
