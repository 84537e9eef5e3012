"""Hot-loop kernels with a compiled core and a numpy fallback.

The Cython extension ``fedsel._ckernels`` is used when it was built; otherwise
(or when ``FEDSEL_BACKEND=python`` is set) the numpy versions in
``fedsel._pykernels`` are used. Both expose the same two functions:

    pairwise_kl(probs)  -> (K, K) mean scaled KL distance matrix
    softmax_sgd(w, x, y, orders, num_classes, batch_size, lr) -> updated flat weights

The two backends agree to rounding error, not bitwise.
"""

import os

from fedsel import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("FEDSEL_BACKEND", "").lower() != "python":
    try:
        from fedsel import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        pass


def pairwise_kl(probs):
    return _impl.pairwise_kl(probs)


def softmax_sgd(w, x, y, orders, num_classes, batch_size, lr):
    return _impl.softmax_sgd(w, x, y, orders, num_classes, batch_size, lr)
