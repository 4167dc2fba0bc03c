import numpy as np
import pytest

from staa import _kernels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numba", "numpy"] if _kernels.HAVE_NUMBA else ["numpy"])
def backend(request):
    """Run a test once per kernel backend."""
    prev = _kernels.set_backend(request.param)
    yield request.param
    _kernels.set_backend(prev)


def conv3d_oracle(x, k, stride=(1, 1, 1)):
    """Six-loop replicate-padded cross-correlation; slow but obviously right."""
    N, C, T, H, W = x.shape
    O, _, kt, kh, kw = k.shape
    r, s1, s2 = stride
    To, Ho, Wo = -(-T // r), -(-H // s1), -(-W // s2)
    out = np.zeros((N, O, To, Ho, Wo))
    for n in range(N):
        for o in range(O):
            for t in range(To):
                for h in range(Ho):
                    for w in range(Wo):
                        acc = 0.0
                        for c in range(C):
                            for i in range(kt):
                                ti = min(max(r * t + i - kt // 2, 0), T - 1)
                                for j in range(kh):
                                    hj = min(max(s1 * h + j - kh // 2, 0), H - 1)
                                    for m in range(kw):
                                        wm = min(max(s2 * w + m - kw // 2, 0), W - 1)
                                        acc += k[o, c, i, j, m] * x[n, c, ti, hj, wm]
                        out[n, o, t, h, w] = acc
    return out
