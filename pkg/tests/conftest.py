import numpy as np
import pytest

from reprime.autodiff import Tape, Tensor


def finite_difference(f, x: np.ndarray, h_scale: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of scalar f at x (independent FD oracle).

    Step per element is h_scale * max(1, |x_i|). f receives a plain array
    and returns a float.
    """
    x = np.asarray(x, dtype=np.float32)
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = np.float32(h_scale * max(1.0, abs(float(orig))))
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * float(h))
    return grad.reshape(x.shape)


def gradcheck(build_loss, arrays, tol=1e-3, h_scale=1e-3):
    """Compare tape gradients of build_loss(*tensors) against finite differences.

    The error metric is |fd - ad| / max(|fd|, |ad|, 1) <= tol, i.e. relative
    error with a floor of 1 in the denominator, matching the f32 noise floor
    the tolerance was chosen for. Returns the worst error seen.
    """
    arrays = [np.asarray(a, dtype=np.float32) for a in arrays]
    tensors = [Tensor(a.copy()) for a in arrays]
    with Tape() as tape:
        loss = build_loss(*tensors)
    grads = tape.backward(loss)

    worst = 0.0
    for k, base in enumerate(arrays):
        def f(x, k=k):
            args = [a.copy() for a in arrays]
            args[k] = x
            return float(build_loss(*[Tensor(a) for a in args]).data)

        fd = finite_difference(f, base.copy(), h_scale=h_scale)
        ad = grads.of(tensors[k]).astype(np.float64)
        err = np.abs(fd - ad) / np.maximum(np.maximum(np.abs(fd), np.abs(ad)), 1.0)
        worst = max(worst, float(err.max()))
        assert err.max() <= tol, (
            f"gradient mismatch on input {k}: max err {err.max():.3e} "
            f"(fd={fd.reshape(-1)[err.argmax()]}, ad={ad.reshape(-1)[err.argmax()]})"
        )
    return worst


def conv2d_naive(x: np.ndarray, w: np.ndarray, stride=1, padding=0) -> np.ndarray:
    """Direct six-loop convolution (cross-correlation) reference."""
    n, c, h, wid = x.shape
    k, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wid + 2 * padding - kw) // stride + 1
    out = np.zeros((n, k, ho, wo), dtype=np.float64)
    for ni in range(n):
        for ki in range(k):
            for oi in range(ho):
                for oj in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for ii in range(kh):
                            for jj in range(kw):
                                acc += float(
                                    xp[ni, ci, oi * stride + ii, oj * stride + jj]
                                ) * float(w[ki, ci, ii, jj])
                    out[ni, ki, oi, oj] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
