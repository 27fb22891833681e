"""Row-wise numeric kernels with a numba path and a pure-numpy fallback.

Set ``TEXTKG_DISABLE_NUMBA=1`` before import to force the numpy path.  Both
paths treat every row independently, so changing one row of the input never
perturbs another row of the output (the causality tests rely on this).
"""

import os

import numpy as np

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


def _numba_requested():
    flag = os.environ.get("TEXTKG_DISABLE_NUMBA", "").strip().lower()
    return flag in ("", "0", "false", "no")


# ---------------------------------------------------------------- numpy path


def np_masked_softmax(logits, mask):
    """Softmax over the last axis of ``logits + mask``.

    ``logits`` is (rows, c) and ``mask`` is (m, c) with rows % m == 0; row i
    uses mask row i % m.  Fully masked rows come back as zeros, and the
    returned boolean vector flags them.
    """
    rows, c = logits.shape
    m = mask.shape[0]
    z = logits.reshape(rows // m, m, c) + mask
    mx = z.max(axis=-1, keepdims=True)
    empty = np.isneginf(mx)
    mx = np.where(empty, 0.0, mx)
    e = np.exp(z - mx)
    s = e.sum(axis=-1, keepdims=True)
    s = np.where(empty, 1.0, s)
    out = (e / s).reshape(rows, c)
    return out, empty.reshape(rows)


def np_softmax_backward(y, dy):
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


def np_layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd.reshape(-1)


def np_layer_norm_backward(dy, xhat, rstd, gain):
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    g = dy * gain
    dx = (g - g.mean(axis=-1, keepdims=True)
          - xhat * (g * xhat).mean(axis=-1, keepdims=True)) * rstd[:, None]
    return dx, dgain, dbias


def np_gelu(x):
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def np_gelu_backward(x, dy):
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def np_lcs_length(a, b):
    """LCS length of two token-id sequences (two-row DP)."""
    a = list(a)
    b = list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


# ---------------------------------------------------------------- numba path

_nb = None
if _numba_requested():
    try:
        import numba as _nb
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _nb = None

if _nb is not None:

    @_nb.njit(cache=True)
    def _nb_masked_softmax(logits, mask):
        rows, c = logits.shape
        m = mask.shape[0]
        out = np.zeros((rows, c))
        empty = np.zeros(rows, dtype=np.bool_)
        for i in range(rows):
            mr = i % m
            mx = -np.inf
            for j in range(c):
                v = logits[i, j] + mask[mr, j]
                if v > mx:
                    mx = v
            if mx == -np.inf:
                empty[i] = True
                continue
            s = 0.0
            for j in range(c):
                e = np.exp(logits[i, j] + mask[mr, j] - mx)
                out[i, j] = e
                s += e
            for j in range(c):
                out[i, j] = out[i, j] / s
        return out, empty

    @_nb.njit(cache=True)
    def _nb_softmax_backward(y, dy):
        rows, c = y.shape
        dx = np.empty((rows, c))
        for i in range(rows):
            dot = 0.0
            for j in range(c):
                dot += dy[i, j] * y[i, j]
            for j in range(c):
                dx[i, j] = y[i, j] * (dy[i, j] - dot)
        return dx

    @_nb.njit(cache=True)
    def _nb_layer_norm(x, gain, bias):
        rows, d = x.shape
        out = np.empty((rows, d))
        xhat = np.empty((rows, d))
        rstd = np.empty(rows)
        for i in range(rows):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                t = x[i, j] - mu
                var += t * t
            var /= d
            r = 1.0 / np.sqrt(var + LN_EPS)
            rstd[i] = r
            for j in range(d):
                h = (x[i, j] - mu) * r
                xhat[i, j] = h
                out[i, j] = h * gain[j] + bias[j]
        return out, xhat, rstd

    @_nb.njit(cache=True)
    def _nb_layer_norm_backward(dy, xhat, rstd, gain):
        rows, d = dy.shape
        dx = np.empty((rows, d))
        dgain = np.zeros(d)
        dbias = np.zeros(d)
        for i in range(rows):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                g = dy[i, j] * gain[j]
                m1 += g
                m2 += g * xhat[i, j]
                dgain[j] += dy[i, j] * xhat[i, j]
                dbias[j] += dy[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                g = dy[i, j] * gain[j]
                dx[i, j] = (g - m1 - xhat[i, j] * m2) * rstd[i]
        return dx, dgain, dbias

    @_nb.njit(cache=True)
    def _nb_tanh(u):
        # exp form vectorizes better than libm tanh; exact to a few ulp
        e = np.exp(-2.0 * abs(u))
        t = (1.0 - e) / (1.0 + e)
        return t if u >= 0 else -t

    @_nb.njit(cache=True)
    def _nb_gelu(x):
        flat = x.ravel()
        out = np.empty(flat.size)
        c = np.sqrt(2.0 / np.pi)
        for k in range(flat.size):
            v = flat[k]
            out[k] = 0.5 * v * (1.0 + _nb_tanh(c * (v + 0.044715 * v * v * v)))
        return out.reshape(x.shape)

    @_nb.njit(cache=True)
    def _nb_gelu_backward(x, dy):
        flat = x.ravel()
        g = dy.ravel()
        out = np.empty(flat.size)
        c = np.sqrt(2.0 / np.pi)
        for k in range(flat.size):
            v = flat[k]
            t = _nb_tanh(c * (v + 0.044715 * v * v * v))
            dinner = c * (1.0 + 3 * 0.044715 * v * v)
            out[k] = g[k] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner)
        return out.reshape(x.shape)

    @_nb.njit(cache=True)
    def _nb_lcs_length(a, b):
        n = a.shape[0]
        m = b.shape[0]
        if n == 0 or m == 0:
            return 0
        prev = np.zeros(m + 1, dtype=np.int64)
        cur = np.zeros(m + 1, dtype=np.int64)
        for i in range(n):
            cur[0] = 0
            for j in range(m):
                if a[i] == b[j]:
                    cur[j + 1] = prev[j] + 1
                elif prev[j + 1] >= cur[j]:
                    cur[j + 1] = prev[j + 1]
                else:
                    cur[j + 1] = cur[j]
            prev, cur = cur, prev
        return prev[m]

    BACKEND = "numba"

    def masked_softmax(logits, mask):
        return _nb_masked_softmax(np.ascontiguousarray(logits),
                                  np.ascontiguousarray(mask))

    def softmax_backward(y, dy):
        return _nb_softmax_backward(np.ascontiguousarray(y),
                                    np.ascontiguousarray(dy))

    def layer_norm(x, gain, bias):
        return _nb_layer_norm(np.ascontiguousarray(x), gain, bias)

    def layer_norm_backward(dy, xhat, rstd, gain):
        return _nb_layer_norm_backward(np.ascontiguousarray(dy), xhat, rstd, gain)

    def gelu(x):
        return _nb_gelu(np.ascontiguousarray(x))

    def gelu_backward(x, dy):
        return _nb_gelu_backward(np.ascontiguousarray(x), np.ascontiguousarray(dy))

    def lcs_length(a, b):
        return int(_nb_lcs_length(np.asarray(a, dtype=np.int64),
                                  np.asarray(b, dtype=np.int64)))

else:
    BACKEND = "numpy"
    masked_softmax = np_masked_softmax
    softmax_backward = np_softmax_backward
    layer_norm = np_layer_norm
    layer_norm_backward = np_layer_norm_backward
    gelu = np_gelu
    gelu_backward = np_gelu_backward
    lcs_length = np_lcs_length
