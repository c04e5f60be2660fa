"""Hot inner loops, compiled with numba when available.

Every kernel exists twice: a loop form compiled with ``numba.njit`` and a
vectorized numpy form.  Set ``ROTMASTER_PURE_NUMPY=1`` to force the numpy
path (numba is also skipped silently if it cannot be imported).  Dense
products go to BLAS in both forms; the compiled forms fuse the surrounding
per-step loops and reductions.  Callers that need results independent of
the worker count pass column blocks of a fixed size.
"""

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("ROTMASTER_PURE_NUMPY", "0") in ("", "0")
BACKEND = "numba" if USE_NUMBA else "numpy"


def _advance_until_loop(U, psi, r, out, i0, i1):
    for i in range(i0 + 1, i1 + 1):
        new = np.dot(U, psi)
        n2 = 0.0
        for a in range(new.shape[0]):
            n2 += new[a].real * new[a].real + new[a].imag * new[a].imag
        if n2 <= r:
            return i
        inv = 1.0 / np.sqrt(n2)
        for a in range(new.shape[0]):
            psi[a] = new[a]
            out[i, a] = new[a] * inv
    return i1 + 1


def _advance_until_numpy(U, psi, r, out, i0, i1):
    for i in range(i0 + 1, i1 + 1):
        new = U @ psi
        n2 = float(np.vdot(new, new).real)
        if n2 <= r:
            return i
        psi[:] = new
        out[i] = new / np.sqrt(n2)
    return i1 + 1


def _step_columns_loop(U, Psi):
    out = np.dot(U, Psi)
    n, c = out.shape
    norms = np.zeros(c)
    for a in range(n):
        for k in range(c):
            v = out[a, k]
            norms[k] += v.real * v.real + v.imag * v.imag
    return out, norms


def _step_columns_numpy(U, Psi):
    out = U @ Psi
    return out, np.einsum("ak,ak->k", out.conj(), out).real


def _expectations_loop(ops, Phi):
    k_ops, n, _ = ops.shape
    c = Phi.shape[1]
    res = np.zeros((k_ops, c))
    for o in range(k_ops):
        prod = np.dot(ops[o], Phi)
        for a in range(n):
            for k in range(c):
                v = Phi[a, k]
                w = prod[a, k]
                res[o, k] += v.real * w.real + v.imag * w.imag
    return res


def _expectations_numpy(ops, Phi):
    return np.einsum("ak,oab,bk->ok", Phi.conj(), ops, Phi, optimize=True).real


def _displaced_table_loop(beta, n_rows, n_cols):
    # <m|D(beta)|n> for real beta.  Along each diagonal m = n + a the values
    # f_n = sqrt(n!/m!) beta^a e^{-beta^2/2} L_n^(a)(beta^2) obey the rescaled
    # Laguerre recurrence
    #   sqrt((k+1)(k+1+a)) f_{k+1} = (2k+1+a-x) f_k - sqrt(k(k+a)) f_{k-1},  x = beta^2,
    # and D[n, m] = (-1)^a D[m, n].
    size = max(n_rows, n_cols)
    D = np.zeros((size, size))
    x = beta * beta
    lb = np.log(abs(beta)) if beta != 0.0 else -np.inf
    for a in range(size):
        if beta == 0.0:
            f0 = 1.0 if a == 0 else 0.0
        else:
            f0 = np.exp(-0.5 * x + a * lb - 0.5 * math.lgamma(a + 1.0))
            if beta < 0.0 and a % 2 == 1:
                f0 = -f0
        sign = 1.0 if a % 2 == 0 else -1.0
        prev = 0.0
        cur = f0
        for k in range(size - a):
            D[k + a, k] = cur
            D[k, k + a] = sign * cur
            nxt = ((2 * k + 1 + a - x) * cur - np.sqrt(k * (k + a)) * prev) / np.sqrt((k + 1.0) * (k + 1.0 + a))
            prev = cur
            cur = nxt
    return D[:n_rows, :n_cols].copy()


def _displaced_table_numpy(beta, n_rows, n_cols):
    size = max(n_rows, n_cols)
    D = np.zeros((size, size))
    x = beta * beta
    a = np.arange(size)
    if beta == 0.0:
        return np.eye(size)[:n_rows, :n_cols].copy()
    lg = np.array([math.lgamma(v + 1.0) for v in a])
    f0 = np.exp(-0.5 * x + a * np.log(abs(beta)) - 0.5 * lg)
    if beta < 0.0:
        f0 = f0 * np.where(a % 2 == 1, -1.0, 1.0)
    # advance every diagonal at once; diagonal a has size - a entries
    prev = np.zeros(size)
    cur = f0
    for k in range(size):
        live = a[: size - k]
        D[k + live, k] = cur[: size - k]
        kk = float(k)
        nxt = ((2 * kk + 1 + live - x) * cur[: size - k] - np.sqrt(kk * (kk + live)) * prev[: size - k]) / np.sqrt(
            (kk + 1.0) * (kk + 1.0 + live)
        )
        prev, cur = cur[: size - k], nxt
    sign = np.where((a[:, None] + a[None, :]) % 2 == 0, 1.0, -1.0)
    upper = np.triu(np.ones((size, size), dtype=bool), 1)
    D[upper] = (sign * D.T)[upper]
    return D[:n_rows, :n_cols].copy()


if USE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)
    advance_until = _jit(_advance_until_loop)
    step_columns = _jit(_step_columns_loop)
    expectations = _jit(_expectations_loop)
    displaced_table = _jit(_displaced_table_loop)
else:
    advance_until = _advance_until_numpy
    step_columns = _step_columns_numpy
    expectations = _expectations_numpy
    displaced_table = _displaced_table_numpy

NUMPY_KERNELS = {
    "advance_until": _advance_until_numpy,
    "step_columns": _step_columns_numpy,
    "expectations": _expectations_numpy,
    "displaced_table": _displaced_table_numpy,
}
