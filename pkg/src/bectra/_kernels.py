"""Hot dynamic-programming kernels with optional numba acceleration.

The loops below are written in numba-compatible style and run unchanged as
plain Python over numpy arrays when JIT compilation is off.  The backend is
chosen once at import time from the ``BECTRA_BACKEND`` environment variable:

* ``auto`` (default) - use numba when importable, else pure numpy;
* ``numba``          - require numba, fail loudly if unavailable;
* ``numpy``          - force the pure-numpy path.

``benchmarks/bench_kernels.py`` times both paths side by side.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .core import UsageError

_ENV_VAR = "BECTRA_BACKEND"


def _select_backend() -> str:
    choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise UsageError(f"{_ENV_VAR} must be one of auto/numba/numpy, got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise UsageError("BECTRA_BACKEND=numba but numba is not importable") from None
        return "numpy"
    return "numba"


BACKEND = _select_backend()


def _logaddexp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def _ctc_forward(logp, labels, blank):
    """Forward pass over the blank-augmented target lattice.

    Returns (log-likelihood, alpha) where alpha has shape (T, 2N+1) and
    state s holds blank for even s and labels[(s-1)//2] for odd s.
    """
    T = logp.shape[0]
    N = labels.shape[0]
    S = 2 * N + 1
    alpha = np.full((T, S), -math.inf)
    alpha[0, 0] = logp[0, blank]
    if S > 1:
        alpha[0, 1] = logp[0, labels[0]]
    for t in range(1, T):
        for s in range(S):
            if s % 2 == 0:
                sym = blank
            else:
                sym = labels[(s - 1) // 2]
            a = alpha[t - 1, s]
            if s >= 1:
                a = _logaddexp(a, alpha[t - 1, s - 1])
            if s >= 2 and s % 2 == 1 and labels[(s - 1) // 2] != labels[(s - 3) // 2]:
                a = _logaddexp(a, alpha[t - 1, s - 2])
            alpha[t, s] = a + logp[t, sym]
    ll = alpha[T - 1, S - 1]
    if S > 1:
        ll = _logaddexp(ll, alpha[T - 1, S - 2])
    return ll, alpha


def _ctc_posteriors(logp, labels, blank):
    """Log-likelihood and per-frame symbol occupancies gamma (T, C)."""
    T = logp.shape[0]
    C = logp.shape[1]
    N = labels.shape[0]
    S = 2 * N + 1
    gamma = np.zeros((T, C))
    # forward
    alpha = np.full((T, S), -math.inf)
    alpha[0, 0] = logp[0, blank]
    if S > 1:
        alpha[0, 1] = logp[0, labels[0]]
    for t in range(1, T):
        for s in range(S):
            if s % 2 == 0:
                sym = blank
            else:
                sym = labels[(s - 1) // 2]
            a = alpha[t - 1, s]
            if s >= 1:
                a = _logaddexp(a, alpha[t - 1, s - 1])
            if s >= 2 and s % 2 == 1 and labels[(s - 1) // 2] != labels[(s - 3) // 2]:
                a = _logaddexp(a, alpha[t - 1, s - 2])
            alpha[t, s] = a + logp[t, sym]
    ll = alpha[T - 1, S - 1]
    if S > 1:
        ll = _logaddexp(ll, alpha[T - 1, S - 2])
    if ll == -math.inf:
        return ll, gamma
    # backward
    beta = np.full((T, S), -math.inf)
    beta[T - 1, S - 1] = logp[T - 1, blank]
    if S > 1:
        beta[T - 1, S - 2] = logp[T - 1, labels[N - 1]]
    for t in range(T - 2, -1, -1):
        for s in range(S - 1, -1, -1):
            if s % 2 == 0:
                sym = blank
            else:
                sym = labels[(s - 1) // 2]
            b = beta[t + 1, s]
            if s + 1 < S:
                b = _logaddexp(b, beta[t + 1, s + 1])
            if s + 2 < S and s % 2 == 1 and labels[(s - 1) // 2] != labels[(s + 1) // 2]:
                b = _logaddexp(b, beta[t + 1, s + 2])
            beta[t, s] = b + logp[t, sym]
    # alpha and beta both include the frame-t emission, so divide it out once
    for t in range(T):
        for s in range(S):
            if s % 2 == 0:
                sym = blank
            else:
                sym = labels[(s - 1) // 2]
            w = alpha[t, s] + beta[t, s] - logp[t, sym] - ll
            if w > -math.inf:
                gamma[t, sym] += math.exp(w)
    return ll, gamma


def _rnnt_forward(lat, labels, blank):
    """Forward pass over the (T, N+1) transducer lattice.

    Paths start at node (0, 0); a label emission advances u, a blank
    advances t, and the blank at node (T-1, N) terminates the path.
    Returns (log-likelihood, alpha) with alpha[t, u] the mass of reaching
    node (t, u).
    """
    T = lat.shape[0]
    U = lat.shape[1]
    alpha = np.full((T, U), -math.inf)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U):
            a = alpha[t, u]
            if t > 0:
                a = _logaddexp(a, alpha[t - 1, u] + lat[t - 1, u, blank])
            if u > 0:
                a = _logaddexp(a, alpha[t, u - 1] + lat[t, u - 1, labels[u - 1]])
            alpha[t, u] = a
    ll = alpha[T - 1, U - 1] + lat[T - 1, U - 1, blank]
    return ll, alpha


def _rnnt_posteriors(lat, labels, blank):
    """Log-likelihood and per-edge occupancies gamma (T, N+1, C)."""
    T = lat.shape[0]
    U = lat.shape[1]
    C = lat.shape[2]
    N = U - 1
    gamma = np.zeros((T, U, C))
    # forward
    alpha = np.full((T, U), -math.inf)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U):
            a = alpha[t, u]
            if t > 0:
                a = _logaddexp(a, alpha[t - 1, u] + lat[t - 1, u, blank])
            if u > 0:
                a = _logaddexp(a, alpha[t, u - 1] + lat[t, u - 1, labels[u - 1]])
            alpha[t, u] = a
    ll = alpha[T - 1, N] + lat[T - 1, N, blank]
    if ll == -math.inf:
        return ll, gamma
    # backward: beta[t, u] is the mass of completing the suffix from (t, u)
    beta = np.full((T, U), -math.inf)
    beta[T - 1, N] = lat[T - 1, N, blank]
    for t in range(T - 1, -1, -1):
        for u in range(U - 1, -1, -1):
            if t == T - 1 and u == N:
                continue
            b = -math.inf
            if u < N:
                b = _logaddexp(b, lat[t, u, labels[u]] + beta[t, u + 1])
            if t < T - 1:
                b = _logaddexp(b, lat[t, u, blank] + beta[t + 1, u])
            beta[t, u] = b
    for t in range(T):
        for u in range(U):
            if u < N:
                w = alpha[t, u] + lat[t, u, labels[u]] + beta[t, u + 1] - ll
                if w > -math.inf:
                    gamma[t, u, labels[u]] += math.exp(w)
            if t < T - 1:
                w = alpha[t, u] + lat[t, u, blank] + beta[t + 1, u] - ll
                if w > -math.inf:
                    gamma[t, u, blank] += math.exp(w)
            elif u == N:
                gamma[t, u, blank] += math.exp(alpha[t, u] + lat[t, u, blank] - ll)
    return ll, gamma


def _levenshtein(ref, hyp):
    """Edit distance with S/I/D counts.

    Backtrace ties prefer substitutions, then deletions, then insertions.
    Insertions are hypothesis tokens absent from the reference.
    """
    n = ref.shape[0]
    m = hyp.shape[0]
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(1, n + 1):
        d[i, 0] = i
    for j in range(1, m + 1):
        d[0, j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            best = d[i - 1, j - 1] + cost
            if d[i - 1, j] + 1 < best:
                best = d[i - 1, j] + 1
            if d[i, j - 1] + 1 < best:
                best = d[i, j - 1] + 1
            d[i, j] = best
    subs = 0
    dels = 0
    ins = 0
    i = n
    j = m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            if d[i, j] == d[i - 1, j - 1] + cost:
                subs += cost
                i -= 1
                j -= 1
                continue
        if i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
            continue
        ins += 1
        j -= 1
    return d[n, m], subs, ins, dels


PY_KERNELS = {
    "ctc_forward": _ctc_forward,
    "ctc_posteriors": _ctc_posteriors,
    "rnnt_forward": _rnnt_forward,
    "rnnt_posteriors": _rnnt_posteriors,
    "levenshtein": _levenshtein,
}

_numba_cache: dict | None = None


def numba_kernels() -> dict:
    """Compile (once per process) and return the numba kernel set."""
    global _numba_cache, _logaddexp
    if _numba_cache is not None:
        return _numba_cache
    from numba import njit

    if not hasattr(_logaddexp, "py_func"):
        _logaddexp = njit(cache=True)(_logaddexp)
    _numba_cache = {name: njit(cache=True)(fn) for name, fn in PY_KERNELS.items()}
    return _numba_cache


if BACKEND == "numba":
    _active = numba_kernels()
else:
    _active = PY_KERNELS

ctc_forward = _active["ctc_forward"]
ctc_posteriors = _active["ctc_posteriors"]
rnnt_forward = _active["rnnt_forward"]
rnnt_posteriors = _active["rnnt_posteriors"]
levenshtein = _active["levenshtein"]
