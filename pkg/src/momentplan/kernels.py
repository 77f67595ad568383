"""Numeric inner loops.

Every kernel has a numba implementation and a pure-numpy one with the same
signature.  The module-level names bind to the numba version unless numba is
missing or ``MOMENTPLAN_DISABLE_JIT`` is set.

Compiled term layout shared by all expression kernels: ``coef[K]`` and
integer exponent tables ``P, C, S`` of shape ``[K, A]`` giving, per term and
per atom, the power of the atom, of its cosine and of its sine.
"""
import numpy as np

from ._accel import HAS_NUMBA, USE_NUMBA, njit


# ---------------------------------------------------------------------------
# single point: term values and gradients with respect to the atoms

def _term_eval_np(coef, P, C, S, x):
    K, A = P.shape
    if K == 0:
        return np.zeros(0), np.zeros((0, A))
    cx = np.cos(x)
    sx = np.sin(x)
    xp = x ** P
    cc = cx ** C
    ss = sx ** S
    F = xp * cc * ss
    dP = np.where(P > 0, P * x ** np.maximum(P - 1, 0), 0.0) * cc * ss
    dC = np.where(C > 0, -C * cx ** np.maximum(C - 1, 0) * sx, 0.0) * xp * ss
    dS = np.where(S > 0, S * sx ** np.maximum(S - 1, 0) * cx, 0.0) * xp * cc
    dF = dP + dC + dS
    vals = coef * np.prod(F, axis=1)
    grads = np.zeros((K, A))
    for a in range(A):
        if not np.any(dF[:, a]):
            continue
        others = np.prod(np.delete(F, a, axis=1), axis=1) if A > 1 else 1.0
        grads[:, a] = coef * dF[:, a] * others
    return vals, grads


@njit
def _term_eval_nb(coef, P, C, S, x):
    K, A = P.shape
    vals = np.empty(K)
    grads = np.zeros((K, A))
    cx = np.cos(x)
    sx = np.sin(x)
    f = np.empty(A)
    df = np.empty(A)
    for k in range(K):
        for a in range(A):
            p = P[k, a]
            c = C[k, a]
            s = S[k, a]
            if p == 0 and c == 0 and s == 0:
                f[a] = 1.0
                df[a] = 0.0
                continue
            xp = x[a] ** p
            cc = cx[a] ** c
            ss = sx[a] ** s
            f[a] = xp * cc * ss
            d = 0.0
            if p > 0:
                d += p * x[a] ** (p - 1) * cc * ss
            if c > 0:
                d -= c * xp * cx[a] ** (c - 1) * sx[a] * ss
            if s > 0:
                d += s * xp * cc * sx[a] ** (s - 1) * cx[a]
            df[a] = d
        v = coef[k]
        for a in range(A):
            v *= f[a]
        vals[k] = v
        for a in range(A):
            if df[a] != 0.0:
                g = coef[k] * df[a]
                for b in range(A):
                    if b != a:
                        g *= f[b]
                grads[k, a] = g
    return vals, grads


# ---------------------------------------------------------------------------
# batch: evaluate one compiled expression on many sample rows

def _batch_eval_np(coef, P, C, S, X):
    N = X.shape[0]
    out = np.zeros(N)
    cache = {}

    def power(kind, a, e):
        key = (kind, a, e)
        if key not in cache:
            if e == 1:
                col = X[:, a]
                cache[key] = col if kind == 0 else (np.cos(col) if kind == 1 else np.sin(col))
            else:
                cache[key] = power(kind, a, e - 1) * power(kind, a, 1)
        return cache[key]

    for k in range(coef.shape[0]):
        term = None
        for a in range(P.shape[1]):
            for kind, e in ((0, P[k, a]), (1, C[k, a]), (2, S[k, a])):
                if e:
                    term = power(kind, a, int(e)) if term is None else term * power(kind, a, int(e))
        if term is None:
            out += coef[k]
        else:
            out += coef[k] * term
    return out


@njit
def _batch_eval_nb(coef, P, C, S, X):
    N, A = X.shape
    K = coef.shape[0]
    out = np.zeros(N)
    if K == 0:
        return out
    emax = max(P.max(), C.max(), S.max())
    # tab[kind, a, e, n]: X^e, cos(X)^e, sin(X)^e per atom and sample
    tab = np.empty((3, A, emax + 1, N))
    for a in range(A):
        for n in range(N):
            v = X[n, a]
            tab[0, a, 0, n] = 1.0
            tab[1, a, 0, n] = 1.0
            tab[2, a, 0, n] = 1.0
            if emax > 0:
                tab[0, a, 1, n] = v
                tab[1, a, 1, n] = np.cos(v)
                tab[2, a, 1, n] = np.sin(v)
        for kind in range(3):
            for e in range(2, emax + 1):
                for n in range(N):
                    tab[kind, a, e, n] = tab[kind, a, e - 1, n] * tab[kind, a, 1, n]
    t = np.empty(N)
    for k in range(K):
        for n in range(N):
            t[n] = coef[k]
        for a in range(A):
            ep, ec, es = P[k, a], C[k, a], S[k, a]
            if ep:
                for n in range(N):
                    t[n] *= tab[0, a, ep, n]
            if ec:
                for n in range(N):
                    t[n] *= tab[1, a, ec, n]
            if es:
                for n in range(N):
                    t[n] *= tab[2, a, es, n]
        for n in range(N):
            out[n] += t[n]
    return out


# ---------------------------------------------------------------------------
# sample moments: sums and sums of squares of monomials of basis values

def _moment_sums_np(B, E):
    M = E.shape[0]
    sums = np.zeros(M)
    sumsq = np.zeros(M)
    cache = {}

    def power(j, e):
        if (j, e) not in cache:
            cache[(j, e)] = B[:, j].copy() if e == 1 else power(j, e - 1) * B[:, j]
        return cache[(j, e)]

    for i in range(M):
        mono = None
        for j in range(E.shape[1]):
            e = int(E[i, j])
            if e:
                mono = power(j, e) if mono is None else mono * power(j, e)
        if mono is None:
            sums[i] = B.shape[0]
            sumsq[i] = B.shape[0]
        else:
            sums[i] = np.sum(mono)
            sumsq[i] = np.sum(mono * mono)
    return sums, sumsq


@njit
def _moment_sums_nb(B, E):
    N, nb = B.shape
    M = E.shape[0]
    sums = np.zeros(M)
    sumsq = np.zeros(M)
    # monomial i = (earlier monomial parent[i], or 1) * column col[i]; col -1 is
    # the constant and -2 a direct power product when no parent precedes i
    parent = np.full(M, -1)
    col = np.full(M, -1)
    for i in range(M):
        j = 0
        while j < nb and E[i, j] == 0:
            j += 1
        if j == nb:
            continue
        col[i] = j
        if E[i].sum() == 1:
            continue
        for q in range(i):
            same = True
            for r in range(nb):
                if E[q, r] != E[i, r] - (1 if r == j else 0):
                    same = False
                    break
            if same:
                parent[i] = q
                break
        if parent[i] < 0:
            col[i] = -2
    blk = 512
    vals = np.empty((M, blk))
    for n0 in range(0, N, blk):
        m = min(blk, N - n0)
        for i in range(M):
            c = col[i]
            q = parent[i]
            if c == -1:
                for n in range(m):
                    vals[i, n] = 1.0
            elif c == -2:
                for n in range(m):
                    v = 1.0
                    for r in range(nb):
                        v *= B[n0 + n, r] ** E[i, r]
                    vals[i, n] = v
            elif q < 0:
                for n in range(m):
                    vals[i, n] = B[n0 + n, c]
            else:
                for n in range(m):
                    vals[i, n] = vals[q, n] * B[n0 + n, c]
            s1 = 0.0
            s2 = 0.0
            for n in range(m):
                v = vals[i, n]
                s1 += v
                s2 += v * v
            sums[i] += s1
            sumsq[i] += s2
    return sums, sumsq


IMPLEMENTATIONS = {
    "numpy": {
        "term_values_and_grads": _term_eval_np,
        "eval_batch": _batch_eval_np,
        "moment_sums": _moment_sums_np,
    },
}
if HAS_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "term_values_and_grads": _term_eval_nb,
        "eval_batch": _batch_eval_nb,
        "moment_sums": _moment_sums_nb,
    }

BACKEND = "numba" if USE_NUMBA else "numpy"
_impl = IMPLEMENTATIONS[BACKEND]


def term_values_and_grads(coef, P, C, S, x):
    """Values of ``K`` compiled terms at atom values ``x`` and their gradients."""
    return _impl["term_values_and_grads"](coef, P, C, S, np.asarray(x, dtype=np.float64))


def eval_batch(coef, P, C, S, X):
    """Sum of compiled terms for every row of ``X`` (shape ``[N, A]``)."""
    return _impl["eval_batch"](coef, P, C, S, np.ascontiguousarray(X, dtype=np.float64))


def moment_sums(B, E):
    """Per-monomial sums and sums of squares over the rows of ``B``.

    ``E[M, nb]`` holds monomial exponents over the columns of ``B``.
    """
    return _impl["moment_sums"](np.ascontiguousarray(B, dtype=np.float64), np.ascontiguousarray(E, dtype=np.int64))
