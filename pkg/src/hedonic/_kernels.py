"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``HEDONIC_NO_NUMBA=1`` in the environment to force the numpy path (the
choice is made once, at import).  Both paths return identical results up to
floating-point rounding, and ``choice_counts`` agrees bit for bit.  The numba
``gumbel`` is slower than numpy's vectorized ``log`` and can differ from it in
the last unit of precision, so both paths draw shocks with the numpy version
(the numba one is kept for the benchmark).  Shock draws are therefore
bit-identical across paths.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("HEDONIC_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}
USE_NUMBA = numba is not None and not _DISABLED


# ---------------------------------------------------------------- numpy path

def _logit_rows_np(U):
    U = np.asarray(U, dtype=np.float64)
    shift = np.maximum(np.max(U, axis=1), 0.0)
    inside = np.exp(U - shift[:, None])
    outside = np.exp(-shift)
    total = outside + inside.sum(axis=1)
    probs = np.empty((U.shape[0], U.shape[1] + 1))
    probs[:, 0] = outside / total
    probs[:, 1:] = inside / total[:, None]
    return shift + np.log(total), probs


def _empirical_rows_np(U, draws):
    U = np.asarray(U, dtype=np.float64)
    payoff = draws.copy()
    payoff[:, 1:] += U
    best = payoff.max(axis=1)
    hit = payoff == best[:, None]
    probs = (hit / hit.sum(axis=1, keepdims=True)).mean(axis=0)
    return best.mean(), probs


def _choice_counts_np(systematic, shocks):
    choice = np.argmax(shocks + systematic, axis=1)
    return np.bincount(choice, minlength=shocks.shape[1]).astype(np.int64)


def _gumbel_np(u):
    return -np.log(-np.log(u))


# ---------------------------------------------------------------- numba path

if numba is not None:

    @numba.njit(cache=True)
    def _logit_rows_nb(U):
        R, Z = U.shape
        emax = np.empty(R)
        probs = np.empty((R, Z + 1))
        for r in range(R):
            shift = 0.0
            for z in range(Z):
                if U[r, z] > shift:
                    shift = U[r, z]
            total = np.exp(-shift)
            probs[r, 0] = total
            for z in range(Z):
                e = np.exp(U[r, z] - shift)
                probs[r, z + 1] = e
                total += e
            for k in range(Z + 1):
                probs[r, k] /= total
            emax[r] = shift + np.log(total)
        return emax, probs

    @numba.njit(cache=True)
    def _empirical_rows_nb(U, draws):
        R, K = draws.shape
        probs = np.zeros(K)
        acc = 0.0
        payoff = np.empty(K)
        for r in range(R):
            payoff[0] = draws[r, 0]
            best = payoff[0]
            for k in range(1, K):
                payoff[k] = draws[r, k] + U[k - 1]
                if payoff[k] > best:
                    best = payoff[k]
            ties = 0
            for k in range(K):
                if payoff[k] == best:
                    ties += 1
            for k in range(K):
                if payoff[k] == best:
                    probs[k] += 1.0 / ties
            acc += best
        return acc / R, probs / R

    @numba.njit(cache=True)
    def _choice_counts_nb(systematic, shocks):
        N, K = shocks.shape
        counts = np.zeros(K, dtype=np.int64)
        for i in range(N):
            best = shocks[i, 0] + systematic[0]
            arg = 0
            for k in range(1, K):
                val = shocks[i, k] + systematic[k]
                if val > best:
                    best = val
                    arg = k
            counts[arg] += 1
        return counts

    @numba.njit(cache=True)
    def _gumbel_nb(u):
        out = np.empty_like(u)
        flat_in = u.ravel()
        flat_out = out.ravel()
        for i in range(flat_in.size):
            flat_out[i] = -np.log(-np.log(flat_in[i]))
        return out


NUMPY_KERNELS = {
    "logit_rows": _logit_rows_np,
    "empirical_rows": _empirical_rows_np,
    "choice_counts": _choice_counts_np,
    "gumbel": _gumbel_np,
}

if numba is not None:
    NUMBA_KERNELS = {
        "logit_rows": _logit_rows_nb,
        "empirical_rows": _empirical_rows_nb,
        "choice_counts": _choice_counts_nb,
        "gumbel": _gumbel_nb,
    }
else:  # pragma: no cover
    NUMBA_KERNELS = {}

_ACTIVE = dict(NUMBA_KERNELS, gumbel=_gumbel_np) if USE_NUMBA else NUMPY_KERNELS


def logit_rows(U):
    """Row-wise logit emax and choice probabilities with a zero outside option.

    ``U`` is an (R, Z) array, ``-inf`` allowed.  Returns ``(emax, probs)`` where
    ``probs`` is (R, Z+1) with column 0 the opt-out share.
    """
    return _ACTIVE["logit_rows"](np.ascontiguousarray(U, dtype=np.float64))


def empirical_rows(U, draws):
    """Sample-mean emax and tie-split argmax frequencies for one utility row."""
    return _ACTIVE["empirical_rows"](
        np.ascontiguousarray(U, dtype=np.float64), np.ascontiguousarray(draws, dtype=np.float64)
    )


def choice_counts(systematic, shocks):
    """Count argmax choices of ``systematic + shocks`` per row (lowest index wins ties)."""
    return _ACTIVE["choice_counts"](
        np.ascontiguousarray(systematic, dtype=np.float64), np.ascontiguousarray(shocks, dtype=np.float64)
    )


def gumbel(u):
    """Standard Gumbel variates by inverse CDF of uniforms in (0, 1)."""
    return _ACTIVE["gumbel"](np.ascontiguousarray(u, dtype=np.float64))
