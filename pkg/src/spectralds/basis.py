"""Spectral filter bank: the Hankel matrix Z, its dominant eigenpairs, and
sign-alternated companion filters.

Z is the L x L matrix with entries Z[i, j] = 2 / ((i+j)^3 - (i+j)) (1-based
i, j).  Its top-k eigenvectors form a fixed, input-independent filter bank;
everything downstream (projections, fitting, distillation) consumes it.

Eigensolver notes.  Z admits an exact square-root factorization through
Gauss-Legendre quadrature: Z = G G^T where column q of G is
sqrt(w_q) * (1 - a_q) * [1, a_q, a_q^2, ...]^T over L+1 nodes a_q in [0, 1]
(the quadrature is exact because every entry of Z is a polynomial moment of
degree <= 2L).  Working on G instead of Z halves the dynamic range of the
spectrum (singular values decay half as fast as eigenvalues), which keeps the
deep filters fully resolved in float64 and makes every eigenvalue a square,
hence strictly positive.  Dense SVD of G is used up to ``DENSE_MAX_L``;
beyond that a block subspace iteration with Rayleigh-Ritz extraction and
locking of converged pairs runs on chunked evaluations of G.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import roots_legendre

from .errors import DimensionError, EigensolverError
from .streams import stream

DENSE_MAX_L = 2048
FFT_MATVEC_MIN_L = 2048
_FACTOR_CHUNK = 1024
_START_SEED = 0x5BA515


@dataclass(frozen=True)
class HankelSpec:
    """Filter length / maximum sequence length for the Hankel matrix."""

    L: int

    def __post_init__(self):
        if self.L < 2:
            raise ValueError(f"L must be >= 2, got {self.L}")


@dataclass(frozen=True)
class SpectralBasis:
    """Top-k eigenpairs of the Hankel matrix: sigma descending, phi row-wise.

    sigma[j] and phi[j] satisfy Z phi[j] ~= sigma[j] phi[j]; rows of phi are
    orthonormal and sign-fixed so each row's largest-magnitude entry is
    positive.
    """

    L: int
    k: int
    sigma: np.ndarray  # (k,)
    phi: np.ndarray    # (k, L)

    def validate(self, ortho_tol=1e-8, resid_tol=1e-6):
        if self.sigma.shape != (self.k,) or self.phi.shape != (self.k, self.L):
            raise DimensionError("sigma/phi shapes inconsistent with (k, L)")
        if not np.all(self.sigma > 0):
            raise ValueError("eigenvalues must be strictly positive")
        if np.any(np.diff(self.sigma) > 0):
            raise ValueError("eigenvalues must be non-increasing")
        gram = self.phi @ self.phi.T
        if np.abs(gram - np.eye(self.k)).max() > ortho_tol:
            raise ValueError("filter rows are not orthonormal")
        spec = HankelSpec(self.L)
        resid = max(
            np.linalg.norm(hankel_matvec(spec, self.phi[j]) - self.sigma[j] * self.phi[j])
            for j in range(self.k)
        )
        if resid > resid_tol * self.sigma[0]:
            raise ValueError(f"eigenpair residual {resid:.3e} exceeds tolerance")

    def negated_phi(self):
        """All k companion filters with alternated signs, as a (k, L) array."""
        return self.phi * _alternating_signs(self.L)


def hankel_entry(i: int, j: int) -> float:
    """Entry Z[i, j] = 2 / ((i+j)^3 - (i+j)) for 1-based indices."""
    if i < 1 or j < 1:
        raise ValueError("indices are 1-based and must be >= 1")
    s = float(i + j)
    return 2.0 / (s**3 - s)


def hankel_dense(L: int) -> np.ndarray:
    """The full L x L Hankel matrix (dense; intended for moderate L)."""
    s = np.arange(1, L + 1, dtype=float)
    ss = s[:, None] + s[None, :]
    return 2.0 / (ss**3 - ss)


def _symbol(L):
    # h[d] = Z entry for i+j = d+2, d = 0 .. 2L-2
    s = np.arange(2, 2 * L + 1, dtype=float)
    return 2.0 / (s**3 - s)


def hankel_matvec(spec: HankelSpec, v, method: str = "auto") -> np.ndarray:
    """Z @ v, densely for small L or via FFT convolution in O(L log L).

    The Hankel product (Z v)[i] = sum_j h[i+j] v[j] equals a slice of the full
    convolution of the anti-diagonal symbol h with the reversed input.
    """
    v = np.asarray(v, dtype=float)
    L = spec.L
    if v.shape != (L,):
        raise DimensionError(f"expected vector of length {L}, got shape {v.shape}")
    if method == "auto":
        method = "fft" if L >= FFT_MATVEC_MIN_L else "dense"
    if method == "dense":
        return hankel_dense(L) @ v
    if method == "fft":
        return fftconvolve(_symbol(L), v[::-1])[L - 1:2 * L - 1]
    raise ValueError(f"unknown method {method!r}")


def negate_filter(phi_j) -> np.ndarray:
    """Companion filter with entries (-1)^(i-1) * phi_j[i] (1-based i)."""
    phi_j = np.asarray(phi_j, dtype=float)
    return phi_j * _alternating_signs(phi_j.shape[-1])


def _alternating_signs(L):
    signs = np.ones(L)
    signs[1::2] = -1.0
    return signs


def _quadrature(L):
    x, w = roots_legendre(L + 1)
    return 0.5 * (x + 1.0), 0.5 * w


def _factor_block(alpha, weight, L, powers_of=None):
    # columns sqrt(w_q) (1 - a_q) a_q^(t-1); computed per chunk of nodes
    scale = np.sqrt(weight) * (1.0 - alpha)
    return scale[None, :] * np.power(alpha[None, :], np.arange(L)[:, None])


def _factor_rmatmul(alpha, weight, L, V):
    """G^T V for V (L, p), chunking over quadrature nodes."""
    n = alpha.size
    out = np.empty((n, V.shape[1]))
    for s in range(0, n, _FACTOR_CHUNK):
        block = _factor_block(alpha[s:s + _FACTOR_CHUNK], weight[s:s + _FACTOR_CHUNK], L)
        out[s:s + _FACTOR_CHUNK] = block.T @ V
    return out


def _factor_matmul(alpha, weight, L, W):
    """G W for W (n_nodes, p), chunking over quadrature nodes."""
    out = np.zeros((L, W.shape[1]))
    for s in range(0, alpha.size, _FACTOR_CHUNK):
        block = _factor_block(alpha[s:s + _FACTOR_CHUNK], weight[s:s + _FACTOR_CHUNK], L)
        out += block @ W[s:s + _FACTOR_CHUNK]
    return out


def _fix_signs(phi):
    for r in range(phi.shape[0]):
        peak = np.argmax(np.abs(phi[r]))
        if phi[r, peak] < 0:
            phi[r] = -phi[r]
    return phi


def _basis_dense(L, k):
    alpha, weight = _quadrature(L)
    G = _factor_block(alpha, weight, L)
    U, s, _ = np.linalg.svd(G, full_matrices=False)
    return s[:k] ** 2, _fix_signs(U[:, :k].T.copy())


def _basis_subspace(L, k, block_extra=8, max_sweeps=60, tol=1e-10):
    alpha, weight = _quadrature(L)
    p = min(k + block_extra, L)
    rng = stream(_START_SEED, f"basis-start:{L}")
    U = np.linalg.qr(rng.standard_normal((L, p)))[0]
    locked_u, locked_sig = [], []
    res = np.full(p, np.inf)
    for _ in range(max_sweeps):
        # One power sweep on Z = G G^T through the factor, then Rayleigh-Ritz.
        V = np.linalg.qr(_factor_rmatmul(alpha, weight, L, U))[0]
        W = _factor_matmul(alpha, weight, L, V)
        if locked_u:
            done = np.column_stack(locked_u)
            W -= done @ (done.T @ W)
        Q, R = np.linalg.qr(W)
        Us, _, _ = np.linalg.svd(R)
        U = Q @ Us
        # Rayleigh quotients rho_j = ||G^T u_j||^2 are exact quadratures of a
        # positive integrand, so the locked eigenvalues are strictly positive.
        GtU = _factor_rmatmul(alpha, weight, L, U)
        rho = np.einsum("ij,ij->j", GtU, GtU)
        ZU = _factor_matmul(alpha, weight, L, GtU)
        res = np.linalg.norm(ZU - U * rho[None, :], axis=0)
        sig_top = max(rho[0], locked_sig[0] if locked_sig else 0.0)
        while len(locked_u) < k and res.size and res[0] <= tol * sig_top:
            locked_u.append(U[:, 0])
            locked_sig.append(rho[0])
            U, rho, res = U[:, 1:], rho[1:], res[1:]
        if len(locked_u) >= k or U.shape[1] == 0:
            break
    if len(locked_u) < k:
        raise EigensolverError(
            f"subspace iteration did not converge for L={L}, k={k} "
            f"after {max_sweeps} sweeps", residuals=res,
        )
    phi = np.vstack(locked_u[:k])
    sigma = np.asarray(locked_sig[:k])
    order = np.argsort(sigma)[::-1]
    return sigma[order], _fix_signs(phi[order])


def compute_basis(spec: HankelSpec, k: int) -> SpectralBasis:
    """Top-k eigenpairs of the Hankel matrix as a SpectralBasis.

    Deterministic: repeated calls with the same (L, k) return bit-identical
    arrays.  Raises EigensolverError if the iterative path fails to converge.
    """
    L = spec.L
    if not 1 <= k <= L:
        raise ValueError(f"need 1 <= k <= L, got k={k}, L={L}")
    if L <= DENSE_MAX_L:
        sigma, phi = _basis_dense(L, k)
    else:
        sigma, phi = _basis_subspace(L, k)
    return SpectralBasis(L=L, k=k, sigma=sigma, phi=phi)
