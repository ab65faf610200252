"""Pointwise linear algebra for matrix fields of shape ``(n, n, nq, np)``."""

from __future__ import annotations

import numpy as np

PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)


def mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,jk...->ik...", a, b)


def mv(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,j...->i...", a, v)


def comm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return mm(a, b) - mm(b, a)


def dag(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, 0, 1))


def tr(a: np.ndarray) -> np.ndarray:
    return np.einsum("ii...->...", a)


def tr_mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``Tr(a b)`` without forming the product."""
    return np.einsum("ij...,ji...->...", a, b)


def outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``u v^dagger`` pointwise."""
    return np.einsum("i...,j...->ij...", u, np.conj(v))


def times_identity(s: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, n) + np.shape(s), dtype=np.result_type(s, float))
    for i in range(n):
        out[i, i] = s
    return out


def constant_matrix_field(m: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return np.broadcast_to(np.asarray(m)[..., None, None], m.shape + shape).copy()


def hermitian_defect(a: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(a))), 1.0)
    return float(np.max(np.abs(a - dag(a)))) / scale


def pauli_expand(s0: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``s0 Id + sum_k s_k sigma_k`` for scalar fields ``s0`` and ``s`` of shape ``(3, ...)``."""
    s = np.asarray(s)
    shape = np.broadcast_shapes(np.shape(s0), s.shape[1:])
    out = np.empty((2, 2) + shape, dtype=complex)
    out[0, 0] = s0 + s[2]
    out[1, 1] = s0 - s[2]
    out[0, 1] = s[0] - 1j * s[1]
    out[1, 0] = s[0] + 1j * s[1]
    return out


def pauli_project(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`pauli_expand` for Hermitian ``a``: ``(Tr a / 2, Tr(a sigma_k) / 2)``."""
    a = np.asarray(a)
    d0, d1 = np.real(a[0, 0]), np.real(a[1, 1])
    s0 = 0.5 * (d0 + d1)
    s = np.stack([0.5 * np.real(a[0, 1] + a[1, 0]), 0.5 * np.imag(a[1, 0] - a[0, 1]), 0.5 * (d0 - d1)])
    return s0, s


def pack_hermitian(a: np.ndarray) -> np.ndarray:
    """Real array of shape ``(n*n, ...)``: diagonal, then real and imaginary upper entries.

    Spectral operators on Hermitian fields run on this packing with real FFTs.
    """
    n = a.shape[0]
    iu = np.triu_indices(n, 1)
    return np.concatenate([np.real(a[np.arange(n), np.arange(n)]),
                           np.real(a[iu]), np.imag(a[iu])], axis=0)


def unpack_hermitian(r: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((n, n) + r.shape[1:], dtype=complex)
    idx = np.arange(n)
    out[idx, idx] = r[:n]
    iu = np.triu_indices(n, 1)
    m = len(iu[0])
    upper = r[n:n + m] + 1j * r[n + m:]
    out[iu] = upper
    out[iu[1], iu[0]] = np.conj(upper)
    return out
