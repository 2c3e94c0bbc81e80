"""Stacked linearized-dynamics blocks and the compact disturbance response."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


def transition(A_list: np.ndarray, k1: int, k2: int) -> np.ndarray:
    """State-transition product A_{k1-1} A_{k1-2} ... A_{k2}; identity for k1 == k2."""
    if k1 < k2 or k2 < 0:
        raise ValueError(f"need k1 >= k2 >= 0, got ({k1}, {k2})")
    n = np.asarray(A_list[0]).shape[0] if len(A_list) else 0
    P = np.eye(n)
    for i in range(k2, k1):
        P = A_list[i] @ P
    return P


@dataclass(frozen=True)
class StackedBlocks:
    """Block matrices mapping (delta_u, zeta) to the stacked linearized response."""

    F0: np.ndarray        # ((T+1)*n_x, n_x)
    Fu: np.ndarray        # ((T+1)*n_x, T*n_u)
    Fd_tilde: np.ndarray  # ((T+1)*n_x, T*n_x)
    Fzeta: np.ndarray     # ((T+1)*n_x, (T+1)*n_x)
    A_list: np.ndarray    # (T, n_x, n_x)
    B_list: np.ndarray    # (T, n_x, n_u)

    @property
    def horizon(self) -> int:
        return self.A_list.shape[0]

    @property
    def n_x(self) -> int:
        return self.A_list.shape[1]

    @property
    def n_u(self) -> int:
        return self.B_list.shape[2]


def build_blocks(A_list: np.ndarray, B_list: np.ndarray) -> StackedBlocks:
    """Assemble F0, Fu, F~d and Fzeta = [F0, F~d] for one linearization point.

    Row block k of F0 is Phi(k, 0); Fu has Phi(i, j+1) B_j below the diagonal;
    F~d has Phi(i, j+1) below the diagonal with identities on the first
    subdiagonal. Row block 0 of Fu and F~d is zero.
    """
    A_list = np.asarray(A_list, dtype=float)
    B_list = np.asarray(B_list, dtype=float)
    if A_list.ndim != 3 or B_list.ndim != 3 or A_list.shape[0] != B_list.shape[0]:
        raise ValueError(f"inconsistent Jacobian stacks {A_list.shape}, {B_list.shape}")
    T, n_x, n_u = B_list.shape[0], A_list.shape[1], B_list.shape[2]
    if A_list.shape[1] != A_list.shape[2] or B_list.shape[1] != n_x:
        raise ValueError(f"inconsistent Jacobian shapes {A_list.shape}, {B_list.shape}")

    F0 = np.zeros(((T + 1) * n_x, n_x))
    Fu = np.zeros(((T + 1) * n_x, T * n_u))
    Fd = np.zeros(((T + 1) * n_x, T * n_x))
    F0[:n_x] = np.eye(n_x)
    for i in range(1, T + 1):
        rows = slice(i * n_x, (i + 1) * n_x)
        prev = slice((i - 1) * n_x, i * n_x)
        A = A_list[i - 1]
        F0[rows] = A @ F0[prev]
        # propagate row i-1, then place the fresh diagonal entries
        Fu[rows, : (i - 1) * n_u] = A @ Fu[prev, : (i - 1) * n_u]
        Fu[rows, (i - 1) * n_u : i * n_u] = B_list[i - 1]
        Fd[rows, : (i - 1) * n_x] = A @ Fd[prev, : (i - 1) * n_x]
        Fd[rows, (i - 1) * n_x : i * n_x] = np.eye(n_x)
    Fzeta = np.hstack([F0, Fd])
    return StackedBlocks(F0=F0, Fu=Fu, Fd_tilde=Fd, Fzeta=Fzeta,
                         A_list=A_list, B_list=B_list)


@dataclass(frozen=True)
class PolicyMatrix:
    """Block-diagonal feedback layout pairing u_k with disturbance block k of zeta.

    The assembled matrix is (T*n_u, (T+1)*n_x): K_k occupies row block k and
    column block k, and the final column block (d_{T-1}) is structurally zero.
    """

    blocks: np.ndarray = field()  # (T, n_u, n_x)

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=float)
        if b.ndim != 3:
            raise ValueError(f"blocks must be (T, n_u, n_x), got shape {b.shape}")
        object.__setattr__(self, "blocks", b)

    @classmethod
    def zeros(cls, T: int, n_u: int, n_x: int) -> "PolicyMatrix":
        return cls(np.zeros((T, n_u, n_x)))

    @property
    def horizon(self) -> int:
        return self.blocks.shape[0]

    @property
    def n_u(self) -> int:
        return self.blocks.shape[1]

    @property
    def n_x(self) -> int:
        return self.blocks.shape[2]

    @cached_property
    def assembled(self) -> np.ndarray:
        T, n_u, n_x = self.blocks.shape
        K = np.zeros((T * n_u, (T + 1) * n_x))
        for k in range(T):
            K[k * n_u : (k + 1) * n_u, k * n_x : (k + 1) * n_x] = self.blocks[k]
        return K

    def apply_zeta(self, zeta: np.ndarray) -> np.ndarray:
        """K @ zeta via the block structure; zeta (dim,) or batched (m, dim)."""
        T, n_u, n_x = self.blocks.shape
        zeta = np.asarray(zeta, dtype=float)
        batched = zeta.ndim == 2
        Z = zeta if batched else zeta[None, :]
        Zb = Z[:, : T * n_x].reshape(Z.shape[0], T, n_x)
        out = np.einsum("kij,mkj->mki", self.blocks, Zb).reshape(Z.shape[0], T * n_u)
        return out if batched else out[0]

    def apply_transpose(self, a: np.ndarray) -> np.ndarray:
        """K^T a for stacked a of length T*n_u; the result's final block is zero."""
        T, n_u, n_x = self.blocks.shape
        a = np.asarray(a, dtype=float).reshape(T, n_u)
        out = np.zeros((T + 1) * n_x)
        out[: T * n_x] = np.einsum("kij,ki->kj", self.blocks, a).reshape(-1)
        return out


def stacked_response(blocks: StackedBlocks, K: PolicyMatrix,
                     delta_u: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """Compact linearized response Fu (delta_u + K zeta) + Fzeta zeta."""
    delta_u = np.asarray(delta_u, dtype=float).reshape(-1)
    zeta = np.asarray(zeta, dtype=float).reshape(-1)
    return blocks.Fu @ (delta_u + K.apply_zeta(zeta)) + blocks.Fzeta @ zeta


def response_matrix(blocks: StackedBlocks, K: PolicyMatrix) -> np.ndarray:
    """Dense disturbance-to-state map Fu K + Fzeta."""
    return blocks.Fu @ K.assembled + blocks.Fzeta
