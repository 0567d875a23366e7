"""Dumer's recursive soft-decision decoder for Reed-Muller codes."""

from __future__ import annotations

from functools import lru_cache
from itertools import product

import numpy as np

from hiko.codes import CodeTree, NodeKind, TreeNode, build_plotkin_tree, rm_encode

L_MAX = 30.0
# Largest m for which an RM(m, 1) subtree is decoded by enumerating its codebook.
MAX_FIRST_ORDER_M = 10


def lse(a, b):
    """Soft XOR of two LLRs: log((1 + e^(a+b)) / (e^a + e^b)), overflow free."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = (
        np.maximum(a + b, 0.0)
        - np.maximum(a, b)
        + np.log1p(np.exp(-np.abs(a + b)))
        - np.log1p(np.exp(-np.abs(a - b)))
    )
    return out if out.ndim else float(out)


def lse_grad(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of ``lse`` with respect to a and b."""
    s = _sigmoid(a + b)
    return s - _sigmoid(a - b), s - _sigmoid(b - a)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def clamp(x: np.ndarray) -> np.ndarray:
    return np.clip(x, -L_MAX, L_MAX)


def hard_decision(llr: np.ndarray) -> np.ndarray:
    """Bit 1 where the LLR is negative; a zero LLR decides 0."""
    return (np.asarray(llr) < 0).astype(np.uint8)


def dumer_decode(
    tree: CodeTree, llr: np.ndarray, first_order_leaves: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Decode channel LLRs of shape (..., n).

    Returns the hard message bits and their LLRs, both of shape (..., k), laid
    out depth-first with the left child first.

    By default the recursion runs down to the repetition and full-rate leaves
    of the Plotkin tree. With ``first_order_leaves`` the recursion stops at
    RM(m, 1) subtrees (m <= MAX_FIRST_ORDER_M) and decodes them by exact
    bitwise MAP over their codebook, which is considerably stronger.
    """
    llr = np.asarray(llr, dtype=np.float64)
    if llr.shape[-1:] != (tree.n,):
        raise ValueError(f"LLR length must be {tree.n}, got shape {llr.shape}")
    bits, soft, _ = _decode(tree, llr, first_order_leaves)
    return bits, soft


@lru_cache(maxsize=None)
def _first_order_codebook(m: int) -> tuple[np.ndarray, np.ndarray]:
    tree = build_plotkin_tree(m, 1)
    msgs = np.array(list(product((0, 1), repeat=tree.k)), dtype=np.uint8)
    return msgs, rm_encode(tree, msgs)


def first_order_map(m: int, llr: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bitwise MAP decoding of RM(m, 1) by codebook enumeration."""
    msgs, words = _first_order_codebook(m)
    # Codeword log-likelihoods up to a common constant.
    score = 0.5 * (llr @ (1.0 - 2.0 * words.T))
    weights = np.exp(score - score.max(axis=-1, keepdims=True))
    zero = weights @ (msgs == 0).astype(np.float64)
    one = weights @ (msgs == 1).astype(np.float64)
    with np.errstate(divide="ignore"):
        soft = clamp(np.log(zero) - np.log(one))
    bits = hard_decision(soft)
    return bits, soft, rm_encode(build_plotkin_tree(m, 1), bits)


def _decode(
    node: TreeNode, llr: np.ndarray, first_order: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Returns (message bits, message LLRs, re-encoded codeword bits).
    if first_order and node.params.r == 1 and 1 < node.params.m <= MAX_FIRST_ORDER_M:
        return first_order_map(node.params.m, llr)
    kind = node.kind
    if kind is NodeKind.REPETITION:
        soft = clamp(np.sum(llr, axis=-1, keepdims=True))
        bits = hard_decision(soft)
        return bits, soft, np.repeat(bits, node.n, axis=-1)
    if kind is NodeKind.FULL_RATE:
        soft = clamp(llr)
        bits = hard_decision(soft)
        return bits, soft, bits
    half = node.n // 2
    first, second = llr[..., :half], llr[..., half:]
    v_bits, v_soft, v_word = _decode(node.right, clamp(lse(first, second)), first_order)
    u_llr = clamp(first + (1.0 - 2.0 * v_word) * second)
    u_bits, u_soft, u_word = _decode(node.left, u_llr, first_order)
    return (
        np.concatenate([u_bits, v_bits], axis=-1),
        np.concatenate([u_soft, v_soft], axis=-1),
        np.concatenate([u_word, u_word ^ v_word], axis=-1),
    )
