"""Reed-Muller codes through the Plotkin construction.

A code RM(m, r) is split recursively into RM(m-1, r) (the left child, ``u``)
and RM(m-1, r-1) (the right child, ``v``) until a repetition code (r = 0) or a
full-rate code (r = m) is reached. Nodes are addressed by their path from the
root, a string over ``{"L", "R"}``.

Message bits are laid out depth-first with the left child first, so every
leaf owns a contiguous slice of the message.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

MAX_M = 20
MAX_GENERATOR_M = 12


@dataclass(frozen=True)
class CodeParams:
    """Parameters of RM(m, r): block length n = 2^m and dimension k."""

    m: int
    r: int
    n: int
    k: int

    @property
    def rate(self) -> float:
        return self.k / self.n


def code_params(m: int, r: int) -> CodeParams:
    """Return the block length and dimension of RM(m, r)."""
    _check_domain(m, r, MAX_M)
    return CodeParams(m=m, r=r, n=2**m, k=sum(comb(m, i) for i in range(r + 1)))


def _check_domain(m: int, r: int, max_m: int) -> None:
    if isinstance(m, bool) or isinstance(r, bool) or int(m) != m or int(r) != r:
        raise TypeError(f"m and r must be integers, got m={m!r}, r={r!r}")
    if m < 0 or r < 0:
        raise ValueError(f"m and r must be non-negative, got m={m}, r={r}")
    if r > m:
        raise ValueError(f"order r={r} exceeds m={m}")
    if m > max_m:
        raise ValueError(f"m={m} exceeds the supported maximum {max_m}")


class NodeKind(enum.Enum):
    BRANCH = "branch"
    REPETITION = "repetition"
    FULL_RATE = "full_rate"


@dataclass(frozen=True)
class TreeNode:
    """A node of the Plotkin tree.

    Branch nodes carry both children; leaves carry neither.
    """

    params: CodeParams
    path: str
    left: TreeNode | None = None
    right: TreeNode | None = None

    @property
    def kind(self) -> NodeKind:
        if self.left is not None:
            return NodeKind.BRANCH
        if self.params.r == 0:
            return NodeKind.REPETITION
        return NodeKind.FULL_RATE

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def k(self) -> int:
        return self.params.k

    def walk(self):
        """Yield nodes in depth-first order, parent before children, left first."""
        yield self
        if self.left is not None:
            yield from self.left.walk()
            yield from self.right.walk()

    def leaves(self) -> list[TreeNode]:
        return [node for node in self.walk() if node.is_leaf]

    def branches(self) -> list[TreeNode]:
        return [node for node in self.walk() if not node.is_leaf]

    def find(self, path: str) -> TreeNode:
        """Return the descendant at ``path`` (relative to this node)."""
        node = self
        for step in path:
            if node.is_leaf:
                raise KeyError(f"path {path!r} runs past a leaf")
            if step == "L":
                node = node.left
            elif step == "R":
                node = node.right
            else:
                raise KeyError(f"invalid path character {step!r} in {path!r}")
        return node


# A CodeTree is represented by its root node.
CodeTree = TreeNode


def build_plotkin_tree(m: int, r: int) -> CodeTree:
    """Build the Plotkin decomposition of RM(m, r)."""
    _check_domain(m, r, MAX_M)
    return _build(m, r, "")


@lru_cache(maxsize=None)
def _build(m: int, r: int, path: str) -> TreeNode:
    params = code_params(m, r)
    if r == 0 or r == m:
        return TreeNode(params, path)
    return TreeNode(params, path, _build(m - 1, r, path + "L"), _build(m - 1, r - 1, path + "R"))


def plotkin(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Return the concatenation (u, u XOR v) along the last axis."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"plotkin needs equal shapes, got {u.shape} and {v.shape}")
    return np.concatenate([u, u ^ v], axis=-1)


@dataclass(frozen=True)
class LayoutEntry:
    leaf_path: str
    offset: int
    length: int


def message_layout(tree: CodeTree) -> list[LayoutEntry]:
    """Depth-first, left-first contiguous placement of each leaf's message bits."""
    entries = []
    offset = 0
    for leaf in tree.leaves():
        entries.append(LayoutEntry(leaf.path, offset, leaf.k))
        offset += leaf.k
    return entries


def rm_encode(tree: CodeTree, msg: np.ndarray) -> np.ndarray:
    """Encode message bits of shape (..., k) into codewords of shape (..., n)."""
    msg = np.asarray(msg)
    if msg.shape[-1:] != (tree.k,):
        raise ValueError(f"message length must be {tree.k}, got shape {msg.shape}")
    return _encode(tree, msg.astype(np.uint8, copy=False))


def _encode(node: TreeNode, msg: np.ndarray) -> np.ndarray:
    kind = node.kind
    if kind is NodeKind.REPETITION:
        return np.repeat(msg, node.n, axis=-1)
    if kind is NodeKind.FULL_RATE:
        return msg.copy()
    k_left = node.left.k
    u = _encode(node.left, msg[..., :k_left])
    v = _encode(node.right, msg[..., k_left:])
    return np.concatenate([u, u ^ v], axis=-1)


def generator_matrix(m: int, r: int) -> np.ndarray:
    """Generator matrix whose row i is the encoding of the unit message e_i."""
    _check_domain(m, r, MAX_GENERATOR_M)
    tree = build_plotkin_tree(m, r)
    return rm_encode(tree, np.eye(tree.k, dtype=np.uint8))
