"""Neural KO / HiKO codecs over the Plotkin tree.

Each branch node with half-length ``l`` owns three networks, keyed by
``(path, role)``:

``enc``
    g~, maps (u, v) to the right half ``g~(u, v) + alpha * (u * v)``.
``dec_left``
    f~_{2i-1}, maps (y1, y2) to a correction of ``LSE(y1, y2)``, the soft
    input for the order-(r-1) child ``v`` (the right subtree).
``dec_right``
    f~_{2i}, maps (y1, y2, y_v, v_hat) to a correction of
    ``y1 + v_hat * y2``, the soft input for the order-r child ``u``.

XOR is realised in the bipolar domain as an element-wise product. With all
network weights zero and every alpha equal to one, the encoder is BPSK-mapped
RM encoding and the decoder reduces to Dumer's algorithm.

By default networks are vector-valued (``2l -> l`` and ``4l -> l``). With
``coordinatewise=True`` they act on each coordinate independently
(``2 -> 1`` and ``4 -> 1``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hiko.channel import modulate_bpsk, normalize_power, normalize_power_backward
from hiko.classical import (
    L_MAX,
    MAX_FIRST_ORDER_M,
    clamp,
    first_order_map,
    hard_decision,
    lse,
    lse_grad,
)
from hiko.codes import CodeTree, NodeKind, TreeNode, build_plotkin_tree, rm_encode
from hiko.nn import Mlp

ROLES = ("enc", "dec_left", "dec_right")
DECODER_ROLES = ("dec_left", "dec_right")


@dataclass
class NeuralCodec:
    tree: CodeTree
    nets: dict[tuple[str, str], Mlp]
    enc_hidden: int = 32
    dec_hidden: int = 120
    dropout: float = 0.1
    coordinatewise: bool = False
    frozen: set[tuple[str, str]] = field(default_factory=set)

    @classmethod
    def create(
        cls,
        m: int,
        r: int,
        enc_hidden: int = 32,
        dec_hidden: int = 120,
        dropout: float = 0.1,
        coordinatewise: bool = False,
        rng: np.random.Generator | None = None,
        zero_output: bool | tuple[str, ...] = False,
    ) -> NeuralCodec:
        """Build a codec for KO(m, r).

        Without ``rng`` every network is zero and every alpha is one (the
        classical-reduction point); with ``rng`` networks are randomly
        initialised. ``zero_output`` (True, or a tuple of roles) keeps those
        final layers at zero, so the affected networks start at the classical
        reduction while still receiving gradients.
        """
        tree = build_plotkin_tree(m, r)
        nets = {}
        for node in tree.branches():
            ell = node.n // 2
            block = 1 if coordinatewise else ell
            nets[(node.path, "enc")] = Mlp(2 * block, enc_hidden, block, True, dropout)
            nets[(node.path, "dec_left")] = Mlp(2 * block, dec_hidden, block, False, dropout)
            nets[(node.path, "dec_right")] = Mlp(4 * block, dec_hidden, block, False, dropout)
        codec = cls(tree, nets, enc_hidden, dec_hidden, dropout, coordinatewise)
        if rng is not None:
            for key in codec.keys():
                nets[key].init_random(rng, zero_output is True or key[1] in (zero_output or ()))
        return codec

    @property
    def m(self) -> int:
        return self.tree.params.m

    @property
    def r(self) -> int:
        return self.tree.params.r

    @property
    def k(self) -> int:
        return self.tree.k

    @property
    def n(self) -> int:
        return self.tree.n

    def keys(self) -> list[tuple[str, str]]:
        """Network keys in canonical order: tree depth-first, then role."""
        return [(node.path, role) for node in self.tree.branches() for role in ROLES]

    def set_mode(self, roles, training: bool) -> None:
        for (_, role), net in self.nets.items():
            if role in roles:
                net.train(training)

    def touch(self) -> None:
        for net in self.nets.values():
            net.touch()

    # -- packing helpers -------------------------------------------------

    def _pack(self, parts: list[np.ndarray]) -> np.ndarray:
        if self.coordinatewise:
            return np.stack(parts, axis=-1)
        return np.concatenate(parts, axis=-1)

    def _unpack(self, x: np.ndarray, count: int) -> list[np.ndarray]:
        if self.coordinatewise:
            return [x[..., i] for i in range(count)]
        return np.split(x, count, axis=-1)

    def _out(self, y: np.ndarray) -> np.ndarray:
        return y[..., 0] if self.coordinatewise else y

    def _grad_out(self, g: np.ndarray) -> np.ndarray:
        return g[..., None] if self.coordinatewise else g

    # -- encoder ---------------------------------------------------------

    def encode(self, msg: np.ndarray, rng=None, normalize: bool = True) -> np.ndarray:
        return self.encode_forward(msg, rng, normalize)[0]

    def encode_forward(self, msg: np.ndarray, rng=None, normalize: bool = True):
        msg = np.asarray(msg)
        if msg.shape[-1:] != (self.k,):
            raise ValueError(f"message length must be {self.k}, got shape {msg.shape}")
        caches: dict[str, tuple] = {}
        raw = self._enc(self.tree, msg, rng, caches)
        out = normalize_power(raw) if normalize else raw
        return out, (raw, normalize, caches)

    def _enc(self, node: TreeNode, msg, rng, caches) -> np.ndarray:
        kind = node.kind
        if kind is NodeKind.REPETITION:
            return np.repeat(modulate_bpsk(msg), node.n, axis=-1)
        if kind is NodeKind.FULL_RATE:
            return modulate_bpsk(msg)
        k_left = node.left.k
        u = self._enc(node.left, msg[..., :k_left], rng, caches)
        v = self._enc(node.right, msg[..., k_left:], rng, caches)
        net = self.nets[(node.path, "enc")]
        out, cache = net.forward(self._pack([u, v]), skip=self._grad_out(u * v), rng=rng)
        caches[node.path] = (u, v, cache)
        return np.concatenate([u, self._out(out)], axis=-1)

    def encode_backward(self, grad: np.ndarray, state) -> dict[tuple[str, str], dict]:
        """Gradients of the encoder networks given d(loss)/d(encoder output)."""
        raw, normalize, caches = state
        if normalize:
            grad = normalize_power_backward(raw, grad)
        grads: dict[tuple[str, str], dict] = {}
        self._enc_back(self.tree, grad, caches, grads)
        return grads

    def _enc_back(self, node: TreeNode, grad, caches, grads) -> None:
        if node.is_leaf:
            return
        half = node.n // 2
        g_u, g_out = grad[..., :half], grad[..., half:]
        u, v, cache = caches[node.path]
        net = self.nets[(node.path, "enc")]
        pgrads, g_x, g_skip = net.backward(self._grad_out(g_out), cache)
        gx_u, gx_v = self._unpack(g_x, 2)
        g_skip = self._out(g_skip)
        grads[(node.path, "enc")] = pgrads
        self._enc_back(node.left, g_u + gx_u + g_skip * v, caches, grads)
        self._enc_back(node.right, gx_v + g_skip * u, caches, grads)

    # -- hybrid decoder ----------------------------------------------------

    def decode(self, llr: np.ndarray, rng=None) -> np.ndarray:
        return self.decode_forward(llr, rng)[0]

    def decode_forward(self, llr: np.ndarray, rng=None):
        llr = np.asarray(llr, dtype=np.float64)
        if llr.shape[-1:] != (self.n,):
            raise ValueError(f"LLR length must be {self.n}, got shape {llr.shape}")
        caches: dict[str, tuple] = {}
        soft, _ = self._dec(self.tree, llr, rng, caches)
        return soft, caches

    def _dec(self, node: TreeNode, llr, rng, caches) -> tuple[np.ndarray, np.ndarray]:
        # Returns (soft message bits, hard re-encoded codeword bits).
        if node.is_leaf:
            soft = soft_map_leaf(node, llr)
            caches[node.path] = llr
            bits = hard_decision(soft)
            word = np.repeat(bits, node.n, axis=-1) if node.kind is NodeKind.REPETITION else bits
            return soft, word
        half = node.n // 2
        y1, y2 = llr[..., :half], llr[..., half:]
        f_v = self.nets[(node.path, "dec_left")]
        f_u = self.nets[(node.path, "dec_right")]

        corr_v, cache_v = f_v.forward(self._pack([y1, y2]), rng=rng)
        pre_v = self._out(corr_v) + lse(y1, y2)
        llr_v = clamp(pre_v)
        soft_v, word_v = self._dec(node.right, llr_v, rng, caches)
        v_hat = modulate_bpsk(word_v)

        corr_u, cache_u = f_u.forward(self._pack([y1, y2, llr_v, v_hat]), rng=rng)
        pre_u = self._out(corr_u) + y1 + v_hat * y2
        soft_u, word_u = self._dec(node.left, clamp(pre_u), rng, caches)

        caches[node.path] = (y1, y2, pre_v, pre_u, v_hat, cache_v, cache_u)
        return np.concatenate([soft_u, soft_v], axis=-1), np.concatenate(
            [word_u, word_u ^ word_v], axis=-1
        )

    def decode_backward(self, grad_soft: np.ndarray, caches):
        """Gradients of decoder networks and of the input LLRs.

        The hard estimate v_hat is a constant here: no gradient passes through
        the sign decision.
        """
        grads: dict[tuple[str, str], dict] = {}
        g_llr = self._dec_back(self.tree, grad_soft, caches, grads)
        return grads, g_llr

    def _dec_back(self, node: TreeNode, grad, caches, grads) -> np.ndarray:
        if node.is_leaf:
            return soft_map_leaf_backward(node, caches[node.path], grad)
        y1, y2, pre_v, pre_u, v_hat, cache_v, cache_u = caches[node.path]
        k_left = node.left.k
        g_soft_u, g_soft_v = grad[..., :k_left], grad[..., k_left:]

        g_pre_u = self._dec_back(node.left, g_soft_u, caches, grads) * (np.abs(pre_u) <= L_MAX)
        pg_u, gx_u, _ = self.nets[(node.path, "dec_right")].backward(self._grad_out(g_pre_u), cache_u)
        grads[(node.path, "dec_right")] = pg_u
        gx_y1, gx_y2, gx_lv, _ = self._unpack(gx_u, 4)
        g_y1 = g_pre_u + gx_y1
        g_y2 = v_hat * g_pre_u + gx_y2

        g_llr_v = self._dec_back(node.right, g_soft_v, caches, grads) + gx_lv
        g_pre_v = g_llr_v * (np.abs(pre_v) <= L_MAX)
        pg_v, gx_v, _ = self.nets[(node.path, "dec_left")].backward(self._grad_out(g_pre_v), cache_v)
        grads[(node.path, "dec_left")] = pg_v
        gx_y1, gx_y2 = self._unpack(gx_v, 2)
        d1, d2 = lse_grad(y1, y2)
        g_y1 = g_y1 + gx_y1 + d1 * g_pre_v
        g_y2 = g_y2 + gx_y2 + d2 * g_pre_v
        return np.concatenate([g_y1, g_y2], axis=-1)


def ko_encode(codec: NeuralCodec, msg: np.ndarray, rng=None) -> np.ndarray:
    """Encode a batch of messages and normalize the batch to unit power."""
    return codec.encode(msg, rng)


def ko_decode_hybrid(codec: NeuralCodec, llr: np.ndarray, rng=None) -> np.ndarray:
    """Soft message bits (LLRs) from channel LLRs via hybrid recursive decoding."""
    return codec.decode(llr, rng)


def soft_map_leaf(leaf: TreeNode, llr: np.ndarray) -> np.ndarray:
    """Exact soft-MAP at a leaf: summed LLR for repetition, passthrough for full rate."""
    kind = leaf.kind
    if kind is NodeKind.REPETITION:
        return clamp(np.sum(llr, axis=-1, keepdims=True))
    if kind is NodeKind.FULL_RATE:
        return clamp(llr)
    raise ValueError(f"node {leaf.path!r} is not a leaf")


def soft_map_leaf_backward(leaf: TreeNode, llr: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if leaf.kind is NodeKind.REPETITION:
        total = np.sum(llr, axis=-1, keepdims=True)
        return np.broadcast_to(grad * (np.abs(total) <= L_MAX), llr.shape).copy()
    return grad * (np.abs(llr) <= L_MAX)


def reencode_hard(node: TreeNode, soft: np.ndarray) -> np.ndarray:
    """Harden soft message bits, re-encode them on ``node``'s subtree, map to +-1."""
    soft = np.asarray(soft)
    if soft.shape[-1:] != (node.k,):
        raise ValueError(f"expected {node.k} soft bits, got shape {soft.shape}")
    return modulate_bpsk(rm_encode(node, hard_decision(soft)))


def llr_propagate(llr: np.ndarray, m: int, r: int) -> np.ndarray:
    """KO-LLR baseline: recursive soft propagation without hard feedback.

    Order-0 codes sum their LLRs, full-rate codes pass them through and
    first-order codes contract the LLRs with their codebook and marginalise
    each message bit. Higher orders split the halves, combine them with the
    tanh-log rule into the v input, and feed the u branch with the halves
    combined through the soft sign tanh(L_v / 2).
    """
    llr = clamp(np.asarray(llr, dtype=np.float64))
    if llr.shape[-1:] != (2**m,):
        raise ValueError(f"LLR length must be {2**m}, got shape {llr.shape}")
    build_plotkin_tree(m, r)  # domain check
    return _propagate(llr, m, r)


def _propagate(llr: np.ndarray, m: int, r: int) -> np.ndarray:
    if r == 0:
        return clamp(np.sum(llr, axis=-1, keepdims=True))
    if r == m:
        return clamp(llr)
    if r == 1 and m <= MAX_FIRST_ORDER_M:
        return first_order_map(m, llr)[1]
    half = 2 ** (m - 1)
    y1, y2 = llr[..., :half], llr[..., half:]
    llr_v = clamp(lse(y1, y2))
    llr_u = clamp(y1 + np.tanh(0.5 * llr_v) * y2)
    soft_u = _propagate(llr_u, m - 1, r)
    soft_v = _propagate(llr_v, m - 1, r - 1)
    return clamp(np.concatenate([soft_u, soft_v], axis=-1))
