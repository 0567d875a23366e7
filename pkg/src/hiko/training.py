"""Hierarchical KO training: constituents, parameter mapping, progressive unfreezing."""

from __future__ import annotations

import copy
import enum
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from hiko.channel import llr_from_awgn, make_rng, noise_sigma
from hiko.checkpoint import Checkpoint
from hiko.classical import hard_decision
from hiko.codes import CodeParams, TreeNode, code_params
from hiko.errors import ConfigError, StructureError
from hiko.ko import DECODER_ROLES, NeuralCodec
from hiko.nn import Adam, LrSchedule

log = logging.getLogger(__name__)

Key = tuple[str, str]

# init mode -> argument for NeuralCodec.create(zero_output=...)
INIT_MODES = {"gaussian": False, "classical": True, "classical-encoder": ("enc",)}


@dataclass
class TrainConfig:
    epochs: int = 1
    batch: int = 4000
    minibatch: int = 1000
    snr_enc_db: float = 0.0
    snr_dec_db: float = -1.0
    dec_steps_per_epoch: int = 10
    enc_steps_per_epoch: int = 2
    eta_max_new: float = 2e-4
    eta_max_pretrained: float = 1e-4
    seed: int = 0
    snr_convention: str = "esn0"
    val_messages: int = 10_000
    val_snr_db: float | None = None
    enc_hidden: int = 32
    dec_hidden: int = 120
    dropout: float = 0.1
    coordinatewise: bool = False
    # "gaussian": every layer random; "classical": random hidden layers but zero
    # output layers, so the codec starts at the classical reduction;
    # "classical-encoder": only the encoder networks start that way
    init: str = "classical-encoder"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.minibatch < 1 or self.batch < 1 or self.batch % self.minibatch:
            raise ConfigError(f"minibatch {self.minibatch} must divide batch {self.batch}")
        if self.dec_steps_per_epoch < 0 or self.enc_steps_per_epoch < 0:
            raise ConfigError("step counts must be non-negative")
        if self.val_messages < 1:
            raise ConfigError("val_messages must be positive")
        if self.snr_convention not in ("esn0", "ebn0"):
            raise ConfigError(f"unknown snr_convention {self.snr_convention!r}")
        if self.init not in INIT_MODES:
            raise ConfigError(f"unknown init {self.init!r}")

    @property
    def validation_snr_db(self) -> float:
        return self.snr_dec_db + 1.0 if self.val_snr_db is None else self.val_snr_db

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


class Status(enum.Enum):
    FROZEN = "frozen"
    NEW = "new"
    UNFROZEN_PRETRAINED = "unfrozen_pretrained"


def unfreeze_schedule(n_constituents: int, epochs: int) -> list[int]:
    """Epochs t_j = floor(j * T / (K + 1)) at which constituent j is released."""
    if n_constituents < 1:
        raise ValueError("need at least one constituent")
    if epochs < n_constituents + 1:
        raise ValueError(f"T={epochs} is too short for K={n_constituents} constituents")
    return [j * epochs // (n_constituents + 1) for j in range(1, n_constituents + 1)]


def component_lr(status: Status, step: float, total_steps: int, cfg: TrainConfig | None = None) -> float:
    if status is Status.FROZEN:
        return 0.0
    cfg = cfg or TrainConfig()
    eta = cfg.eta_max_new if status is Status.NEW else cfg.eta_max_pretrained
    return LrSchedule(eta, total_steps).lr_at(step)


# -- mapping -------------------------------------------------------------


@dataclass
class ConstituentSpec:
    """A pre-trained constituent and where its root attaches in the target tree."""

    checkpoint: Checkpoint
    anchor_path: str | None = None
    checkpoint_id: str = ""

    @property
    def params(self) -> CodeParams:
        return code_params(self.checkpoint.m, self.checkpoint.r)


def _overlaps(a: str, b: str) -> bool:
    return a.startswith(b) or b.startswith(a)


def find_anchors(tree: TreeNode, wanted: list[CodeParams], fixed: list[str | None] | None = None) -> list[str]:
    """Pick a subtree root for every constituent.

    Explicit anchors in ``fixed`` are kept; the others are chosen greedily in
    order, deepest first and then leftmost (``L`` before ``R``), avoiding any
    overlap with anchors already taken.
    """
    fixed = fixed or [None] * len(wanted)
    taken = [a for a in fixed if a is not None]
    for i, a in enumerate(taken):
        for b in taken[i + 1 :]:
            if _overlaps(a, b):
                raise StructureError(f"anchors {a!r} and {b!r} overlap")
    out = []
    for params, anchor in zip(wanted, fixed):
        if anchor is not None:
            out.append(anchor)
            continue
        candidates = [
            node.path
            for node in tree.walk()
            if node.params == params and not any(_overlaps(node.path, t) for t in taken)
        ]
        if not candidates:
            raise StructureError(f"no free subtree for constituent ({params.m}, {params.r})")
        best = min(candidates, key=lambda p: (-len(p), p))
        taken.append(best)
        out.append(best)
    return out


def constituent_keys(target: NeuralCodec, source: Checkpoint, anchor: str) -> list[Key]:
    return [(anchor + path, role) for path, role in source.keys()]


def map_constituent(target: NeuralCodec, source: Checkpoint, anchor_path: str) -> NeuralCodec:
    """Copy every network of ``source`` into the subtree at ``anchor_path`` and freeze it."""
    try:
        node = target.tree.find(anchor_path)
    except KeyError as exc:
        raise StructureError(str(exc)) from exc
    if (node.params.m, node.params.r) != (source.m, source.r):
        raise StructureError(
            f"subtree at {anchor_path!r} is ({node.params.m}, {node.params.r}), "
            f"constituent is ({source.m}, {source.r})"
        )
    widths = (target.enc_hidden, target.dec_hidden, target.coordinatewise)
    if widths != (source.enc_hidden, source.dec_hidden, source.coordinatewise):
        raise StructureError(
            f"network widths {widths} differ from the constituent's "
            f"{(source.enc_hidden, source.dec_hidden, source.coordinatewise)}"
        )
    keys = constituent_keys(target, source, anchor_path)
    clash = [k for k in keys if k in target.frozen]
    if clash:
        raise StructureError(f"anchor {anchor_path!r} overlaps already transferred networks {clash[0]}")
    for (path, role), key in zip(source.keys(), keys):
        net = target.nets[key]
        for name, p in net.params.items():
            src = source.arrays[(path, role)][name]
            if src.shape != p.shape:
                raise StructureError(f"shape mismatch at {key}/{name}")
            p[...] = src
        net.touch()
    target.frozen.update(keys)
    return target


def assemble_hiko(target: CodeParams, constituents: list[ConstituentSpec], cfg: TrainConfig):
    """Randomly initialise a HiKO codec, then map and freeze every constituent.

    Returns ``(codec, groups, anchors)`` where ``groups[j]`` lists the network
    keys transferred from constituent j.
    """
    codec = NeuralCodec.create(
        target.m,
        target.r,
        cfg.enc_hidden,
        cfg.dec_hidden,
        cfg.dropout,
        cfg.coordinatewise,
        rng=_streams(cfg.seed)["init"],
        zero_output=INIT_MODES[cfg.init],
    )
    anchors = find_anchors(codec.tree, [c.params for c in constituents], [c.anchor_path for c in constituents])
    groups = []
    for spec, anchor in zip(constituents, anchors):
        map_constituent(codec, spec.checkpoint, anchor)
        groups.append(constituent_keys(codec, spec.checkpoint, anchor))
    return codec, groups, anchors


# -- losses and gradients -------------------------------------------------


def bce_with_logits(soft: np.ndarray, bits: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean BCE of sigmoid(soft) = P(bit = 0) against ``bits``, with its gradient."""
    z = (1.0 - 2.0 * bits) * soft
    loss = np.logaddexp(0.0, -z)
    grad = -(1.0 - 2.0 * bits) * np.exp(-np.logaddexp(0.0, z)) / soft.size
    return float(loss.mean()), grad


def loss_and_grads(
    codec: NeuralCodec,
    msgs: np.ndarray,
    noise: np.ndarray,
    sigma: float,
    roles=("enc", "dec_left", "dec_right"),
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[Key, dict[str, np.ndarray]]]:
    """End-to-end loss through encoder, AWGN (given standard-normal ``noise``) and decoder."""
    x, enc_state = codec.encode_forward(msgs, rng)
    llr = llr_from_awgn(x + sigma * noise, sigma)
    soft, dec_state = codec.decode_forward(llr, rng)
    loss, g_soft = bce_with_logits(soft, msgs)
    grads, g_llr = codec.decode_backward(g_soft, dec_state)
    grads = {k: g for k, g in grads.items() if k[1] in roles}
    if "enc" in roles:
        grads.update(codec.encode_backward(g_llr * 2.0 / sigma**2, enc_state))
    return loss, grads


def end_to_end_loss(codec: NeuralCodec, msgs, noise, sigma: float) -> float:
    x = codec.encode(msgs)
    soft = codec.decode(llr_from_awgn(x + sigma * noise, sigma))
    return bce_with_logits(soft, msgs)[0]


# -- training loop --------------------------------------------------------


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "data", "dropout", "validation")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: make_rng(child) for name, child in zip(names, children)}


@dataclass
class _Probe:
    msgs: np.ndarray
    noise: np.ndarray

    @classmethod
    def draw(cls, codec: NeuralCodec, count: int, rng) -> _Probe:
        return cls(rng.integers(0, 2, (count, codec.k), dtype=np.uint8), rng.standard_normal((count, codec.n)))

    def run(self, codec: NeuralCodec, sigma: float) -> tuple[float, float]:
        """Eval-mode (BCE loss, BER) on the fixed probe set."""
        x = codec.encode(self.msgs)
        soft = codec.decode(llr_from_awgn(x + sigma * self.noise, sigma))
        loss = bce_with_logits(soft, self.msgs)[0]
        return loss, float(np.mean(hard_decision(soft) != self.msgs))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    codec: NeuralCodec
    history: list[dict] = field(default_factory=list)


def _status(key: Key, codec: NeuralCodec, pretrained: set[Key]) -> Status:
    if key in codec.frozen:
        return Status.FROZEN
    return Status.UNFROZEN_PRETRAINED if key in pretrained else Status.NEW


def _run(codec: NeuralCodec, cfg: TrainConfig, groups: list[list[Key]], extra_meta: dict, on_epoch=None) -> TrainResult:
    streams = _streams(cfg.seed)
    rate = codec.k / codec.n
    sigma_dec = noise_sigma(cfg.snr_dec_db, rate, cfg.snr_convention)
    sigma_enc = noise_sigma(cfg.snr_enc_db, rate, cfg.snr_convention)
    sigma_val = noise_sigma(cfg.validation_snr_db, rate, cfg.snr_convention)
    probe = _Probe.draw(codec, cfg.val_messages, streams["validation"])
    schedule = unfreeze_schedule(len(groups), cfg.epochs) if groups else []
    pretrained = {key for group in groups for key in group}
    chunks = cfg.batch // cfg.minibatch
    adam = Adam()
    dec_total = max(1, cfg.epochs * cfg.dec_steps_per_epoch)
    enc_total = max(1, cfg.epochs * cfg.enc_steps_per_epoch)
    step_count = {"dec": 0, "enc": 0}

    def optimise(phase: str, roles, sigma: float, total: int) -> float:
        codec.set_mode(("enc",), phase == "enc")
        codec.set_mode(DECODER_ROLES, phase == "dec")
        acc: dict[Key, dict[str, np.ndarray]] = {}
        losses = []
        for _ in range(chunks):
            msgs = streams["data"].integers(0, 2, (cfg.minibatch, codec.k), dtype=np.uint8)
            noise = streams["data"].standard_normal((cfg.minibatch, codec.n))
            loss, grads = loss_and_grads(codec, msgs, noise, sigma, roles, streams["dropout"])
            losses.append(loss)
            for key, g in grads.items():
                slot = acc.setdefault(key, {name: np.zeros_like(v) for name, v in g.items()})
                for name, v in g.items():
                    slot[name] += v / chunks
        step = step_count[phase]
        for key, g in acc.items():
            lr = component_lr(_status(key, codec, pretrained), step, total, cfg)
            if lr:
                adam.step(_named(key, codec.nets[key].params), _named(key, g), lr)
        step_count[phase] += 1
        codec.touch()
        codec.set_mode(("enc",) + DECODER_ROLES, False)
        return float(np.mean(losses))

    initial_loss, initial_ber = probe.run(codec, sigma_dec)[0], probe.run(codec, sigma_val)[1]
    best_ber = math.inf
    best = copy.deepcopy(codec)
    best_epoch = -1
    history = []
    for epoch in range(cfg.epochs):
        for j, t_j in enumerate(schedule):
            if epoch == t_j:
                codec.frozen.difference_update(groups[j])
                log.info("epoch %d: unfroze constituent %d", epoch, j + 1)
        dec_losses = [
            optimise("dec", DECODER_ROLES, sigma_dec, dec_total) for _ in range(cfg.dec_steps_per_epoch)
        ]
        enc_losses = [optimise("enc", ("enc",), sigma_enc, enc_total) for _ in range(cfg.enc_steps_per_epoch)]
        probe_loss = probe.run(codec, sigma_dec)[0]
        val_ber = probe.run(codec, sigma_val)[1]
        history.append(
            {
                "epoch": epoch,
                "dec_loss": float(np.mean(dec_losses)) if dec_losses else None,
                "enc_loss": float(np.mean(enc_losses)) if enc_losses else None,
                "probe_loss": probe_loss,
                "val_ber": val_ber,
                "frozen": len(codec.frozen),
            }
        )
        log.info("epoch %d: probe loss %.5f, validation BER %.3e", epoch, probe_loss, val_ber)
        if val_ber < best_ber:
            best_ber, best, best_epoch = val_ber, copy.deepcopy(codec), epoch
        if on_epoch is not None:
            on_epoch(epoch, codec)

    meta = {
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "best_epoch": best_epoch,
        "best_val_ber": best_ber,
        "initial_loss": initial_loss,
        "initial_val_ber": initial_ber,
        "val_snr_db": cfg.validation_snr_db,
        "unfreeze_epochs": schedule,
        "history": history,
        "config": asdict(cfg),
    }
    meta.update(extra_meta)
    return TrainResult(Checkpoint.from_codec(best, meta), best, history)


def _named(key: Key, d: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{key[0]}/{key[1]}/{name}": v for name, v in d.items()}


def train_constituent(params: CodeParams, cfg: TrainConfig, on_epoch=None) -> TrainResult:
    """Phase 1: train KO(m, r) from random initialisation.

    ``on_epoch(epoch, codec)`` is called after every epoch with the working codec.
    """
    codec = NeuralCodec.create(
        params.m,
        params.r,
        cfg.enc_hidden,
        cfg.dec_hidden,
        cfg.dropout,
        cfg.coordinatewise,
        rng=_streams(cfg.seed)["init"],
        zero_output=INIT_MODES[cfg.init],
    )
    return _run(codec, cfg, [], {"phase": "constituent"}, on_epoch)


def train_hiko(
    codec: NeuralCodec, cfg: TrainConfig, groups: list[list[Key]], anchors=None, on_epoch=None
) -> TrainResult:
    """Phase 3: alternate decoder/encoder optimisation with progressive unfreezing.

    ``groups[j]`` are the keys mapped from constituent j; they are released at
    ``unfreeze_schedule(len(groups), cfg.epochs)[j]``.
    """
    for group in groups:
        for key in group:
            if key not in codec.nets:
                raise StructureError(f"group references unknown network {key}")
    extra = {"phase": "hiko", "anchors": list(anchors) if anchors is not None else None}
    return _run(codec, cfg, groups, extra, on_epoch)
