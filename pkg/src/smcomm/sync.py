"""Background synchronization of heterogeneous encoder/generator pairs.

Baselines: federated averaging and split learning. The hybrid protocol
downloads the foreign generator, retrains the local encoder (and the
trailing generator layers) against it through the emulated link, and
uploads only the retrained generator fragment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channels import DiscreteChannel, VectorChannel
from .datasets import Dataset, make_synthetic
from .errors import (
    ConfigurationError,
    IncompatibleArchitectureError,
    KnowledgeMissError,
    RejectedInputError,
    TrainingDivergenceError,
)
from .nn import DenseNet, average, backprop, forward, loss_and_output_grad, serialize, sgd_step
from .probe import LinearProbe, fit_probe
from .sm_core import KnowledgeStore

FLOAT_BYTES = 8


@dataclass
class LedgerEntry:
    phase: str
    direction: str
    nbytes: int
    note: str = ""


@dataclass
class CommLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    def record(self, phase: str, direction: str, payload, note: str = "") -> int:
        """Log a transfer. ``payload`` is raw bytes, an ndarray, or a byte count."""
        if isinstance(payload, (bytes, bytearray)):
            n = len(payload)
        elif isinstance(payload, np.ndarray):
            n = payload.size * FLOAT_BYTES
        else:
            n = int(payload)
        self.entries.append(LedgerEntry(phase, direction, n, note))
        return n

    def total(self, direction: str | None = None, phase: str | None = None) -> int:
        return sum(e.nbytes for e in self.entries
                   if (direction is None or e.direction == direction)
                   and (phase is None or e.phase == phase))

    def extend(self, other: "CommLedger") -> None:
        self.entries.extend(other.entries)

    def to_json(self) -> dict:
        return {"total_bytes": self.total(),
                "uplink_bytes": self.total("uplink"),
                "downlink_bytes": self.total("downlink"),
                "n_transfers": len(self.entries)}


@dataclass
class EnvironmentPair:
    """One data-channel environment in which an encoder/generator pair is trained."""

    dataset: Dataset
    channel: VectorChannel
    encoder_sizes: tuple[int, ...] = (64, 48, 16)
    generator_sizes: tuple[int, ...] = (16, 48, 48, 64)
    lr: float = 2.0
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.dataset.dim != self.encoder_sizes[0]:
            raise ConfigurationError(
                f"dataset dimension {self.dataset.dim} != encoder input {self.encoder_sizes[0]}")
        if self.encoder_sizes[-1] != self.generator_sizes[0]:
            raise ConfigurationError("encoder output and generator input sizes differ")
        if self.generator_sizes[-1] != self.dataset.dim:
            raise ConfigurationError("generator output must match the data dimension")

    @property
    def sr_dim(self) -> int:
        return self.encoder_sizes[-1]

    def init_networks(self) -> tuple[DenseNet, DenseNet]:
        rng = np.random.default_rng(self.seed)
        enc = DenseNet.init(self.encoder_sizes, "tanh", rng)
        gen_acts = ["tanh"] * (len(self.generator_sizes) - 2) + ["sigmoid"]
        gen = DenseNet.init(self.generator_sizes, gen_acts, rng)
        return enc, gen


@dataclass
class TrainedPair:
    encoder: DenseNet
    generator: DenseNet
    loss_curve: list[float]


def reconstruction_mse(encoder: DenseNet, generator: DenseNet, x, channel: VectorChannel,
                       rng: np.random.Generator | None) -> float:
    z = channel.transmit(encoder(x), rng)
    return float(np.mean((generator(z) - x) ** 2))


def _codec_step(encoder, generator, x, channel, rng, lr, step):
    """One SGD step through the channel; straight-through gradient at the channel."""
    enc_trace = forward(encoder, x)
    z_rx = channel.transmit(enc_trace[-1], rng)
    gen_trace = forward(generator, z_rx)
    loss, kw = loss_and_output_grad(generator, gen_trace[-1], "mse", x)
    if not math.isfinite(loss):
        raise TrainingDivergenceError("non-finite reconstruction loss", step)
    g_grads, grad_z = backprop(generator, gen_trace, **kw)
    e_grads, _ = backprop(encoder, enc_trace, grad_output=grad_z)
    return (sgd_step(encoder, e_grads, lr, step), sgd_step(generator, g_grads, lr, step),
            loss, grad_z)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _eval_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0xE7A1])


def fit_codec(encoder: DenseNet, generator: DenseNet, x_train, channel: VectorChannel,
              epochs: int, lr: float, batch_size: int, seed: int,
              on_batch=None) -> TrainedPair:
    """Train encoder and generator end to end; freeze masks are honoured.

    ``loss_curve[0]`` is the pre-training mse and ``loss_curve[e]`` the mse
    after epoch e, both on the training inputs with a fixed noise stream.
    """
    rng = np.random.default_rng([seed, 0x7A11])
    curve = [reconstruction_mse(encoder, generator, x_train, channel, _eval_rng(seed))]
    step = 0
    for epoch in range(epochs):
        for idx in _batches(len(x_train), batch_size, rng):
            try:
                encoder, generator, _, grad_z = _codec_step(
                    encoder, generator, x_train[idx], channel, rng, lr, step)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(f"{exc} in epoch {epoch}", exc.step) from None
            if on_batch is not None:
                on_batch(len(idx), grad_z)
            step += 1
        curve.append(reconstruction_mse(encoder, generator, x_train, channel, _eval_rng(seed)))
    return TrainedPair(encoder, generator, curve)


def train_pair(env: EnvironmentPair) -> TrainedPair:
    enc, gen = env.init_networks()
    x_train, _ = env.dataset.train()
    return fit_codec(enc, gen, x_train, env.channel, env.epochs, env.lr,
                     env.batch_size, env.seed)


def probe_for(dataset: Dataset, seed: int = 0) -> LinearProbe:
    """Linear classifier fit on the clean training samples of ``dataset``."""
    x, y = dataset.train()
    return fit_probe(x, y, n_classes=max(dataset.n_classes, 1), seed=seed)


def cross_eval(encoder: DenseNet, generator: DenseNet, channel: VectorChannel,
               dataset: Dataset, probe: LinearProbe | None = None,
               seed: int = 0) -> tuple[float, float]:
    """Held-out (mse, probe accuracy) of encode -> channel -> generate."""
    if encoder.n_out != generator.n_in or encoder.n_in != dataset.dim \
            or generator.n_out != dataset.dim:
        raise RejectedInputError("encoder, generator and dataset dimensions are incompatible")
    probe = probe_for(dataset) if probe is None else probe
    x, y = dataset.heldout()
    out = generator(channel.transmit(encoder(x), _eval_rng(seed)))
    return float(np.mean((out - x) ** 2)), probe.accuracy(out, y)


@dataclass
class FedAvgResult:
    pair_ab: TrainedPair
    pair_cd: TrainedPair
    ledger: CommLedger


def fedavg_round(pair_ab: TrainedPair, pair_cd: TrainedPair) -> FedAvgResult:
    """Average both pairs parameter-wise; each pair uploads and downloads one full model."""
    if not (pair_ab.encoder.same_architecture(pair_cd.encoder)
            and pair_ab.generator.same_architecture(pair_cd.generator)):
        raise IncompatibleArchitectureError("federated averaging needs identical layer specs")
    enc = average([pair_ab.encoder, pair_cd.encoder])
    gen = average([pair_ab.generator, pair_cd.generator])
    ledger = CommLedger()
    for name, pair in (("ab", pair_ab), ("cd", pair_cd)):
        ledger.record("fedavg", "uplink", serialize(pair.encoder) + serialize(pair.generator),
                      f"{name} model upload")
    model = serialize(enc) + serialize(gen)
    for name in ("ab", "cd"):
        ledger.record("fedavg", "downlink", model, f"{name} averaged model download")
    return FedAvgResult(TrainedPair(enc, gen, list(pair_ab.loss_curve)),
                        TrainedPair(enc, gen, list(pair_cd.loss_curve)), ledger)


@dataclass
class SplitResult:
    encoder: DenseNet
    generator: DenseNet
    ledger: CommLedger
    loss_curve: list[float]


def split_session(encoder_a: DenseNet, generator_d: DenseNet, env_a: EnvironmentPair,
                  epochs: int, channel: VectorChannel | None = None) -> SplitResult:
    """Split learning: every batch ships its SRs one way and their gradients back."""
    if encoder_a.n_out != generator_d.n_in:
        raise IncompatibleArchitectureError("encoder output does not feed the generator")
    channel = env_a.channel if channel is None else channel
    ledger = CommLedger()

    def log(rows, grad_z):
        ledger.record("split", "downlink", rows * encoder_a.n_out * FLOAT_BYTES, "activations")
        ledger.record("split", "uplink", grad_z, "gradients")

    x_train, _ = env_a.dataset.train()
    trained = fit_codec(encoder_a.unfreeze_all(), generator_d.unfreeze_all(), x_train, channel,
                        epochs, env_a.lr, env_a.batch_size, env_a.seed + 1, on_batch=log)
    return SplitResult(trained.encoder, trained.generator, ledger, trained.loss_curve)


def unfrozen_layer_count(fraction: float, n_layers: int) -> int:
    """Trailing generator layers left trainable: ceil(fraction * n_layers)."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigurationError(f"unfreeze fraction {fraction} outside [0, 1]")
    return min(n_layers, math.ceil(round(fraction * n_layers, 9)))


@dataclass
class HybridResult:
    encoder: DenseNet
    generator_local: DenseNet    # Alice's copy after retraining
    generator_remote: DenseNet   # David's generator after applying the upload
    fragment: bytes
    ledger: CommLedger
    loss_curve: list[float]
    n_unfrozen: int


def hybrid_sync(encoder_a: DenseNet, generator_d: DenseNet, env_a: EnvironmentPair,
                unfreeze_fraction: float, epochs: int, *, kb: KnowledgeStore | None = None,
                link: tuple[str, str] = ("alice", "david"),
                channel: VectorChannel | None = None) -> HybridResult:
    """Download, locally retrain with a freeze mask, upload the trainable fragment.

    The link channel comes from ``channel`` or, failing that, from the
    local knowledge store entry for ``link``.
    """
    n_layers = len(generator_d.layers)
    n_unfrozen = unfrozen_layer_count(unfreeze_fraction, n_layers)
    if channel is None:
        if kb is None:
            raise KnowledgeMissError(f"channel {link[0]}->{link[1]}")
        channel = kb.get_channel(*link)
    if encoder_a.n_out != generator_d.n_in:
        raise IncompatibleArchitectureError("encoder output does not feed the generator")
    ledger = CommLedger()
    download = serialize(generator_d)
    ledger.record("hybrid", "downlink", download, "foreign generator")
    if kb is not None:
        kb.put_network(link[1], "generator", download)
    local_gen = generator_d.freeze_except_last(n_unfrozen)
    x_train, _ = env_a.dataset.train()
    trained = fit_codec(encoder_a.unfreeze_all(), local_gen, x_train, channel, epochs,
                        env_a.lr, env_a.batch_size, env_a.seed + 2)
    start = n_layers - n_unfrozen
    if n_unfrozen:
        fragment = serialize(trained.generator.sublayers(start))
        remote = generator_d.replace_layers(start, trained.generator.layers[start:])
    else:
        fragment = b""
        remote = generator_d
    ledger.record("hybrid", "uplink", fragment, f"{n_unfrozen} trailing generator layers")
    return HybridResult(trained.encoder, trained.generator.unfreeze_all(),
                        remote.unfreeze_all(), fragment, ledger, trained.loss_curve, n_unfrozen)


@dataclass
class StrategyMetrics:
    mse: float
    probe_accuracy: float
    downlink_bytes: int
    uplink_bytes: int


@dataclass
class SyncReport:
    """Held-out comparison of no sync, download-only and download+partial upload."""

    within_pair: StrategyMetrics
    strategies: dict[str, StrategyMetrics]
    unfreeze_fraction: float
    generator_bytes: int
    heldout_idx: list[int]
    train_idx: list[int]
    loss_curves: dict[str, list[float]] = field(default_factory=dict)

    def to_json(self) -> dict:
        def m(s: StrategyMetrics):
            return {"mse": s.mse, "probe_accuracy": s.probe_accuracy,
                    "downlink_bytes": s.downlink_bytes, "uplink_bytes": s.uplink_bytes,
                    "total_bytes": s.downlink_bytes + s.uplink_bytes}
        return {"within_pair": m(self.within_pair),
                "strategies": {k: m(v) for k, v in self.strategies.items()},
                "unfreeze_fraction": self.unfreeze_fraction,
                "generator_bytes": self.generator_bytes,
                "n_heldout": len(self.heldout_idx), "n_train": len(self.train_idx)}


STRATEGIES = ("no_sync", "download_only", "partial_upload")


@dataclass
class HeteroFixture:
    env_ab: EnvironmentPair
    env_cd: EnvironmentPair
    pair_ab: TrainedPair
    pair_cd: TrainedPair
    link_channel: VectorChannel


def default_noisy_channel(levels: int = 16, p: float = 0.05) -> VectorChannel:
    return VectorChannel.quantized(levels, DiscreteChannel.symmetric(levels, p))


def hetero_fixture(seed: int, n_per_class: int = 60, epochs: int = 30,
                   noisy: VectorChannel | None = None, lr: float = 2.0,
                   batch_size: int = 32) -> HeteroFixture:
    """Alice-Bob on clean bars, Carol-David on noisy blobs; the A->D link is David's channel."""
    noisy = default_noisy_channel() if noisy is None else noisy
    bars = make_synthetic("bars", n_per_class, seed)
    blobs = make_synthetic("blobs", n_per_class, seed + 10_000)
    env_ab = EnvironmentPair(bars, VectorChannel.clean(), lr=lr, epochs=epochs,
                             batch_size=batch_size, seed=seed, name="alice-bob")
    env_cd = EnvironmentPair(blobs, noisy, lr=lr, epochs=epochs, batch_size=batch_size,
                             seed=seed + 20_000, name="carol-david")
    return HeteroFixture(env_ab, env_cd, train_pair(env_ab), train_pair(env_cd), noisy)


def compare_strategies(fx: HeteroFixture, unfreeze_fraction: float = 1 / 3,
                       sync_epochs: int | None = None) -> SyncReport:
    env = fx.env_ab
    epochs = env.epochs if sync_epochs is None else sync_epochs
    probe = probe_for(env.dataset)
    kb = KnowledgeStore()
    kb.put_channel("alice", "david", fx.link_channel)
    within = cross_eval(fx.pair_ab.encoder, fx.pair_ab.generator, env.channel, env.dataset,
                        probe, env.seed)
    no_sync = cross_eval(fx.pair_ab.encoder, fx.pair_cd.generator, fx.link_channel,
                         env.dataset, probe, env.seed)
    strategies = {"no_sync": StrategyMetrics(*no_sync, 0, 0)}
    curves = {}
    for name, frac in (("download_only", 0.0), ("partial_upload", unfreeze_fraction)):
        res = hybrid_sync(fx.pair_ab.encoder, fx.pair_cd.generator, env, frac, epochs, kb=kb)
        mse, acc = cross_eval(res.encoder, res.generator_remote, fx.link_channel, env.dataset,
                              probe, env.seed)
        strategies[name] = StrategyMetrics(mse, acc, res.ledger.total("downlink"),
                                           res.ledger.total("uplink"))
        curves[name] = res.loss_curve
    return SyncReport(StrategyMetrics(*within, 0, 0), strategies, unfreeze_fraction,
                      len(serialize(fx.pair_cd.generator)),
                      env.dataset.heldout_idx.tolist(), env.dataset.train_idx.tolist(), curves)
