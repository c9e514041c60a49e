"""Agent-level semantic multiverse: encoder, generator and knowledge store."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .channels import VectorChannel, vector_from_spec
from .errors import ConfigurationError, KnowledgeMissError, ParseError, RejectedInputError
from .nn import DenseNet, deserialize, forward, serialize

MODALITIES = ("generic", "visual", "audio", "haptic", "text")


@dataclass(frozen=True, eq=False)
class SemanticRepresentation:
    values: np.ndarray
    modality: str = "generic"

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise RejectedInputError("an SR must be a finite vector")
        if self.modality not in MODALITIES:
            raise RejectedInputError(f"unknown modality {self.modality!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass
class KnowledgeStore:
    """Serialized network SKs per agent, pairwise channel models, symbolic SKs."""

    networks: dict[str, dict[str, bytes]] = field(default_factory=dict)
    channels: dict[tuple[str, str], VectorChannel] = field(default_factory=dict)
    symbolic: dict[str, str] = field(default_factory=dict)

    def put_network(self, agent: str, role: str, net: DenseNet | bytes) -> int:
        data = net if isinstance(net, (bytes, bytearray)) else serialize(net)
        self.networks.setdefault(agent, {})[role] = bytes(data)
        return len(data)

    def get_network(self, agent: str, role: str) -> DenseNet:
        try:
            return deserialize(self.networks[agent][role])
        except KeyError:
            raise KnowledgeMissError(f"{agent}/{role}") from None

    def has_network(self, agent: str, role: str) -> bool:
        return role in self.networks.get(agent, {})

    def put_channel(self, src: str, dst: str, channel: VectorChannel) -> None:
        if not isinstance(channel, VectorChannel):
            raise ConfigurationError("channel models must be VectorChannel instances")
        self.channels[(src, dst)] = channel

    def get_channel(self, src: str, dst: str) -> VectorChannel:
        try:
            return self.channels[(src, dst)]
        except KeyError:
            raise KnowledgeMissError(f"channel {src}->{dst}") from None

    def put_symbolic(self, agent: str, problog_text: str) -> None:
        self.symbolic[agent] = problog_text

    def save(self, directory) -> Path:
        """Write one ``.smnn`` file per network plus ``manifest.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {"networks": [], "channels": [], "symbolic": []}
        for agent in sorted(self.networks):
            for role in sorted(self.networks[agent]):
                data = self.networks[agent][role]
                name = f"{agent}__{role}.smnn"
                (directory / name).write_bytes(data)
                manifest["networks"].append({
                    "agent": agent, "role": role, "file": name, "bytes": len(data),
                    "sha256": hashlib.sha256(data).hexdigest()})
        for (src, dst) in sorted(self.channels):
            manifest["channels"].append(
                {"src": src, "dst": dst, "spec": self.channels[(src, dst)].to_spec()})
        for agent in sorted(self.symbolic):
            name = f"{agent}.pl"
            data = self.symbolic[agent].encode()
            (directory / name).write_bytes(data)
            manifest["symbolic"].append({"agent": agent, "file": name,
                                         "sha256": hashlib.sha256(data).hexdigest()})
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory) -> "KnowledgeStore":
        directory = Path(directory)
        try:
            manifest = json.loads((directory / "manifest.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"unreadable knowledge manifest: {exc}", field="manifest") from exc
        kb = cls()
        for entry in manifest.get("networks", []):
            data = (directory / entry["file"]).read_bytes()
            if hashlib.sha256(data).hexdigest() != entry["sha256"]:
                raise ParseError(f"checksum mismatch for {entry['file']}", field="sha256")
            deserialize(data)
            kb.put_network(entry["agent"], entry["role"], data)
        for entry in manifest.get("channels", []):
            kb.put_channel(entry["src"], entry["dst"], vector_from_spec(entry["spec"]))
        for entry in manifest.get("symbolic", []):
            data = (directory / entry["file"]).read_bytes()
            if hashlib.sha256(data).hexdigest() != entry["sha256"]:
                raise ParseError(f"checksum mismatch for {entry['file']}", field="sha256")
            kb.put_symbolic(entry["agent"], data.decode())
        return kb


@dataclass(eq=False)
class SemanticMultiverse:
    encoder: DenseNet
    generator: DenseNet
    kb: KnowledgeStore = field(default_factory=KnowledgeStore)
    agent_id: str = "self"

    def __post_init__(self):
        if self.encoder.n_out != self.generator.n_in:
            raise ConfigurationError(
                f"encoder emits {self.encoder.n_out}-d SRs, generator expects {self.generator.n_in}")

    @property
    def sr_dim(self) -> int:
        return self.encoder.n_out


def encode(sm: SemanticMultiverse, observation, modality: str = "generic") -> SemanticRepresentation:
    x = np.asarray(observation, dtype=np.float64)
    if x.ndim != 1:
        raise RejectedInputError("encode takes a single observation vector")
    return SemanticRepresentation(forward(sm.encoder, x)[-1], modality)


def generate(sm: SemanticMultiverse, sr: SemanticRepresentation | np.ndarray) -> np.ndarray:
    values = sr.values if isinstance(sr, SemanticRepresentation) else np.asarray(sr, float)
    return forward(sm.generator, values)[-1]


def pipeline(sm: SemanticMultiverse, observations) -> np.ndarray:
    """Batched clean-channel encode then generate."""
    return sm.generator(sm.encoder(np.atleast_2d(observations)))


@dataclass
class EmulationMetrics:
    per_probe_mse: np.ndarray
    mean_mse: float


def emulate_smc(sm_local: SemanticMultiverse, foreign_agent_id: str, probes,
                rng: np.random.Generator | None = None) -> EmulationMetrics:
    """Encode locally, pass the stored link channel, decode with the stored foreign generator."""
    foreign = sm_local.kb.get_network(foreign_agent_id, "generator")
    channel = sm_local.kb.get_channel(sm_local.agent_id, foreign_agent_id)
    x = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    if foreign.n_in != sm_local.sr_dim:
        raise RejectedInputError("stored foreign generator does not accept this SR dimension")
    z = channel.transmit(sm_local.encoder(x), rng)
    errors = np.mean((foreign(z) - x) ** 2, axis=1)
    return EmulationMetrics(errors, float(errors.mean()))


def sm_consistency(sm_a: SemanticMultiverse, sm_b: SemanticMultiverse, probes: Sequence,
                   tolerance: float) -> float:
    """Fraction of probes whose pipeline outputs differ by more than ``tolerance`` (sup norm)."""
    x = np.asarray(probes, dtype=np.float64)
    if x.size == 0:
        raise RejectedInputError("probe set is empty")
    x = np.atleast_2d(x)
    if sm_a.encoder.n_in != sm_b.encoder.n_in or sm_a.generator.n_out != sm_b.generator.n_out:
        raise RejectedInputError("the two SMs do not share input/output dimensions")
    gap = np.max(np.abs(pipeline(sm_a, x) - pipeline(sm_b, x)), axis=1)
    return float(np.mean(gap > tolerance))


def checksum(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
