"""Experiment configs and scenario runners.

A run is fully determined by its config and seed list. Every scenario
writes ``metrics.json`` (floats at 12 significant digits, sorted keys)
plus its artifacts, and a ``manifest.json`` with checksums of everything.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from pathlib import Path
from statistics import median

import jsonschema
import numpy as np

from . import lewis, marl, symbolic, sync
from .channels import DiscreteChannel, VectorChannel
from .datasets import load_idx_files, make_synthetic
from .errors import ConfigurationError, EnumerationRefusedError
from .nn import deserialize, serialize

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "SMCOMM_OUTPUT_ROOT"
SCENARIOS = ("lewis_sweep", "hetero_sync", "marl_extract")


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}

_IDX_FILES = _obj({"images": {"type": "string"}, "labels": {"type": "string"},
                   "limit": _POS_INT}, ["images", "labels"])

CONFIG_SCHEMA = _obj({
    "scenario": {"enum": list(SCENARIOS)},
    "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
    "output_dir": {"type": "string"},
    "lewis": _obj({
        "n_types": {"type": "array", "items": _POS_INT, "minItems": 1},
        "n_signals": {"type": "array", "items": _POS_INT, "minItems": 1},
        "n_responses": {"type": ["integer", "null"], "minimum": 1},
        "channel_error": _PROB,
        "max_rounds": _POS_INT,
        "window": _POS_INT,
        "stability_tol": _NUM,
        "reinforcement": {"type": "number", "minimum": 0},
        "eval_rounds": {"type": "integer", "minimum": 0},
    }),
    "sync": _obj({
        "n_per_class": _POS_INT,
        "epochs": {"type": "integer", "minimum": 0},
        "sync_epochs": {"type": "integer", "minimum": 0},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "batch_size": _POS_INT,
        "unfreeze_fraction": _PROB,
        "dmc_levels": {"type": "integer", "minimum": 2},
        "dmc_error": _PROB,
        "sr_dim": _POS_INT,
        "hidden": _POS_INT,
        "baselines": {"type": "boolean"},
        "idx_a": _IDX_FILES,
        "idx_b": _IDX_FILES,
    }),
    "marl": _obj({
        "n_targets": _POS_INT,
        "episodes": {"type": "integer", "minimum": 0},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "critic_lr": {"type": "number", "exclusiveMinimum": 0},
        "message_dim": _POS_INT,
        "hidden": _POS_INT,
        "noise_sigma": {"type": "number", "minimum": 0},
        "exec_levels": {"type": "integer", "minimum": 2},
        "batch_size": _POS_INT,
        "merge_radius": {"type": "integer", "minimum": 0},
        "eval_episodes": _POS_INT,
    }),
}, ["scenario"])

# Defaults are desk-scale choices sized for a single CPU core.
DEFAULTS = {
    "seeds": [0],
    "lewis": {"n_types": [2, 3], "n_signals": [2, 3], "n_responses": None,
              "channel_error": 0.0, "max_rounds": 50_000, "window": 5_000,
              "stability_tol": lewis.NASH_TOL, "reinforcement": 1.0, "eval_rounds": 10_000},
    "sync": {"n_per_class": 60, "epochs": 30, "sync_epochs": 30, "lr": 2.0, "batch_size": 32,
             "unfreeze_fraction": 1 / 3, "dmc_levels": 16, "dmc_error": 0.05, "sr_dim": 16,
             "hidden": 48, "baselines": True},
    "marl": {"n_targets": 4, "episodes": 20_000, "lr": 0.5, "critic_lr": 0.05,
             "message_dim": 2, "hidden": 16, "noise_sigma": 0.5, "exec_levels": 2,
             "batch_size": 32, "merge_radius": 0, "eval_episodes": 1_000},
}


def validate_config(raw: dict) -> dict:
    """Schema-check ``raw`` and fill in defaults. Unknown keys are rejected."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"invalid config at {path}: {exc.message}") from None
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    lw = cfg["lewis"]
    if lw["window"] >= lw["max_rounds"]:
        raise ConfigurationError("lewis.window must be smaller than lewis.max_rounds")
    return cfg


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from None
    return validate_config(raw)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _round_floats(obj):
    if isinstance(obj, float):
        return obj if not np.isfinite(obj) else float(f"{obj:.12g}")
    if isinstance(obj, (np.floating,)):
        return _round_floats(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def dumps_metrics(obj) -> str:
    return json.dumps(_round_floats(obj), indent=2, sort_keys=True) + "\n"


def resolve_output_dir(cfg: dict, override: str | None = None) -> Path:
    target = override or cfg.get("output_dir") or f"runs/{cfg['scenario']}"
    path = Path(target)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


class RunWriter:
    def __init__(self, out: Path):
        self.out = out
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def write(self, rel: str, data: str | bytes) -> Path:
        path = self.out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, str):
            data = data.encode()
        path.write_bytes(data)
        if rel not in self.files:
            self.files.append(rel)
        return path

    def manifest(self, cfg: dict, seeds) -> dict:
        entries = []
        for rel in sorted(self.files):
            data = (self.out / rel).read_bytes()
            entries.append({"path": rel, "bytes": len(data),
                            "sha256": hashlib.sha256(data).hexdigest()})
        manifest = {"scenario": cfg["scenario"], "config_hash": config_hash(cfg),
                    "seeds": list(seeds), "files": entries}
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        return manifest


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(f"{v:.12g}" if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def run_lewis_sweep(cfg: dict, seeds, writer: RunWriter) -> dict:
    lw = cfg["lewis"]
    tc = lewis.TrainConfig(max_rounds=lw["max_rounds"], window=lw["window"],
                           stability_tol=lw["stability_tol"], reinforcement=lw["reinforcement"])
    cells = []
    for nt in lw["n_types"]:
        for ns in lw["n_signals"]:
            nr = lw["n_responses"] or nt
            channel = DiscreteChannel.symmetric(ns, lw["channel_error"])
            game = lewis.SignalingGame.identity(nt, ns, nr, channel)
            try:
                oracle = lewis.max_pure_payoff(game)
            except EnumerationRefusedError:
                oracle = None
            runs = {}
            for seed in seeds:
                rng = np.random.default_rng([seed, nt, ns, nr])
                policies, report = lewis.train_to_equilibrium(game, tc, rng)
                transcripts = lewis.play_rounds(game, policies, lw["eval_rounds"], rng)
                errors = lewis.error_decomposition(transcripts, game, policies)
                entry = report.to_json()
                entry.pop("payoff_trajectory")
                entry["level_a_rate"] = errors.level_a_rate
                entry["level_b_rate"] = errors.level_b_rate
                entry["greedy_sender"] = policies.greedy_sender().tolist()
                entry["greedy_receiver"] = policies.greedy_receiver().tolist()
                runs[str(seed)] = entry
                writer.write(f"curves/lewis_t{nt}_s{ns}_r{nr}_seed{seed}.csv", _csv(
                    ["round", "mean_payoff"],
                    [((i + 1) * report.trajectory_stride, v)
                     for i, v in enumerate(report.payoff_trajectory)]))
            cells.append({"n_types": nt, "n_signals": ns, "n_responses": nr,
                          "channel_error": lw["channel_error"],
                          "brute_force_max_payoff": oracle, "runs": runs})
    return {"cells": cells}


def _sync_fixture(cfg: dict, seed: int) -> sync.HeteroFixture:
    sc = cfg["sync"]
    noisy = sync.default_noisy_channel(sc["dmc_levels"], sc["dmc_error"])
    if "idx_a" in sc or "idx_b" in sc:
        if not ("idx_a" in sc and "idx_b" in sc):
            raise ConfigurationError("IDX mode needs both idx_a and idx_b")
        da = load_idx_files(sc["idx_a"]["images"], sc["idx_a"]["labels"], seed=seed,
                            limit=sc["idx_a"].get("limit"))
        db = load_idx_files(sc["idx_b"]["images"], sc["idx_b"]["labels"], seed=seed + 1,
                            limit=sc["idx_b"].get("limit"))
    else:
        da = make_synthetic("bars", sc["n_per_class"], seed)
        db = make_synthetic("blobs", sc["n_per_class"], seed + 10_000)
    if da.dim != db.dim:
        raise ConfigurationError("both corpora must share one sample dimension")
    enc = (da.dim, sc["hidden"], sc["sr_dim"])
    gen = (sc["sr_dim"], sc["hidden"], sc["hidden"], da.dim)
    common = dict(encoder_sizes=enc, generator_sizes=gen, lr=sc["lr"], epochs=sc["epochs"],
                  batch_size=sc["batch_size"])
    env_ab = sync.EnvironmentPair(da, VectorChannel.clean(), seed=seed, name="alice-bob",
                                  **common)
    env_cd = sync.EnvironmentPair(db, noisy, seed=seed + 20_000, name="carol-david", **common)
    return sync.HeteroFixture(env_ab, env_cd, sync.train_pair(env_ab), sync.train_pair(env_cd),
                              noisy)


def run_hetero_sync(cfg: dict, seeds, writer: RunWriter) -> dict:
    sc = cfg["sync"]
    per_seed = {}
    for seed in seeds:
        fx = _sync_fixture(cfg, seed)
        report = sync.compare_strategies(fx, sc["unfreeze_fraction"], sc["sync_epochs"])
        entry = report.to_json()
        probe = sync.probe_for(fx.env_ab.dataset)
        if sc["baselines"]:
            env = fx.env_ab
            fed = sync.fedavg_round(fx.pair_ab, fx.pair_cd)
            entry["fedavg"] = {
                "within_ab_mse_before": sync.cross_eval(fx.pair_ab.encoder, fx.pair_ab.generator,
                                                        env.channel, env.dataset, probe, seed)[0],
                "within_ab_mse_after": sync.cross_eval(fed.pair_ab.encoder, fed.pair_ab.generator,
                                                       env.channel, env.dataset, probe, seed)[0],
                "within_cd_mse_before": sync.cross_eval(
                    fx.pair_cd.encoder, fx.pair_cd.generator, fx.env_cd.channel,
                    fx.env_cd.dataset, None, seed)[0],
                "within_cd_mse_after": sync.cross_eval(
                    fed.pair_cd.encoder, fed.pair_cd.generator, fx.env_cd.channel,
                    fx.env_cd.dataset, None, seed)[0],
                "ledger": fed.ledger.to_json()}
            split = sync.split_session(fx.pair_ab.encoder, fx.pair_cd.generator, env,
                                       sc["sync_epochs"], channel=fx.link_channel)
            mse, acc = sync.cross_eval(split.encoder, split.generator, fx.link_channel,
                                       env.dataset, probe, seed)
            entry["split"] = {"mse": mse, "probe_accuracy": acc, "ledger": split.ledger.to_json()}
        entry["train_loss_final"] = {"alice_bob": fx.pair_ab.loss_curve[-1],
                                     "carol_david": fx.pair_cd.loss_curve[-1]}
        per_seed[str(seed)] = entry
        prefix = f"seed_{seed}"
        rows = []
        for name, curve in report.loss_curves.items():
            rows += [(name, i, v) for i, v in enumerate(curve)]
        rows += [("train_alice_bob", i, v) for i, v in enumerate(fx.pair_ab.loss_curve)]
        rows += [("train_carol_david", i, v) for i, v in enumerate(fx.pair_cd.loss_curve)]
        writer.write(f"{prefix}/loss_curves.csv", _csv(["strategy", "epoch", "mse"], rows))
        writer.write(f"{prefix}/models/alice_encoder.smnn", serialize(fx.pair_ab.encoder))
        writer.write(f"{prefix}/models/david_generator.smnn", serialize(fx.pair_cd.generator))
        writer.write(f"{prefix}/split_manifest.json",
                     json.dumps(fx.env_ab.dataset.manifest(), sort_keys=True) + "\n")
    names = sync.STRATEGIES
    summary = {name: {"median_mse": median(per_seed[s]["strategies"][name]["mse"]
                                           for s in per_seed),
                      "median_probe_accuracy": median(
                          per_seed[s]["strategies"][name]["probe_accuracy"] for s in per_seed)}
               for name in names}
    return {"seeds": per_seed, "summary": summary}


def marl_config(cfg: dict, seed: int, **overrides) -> marl.TrainConfig:
    mc = cfg["marl"]
    kw = {k: mc[k] for k in ("episodes", "lr", "critic_lr", "message_dim", "hidden",
                             "noise_sigma", "exec_levels", "batch_size")}
    kw.update(overrides)
    return marl.TrainConfig(seed=seed, **kw)


def extract_artifacts(policy: marl.CommPolicy, env: marl.ReferentialEnv, radius: int,
                      writer: RunWriter, prefix: str = "") -> dict:
    table = symbolic.enumerate_mappings(policy, env)
    graph = symbolic.build_graph(symbolic.cluster_srs(table, symbolic.MergeRule(radius)))
    writer.write(f"{prefix}graph.dot", graph.to_dot())
    writer.write(f"{prefix}graph.json", symbolic.dump_json(graph) + "\n")
    writer.write(f"{prefix}program.pl", symbolic.emit_problog(graph))
    return {"entropy": symbolic.entropy_report(graph),
            "fidelity": symbolic.fidelity(graph, policy, env),
            "n_sr_nodes": len(graph.sr_nodes),
            "mapping": [list(r) for r in table.rows]}


def save_actors(writer: RunWriter, prefix: str, policy: marl.CommPolicy, n_targets: int,
                radius: int) -> None:
    writer.write(f"{prefix}actors/speaker.smnn", serialize(policy.speaker))
    writer.write(f"{prefix}actors/listener.smnn", serialize(policy.listener))
    writer.write(f"{prefix}actors/actors.json", json.dumps(
        {"n_targets": n_targets, "levels": policy.levels, "merge_radius": radius},
        sort_keys=True) + "\n")


def load_actors(directory) -> tuple[marl.CommPolicy, marl.ReferentialEnv, int]:
    d = Path(directory)
    meta = json.loads((d / "actors.json").read_text())
    policy = marl.CommPolicy(deserialize((d / "speaker.smnn").read_bytes()),
                             deserialize((d / "listener.smnn").read_bytes()), meta["levels"])
    return policy, marl.ReferentialEnv(meta["n_targets"]), meta.get("merge_radius", 0)


def run_marl_extract(cfg: dict, seeds, writer: RunWriter) -> dict:
    mc = cfg["marl"]
    env = marl.ReferentialEnv(mc["n_targets"])
    per_seed = {}
    for seed in seeds:
        tc = marl_config(cfg, seed)
        result = marl.ctde_train(env, tc)
        ablated = marl.ctde_train(env, marl_config(cfg, seed, ablate_messages=True))
        policy = result.policy(tc.exec_levels)
        rng = np.random.default_rng([seed, 0xE4EC])
        real_reward, _ = marl.execute(result.speaker, result.listener, env,
                                      mc["eval_episodes"], None, rng)
        rng = np.random.default_rng([seed, 0xE4EC])
        q_reward, msg_log = marl.execute(result.speaker, result.listener, env,
                                         mc["eval_episodes"], tc.exec_levels, rng)
        prefix = f"seed_{seed}/"
        save_actors(writer, prefix, policy, env.n_targets, mc["merge_radius"])
        writer.write(f"{prefix}message_log.csv", msg_log.to_csv())
        stride = max(1, len(result.reward_curve) // 200)
        writer.write(f"{prefix}reward_curve.csv", _csv(
            ["episode", "moving_avg_reward"],
            [(i, float(result.reward_curve[i]))
             for i in range(stride - 1, len(result.reward_curve), stride)]))
        extraction = extract_artifacts(policy, env, mc["merge_radius"], writer, prefix)
        per_seed[str(seed)] = {
            "final_reward": result.final_reward,
            "ablated_final_reward": ablated.final_reward,
            "exec_reward_real": real_reward,
            "exec_reward_quantized": q_reward,
            "emergent_sr": marl.emergent_sr_report(msg_log).to_json(),
            "extraction": extraction,
        }
    summary = {"median_final_reward": median(v["final_reward"] for v in per_seed.values()),
               "median_ablated_reward": median(v["ablated_final_reward"]
                                               for v in per_seed.values()),
               "max_fidelity": max(v["extraction"]["fidelity"] for v in per_seed.values())}
    return {"seeds": per_seed, "summary": summary}


RUNNERS = {"lewis_sweep": run_lewis_sweep, "hetero_sync": run_hetero_sync,
           "marl_extract": run_marl_extract}


def run_scenario(cfg: dict, out_dir, seeds=None) -> Path:
    """Run the configured scenario into ``out_dir``; returns the directory."""
    seeds = list(cfg["seeds"] if seeds is None else seeds)
    writer = RunWriter(Path(out_dir))
    log.info("running %s for seeds %s into %s", cfg["scenario"], seeds, out_dir)
    metrics = RUNNERS[cfg["scenario"]](cfg, seeds, writer)
    metrics = {"scenario": cfg["scenario"], "config_hash": config_hash(cfg), "seeds": seeds,
               "results": metrics}
    writer.write("metrics.json", dumps_metrics(metrics))
    writer.write("config.json", json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    writer.manifest(cfg, seeds)
    return writer.out
