import numpy as np
import pytest

from smcomm.channels import VectorChannel
from smcomm.datasets import make_synthetic
from smcomm.errors import (
    ConfigurationError,
    IncompatibleArchitectureError,
    KnowledgeMissError,
)
from smcomm.nn import DenseNet, Layer, deserialize, header_size, serialize
from smcomm.sm_core import KnowledgeStore
from smcomm.sync import (
    CommLedger,
    EnvironmentPair,
    TrainedPair,
    cross_eval,
    default_noisy_channel,
    fedavg_round,
    hybrid_sync,
    probe_for,
    split_session,
    train_pair,
    unfrozen_layer_count,
)


def negate(net):
    return DenseNet(tuple(Layer(-l.weight, -l.bias, l.activation) for l in net.layers))


class TestLedger:
    def test_payload_kinds(self):
        ledger = CommLedger()
        assert ledger.record("p", "uplink", b"abc") == 3
        assert ledger.record("p", "downlink", np.zeros((2, 5))) == 80
        assert ledger.record("q", "uplink", 7) == 7
        assert ledger.total() == 90
        assert ledger.total("uplink") == 10 and ledger.total(phase="q") == 7
        assert ledger.to_json()["n_transfers"] == 3


class TestTrainPair:
    def test_zero_epochs(self):
        env = EnvironmentPair(make_synthetic("bars", 5, 0), VectorChannel.clean(), epochs=0)
        enc, gen = env.init_networks()
        trained = train_pair(env)
        assert trained.encoder.equals(enc) and trained.generator.equals(gen)
        assert len(trained.loss_curve) == 1

    def test_clean_training_reduces_mse(self, hetero):
        curve = hetero.pair_ab.loss_curve
        assert len(curve) == 31
        assert curve[-1] < 0.25 * curve[0]

    def test_noise_floor(self, hetero):
        env = hetero.env_ab
        noisy = EnvironmentPair(env.dataset, default_noisy_channel(), seed=env.seed)
        assert train_pair(noisy).loss_curve[-1] >= hetero.pair_ab.loss_curve[-1]

    def test_dimension_checks(self):
        with pytest.raises(ConfigurationError):
            EnvironmentPair(make_synthetic("bars", 2, 0), VectorChannel.clean(),
                            encoder_sizes=(32, 16))


class TestCrossEval:
    def test_self_case_matches_within_pair(self, hetero):
        env = hetero.env_ab
        p = hetero.pair_ab
        probe = probe_for(env.dataset)
        x, y = env.dataset.heldout()
        out = p.generator(p.encoder(x))
        mse, acc = cross_eval(p.encoder, p.generator, VectorChannel.clean(), env.dataset, probe)
        assert mse == float(np.mean((out - x) ** 2))
        assert acc == probe.accuracy(out, y)

    def test_heterogeneity(self, hetero_report):
        assert hetero_report.strategies["no_sync"].mse > 2 * hetero_report.within_pair.mse

    def test_random_generator_near_chance(self, hetero):
        # one random generator can collapse onto a frequent held-out class, so the
        # chance bound is checked on the mean over independent draws
        env = hetero.env_ab
        probe = probe_for(env.dataset)
        accs = []
        for seed in range(20):
            gen = DenseNet.init([16, 48, 48, 64], ["tanh", "tanh", "sigmoid"], 1000 + seed)
            accs.append(cross_eval(hetero.pair_ab.encoder, gen, VectorChannel.clean(),
                                   env.dataset, probe)[1])
        assert np.mean(accs) <= 1 / env.dataset.n_classes + 0.05

    def test_heldout_disjoint(self, hetero_report):
        assert not set(hetero_report.heldout_idx) & set(hetero_report.train_idx)


class TestFedAvg:
    def test_idempotent(self, hetero):
        res = fedavg_round(hetero.pair_ab, hetero.pair_ab)
        assert res.pair_ab.encoder.equals(hetero.pair_ab.encoder)
        assert res.pair_ab.generator.equals(hetero.pair_ab.generator)

    def test_symmetric_cancels(self):
        enc = DenseNet.init([4, 2], "tanh", 0)
        gen = DenseNet.init([2, 4], "sigmoid", 1)
        res = fedavg_round(TrainedPair(enc, gen, []), TrainedPair(negate(enc), negate(gen), []))
        assert all(np.all(t == 0) for t in res.pair_ab.encoder.tensors())
        assert all(np.all(t == 0) for t in res.pair_cd.generator.tensors())

    def test_ledger_counts_full_models(self, hetero):
        res = fedavg_round(hetero.pair_ab, hetero.pair_cd)
        model = len(serialize(hetero.pair_ab.encoder)) + len(serialize(hetero.pair_ab.generator))
        assert res.ledger.total("uplink") == 2 * model
        assert res.ledger.total("downlink") == 2 * model
        assert len(res.ledger.entries) == 4

    def test_mismatch(self):
        a = TrainedPair(DenseNet.init([4, 2], "tanh", 0), DenseNet.init([2, 4], "tanh", 0), [])
        b = TrainedPair(DenseNet.init([4, 3], "tanh", 0), DenseNet.init([3, 4], "tanh", 0), [])
        with pytest.raises(IncompatibleArchitectureError):
            fedavg_round(a, b)

    def test_non_iid_degradation(self, hetero):
        """One averaging round hurts both pairs on their own data (recorded finding)."""
        res = fedavg_round(hetero.pair_ab, hetero.pair_cd)
        for env, before, after in ((hetero.env_ab, hetero.pair_ab, res.pair_ab),
                                   (hetero.env_cd, hetero.pair_cd, res.pair_cd)):
            probe = probe_for(env.dataset)
            pre = cross_eval(before.encoder, before.generator, env.channel, env.dataset, probe)
            post = cross_eval(after.encoder, after.generator, env.channel, env.dataset, probe)
            assert post[0] > pre[0]


class TestSplit:
    def test_zero_epochs(self, hetero):
        res = split_session(hetero.pair_ab.encoder, hetero.pair_cd.generator, hetero.env_ab, 0)
        assert res.ledger.entries == []

    def test_ledger_count(self, hetero):
        env = hetero.env_ab
        n_train = len(env.dataset.train_idx)
        batch = 45
        assert n_train % batch == 0
        env = EnvironmentPair(env.dataset, env.channel, batch_size=batch, seed=env.seed)
        epochs = 2
        res = split_session(hetero.pair_ab.encoder, hetero.pair_cd.generator, env, epochs)
        batches = n_train // batch
        assert res.ledger.total() == epochs * batches * 2 * batch * env.sr_dim * 8
        assert len(res.ledger.entries) == epochs * batches * 2

    def test_split_repairs_cross_pair(self, hetero, hetero_report):
        res = split_session(hetero.pair_ab.encoder, hetero.pair_cd.generator, hetero.env_ab, 10,
                            channel=hetero.link_channel)
        mse, _ = cross_eval(res.encoder, res.generator, hetero.link_channel,
                            hetero.env_ab.dataset, seed=hetero.env_ab.seed)
        assert mse < hetero_report.strategies["no_sync"].mse


class TestHybrid:
    @pytest.mark.parametrize("f, L, expected", [
        (0.0, 3, 0), (1 / 3, 3, 1), (0.34, 3, 2), (2 / 3, 3, 2), (1.0, 3, 3),
        (0.5, 4, 2), (0.1, 4, 1), (1 / 3, 6, 2),
    ])
    def test_layer_rounding(self, f, L, expected):
        assert unfrozen_layer_count(f, L) == expected

    @pytest.mark.parametrize("f", [-0.1, 1.5])
    def test_fraction_range(self, f):
        with pytest.raises(ConfigurationError):
            unfrozen_layer_count(f, 3)

    def test_download_only(self, hetero):
        gen_d = hetero.pair_cd.generator
        res = hybrid_sync(hetero.pair_ab.encoder, gen_d, hetero.env_ab, 0.0, 2,
                          channel=hetero.link_channel)
        assert res.fragment == b"" and res.ledger.total("uplink") == 0
        assert res.ledger.total("downlink") == len(serialize(gen_d))
        assert res.generator_remote.equals(gen_d) and res.generator_local.equals(gen_d)
        assert not res.encoder.equals(hetero.pair_ab.encoder)

    def test_one_third_uploads_last_layer(self, hetero):
        gen_d = hetero.pair_cd.generator
        assert len(gen_d.layers) == 3
        res = hybrid_sync(hetero.pair_ab.encoder, gen_d, hetero.env_ab, 1 / 3, 2,
                          channel=hetero.link_channel)
        assert res.n_unfrozen == 1
        uploaded = deserialize(res.fragment)
        assert len(uploaded.layers) == 1 and uploaded.layer_sizes == [48, 64]
        assert len(res.fragment) == header_size(1) + 8 * (48 * 64 + 64)
        assert res.ledger.total("uplink") == len(res.fragment)
        for i in (0, 1):
            assert np.array_equal(res.generator_remote.layers[i].weight, gen_d.layers[i].weight)
        assert not np.array_equal(res.generator_remote.layers[2].weight, gen_d.layers[2].weight)
        np.testing.assert_array_equal(res.generator_remote.layers[2].weight,
                                      uploaded.layers[0].weight)

    def test_channel_from_kb(self, hetero):
        kb = KnowledgeStore()
        kb.put_channel("alice", "david", hetero.link_channel)
        a = hybrid_sync(hetero.pair_ab.encoder, hetero.pair_cd.generator, hetero.env_ab, 1 / 3, 1,
                        kb=kb)
        b = hybrid_sync(hetero.pair_ab.encoder, hetero.pair_cd.generator, hetero.env_ab, 1 / 3, 1,
                        channel=hetero.link_channel)
        assert a.fragment == b.fragment
        assert kb.get_network("david", "generator").equals(hetero.pair_cd.generator)

    def test_missing_kb_channel(self, hetero):
        with pytest.raises(KnowledgeMissError):
            hybrid_sync(hetero.pair_ab.encoder, hetero.pair_cd.generator, hetero.env_ab, 0.0, 1,
                        kb=KnowledgeStore())

    def test_strategy_ordering_seed0(self, hetero_report):
        s = hetero_report.strategies
        assert s["no_sync"].mse > s["download_only"].mse > s["partial_upload"].mse
        assert s["download_only"].probe_accuracy > s["no_sync"].probe_accuracy
        assert s["partial_upload"].uplink_bytes == header_size(1) + 8 * (48 * 64 + 64)
