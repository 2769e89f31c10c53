import json
import math
import struct
import zlib
from dataclasses import replace

import numpy as np
import pytest

from dpal.data import Dataset
from dpal.errors import BudgetInfeasibleError, ConfigError, ContractError, DimensionError, FormatError, ParameterError
from dpal.model import Architecture, init_params
from dpal.pipeline import (
    CSV_FIELDS,
    MAGIC,
    Checkpoint,
    FinetuneSettings,
    RunRow,
    budget_plan,
    build_data,
    config_from_dict,
    decode_checkpoint,
    encode_checkpoint,
    epsilon_series,
    evaluate,
    finetune,
    load_checkpoint,
    load_config,
    read_metrics_csv,
    run_experiment,
    save_checkpoint,
    train_baseline,
    write_metrics_csv,
)
from dpal.privacy import PrivacyLedger, dpsgd_epsilon

from conftest import CONFIGS, blob_config


def sample_checkpoint(seed=0, arch=Architecture(5, (4, 3), 3, "tanh")):
    ledger = PrivacyLedger(1e-5)
    for _ in range(7):
        ledger.append("subsampled_gaussian", label="dpsgd", q=0.01, sigma=1.1)
    ledger.append("laplace", label="support", epsilon=0.5)
    return Checkpoint.create(init_params(arch, seed), 3, ledger, 0.8125, seed)


def assert_same_checkpoint(a, b):
    assert a.arch == b.arch and a.epoch == b.epoch and a.seed == b.seed
    assert a.test_accuracy == b.test_accuracy and a.ledger == b.ledger
    for x, y in zip(a.params.arrays, b.params.arrays):
        assert x.tobytes() == y.tobytes()


class TestCheckpointFormat:
    def test_round_trip_is_bit_exact(self, tmp_path):
        ckpt = sample_checkpoint()
        save_checkpoint(ckpt, tmp_path / "c.ckpt")
        back = load_checkpoint(tmp_path / "c.ckpt")
        assert_same_checkpoint(ckpt, back)
        assert encode_checkpoint(back) == encode_checkpoint(ckpt)
        assert back.epsilon == ckpt.epsilon

    def test_layout(self):
        ckpt = sample_checkpoint()
        raw = encode_checkpoint(ckpt)
        assert raw[:8] == MAGIC
        (hlen,) = struct.unpack_from("<I", raw, 8)
        header = raw[12:12 + hlen]
        assert struct.unpack_from("<IIBI", header) == (5, 3, 1, 2)
        (crc,) = struct.unpack_from("<I", raw, 12 + hlen)
        assert crc == zlib.crc32(header)
        first = np.frombuffer(raw, "<f4", count=20, offset=16 + hlen)
        np.testing.assert_array_equal(first, ckpt.params.weights[0].ravel().astype(np.float32))
        (llen,) = struct.unpack_from("<Q", raw, len(raw) - len(ckpt.ledger.to_json()) - 8)
        assert json.loads(raw[-llen:])["delta_target"] == 1e-5

    def test_every_truncation_is_rejected(self):
        raw = encode_checkpoint(sample_checkpoint())
        for cut in range(len(raw)):
            with pytest.raises(FormatError):
                decode_checkpoint(raw[:cut])

    def test_header_corruption_is_rejected(self):
        raw = bytearray(encode_checkpoint(sample_checkpoint()))
        (hlen,) = struct.unpack_from("<I", raw, 8)
        for pos in range(12 + hlen + 4):
            bad = bytearray(raw)
            bad[pos] ^= 0x5A
            with pytest.raises(FormatError):
                decode_checkpoint(bytes(bad))

    def test_trailing_bytes_and_bad_ledger(self):
        raw = encode_checkpoint(sample_checkpoint())
        with pytest.raises(FormatError):
            decode_checkpoint(raw + b"\x00")
        bad = raw[:-3] + b"\xff\xfe}"
        with pytest.raises(FormatError):
            decode_checkpoint(bad)

    def test_non_finite_weights_are_rejected(self):
        ckpt = sample_checkpoint()
        raw = bytearray(encode_checkpoint(ckpt))
        (hlen,) = struct.unpack_from("<I", raw, 8)
        struct.pack_into("<f", raw, 16 + hlen, math.nan)
        with pytest.raises(FormatError):
            decode_checkpoint(bytes(raw))

    def test_create_snapshots_the_ledger(self):
        ledger = PrivacyLedger()
        ckpt = Checkpoint.create(init_params(Architecture(2, (), 2), 0), 1, ledger, 0.5, 0)
        ledger.append("laplace", epsilon=1.0)
        assert len(ckpt.ledger) == 0


class TestBudgetPlan:
    def test_examples(self):
        assert budget_plan([1.0, 2.0, 3.0], 2.5, 1.0) == 0
        assert budget_plan([1.0, 2.0, 3.0], 3.0, 0.5, 0.5) == 1
        idx = budget_plan([1.0, 1.8, 2.2, 2.6], 3.2, 0.5, 0.5)
        assert idx == 2 and 2.2 + 0.5 + 0.5 <= 3.2

    def test_latest_feasible_checkpoint(self):
        eps = list(np.linspace(0.5, 5.0, 19))
        for limit in (1.0, 2.7, 5.0):
            idx = budget_plan(eps, limit, 0.2, 0.3)
            assert eps[idx] + 0.5 <= limit
            assert idx == len(eps) - 1 or eps[idx + 1] + 0.5 > limit

    def test_infeasible(self):
        with pytest.raises(BudgetInfeasibleError):
            budget_plan([2.0, 3.0], 2.5, 0.5, 0.5)
        with pytest.raises(BudgetInfeasibleError):
            budget_plan([], 1.0)

    def test_accepts_checkpoints(self):
        assert budget_plan([sample_checkpoint()], 100.0) == 0


@pytest.fixture(scope="module")
def noise_free_cfg():
    return config_from_dict(blob_config(dpsgd={"clip_norm": None, "noise_multiplier": 0.0, "epochs": 10,
                                               "learning_rate": 0.5}))


class TestTraining:
    def test_noise_free_training_learns_blobs(self, blob_data, noise_free_cfg):
        checkpoints = train_baseline(noise_free_cfg, 0, blob_data)
        assert len(checkpoints) == 10
        assert checkpoints[-1].test_accuracy >= 0.99

    def test_epsilon_grows_every_epoch(self, blob_data):
        cfg = config_from_dict(blob_config())
        checkpoints = train_baseline(cfg, 0, blob_data)
        eps = epsilon_series(checkpoints)
        assert np.all(np.diff(eps) > 0)
        steps = cfg.dpsgd.steps_per_epoch
        assert eps[-1] == pytest.approx(dpsgd_epsilon(0.05, 1.0, 4 * steps, 1e-5), rel=1e-12)
        assert [len(c.ledger) for c in checkpoints] == [steps * (i + 1) for i in range(4)]

    def test_accuracy_matches_evaluate(self, blob_data):
        cfg = config_from_dict(blob_config(dpsgd={"epochs": 1}))
        (ckpt,) = train_baseline(cfg, 3, blob_data)
        assert evaluate(ckpt, blob_data.test) == ckpt.test_accuracy


class TestFinetune:
    def test_zero_epochs_is_a_no_op(self, blob_data):
        ckpt = sample_checkpoint(arch=Architecture(6, (5,), 3))
        assert finetune(ckpt, blob_data.public, FinetuneSettings(epochs=0)) is ckpt

    def test_ledger_is_unchanged(self, blob_data):
        ckpt = sample_checkpoint(arch=Architecture(6, (5,), 3))
        before = ckpt.ledger.to_json()
        tuned = finetune(ckpt, blob_data.public, FinetuneSettings(0.1, 2, 16), blob_data.test)
        assert tuned.ledger.to_json() == before and tuned.ledger == ckpt.ledger
        assert tuned.epoch == ckpt.epoch

    def test_improves_an_undertrained_model(self, blob_data):
        cfg = config_from_dict(blob_config(dpsgd={"epochs": 1, "learning_rate": 0.05}))
        (ckpt,) = train_baseline(cfg, 0, blob_data)
        labelled = blob_data.public.subset(np.arange(200))
        tuned = finetune(ckpt, labelled, FinetuneSettings(0.1, 20, 16), blob_data.test)
        # rerun the undertrained baseline from scratch and score both independently
        (rerun,) = train_baseline(cfg, 0, blob_data)
        assert evaluate(rerun, blob_data.test) == ckpt.test_accuracy < 0.9
        assert evaluate(tuned, blob_data.test) == tuned.test_accuracy > ckpt.test_accuracy
        again = finetune(ckpt, labelled, FinetuneSettings(0.1, 20, 16), blob_data.test)
        assert_same_checkpoint(tuned, again)

    def test_rejects_private_or_unlabelled_data(self, blob_data):
        ckpt = sample_checkpoint(arch=Architecture(6, (5,), 3))
        with pytest.raises(ContractError):
            finetune(ckpt, blob_data.private, FinetuneSettings())
        with pytest.raises(ContractError):
            finetune(ckpt, blob_data.public.without_labels(), FinetuneSettings())
        with pytest.raises(ParameterError):
            finetune(ckpt, blob_data.public, FinetuneSettings(learning_rate=0.0))
        empty = Dataset(np.zeros((0, 6)), np.zeros(0, int), "public", num_classes=3)
        with pytest.raises(DimensionError):
            finetune(ckpt, empty, FinetuneSettings())


@pytest.fixture(scope="module")
def polluted_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = config_from_dict(blob_config(dataset={"pollution_fraction": 0.2}, eps_limit=6.0,
                                       selection={"eps_dppca": 0.5, "eps_support": 0.5}))
    return cfg, run_experiment(cfg, out_dir=out), out


class TestExperiment:
    def test_rows_and_budget(self, polluted_report):
        cfg, report, _ = polluted_report
        assert len(report.rows) == len(cfg.seeds) * len(cfg.methods)
        for row in report.rows:
            assert row.eps_total <= cfg.eps_limit
            if row.method == "nearprivate":
                assert row.eps_total == row.eps_dp + 0.5 + 0.5
            else:
                assert row.eps_total == row.eps_dp

    def test_pollution_fraction_recounted_from_manifests(self, polluted_report):
        cfg, report, out = polluted_report
        data = build_data(cfg.dataset)
        assert data.public.pollution_fraction == pytest.approx(0.2, abs=0.01)
        for row in report.rows:
            m = json.loads((out / "manifests" / f"v0_{row.method}_seed{row.seed}.json").read_text())
            chosen = np.array(m["chosen"])
            assert len(chosen) == row.n_labeled
            assert row.pollution_fraction == data.public.pollution[chosen].mean()

    def test_csv_round_trip_and_aggregate(self, polluted_report):
        _, report, out = polluted_report
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == ",".join(CSV_FIELDS)
        rows = read_metrics_csv(out / "metrics.csv")
        assert rows == report.rows
        for agg in report.aggregate():
            accs = [r.test_acc for r in rows if r.method == agg["method"]]
            mean = sum(accs) / len(accs)
            std = math.sqrt(sum((a - mean) ** 2 for a in accs) / (len(accs) - 1))
            assert agg["test_acc_mean"] == pytest.approx(mean, abs=1e-12)
            assert agg["test_acc_std"] == pytest.approx(std, abs=1e-12)
        doc = json.loads((out / "report.json").read_text())
        assert doc["aggregate"] == report.aggregate()

    def test_zero_labels_reports_the_baseline(self, blob_data):
        cfg = config_from_dict(blob_config(selection={"n_labeled": 0}, seeds=[0], methods=["random"]))
        report = run_experiment(cfg, blob_data)
        ckpt = train_baseline(cfg, 0, blob_data)[-1]
        (row,) = report.rows
        assert row.test_acc == ckpt.test_accuracy and row.eps_total == ckpt.epsilon

    def test_infeasible_limit(self, blob_data):
        cfg = config_from_dict(blob_config(eps_limit=0.5, seeds=[0]))
        with pytest.raises(BudgetInfeasibleError):
            run_experiment(cfg, blob_data)

    def test_sweep_and_checkpoint_override(self, blob_data):
        cfg = config_from_dict(blob_config(seeds=[0], methods=["onlypublic"],
                                           sweep=[{"n_labeled": 10, "k_uncertain": 30}, {"checkpoint_epoch": 2}]))
        report = run_experiment(cfg, blob_data)
        assert [(r.variant, r.n_labeled, r.checkpoint_epoch) for r in report.rows] == [(0, 10, 4), (1, 20, 2)]

    def test_write_metrics_uses_exact_floats(self, tmp_path):
        row = RunRow(0, "random", 5, 0.1 + 0.2, 1 / 3, 0.0)
        write_metrics_csv([row], tmp_path / "m.csv")
        assert read_metrics_csv(tmp_path / "m.csv") == [row]


class TestConfig:
    @pytest.mark.parametrize("patch", [
        {"bogus": 1},
        {"methods": ["coreset"]},
        {"eps_limit": -1.0},
        {"seeds": []},
        {"dataset": {"kind": "cifar"}},
        {"selection": {"n_labeled": 10, "k_uncertain": 5}},
        {"dpsgd": {"sampling_rate": 2.0}},
        {"sweep": [{"no_such_field": 3}]},
    ])
    def test_invalid_configs(self, patch):
        with pytest.raises(ConfigError):
            config_from_dict(blob_config(**patch))

    def test_missing_section(self):
        d = blob_config()
        del d["dpsgd"]
        with pytest.raises(ConfigError):
            config_from_dict(d)

    def test_shipped_configs_load(self):
        for path in sorted(CONFIGS.glob("*.json")):
            cfg = load_config(path)
            assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_bad_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.json")
