import numpy as np
import pytest

from sdc.data import SyntheticConfig, generate_synthetic, split_dataset
from sdc.model import EncoderConfig, init_params, TrainableModel
from sdc.numerics import l2_normalize_rows
from sdc.pipeline import (
    PipelineConfig,
    infer,
    load_config,
    make_ablation_config,
    run_discovery,
)


def tiny_split(seed=0, k=4, per=40, dim=8, sep=8.0):
    ds = generate_synthetic(
        SyntheticConfig(num_categories=k, dim=dim, points_per_category=per,
                        center_separation=sep, seed=seed)
    )
    return split_dataset(ds, labeled_fraction=0.25, known_category_ratio=0.75,
                         test_fraction=0.2, seed=seed)


def tiny_config(**overrides):
    defaults = dict(
        epochs_pretrain=40, epochs_train=3, batch_size=64, lr=5e-3,
        hidden_dim=8, seed=0,
    )
    defaults.update(overrides)
    return PipelineConfig(**defaults)


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(lambda1_start=0.8, lambda1_end=0.6)
    with pytest.raises(ValueError):
        PipelineConfig(lambda2=-0.1)
    with pytest.raises(ValueError):
        PipelineConfig(beta=0.0)
    with pytest.raises(ValueError):
        PipelineConfig(epsilon_ot=0.0)


def test_lambda1_schedule_linear_clamped():
    cfg = PipelineConfig(lambda1_start=0.6, lambda1_end=0.7, epochs_train=5)
    expected = [0.6 + 0.1 * e / 4 for e in range(5)]
    got = [cfg.lambda1_at(e) for e in range(5)]
    np.testing.assert_allclose(got, expected, atol=1e-12)
    assert cfg.lambda1_at(99) == pytest.approx(0.7)
    single = PipelineConfig(epochs_train=1)
    assert single.lambda1_at(0) == single.lambda1_start


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# benchmark settings\n"
        "beta = 0.25\n"
        "epochs_train = 7\n"
        "disable_cbm = true\n"
        "hidden_dim = 4\n"
        "k_override = none\n"
    )
    cfg = load_config(path)
    assert cfg.beta == 0.25
    assert cfg.epochs_train == 7
    assert cfg.disable_cbm is True
    assert cfg.hidden_dim == 4
    assert cfg.k_override is None


def test_load_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("no_such_option = 3\n")
    with pytest.raises(ValueError, match="unknown config key"):
        load_config(path)


def test_ablation_arm_lookup():
    cfg = make_ablation_config(PipelineConfig(), "no-la")
    assert cfg.disable_logit_adjustment
    with pytest.raises(ValueError):
        make_ablation_config(PipelineConfig(), "bogus")


def test_run_discovery_zero_epochs_is_initialization_baseline():
    ds = tiny_split()
    cfg = tiny_config(epochs_train=0)
    model, report, log = run_discovery(ds, cfg)
    assert log == []
    assert report is not None
    # classifier rows are still the unit-norm prototypes
    norms = np.linalg.norm(model.params["cls_w"], axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-9)


def test_run_discovery_reproducible():
    ds = tiny_split()
    cfg = tiny_config(epochs_train=2)
    _, r1, log1 = run_discovery(ds, cfg)
    _, r2, log2 = run_discovery(ds, cfg)
    assert r1.to_json() == r2.to_json()
    assert log1 == log2


def test_run_discovery_log_schema():
    ds = tiny_split()
    _, _, log = run_discovery(ds, tiny_config(epochs_train=2))
    assert len(log) == 2
    for entry in log:
        assert set(entry) == {
            "epoch", "sup_loss", "cont_loss", "total_loss",
            "pseudo_label_acc_all", "pseudo_label_acc_novel", "lambda1",
        }
        assert entry["pseudo_label_acc_all"] is not None


def test_run_discovery_cbm_ccm_disabled_reduces_to_original():
    # the in-loop assert verifies calibrated == original when both are off
    ds = tiny_split()
    cfg = tiny_config(epochs_train=1, disable_cbm=True, disable_ccm=True)
    _, report, _ = run_discovery(ds, cfg)
    assert report is not None


def test_run_discovery_no_la_flag_runs():
    ds = tiny_split()
    cfg = tiny_config(epochs_train=1, disable_logit_adjustment=True)
    _, report, _ = run_discovery(ds, cfg)
    assert report.n_test == ds.indices("T").size


def test_run_discovery_k_override():
    ds = tiny_split()
    cfg = tiny_config(epochs_train=1, k_override=5)
    model, report, _ = run_discovery(ds, cfg)
    assert model.num_classes == 5
    assert report is not None


def test_run_discovery_both_eval_modes():
    ds = tiny_split()
    cfg = tiny_config(epochs_train=2)
    _, clus, _ = run_discovery(ds, cfg, eval_mode="clustering")
    _, cls, _ = run_discovery(ds, cfg, eval_mode="classifier")
    assert clus.mode == "clustering"
    assert cls.mode == "classifier"
    # easy separated fixture: both modes recover everything
    assert clus.h_score == 100.0
    assert cls.h_score == 100.0


def test_run_discovery_requires_splits():
    ds = generate_synthetic(
        SyntheticConfig(num_categories=3, dim=4, points_per_category=10, seed=0)
    )
    with pytest.raises(ValueError):
        run_discovery(ds, tiny_config())


def test_run_discovery_warns_on_small_batch():
    ds = tiny_split()
    with pytest.warns(UserWarning, match="batch_size"):
        run_discovery(ds, tiny_config(batch_size=2, epochs_train=1))


def separated_model(k=3, d=4):
    enc = EncoderConfig(kind="identity", dropout_rate=0.0)
    protos = l2_normalize_rows(np.eye(k, d) + 0.01)
    params = init_params(enc, d, k, np.random.default_rng(0))
    params["cls_w"] = protos
    return TrainableModel(params, enc, d)


def test_infer_classifier_prototype_fixed_point():
    model = separated_model()
    x = model.params["cls_w"][1][None, :]
    assert infer(model, x, mode="classifier")[0] == 1


def test_infer_classifier_order_independent():
    model = separated_model()
    rng = np.random.default_rng(1)
    X = rng.normal(size=(10, 4))
    preds = infer(model, X, mode="classifier")
    perm = rng.permutation(10)
    np.testing.assert_array_equal(infer(model, X[perm], mode="classifier"), preds[perm])


def test_infer_clustering_needs_enough_rows():
    model = separated_model(k=3)
    with pytest.raises(ValueError):
        infer(model, np.zeros((2, 4)), mode="clustering")


def test_infer_modes_agree_on_separated_data():
    model = separated_model(k=3, d=4)
    rng = np.random.default_rng(2)
    X = np.vstack([
        10 * model.params["cls_w"][c] + 0.05 * rng.normal(size=(20, 4))
        for c in range(3)
    ])
    truth = np.repeat(np.arange(3), 20)
    cls_preds = infer(model, X, mode="classifier")
    clus_preds = infer(model, X, mode="clustering", seed=0)
    assert (cls_preds == truth).mean() == 1.0
    # clustering ids are arbitrary; check the partition matches exactly
    from sdc.evaluation import hungarian_map

    mapping = hungarian_map(clus_preds, truth, 3)
    assert (mapping[clus_preds] == truth).mean() == 1.0
