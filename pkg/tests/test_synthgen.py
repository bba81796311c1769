import numpy as np
import pytest
from scipy import stats

from logic.classifier import fit_logit, predict_probs
from logic.constants import MOUSE_ILEUM_COUNTS
from logic.errors import DataError
from logic.scores import LabeledBatch
from logic.split_conformal import calibrate_split, split_sets
from logic.synthgen import SynthConfig, balanced_tree_edges, generate, shift_props


def test_default_config_uses_mouse_ileum_proportions():
    cfg = SynthConfig()
    counts = dict(MOUSE_ILEUM_COUNTS)
    total = sum(counts.values())
    assert len(cfg.class_names) == 15
    for name, prop in cfg.props_dict().items():
        assert prop == pytest.approx(counts[name] / total)


def test_generate_is_reproducible():
    cfg = SynthConfig(seed=5, n_features=20, n_informative=10)
    x1, y1 = generate(cfg, 50)
    x2, y2 = generate(cfg, 50)
    assert np.array_equal(x1.values, x2.values)
    assert y1 == y2
    assert x1.ids[0] == "cell_00000"


def test_different_seed_changes_data():
    x1, _ = generate(SynthConfig(seed=1, n_features=20, n_informative=10), 30)
    x2, _ = generate(SynthConfig(seed=2, n_features=20, n_informative=10), 30)
    assert not np.array_equal(x1.values, x2.values)


def test_shift_keeps_class_conditionals():
    cfg = SynthConfig(seed=3, n_features=20, n_informative=10)
    props = {name: 1.0 / 15 for name in cfg.class_names}
    shifted = shift_props(cfg, props)
    assert np.array_equal(cfg.class_means(), shifted.class_means())
    assert shifted.props_dict()["Tuft"] == pytest.approx(1 / 15)


def test_label_frequencies_follow_props():
    cfg = SynthConfig(seed=4, n_features=10, n_informative=5)
    _, y = generate(cfg, 20000)
    freq = {name: 0 for name in cfg.class_names}
    for label in y:
        freq[label] += 1
    for name, prop in cfg.props_dict().items():
        assert freq[name] / 20000 == pytest.approx(prop, abs=0.01)


def test_siblings_closer_than_distant_classes():
    cfg = SynthConfig(seed=6, n_features=200, n_informative=200, class_separation=3.0)
    means = dict(zip(cfg.class_names, cfg.class_means()))
    sibling = np.linalg.norm(means["T (CD4+)"] - means["T (CD8+)"])
    distant = np.linalg.norm(means["T (CD4+)"] - means["Enterocyte"])
    assert sibling < distant


def test_uninformative_features_have_zero_means():
    cfg = SynthConfig(n_features=40, n_informative=10)
    assert np.all(cfg.class_means()[:, 10:] == 0.0)
    assert cfg.informative_features() == cfg.feature_names()[:10]


@pytest.mark.parametrize(
    "props",
    [
        {"Tuft": 0.5, "Goblet": 0.4},
        {"Tuft": 0.5, "Goblet": 0.5, "Unicorn": 0.0},
        [1.0 / 14] * 14,
    ],
)
def test_shift_props_rejects_invalid(props):
    with pytest.raises(DataError) as exc:
        shift_props(SynthConfig(n_features=10, n_informative=5), props)
    assert exc.value.code == "InvalidProps"


def test_balanced_tree():
    edges = balanced_tree_edges(2, 3)
    cfg = SynthConfig(edges=edges, n_features=10, n_informative=5)
    assert len(cfg.class_names) == 9
    assert all(name.startswith("leaf_") for name in cfg.class_names)
    assert cfg.props_dict()[cfg.class_names[0]] == pytest.approx(1 / 9)


def test_from_dict_with_tree_and_props():
    cfg = SynthConfig.from_dict({
        "tree": {"depth": 1, "branching": 2},
        "class_props": [0.25, 0.75],
        "n_features": 8,
        "n_informative": 4,
        "seed": 9,
    })
    assert cfg.class_props == (0.25, 0.75)
    assert cfg.seed == 9


def test_invalid_config():
    with pytest.raises(DataError):
        SynthConfig(n_features=5, n_informative=6)
    with pytest.raises(DataError):
        generate(SynthConfig(n_features=5, n_informative=2), 0)


def test_shifted_samples_match_class_conditionals():
    cfg = SynthConfig(edges=balanced_tree_edges(2, 2), n_features=10, n_informative=5, seed=8)
    shifted = shift_props(cfg, [0.4, 0.3, 0.2, 0.1])
    xa, ya = generate(cfg, 20000, np.random.default_rng(1))
    xb, yb = generate(shifted, 50000, np.random.default_rng(2))
    ya, yb = np.asarray(ya), np.asarray(yb)
    for c in cfg.class_names:
        a = xa.values[ya == c]
        b = xb.values[yb == c]
        assert min(len(a), len(b)) > 4500
        assert np.abs(a.mean(axis=0) - b.mean(axis=0)).max() < 0.1
        ratio = a.var(axis=0) / b.var(axis=0)
        assert ((ratio > 0.85) & (ratio < 1.15)).all()
        for j in range(cfg.n_features):
            assert stats.ks_2samp(a[:, j], b[:, j]).pvalue > 1e-4


def test_wide_separation_gives_singleton_split_sets():
    cfg = SynthConfig(
        edges=balanced_tree_edges(2, 3), n_features=60, n_informative=30, class_separation=10.0, seed=3,
    )
    rng = np.random.default_rng(4)
    x_train, y_train = generate(cfg, 500, rng)
    x_cal, y_cal = generate(cfg, 1000, rng)
    x_test, y_test = generate(cfg, 2000, rng)
    model = fit_logit(x_train, y_train, k_features=50)
    calib = LabeledBatch(predict_probs(model, x_cal).with_classes(cfg.class_names), y_cal)
    probs = predict_probs(model, x_test).with_classes(cfg.class_names)
    sizes = split_sets(calibrate_split(calib, 0.1), probs).sizes()
    accuracy = np.mean([probs.class_names[j] == y for j, y in zip(probs.point_predictions(), y_test)])
    assert accuracy > 0.98
    assert np.mean(sizes == 1) >= 0.85
    assert np.mean(sizes >= 2) <= 0.01
