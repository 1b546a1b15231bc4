import math

import numpy as np
import pytest

from deepseqcoco import metrics
from deepseqcoco.augment import AugmentConfig
from deepseqcoco.checkpoint import load_checkpoint
from deepseqcoco.dataset import ImageSet, SplitConfig, scan_dataset, split
from deepseqcoco.errors import NumericError, SpecError, UsageError
from deepseqcoco.nn import build_network, preset
from deepseqcoco.optim import Schedule
from deepseqcoco.trainer import Callback, TrainConfig, evaluate, fit, predict, predict_proba


@pytest.fixture(scope="module")
def small_sets(small_root):
    samples, classes = scan_dataset(small_root)
    train, val = split(samples, SplitConfig(0.8, seed=0))
    return ImageSet(train, (64, 64)), ImageSet(val, (64, 64)), classes


def short_cfg(**kw):
    base = dict(schedule=Schedule.of(("adam", 1), ("sgd", 1)), batch_size=8, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(SpecError):
        TrainConfig(epochs=3, schedule=Schedule.of(("adam", 5)))
    with pytest.raises(SpecError):
        TrainConfig(batch_size=0)
    assert TrainConfig().epochs == 5


def test_zero_epochs(tmp_path, small_sets):
    train, val, _ = small_sets
    network, store = build_network(preset("desk"), 0)
    init = store.snapshot()
    result = fit(network, store, train, val, short_cfg(epochs=0, checkpoint_path=tmp_path / "m.dsqc"))
    assert len(result.history) == 0
    _, loaded, _ = load_checkpoint(result.checkpoint)
    for name, arr in init.items():
        np.testing.assert_array_equal(loaded[name].data, arr)


def run_once(tmp_path, sets, tag):
    train, val, _ = sets
    network, store = build_network(preset("desk"), 0)
    result = fit(network, store, train, val, short_cfg(checkpoint_path=tmp_path / f"{tag}.dsqc"))
    metrics.write_history_csv(result.history, tmp_path / f"{tag}.csv")
    return (tmp_path / f"{tag}.csv").read_bytes(), result.checkpoint.read_bytes(), result


def test_determinism(tmp_path, small_sets):
    h1, c1, r1 = run_once(tmp_path, small_sets, "a")
    h2, c2, _ = run_once(tmp_path, small_sets, "b")
    assert h1 == h2 and c1 == c2
    assert [r.optimizer for r in r1.history] == ["adam", "sgd"]
    assert h1.count(b"\n") == 3


def test_callbacks_see_fresh_state(small_sets):
    train, val, _ = small_sets
    events = []

    class Spy(Callback):
        def on_segment_start(self, epoch, segment, state, store):
            events.append(("segment", epoch, state.kind, state.kind == "adam" and state.t == 0 and not state.m
                           or state.kind == "sgd" and not state.velocity))

        def on_epoch_end(self, epoch, record, state, store):
            events.append(("epoch", epoch, record.optimizer))

    network, store = build_network(preset("desk"), 0)
    fit(network, store, train, None, short_cfg(), callbacks=[Spy()])
    assert events == [("segment", 1, "adam", True), ("epoch", 1, "adam"),
                      ("segment", 2, "sgd", True), ("epoch", 2, "sgd")]


def test_frozen_extractor_untouched(small_sets):
    train, _, _ = small_sets
    network, store = build_network(preset("desk", extractor_frozen=True), 0)
    before = store.snapshot()
    fit(network, store, train, None, short_cfg())
    after = store.snapshot()
    changed = [k for k in before if not np.array_equal(before[k], after[k])]
    assert changed == ["dense/kernel", "dense/bias"]


def test_overlap_rejected(small_sets):
    train, _, _ = small_sets
    network, store = build_network(preset("desk"), 0)
    with pytest.raises(UsageError):
        fit(network, store, train, train, short_cfg())


def test_non_finite_aborts_with_location(small_sets):
    train, val, _ = small_sets
    network, store = build_network(preset("desk"), 0)
    store["dense/kernel"].data[...] = np.float32(3e38)
    store["dense/bias"].data[...] = np.float32(3e38)
    with pytest.raises(NumericError, match=r"epoch 1, batch 0"):
        with np.errstate(over="ignore", invalid="ignore"):
            fit(network, store, train, val, short_cfg())


class TestEvaluate:
    def test_zero_head(self, small_sets):
        _, val, classes = small_sets
        network, store = build_network(preset("desk"), 0)
        store["dense/kernel"].data[...] = 0
        ev = evaluate(network, val, class_names=classes)
        assert abs(ev.loss - math.log(5)) <= 1e-6
        # uniform rows: argmax picks class 0 everywhere
        assert ev.accuracy == pytest.approx(np.mean(val.labels == 0))
        assert ev.report.class_names == classes

    def test_repeatable_and_pure(self, small_sets):
        _, val, _ = small_sets
        network, store = build_network(preset("desk"), 0)
        before = store.snapshot()
        a, b = evaluate(network, val), evaluate(network, val)
        assert a.loss == b.loss and np.array_equal(a.probs, b.probs)
        assert all(np.array_equal(before[k], v) for k, v in store.snapshot().items())

    def test_empty(self):
        network, _ = build_network(preset("desk"), 0)
        with pytest.raises(UsageError):
            evaluate(network, ImageSet([], (64, 64)))

    def test_top_k(self, small_sets):
        _, val, _ = small_sets
        ev = evaluate(build_network(preset("desk"), 0)[0], val)
        assert ev.top_k(5) == 1.0
        assert ev.top_k(1) == ev.accuracy


def test_predict(small_sets):
    train, _, classes = small_sets
    network, _ = build_network(preset("desk"), 0)
    path = train.samples[0].path
    name, probs, elapsed = predict(network, path, classes)
    name2, probs2, _ = predict(network, path, classes)
    assert probs.shape == (5,) and abs(probs.sum() - 1) < 1e-6
    assert name == name2 and np.array_equal(probs, probs2)
    assert name == classes[int(np.argmax(probs))]
    assert elapsed > 0


def test_predict_proba_batches_agree(small_sets):
    train, _, _ = small_sets
    network, _ = build_network(preset("desk"), 0)
    images = np.stack([train.image(i) for i in range(5)])
    np.testing.assert_allclose(predict_proba(network, images, 2), predict_proba(network, images, 5), atol=1e-6)


@pytest.mark.slow
def test_toy_train_accuracy_tracks_val(toy_split):
    train, val, classes = toy_split
    train_set, val_set = ImageSet(train, (64, 64)), ImageSet(val, (64, 64))
    network, store = build_network(preset("desk"), 0)
    result = fit(network, store, train_set, val_set, TrainConfig(schedule=Schedule.of(("adam", 5)),
                                                                  augment=AugmentConfig(seed=0)))
    final_val = result.history.records[-1].val_accuracy
    assert final_val >= 0.95
    assert evaluate(network, train_set).accuracy >= final_val - 0.05
