"""Episode sampling, metrics bookkeeping, evaluation, and short training."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdfewshot.exceptions import SamplingError
from rdfewshot.model import FewShotNetwork, ModelConfig
from rdfewshot.episodes import (EpisodicTrainer, RunMetrics, SplitSpec,
                                TrainConfig, embed_split, evaluate,
                                sample_episode, sample_episode_positions,
                                scenario_sweep, split_train_val)
from rdfewshot.rdm_io import RdmDataset


def synthetic_dataset(rng, n_classes=4, per_class=12, hw=20, aspects=(0.0,),
                      pattern="blob") -> RdmDataset:
    """In-memory dataset with a learnable blob-position pattern per class."""
    n = n_classes * per_class * len(aspects)
    images = np.zeros((n, hw, hw), dtype=np.float32)
    class_idx = np.zeros(n, dtype=np.int64)
    aspect = np.zeros(n)
    i = 0
    centers = [(5, 5), (5, 15), (15, 5), (15, 15), (10, 10), (3, 10)]
    for a in aspects:
        for c in range(n_classes):
            for _ in range(per_class):
                img = rng.normal(0, 0.05, (hw, hw))
                cy, cx = centers[c % len(centers)]
                yy, xx = np.mgrid[0:hw, 0:hw]
                jy, jx = rng.normal(0, 1.0, 2)
                img += np.exp(-(((yy - cy - jy) ** 2 + (xx - cx - jx) ** 2) / 8.0))
                images[i] = np.clip(img, 0, 1)
                class_idx[i] = c
                aspect[i] = a
                i += 1
    return RdmDataset(images=images, class_idx=class_idx, aspect=aspect,
                      subject=np.zeros(n, np.int64),
                      distance=np.full(n, 1.2), frame_index=np.arange(n),
                      class_names=[f"c{j}" for j in range(n_classes)])


@pytest.fixture(scope="module")
def blob_data():
    return synthetic_dataset(np.random.default_rng(0))


class TestSplitSpec:
    def test_disjoint_enforced(self):
        with pytest.raises(SamplingError):
            SplitSpec(train_aspects=(0.0, 90.0), test_aspects=(90.0,))

    def test_views(self, rng):
        data = synthetic_dataset(rng, aspects=(0.0, 90.0), per_class=3)
        spec = SplitSpec()
        assert set(np.unique(spec.train_view(data).aspect)) == {0.0}
        assert set(np.unique(spec.test_view(data).aspect)) == {90.0}


class TestSampleEpisode:
    def test_sizes_and_disjointness(self, blob_data, rng):
        task = sample_episode(blob_data, 3, 5, 15, rng)
        assert task.support_x.shape[0] == 15
        assert task.query_x.shape[0] == 15
        assert task.support_x.shape[1:] == (20, 20, 3)
        counts = np.bincount(task.support_y, minlength=3)
        assert (counts == 5).all()

    def test_position_disjointness(self, blob_data, rng):
        sup_pos, _, qry_pos, _, _ = sample_episode_positions(blob_data, 3, 4, 9, rng)
        assert not set(sup_pos) & set(qry_pos)

    def test_all_classes_one_shot(self, blob_data, rng):
        task = sample_episode(blob_data, 4, 1, 4, rng)
        assert sorted(task.support_y) == [0, 1, 2, 3]
        assert sorted(task.class_ids) == [0, 1, 2, 3]

    def test_label_remap_is_bijection(self, blob_data, rng):
        for _ in range(10):
            _, sup_y, _, qry_y, class_ids = sample_episode_positions(
                blob_data, 3, 2, 7, rng)
            assert set(sup_y) == {0, 1, 2}
            assert len(set(class_ids)) == 3
            assert np.bincount(qry_y, minlength=3).sum() == 7

    def test_same_seed_identical(self, blob_data):
        a = sample_episode(blob_data, 3, 2, 6, np.random.default_rng(42))
        b = sample_episode(blob_data, 3, 2, 6, np.random.default_rng(42))
        assert np.array_equal(a.support_x, b.support_x)
        assert np.array_equal(a.query_y, b.query_y)
        assert np.array_equal(a.class_ids, b.class_ids)

    def test_too_few_classes(self, blob_data, rng):
        with pytest.raises(SamplingError, match="classes"):
            sample_episode(blob_data, 9, 1, 9, rng)

    def test_deficient_class_named(self, rng):
        data = synthetic_dataset(rng, n_classes=3, per_class=4)
        with pytest.raises(SamplingError, match="'c0'"):
            sample_episode(data, 3, 4, 9, rng)

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=30, deadline=None)
    def test_support_query_always_disjoint(self, seed):
        data = synthetic_dataset(np.random.default_rng(1), per_class=8)
        rng = np.random.default_rng(seed)
        sup_pos, _, qry_pos, _, _ = sample_episode_positions(data, 3, 2, 7, rng)
        assert not set(sup_pos) & set(qry_pos)
        assert len(sup_pos) == 6 and len(qry_pos) == 7


class TestRunMetrics:
    def test_mean_is_arithmetic_mean(self, rng):
        accs = rng.uniform(0, 100, 37)
        m = RunMetrics.from_episodes(accs, np.zeros((3, 3)))
        assert m.mean_acc == pytest.approx(accs.mean(), abs=1e-12)

    def test_ci_formula(self, rng):
        accs = rng.uniform(0, 100, 50)
        m = RunMetrics.from_episodes(accs, np.zeros((2, 2)))
        assert m.ci95 == pytest.approx(1.96 * accs.std(ddof=1) / np.sqrt(50))

    def test_to_dict_round_trips_confusion(self):
        m = RunMetrics.from_episodes([50.0, 70.0], np.array([[3, 1], [0, 4]]))
        d = m.to_dict()
        assert d["confusion"] == [[3, 1], [0, 4]]
        assert d["episodes"] == 2


class TestEvaluate:
    def test_confusion_rows_sum_to_query_counts(self, blob_data):
        net = FewShotNetwork(ModelConfig(), seed=0)
        res = evaluate(net, blob_data, [(3, 1, 6)], episodes=10, seed=3)
        m = res["3way-1shot"]
        assert m.confusion.sum() == 10 * 6
        assert m.per_episode_acc.size == 10

    def test_seeded_determinism(self, blob_data):
        net = FewShotNetwork(ModelConfig(), seed=0)
        a = evaluate(net, blob_data, [(3, 2, 6)], episodes=8, seed=5)
        b = evaluate(net, blob_data, [(3, 2, 6)], episodes=8, seed=5)
        assert a["3way-2shot"].mean_acc == b["3way-2shot"].mean_acc
        assert np.array_equal(a["3way-2shot"].confusion, b["3way-2shot"].confusion)

    def test_untrained_loss_near_ln_n(self, rng):
        # structureless inputs: untrained scores are symmetric across
        # classes, so CE starts within 0.2 of ln(N)
        r = np.random.default_rng(3)
        n = 4 * 10
        data = RdmDataset(images=r.random((n, 20, 20)).astype(np.float32),
                          class_idx=np.repeat(np.arange(4), 10),
                          aspect=np.zeros(n), subject=np.zeros(n, np.int64),
                          distance=np.full(n, 1.2), frame_index=np.arange(n),
                          class_names=list("abcd"))
        net = FewShotNetwork(ModelConfig(), seed=1)
        losses = []
        sampler = np.random.default_rng(0)
        for _ in range(50):
            task = sample_episode(data, 3, 1, 6, sampler)
            loss, _ = net.episode_loss(task.support_x, task.support_y,
                                       task.query_x, task.query_y, 3, train=False)
            losses.append(float(loss.data))
        assert np.mean(losses) == pytest.approx(np.log(3), abs=0.2)

    def test_embed_split_matches_direct_embedding(self, blob_data):
        net = FewShotNetwork(ModelConfig(), seed=0)
        desc = embed_split(net, blob_data)
        assert desc.shape[0] == len(blob_data)
        one = net.embed_eval_descriptors(blob_data.stack_images(np.array([4])))
        # float32 GEMM blocking differs with batch size; equality is modulo
        # rounding noise
        assert np.allclose(desc[4], one[0], rtol=1e-4, atol=1e-5)


class TestScenarioSweep:
    def test_rows_per_value_and_empty_skip(self, rng, caplog):
        data = synthetic_dataset(rng, n_classes=3, per_class=8)
        data.distance[:] = 1.2
        data.distance[1::2] = 2.4  # interleave so every class has both
        net = FewShotNetwork(ModelConfig(), seed=0)
        rows = scenario_sweep(net, data, "distance", protocol=(3, 1, 3),
                              episodes=4, seed=0)
        assert [r["value"] for r in rows] == [1.2, 2.4]
        with caplog.at_level("WARNING"):
            empty = data.filter(distances=[9.9])
            rows2 = scenario_sweep(net, empty, "subject", protocol=(3, 1, 3),
                                   episodes=2, seed=0)
        assert rows2 == []


class TestTraining:
    def test_split_train_val_stratified(self, blob_data):
        train, val = split_train_val(blob_data, 0.25, seed=0)
        assert len(train) + len(val) == len(blob_data)
        for c, idx in val.indices_by_class().items():
            assert idx.size == 3  # 25% of 12

    def test_learns_blob_classes(self):
        data = synthetic_dataset(np.random.default_rng(5), n_classes=4,
                                 per_class=14)
        cfg = TrainConfig(n_way=4, k_shot=2, t_query=8, epochs=3,
                          episodes_per_epoch=6, val_fraction=0.25,
                          val_episodes=2, seed=0)
        trainer = EpisodicTrainer(cfg).fit(data)
        assert trainer.history_["epoch_loss"][-1] < trainer.history_["epoch_loss"][0]
        res = evaluate(trainer.network_, data, [(3, 2, 6)], episodes=20, seed=9)
        assert res["3way-2shot"].mean_acc > 80.0

    def test_same_seed_same_history(self):
        data = synthetic_dataset(np.random.default_rng(5), n_classes=3,
                                 per_class=14)
        cfg = TrainConfig(n_way=3, k_shot=2, t_query=6, epochs=2,
                          episodes_per_epoch=3, val_fraction=0.3,
                          val_episodes=1, seed=4)
        h1 = EpisodicTrainer(cfg).fit(data).history_
        h2 = EpisodicTrainer(cfg).fit(data).history_
        assert h1 == h2

    def test_checkpoint_resume_continues_identically(self, tmp_path):
        data = synthetic_dataset(np.random.default_rng(6), n_classes=3,
                                 per_class=14)
        base = dict(n_way=3, k_shot=2, t_query=6, episodes_per_epoch=3,
                    val_fraction=0.3, val_episodes=1, seed=8)
        straight = EpisodicTrainer(TrainConfig(epochs=4, **base)).fit(
            data, ckpt_dir=tmp_path / "a")
        EpisodicTrainer(TrainConfig(epochs=2, **base)).fit(data, ckpt_dir=tmp_path / "b")
        resumed = EpisodicTrainer(TrainConfig(epochs=4, **base)).fit(
            data, ckpt_dir=tmp_path / "b", resume_from=tmp_path / "b" / "last.ckpt")
        assert resumed.history_["epoch_loss"] == straight.history_["epoch_loss"]
        a = straight.last_state_
        b = resumed.last_state_
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_divergence_aborts_with_dump(self, tmp_path):
        data = synthetic_dataset(np.random.default_rng(7), n_classes=3,
                                 per_class=10)
        cfg = TrainConfig(n_way=3, k_shot=2, t_query=6, epochs=1,
                          episodes_per_epoch=2, val_fraction=0.0,
                          val_episodes=0, seed=1, lr=float("nan"))
        from rdfewshot.exceptions import TrainingDivergedError
        with pytest.raises(TrainingDivergedError):
            EpisodicTrainer(cfg).fit(data, ckpt_dir=tmp_path)
        assert (tmp_path / "diverged_episode.npz").exists()
