import numpy as np
import pytest

from mtlc.data import Dataset, SynthConfig, assign_folds, synth_generate, training_subset
from mtlc.errors import NoDefinedPairsError
from mtlc.grid import TrainSettings
from mtlc.learner import ModelConfig, train
from mtlc.tag import (
    affinity_step,
    read_tag_csv,
    run_tag,
    tag_vs_fold_sweep,
    write_tag_csv,
)


def trained_fixture(K=3, n=120, seed=0, epochs=10, duplicate=None):
    ds, _ = synth_generate(
        SynthConfig(
            n_rows=n, d=6, K=K, group_structure=(tuple(range(K)),),
            within_group_angle=0.4, noise_sd=0.2, seed=seed,
        )
    )
    if duplicate is not None:
        src, dst = duplicate
        labels = ds.labels.copy()
        labels[:, dst] = labels[:, src]
        ds = Dataset(
            features=ds.features, labels=labels, mask=ds.mask,
            task_names=ds.task_names, feature_names=ds.feature_names,
        )
    fa = assign_folds(ds, 4, seed=seed)
    sel = training_subset(ds, fa, 3)
    cfg = ModelConfig(d=6, r=8, K=K, learning_rate=0.01, epochs=epochs,
                      batch_size=64, seed=seed)
    model = train(ds, sel, cfg)
    rows = sel.train_rows
    batch = (
        ds.features[rows],
        ds.labels[rows].astype(float),
        sel.label_mask[rows].astype(float),
    )
    return ds, sel, cfg, model, batch


class TestAffinityStep:
    def test_zero_lookahead_is_exactly_zero(self):
        _, _, _, model, batch = trained_fixture()
        rec = affinity_step(model, batch, lookahead_lr=0.0)
        off_diag = ~np.eye(3, dtype=bool)
        assert np.all(rec.z[off_diag] == 0.0)
        assert np.all(rec.z_domain == 0.0)

    def test_diagonal_is_nan(self):
        _, _, _, model, batch = trained_fixture()
        rec = affinity_step(model, batch, lookahead_lr=0.01)
        assert np.all(np.isnan(np.diag(rec.z)))

    def test_loss_ratio_bound(self):
        _, _, _, model, batch = trained_fixture()
        for lr in (0.001, 0.1, 2.0):
            rec = affinity_step(model, batch, lookahead_lr=lr)
            vals = rec.z[~np.isnan(rec.z)]
            assert np.all(vals < 1.0)
            dvals = rec.z_domain[~np.isnan(rec.z_domain)]
            assert np.all(dvals < 1.0)

    def test_sign_matches_loss_change(self):
        from mtlc.learner import per_task_losses, trunk_grad

        _, _, _, model, batch = trained_fixture(seed=3)
        x, y, m = batch
        lr = 0.05
        rec = affinity_step(model, batch, lookahead_lr=lr)
        base, _ = per_task_losses(model.w1, model.b1, model.w2, model.b2, x, y, m)
        for j in range(3):
            gw1, gb1 = trunk_grad(model.w1, model.b1, model.w2, model.b2, x, y, m, j)
            after, _ = per_task_losses(
                model.w1 - lr * gw1, model.b1 - lr * gb1, model.w2, model.b2, x, y, m
            )
            for i in range(3):
                if i == j:
                    continue
                assert np.sign(rec.z[j, i]) == np.sign(base[i] - after[i])

    def test_duplicated_task_receives_positive_transfer(self):
        # task 2 is an exact label copy of task 0
        _, _, _, model, batch = trained_fixture(K=3, epochs=15, duplicate=(0, 2), seed=5)
        rec = affinity_step(model, batch, lookahead_lr=0.005)
        assert rec.z[0, 2] > 0

    def test_heads_untouched(self):
        _, _, _, model, batch = trained_fixture()
        w2_before = model.w2.copy()
        b2_before = model.b2.copy()
        affinity_step(model, batch, lookahead_lr=0.5)
        assert np.array_equal(model.w2, w2_before)
        assert np.array_equal(model.b2, b2_before)

    def test_single_task_batch_has_no_pairs(self):
        _, _, _, model, batch = trained_fixture()
        x, y, m = batch
        m1 = m.copy()
        m1[:, 1:] = 0.0
        with pytest.raises(NoDefinedPairsError):
            affinity_step(model, (x, y, m1), lookahead_lr=0.01)


class TestRunTag:
    def test_deterministic(self):
        ds, sel, cfg, _, _ = trained_fixture()
        a = run_tag(ds, sel, cfg, sample_every=3)
        b = run_tag(ds, sel, cfg, sample_every=3)
        assert np.array_equal(a.z_mean, b.z_mean, equal_nan=True)
        assert np.array_equal(a.domain_mean, b.domain_mean, equal_nan=True)

    def test_sparse_sampling_forces_final_record(self):
        ds, sel, cfg, _, _ = trained_fixture(epochs=2)
        res = run_tag(ds, sel, cfg, sample_every=10_000)
        assert res.n_records == 1

    def test_within_group_affinity_exceeds_cross_group(self):
        gaps = []
        for seed in (0, 1, 2):
            ds, _ = synth_generate(
                SynthConfig(
                    n_rows=600, d=12, K=6,
                    group_structure=((0, 1, 2), (3, 4, 5)),
                    within_group_angle=0.15, noise_sd=0.2, seed=seed,
                )
            )
            fa = assign_folds(ds, 4, seed=seed)
            sel = training_subset(ds, fa, 3)
            cfg = ModelConfig(d=12, r=16, K=6, learning_rate=0.01,
                              epochs=12, batch_size=64, seed=seed)
            res = run_tag(ds, sel, cfg, sample_every=5)
            within, cross = [], []
            groups = [{0, 1, 2}, {3, 4, 5}]
            for j in range(6):
                for i in range(6):
                    if i == j or np.isnan(res.z_mean[j, i]):
                        continue
                    same = any(j in g and i in g for g in groups)
                    (within if same else cross).append(res.z_mean[j, i])
            gaps.append(np.mean(within) - np.mean(cross))
        assert np.mean(gaps) > 0
        assert sum(g > 0 for g in gaps) >= 2


class TestSweep:
    def test_row_count_and_consistency(self, tmp_path):
        ds, _ = synth_generate(
            SynthConfig(n_rows=150, d=5, K=3, group_structure=((0, 1, 2),),
                        within_group_angle=0.3, noise_sd=0.2, seed=2)
        )
        fa = assign_folds(ds, 4, seed=2)
        settings = TrainSettings(r=8, learning_rate=0.01, epochs=4, batch_size=32)
        out = tmp_path / "tag.csv"
        results = tag_vs_fold_sweep(
            ds, fa, fold_counts=[1, 2], shifts=[0, 1], settings=settings,
            master_seed=7, sample_every=3, out_path=out,
        )
        assert set(results) == {(0, 1), (0, 2), (1, 1), (1, 2)}
        text = out.read_text().splitlines()
        pairwise = [l for l in text[1:] if ",SIGMA," not in l]
        assert len(pairwise) == 2 * 2 * 3 * 2  # shifts x folds x K x (K-1)

        # a single-setting sweep equals a direct run
        single = tag_vs_fold_sweep(
            ds, fa, fold_counts=[2], shifts=[1], settings=settings,
            master_seed=7, sample_every=3,
        )
        from mtlc.learner import ModelConfig
        from mtlc.util import derive_seed
        sel = training_subset(ds, fa.with_shift(1), 2)
        cfg = ModelConfig(d=5, r=8, K=3, learning_rate=0.01, epochs=4,
                          batch_size=32, seed=derive_seed(7, "tag", 1, 2))
        direct = run_tag(ds, sel, cfg, sample_every=3)
        assert np.array_equal(single[(1, 2)].z_mean, direct.z_mean, equal_nan=True)

    def test_csv_round_trip(self, tmp_path):
        ds, _ = synth_generate(
            SynthConfig(n_rows=120, d=5, K=3, group_structure=((0, 1, 2),),
                        noise_sd=0.3, within_group_angle=0.3, seed=4)
        )
        fa = assign_folds(ds, 4, seed=4)
        settings = TrainSettings(r=8, learning_rate=0.01, epochs=3, batch_size=32)
        out = tmp_path / "tag.csv"
        results = tag_vs_fold_sweep(
            ds, fa, fold_counts=[1], shifts=[0], settings=settings, out_path=out
        )
        back = read_tag_csv(out, n_tasks=3)
        assert set(back) == set(results)
        np.testing.assert_array_equal(
            back[(0, 1)].z_mean, results[(0, 1)].z_mean
        )
        np.testing.assert_array_equal(
            back[(0, 1)].domain_mean, results[(0, 1)].domain_mean
        )

    def test_parallel_matches_serial(self, tmp_path):
        ds, _ = synth_generate(
            SynthConfig(n_rows=120, d=5, K=3, group_structure=((0, 1, 2),),
                        noise_sd=0.3, within_group_angle=0.3, seed=6)
        )
        fa = assign_folds(ds, 4, seed=6)
        settings = TrainSettings(r=8, learning_rate=0.01, epochs=3, batch_size=32)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        tag_vs_fold_sweep(ds, fa, [1, 2], [0], settings, parallelism=1, out_path=p1)
        tag_vs_fold_sweep(ds, fa, [1, 2], [0], settings, parallelism=2, out_path=p2)
        assert p1.read_bytes() == p2.read_bytes()
