import numpy as np
import pytest

from mtlc.data import Dataset, SynthConfig, assign_folds, synth_generate, training_subset
from mtlc.errors import ConfigError, SpecMismatchError
from mtlc.grid import (
    KIND_MTL,
    KIND_STAG,
    KIND_STL,
    EObservation,
    ETaskRecord,
    GridObservation,
    GridPointSpec,
    TaskRecord,
    TrainSettings,
    average_over_shifts,
    execute_grid,
    grid_config_hash,
    observation_fit_points,
    plan_grid,
    read_grid_csv,
    run_entry,
    write_grid_csv,
)

FAST_STL = TrainSettings(r=4, learning_rate=0.01, epochs=3, batch_size=32)
FAST_MTL = TrainSettings(r=4, learning_rate=0.01, epochs=3, batch_size=32)


def desk_fixture(n=90, K=3, seed=0):
    ds, _ = synth_generate(
        SynthConfig(
            n_rows=n, d=4, K=K, group_structure=(tuple(range(K)),),
            within_group_angle=0.4, label_rate=0.9, noise_sd=0.2, seed=seed,
        )
    )
    fa = assign_folds(ds, 4, seed=seed)
    return ds, fa


class TestPlanGrid:
    def test_entry_enumeration(self):
        plan = plan_grid(K=3, n_folds=4, m_max=2, shifts=[0])
        kinds = [e.kind for e in plan.entries]
        assert len(plan.entries) == 11
        assert kinds.count(KIND_STL) == 6
        assert kinds.count(KIND_MTL) == 2
        assert kinds.count(KIND_STAG) == 3

    def test_m_max_one_has_no_augmented_entries(self):
        plan = plan_grid(K=3, n_folds=4, m_max=1, shifts=[0])
        assert all(e.kind != KIND_STAG for e in plan.entries)

    def test_master_seed_changes_seeds_not_specs(self):
        a = plan_grid(K=2, n_folds=4, m_max=2, shifts=[0, 1], master_seed=1)
        b = plan_grid(K=2, n_folds=4, m_max=2, shifts=[0, 1], master_seed=2)
        assert a.entries == b.entries
        assert all(a.entry_seed(e) != b.entry_seed(e) for e in a.entries)

    def test_augmented_entries_reuse_reference_seed(self):
        plan = plan_grid(K=2, n_folds=4, m_max=3, shifts=[0])
        stag = next(e for e in plan.entries if e.kind == KIND_STAG)
        ref = GridPointSpec(shift=stag.shift, kind=KIND_MTL, m=stag.m)
        assert plan.entry_seed(stag) == plan.entry_seed(ref)

    def test_benchmark_shaped_plan_enumerates(self):
        # 244 tasks, 10 folds, m up to 9, all 10 shifts: plan-size check only
        plan = plan_grid(K=244, n_folds=10, m_max=9, shifts=range(10))
        per_shift = 244 * 9 + 9 + 8 * 244
        assert len(plan.entries) == 10 * per_shift

    def test_validation(self):
        with pytest.raises(ConfigError):
            plan_grid(K=2, n_folds=4, m_max=4, shifts=[0])
        with pytest.raises(ConfigError):
            plan_grid(K=2, n_folds=4, m_max=2, shifts=[])
        with pytest.raises(ConfigError):
            plan_grid(K=2, n_folds=4, m_max=2, shifts=[0, 0])


class TestExecuteGrid:
    def test_counts_and_order(self, tmp_path):
        ds, fa = desk_fixture()
        plan = plan_grid(K=3, n_folds=4, m_max=2, shifts=[0, 2], stl=FAST_STL, mtl=FAST_MTL)
        obs = execute_grid(plan, ds, fa, out_path=tmp_path / "grid.csv")
        assert len(obs) == len(plan.entries)
        assert [o.spec for o in obs] == list(plan.entries)
        for o in obs:
            assert o.error is None
            assert len(o.records) == plan.expected_rows(o.spec)

    def test_count_conservation_for_mtl(self):
        ds, fa = desk_fixture()
        plan = plan_grid(K=3, n_folds=4, m_max=3, shifts=[1], stl=FAST_STL, mtl=FAST_MTL)
        for spec in plan.entries:
            if spec.kind != KIND_MTL:
                continue
            obs = run_entry(spec, plan, ds, fa)
            sel = training_subset(ds, fa.with_shift(spec.shift), spec.m)
            assert sum(r.n_t for r in obs.records) == sel.label_mask.sum()
            for rec in obs.records:
                assert rec.n_sigma == sel.label_mask.sum() - rec.n_t

    def test_monotone_counts_in_m(self):
        ds, fa = desk_fixture()
        plan = plan_grid(K=3, n_folds=4, m_max=3, shifts=[0], stl=FAST_STL, mtl=FAST_MTL)
        by_m = {}
        for spec in plan.entries:
            if spec.kind == KIND_MTL:
                obs = run_entry(spec, plan, ds, fa)
                by_m[spec.m] = [r.n_t for r in obs.records]
        for m in (2, 3):
            assert all(b >= a for a, b in zip(by_m[m - 1], by_m[m]))

    def test_rerun_byte_identical(self, tmp_path):
        ds, fa = desk_fixture()
        plan = plan_grid(K=3, n_folds=4, m_max=2, shifts=[0], stl=FAST_STL, mtl=FAST_MTL)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        execute_grid(plan, ds, fa, out_path=p1)
        execute_grid(plan, ds, fa, out_path=p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_parallelism_does_not_change_bytes(self, tmp_path):
        ds, fa = desk_fixture()
        plan = plan_grid(K=3, n_folds=4, m_max=2, shifts=[0], stl=FAST_STL, mtl=FAST_MTL)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        execute_grid(plan, ds, fa, parallelism=1, out_path=p1)
        execute_grid(plan, ds, fa, parallelism=2, out_path=p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_resume_from_partial_csv(self, tmp_path):
        ds, fa = desk_fixture()
        plan = plan_grid(K=3, n_folds=4, m_max=2, shifts=[0], stl=FAST_STL, mtl=FAST_MTL)
        full = tmp_path / "full.csv"
        execute_grid(plan, ds, fa, out_path=full)
        # simulate an interrupted sweep: keep only the first 6 data rows
        lines = full.read_text().splitlines(keepends=True)
        partial = tmp_path / "partial.csv"
        partial.write_text("".join(lines[:7]))
        execute_grid(plan, ds, fa, out_path=partial, resume=True)
        assert partial.read_bytes() == full.read_bytes()

    def test_stale_hash_triggers_recompute(self, tmp_path):
        ds, fa = desk_fixture()
        plan_a = plan_grid(K=3, n_folds=4, m_max=2, shifts=[0], stl=FAST_STL, mtl=FAST_MTL)
        plan_b = plan_grid(
            K=3, n_folds=4, m_max=2, shifts=[0], master_seed=9,
            stl=FAST_STL, mtl=FAST_MTL,
        )
        out = tmp_path / "grid.csv"
        execute_grid(plan_a, ds, fa, out_path=out)
        execute_grid(plan_b, ds, fa, out_path=out)
        obs = read_grid_csv(out)
        assert obs[0].seed == plan_b.entry_seed(obs[0].spec)

    def test_round_trip_csv(self, tmp_path):
        ds, fa = desk_fixture()
        plan = plan_grid(K=3, n_folds=4, m_max=2, shifts=[0], stl=FAST_STL, mtl=FAST_MTL)
        obs = execute_grid(plan, ds, fa)
        path = tmp_path / "grid.csv"
        write_grid_csv(obs, path, grid_config_hash(plan, ds, fa))
        back = read_grid_csv(path)
        assert [o.spec for o in back] == [o.spec for o in obs]
        assert back[0].records == obs[0].records


class TestReferenceConsistency:
    def test_zero_extra_labels_reproduces_reference(self):
        ds, fa = desk_fixture(n=80, K=3, seed=4)
        # erase task 2's labels in the fold that would augment m=1
        positions = fa.positions()
        mask = ds.mask.copy()
        mask[(positions == 1), 2] = False
        ds = Dataset(
            features=ds.features, labels=ds.labels, mask=mask,
            task_names=ds.task_names, feature_names=ds.feature_names,
        )
        plan = plan_grid(K=3, n_folds=4, m_max=2, shifts=[0], stl=FAST_STL, mtl=FAST_MTL)
        ref = run_entry(GridPointSpec(shift=0, kind=KIND_MTL, m=1), plan, ds, fa)
        aug = run_entry(GridPointSpec(shift=0, kind=KIND_STAG, m=1, aux_task=2), plan, ds, fa)
        for r_ref, r_aug in zip(ref.records, aug.records):
            assert r_aug.auroc == r_ref.auroc
            assert r_aug.aupr == r_ref.aupr
        aug_rec = next(r for r in aug.records if r.task == 0)
        assert aug_rec.n_aux == 0.0


class TestAveraging:
    @staticmethod
    def rec(task, n_t, auroc, aupr=0.5):
        return TaskRecord(task=task, n_t=n_t, n_sigma=0.0, n_aux=0.0,
                          auroc=auroc, aupr=aupr, n_test_pos=1, n_test_neg=1)

    def obs(self, shift, m, auroc, n_t=10.0):
        return GridObservation(
            spec=GridPointSpec(shift=shift, kind=KIND_MTL, m=m),
            seed=0,
            records=(self.rec(0, n_t, auroc),),
        )

    def test_single_shift_passthrough(self):
        out = average_over_shifts([self.obs(0, 1, 0.7)])
        assert len(out) == 1
        assert out[0].records[0].auroc == 0.7
        assert out[0].records[0].n_t == 10.0

    def test_manual_two_shift_average(self):
        out = average_over_shifts([
            self.obs(0, 1, 0.6, n_t=10.0),
            self.obs(1, 1, 0.8, n_t=14.0),
        ])
        rec = out[0].records[0]
        assert rec.auroc == pytest.approx(0.7)
        assert rec.n_t == pytest.approx(12.0)
        assert rec.auroc_shifts == 2

    def test_minority_definition_is_undefined(self):
        observations = [self.obs(s, 1, 0.9 if s < 2 else None) for s in range(10)]
        out = average_over_shifts(observations)
        rec = out[0].records[0]
        assert rec.auroc is None
        assert rec.auroc_shifts == 2
        # counts still averaged over all shifts
        assert rec.n_t == 10.0

    def test_spec_mismatch(self):
        with pytest.raises(SpecMismatchError):
            average_over_shifts([self.obs(0, 1, 0.5), self.obs(1, 2, 0.5)])


class TestFitPointExtraction:
    def test_stl_and_stag_filters(self):
        ds, fa = desk_fixture()
        plan = plan_grid(K=3, n_folds=4, m_max=2, shifts=[0, 1], stl=FAST_STL, mtl=FAST_MTL)
        obs = execute_grid(plan, ds, fa)
        stl_pts = observation_fit_points(obs, KIND_STL, "auroc", task=1)
        assert set(stl_pts) == {0, 1}
        for pts in stl_pts.values():
            assert all(p.args.n_sigma == 0 and p.args.n_aux == 0 for p in pts)
        stag_pts = observation_fit_points(obs, KIND_STAG, "aupr", task=0, aux_task=2)
        for pts in stag_pts.values():
            for p in pts:
                assert p.fold_count == 1  # m_max - 1
        mtl_pts = observation_fit_points(obs, KIND_MTL, "auroc", task=2)
        for pts in mtl_pts.values():
            assert sorted(p.fold_count for p in pts) == [1, 2]
            assert all(p.args.n_sigma > 0 for p in pts)
