import numpy as np
import pytest

from cinembed.exceptions import DataError, SplitError
from cinembed.label_store import (LabeledView, LabelTable, SplitPlan, build_plan, class_members,
                                  enumerate_unseen, sample_split, unseen_schedule)


@pytest.fixture
def table():
    # 0-3 class 0, 4-7 class 1, 8-11 class 2, node 12 carries {1, 2}, node 13 unlabeled
    mapping = {i: i // 4 for i in range(12)}
    mapping[12] = [1, 2]
    return LabelTable.from_mapping(14, mapping)


def test_from_mapping(table):
    assert table.classes == (0, 1, 2)
    assert table.labels_of(12) == frozenset({1, 2})
    assert table.labels_of(13) == frozenset()
    assert table.is_multilabel
    assert list(table.labeled_nodes()) == list(range(13))
    assert table.label_counts()[12] == 2


def test_unknown_class_rejected():
    with pytest.raises(DataError):
        LabelTable.from_mapping(3, {0: 5}, classes=(0, 1))


def test_node_outside_range_rejected():
    with pytest.raises(DataError):
        LabelTable.from_mapping(3, {3: 0})


def test_build_plan_removes_unseen_nodes(table):
    plan = build_plan(table, [0, 1, 4, 5, 8, 12], unseen=[2])
    assert plan.seen == (0, 1)
    assert plan.unseen == (2,)
    assert plan.train_kept == (0, 1, 4, 5)
    assert plan.train_removed == (8, 12)
    assert 13 not in plan.test
    assert set(plan.test).isdisjoint(plan.train)


def test_build_plan_rejects_empty_kept_set(table):
    with pytest.raises(SplitError):
        build_plan(table, [8, 9], unseen=[2])


def test_build_plan_rejects_unknown_unseen(table):
    with pytest.raises(SplitError):
        build_plan(table, [0], unseen=[7])


def test_labeled_view_hides_unseen_labels(table):
    plan = build_plan(table, [0, 4, 8, 12], unseen=[2])
    view = plan.labeled_view(table)
    assert len(view) == 2
    assert set(view.node_labels) == {0, 4}
    assert view.seen == (0, 1)
    assert all(labels <= set(view.seen) for labels in view.node_labels.values())


def test_view_peers_and_indicator():
    view = LabeledView(n=5, node_labels={0: frozenset({0}), 1: frozenset({0, 1}), 3: frozenset({1})},
                       seen=(0, 1))
    assert list(view.peers(0)) == [1]
    assert list(view.peers(1)) == [0, 3]
    assert list(view.peers(2)) == []
    Y = view.indicator()
    np.testing.assert_array_equal(Y, [[1, 0], [1, 1], [0, 0], [0, 1], [0, 0]])
    assert list(view.members(1)) == [1, 3]


def test_sample_split_is_stratified_and_deterministic():
    labels = LabelTable.from_mapping(60, {i: i % 3 for i in range(60)})
    plan = sample_split(labels, 0.3, unseen_count=1, seed=11)
    again = sample_split(labels, 0.3, unseen_count=1, seed=11)
    assert plan == again
    for cls in labels.classes:
        assert sum(1 for i in plan.train if i % 3 == cls) == 6
    assert len(plan.unseen) == 1
    assert all(i % 3 != plan.unseen[0] for i in plan.train_kept)
    assert set(plan.train_kept) <= set(plan.train)
    assert sorted(plan.train + plan.test) == list(range(60))


def test_sample_split_differs_across_seeds():
    labels = LabelTable.from_mapping(60, {i: i % 3 for i in range(60)})
    assert sample_split(labels, 0.5, seed=1).train != sample_split(labels, 0.5, seed=2).train


def test_sample_split_validates_arguments(table):
    with pytest.raises(ValueError):
        sample_split(table, 1.0)
    with pytest.raises(SplitError):
        sample_split(table, 0.5, unseen_count=3)


def test_class_members(table):
    plan = build_plan(table, [0, 1, 4, 8], unseen=[2])
    assert class_members(plan, table, 0) == [0, 1]
    with pytest.raises(ValueError):
        class_members(plan, table, 2)


def test_split_plan_file_round_trip(table, tmp_path):
    plan = sample_split(table, 0.5, unseen_count=1, seed=4)
    path = tmp_path / 'split.txt'
    plan.dump(path)
    assert SplitPlan.load(path) == plan


def test_split_plan_load_reports_line(tmp_path):
    path = tmp_path / 'split.txt'
    path.write_text('#classes=0,1\n#seen=0,1\n#unseen=\n0\ttrain\n1\tbogus\n')
    with pytest.raises(DataError, match=':5:'):
        SplitPlan.load(path)


def test_unseen_schedule_enumerates_small_universes():
    schedule = unseen_schedule(range(6), 2)
    assert len(schedule) == 15
    assert len(set(schedule)) == 15
    assert schedule == enumerate_unseen(range(6), 2)


def test_unseen_schedule_samples_large_universes():
    schedule = unseen_schedule(range(10), 3, seed=5)
    assert len(schedule) == 20
    assert all(len(set(s)) == 3 for s in schedule)
    assert unseen_schedule(range(10), 3, seed=5) == schedule
    assert len(unseen_schedule(range(6), 2, repeats=4)) == 4


def test_unseen_schedule_balanced_mode():
    assert unseen_schedule(range(4), 0, repeats=3) == [(), (), ()]
