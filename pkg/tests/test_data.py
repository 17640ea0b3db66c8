"""Dataset ingestion, split protocols, few-shot sampling, batching."""

import json

import numpy as np
import pytest

from roft.data import (
    Dataset,
    batches,
    collate,
    fewshot,
    load_dataset,
    molecule_to_record,
    split,
    write_dataset,
)
from roft.errors import DatasetParseError, ValidationError
from roft.gen import gen_dataset


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def basic_record(mol_id="a", labels=(1.0,), scaffold="s0", n=3):
    return {
        "id": mol_id,
        "node_feats": [[float(i), 1.0] for i in range(n)],
        "edges": [[i, i + 1] for i in range(n - 1)],
        "labels": list(labels),
        "scaffold": scaffold,
    }


class TestLoad:
    def test_two_molecules(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [basic_record("a"), basic_record("b")])
        ds = load_dataset(path)
        assert len(ds) == 2
        assert ds.task_count == 1
        assert ds.task_kind == "classification"

    def test_null_label_masked(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [basic_record("a", labels=(None,))])
        ds = load_dataset(path, task_kind="classification")
        assert np.isnan(ds.molecules[0].labels[0])
        batch = collate(ds, [0])
        assert not batch.label_mask[0, 0]
        assert batch.labels[0, 0] == 0.0

    def test_edges_expanded_both_ways(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [basic_record("a", n=3)])
        ds = load_dataset(path)
        edges = {tuple(e) for e in ds.molecules[0].edges.tolist()}
        assert edges == {(0, 1), (1, 0), (1, 2), (2, 1)}

    def test_round_trip(self, tmp_path):
        records = gen_dataset(20, tasks=2, seed=5, task_kind="regression")
        p1 = tmp_path / "one.jsonl"
        write_dataset(p1, records)
        ds = load_dataset(p1)
        p2 = tmp_path / "two.jsonl"
        write_dataset(p2, [molecule_to_record(m) for m in ds.molecules])
        rt = load_dataset(p2)
        assert len(rt) == len(ds)
        for a, b in zip(ds.molecules, rt.molecules):
            assert a.mol_id == b.mol_id
            assert np.array_equal(a.node_feats, b.node_feats)
            assert {tuple(e) for e in a.edges.tolist()} == {
                tuple(e) for e in b.edges.tolist()
            }
            assert np.array_equal(np.isnan(a.labels), np.isnan(b.labels))
            assert a.scaffold == b.scaffold

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(basic_record()) + "\n{oops\n", encoding="utf-8")
        with pytest.raises(DatasetParseError, match="line 2"):
            load_dataset(path)

    def test_inconsistent_task_count_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [basic_record("a", labels=(1.0,)), basic_record("b", labels=(1.0, 0.0))])
        with pytest.raises(ValidationError):
            load_dataset(path)

    def test_edge_out_of_range_rejected(self, tmp_path):
        bad = basic_record()
        bad["edges"] = [[0, 9]]
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [bad])
        with pytest.raises(DatasetParseError):
            load_dataset(path)

    def test_regression_inferred(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [basic_record("a", labels=(0.37,))])
        assert load_dataset(path).task_kind == "regression"


def sized_dataset(sizes, scaffolds=None):
    rng = np.random.default_rng(0)
    records = []
    for i, n in enumerate(sizes):
        rec = basic_record(f"m{i:02d}", labels=(float(i % 2),), n=n)
        rec["scaffold"] = scaffolds[i] if scaffolds else f"s{i}"
        records.append(rec)
    return records


class TestSplit:
    def test_random_sizes(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, sized_dataset([3] * 10))
        ds = load_dataset(path)
        sp = split(ds, "random", (0.8, 0.1, 0.1), seed=0)
        assert (len(sp.train), len(sp.val), len(sp.test)) == (8, 1, 1)
        assert set(sp.train) | set(sp.val) | set(sp.test) == set(range(10))

    def test_random_reproducible(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, sized_dataset([3] * 20))
        ds = load_dataset(path)
        a = split(ds, "random", seed=7)
        b = split(ds, "random", seed=7)
        c = split(ds, "random", seed=8)
        assert a.train == b.train and a.val == b.val and a.test == b.test
        assert a.train != c.train

    def test_size_split_orders_by_node_count(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, sized_dataset(list(range(2, 12))))  # sizes 2..11
        ds = load_dataset(path)
        sp = split(ds, "size", (0.8, 0.1, 0.1), seed=0)
        counts = [ds.molecules[i].node_count for i in sp.test]
        assert sorted(counts) == [11]  # one test molecule: the largest
        sp2 = split(ds, "size", (0.6, 0.2, 0.2), seed=0)
        test_counts = [ds.molecules[i].node_count for i in sp2.test]
        train_counts = [ds.molecules[i].node_count for i in sp2.train]
        assert max(train_counts) <= min(test_counts)

    def test_scaffold_groups_stay_together(self, tmp_path):
        scaffolds = ["g6"] * 6 + ["g3"] * 3 + ["g1"]
        path = tmp_path / "d.jsonl"
        write_jsonl(path, sized_dataset([3] * 10, scaffolds))
        ds = load_dataset(path)
        sp = split(ds, "scaffold", (0.8, 0.1, 0.1), seed=0)
        keysets = [
            {ds.molecules[i].scaffold for i in part}
            for part in (sp.train, sp.val, sp.test)
        ]
        for a in range(3):
            for b in range(a + 1, 3):
                assert not (keysets[a] & keysets[b])
        assert set(sp.train) | set(sp.val) | set(sp.test) == set(range(10))

    def test_scaffold_missing_key_rejected(self, tmp_path):
        records = sized_dataset([3] * 4)
        records[2]["scaffold"] = None
        path = tmp_path / "d.jsonl"
        write_jsonl(path, records)
        ds = load_dataset(path)
        with pytest.raises(ValidationError):
            split(ds, "scaffold")

    def test_parts_always_disjoint(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, sized_dataset([3, 4, 5, 6, 7, 3, 4, 5, 6, 7] * 3))
        ds = load_dataset(path)
        for scheme in ("random", "size", "scaffold"):
            sp = split(ds, scheme, (0.7, 0.2, 0.1), seed=1)
            assert not (set(sp.train) & set(sp.val))
            assert not (set(sp.train) & set(sp.test))
            assert not (set(sp.val) & set(sp.test))

    def test_bad_fractions_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, sized_dataset([3] * 10))
        ds = load_dataset(path)
        with pytest.raises(ValidationError):
            split(ds, "random", (0.8, 0.3, 0.1))


class TestFewshot:
    def test_full_train_set(self):
        idx = list(range(10, 30))
        assert set(fewshot(idx, 20, seed=0)) == set(idx)

    def test_single_sample(self):
        idx = list(range(10, 30))
        picked = fewshot(idx, 1, seed=0)
        assert len(picked) == 1 and picked[0] in idx

    def test_deterministic_and_seed_sensitive(self):
        idx = list(range(400))
        a = fewshot(idx, 100, seed=0)
        b = fewshot(idx, 100, seed=0)
        c = fewshot(idx, 100, seed=1)
        assert a == b
        assert a != c

    def test_oversample_rejected(self):
        with pytest.raises(ValidationError):
            fewshot([1, 2, 3], 4, seed=0)


class TestBatches:
    def make_ds(self, tmp_path, n):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, sized_dataset([3] * n))
        return load_dataset(path)

    def test_small_set_single_batch(self, tmp_path):
        ds = self.make_ds(tmp_path, 10)
        out = batches(ds, range(10), 32, seed=0, epoch=0)
        assert len(out) == 1 and out[0].graph_count == 10

    def test_short_final_batch_kept(self, tmp_path):
        ds = self.make_ds(tmp_path, 10)
        out = batches(ds, range(10), 4, seed=0, epoch=0)
        assert [b.graph_count for b in out] == [4, 4, 2]

    def test_epoch_covers_every_index_once(self, tmp_path):
        ds = self.make_ds(tmp_path, 13)
        out = batches(ds, range(13), 5, seed=3, epoch=2)
        ids = [mid for b in out for mid in b.mol_ids]
        assert sorted(ids) == sorted(m.mol_id for m in ds.molecules)

    def test_epochs_shuffle_differently(self, tmp_path):
        ds = self.make_ds(tmp_path, 16)
        a = [mid for b in batches(ds, range(16), 4, seed=0, epoch=0) for mid in b.mol_ids]
        b = [mid for b in batches(ds, range(16), 4, seed=0, epoch=1) for mid in b.mol_ids]
        assert a != b

    def test_collate_offsets_edges(self, tmp_path):
        ds = self.make_ds(tmp_path, 3)
        batch = collate(ds, [0, 1])
        assert batch.node_count == 6
        assert batch.edges.max() == 5
        assert np.array_equal(batch.segment, [0, 0, 0, 1, 1, 1])
