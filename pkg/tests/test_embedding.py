import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linet.embedding import (CALENDAR_SIZES, EmbeddingTable, PairBatch, PrecomputedEmbeddings,
                             TimestampError, calendar_features, cosent_loss, cosine, embed_calendar,
                             fit_cosent, mean_pool)
from linet.errors import ConfigError, DataError
from linet.tensor import Tensor


def vec(*xs):
    return Tensor(np.array(xs, dtype=np.float64), requires_grad=True)


class TestCalendarFeatures:
    def test_known_friday(self):
        f = calendar_features("2016-07-01 00:00:00")
        assert (f.day_of_week, f.day_of_month, f.month, f.hour) == (4, 1, 7, 0)

    def test_hour_parsed(self):
        assert calendar_features("2016-07-01 13:45").hour == 13

    def test_date_only(self):
        assert calendar_features("2016-07-01").hour == 0

    def test_leap_day(self):
        f = calendar_features("2020-02-29")
        assert (f.day_of_week, f.day_of_month, f.month) == (5, 29, 2)

    @pytest.mark.parametrize("text", ["2019-02-29", "2100-02-29", "2016-04-31"])
    def test_invalid_day(self, text):
        with pytest.raises(TimestampError):
            calendar_features(text)

    def test_bad_month_reports_position(self):
        with pytest.raises(TimestampError) as info:
            calendar_features("2016-13-01")
        assert info.value.position == 5
        assert isinstance(info.value, DataError)

    def test_garbage(self):
        with pytest.raises(TimestampError):
            calendar_features("yesterday")

    @settings(max_examples=200)
    @given(st.datetimes(min_value=dt.datetime(1600, 1, 1), max_value=dt.datetime(2400, 12, 31)))
    def test_matches_stdlib(self, when):
        f = calendar_features(when.strftime("%Y-%m-%d %H:%M:%S"))
        assert (f.day_of_week, f.day_of_month, f.month, f.hour) == \
            (when.weekday(), when.day, when.month, when.hour)

    def test_indices_within_tables(self):
        idx = calendar_features("2016-12-31 23:00").indices()
        assert all(0 <= i < n for i, n in zip(idx, CALENDAR_SIZES))


class TestEmbedding:
    def test_calendar_embedding_is_sum_of_rows(self, rng):
        tables = [Tensor(rng.normal(size=(n, 5))) for n in CALENDAR_SIZES]
        f = calendar_features("2016-07-01 06:00")
        want = sum(t.data[i] for t, i in zip(tables, f.indices()))
        np.testing.assert_allclose(embed_calendar(f, tables).data, want, atol=1e-15)

    def test_table_lookup_bounds(self):
        table = EmbeddingTable(3, 4)
        assert table.lookup([0, 2]).shape == (2, 4)
        with pytest.raises(IndexError):
            table.lookup([3])

    def test_table_rejects_empty(self):
        with pytest.raises(ConfigError):
            EmbeddingTable(0, 4)

    def test_mean_pool(self):
        np.testing.assert_array_equal(mean_pool(Tensor([[1.0, 2], [3, 4]])).data, [2, 3])

    def test_mean_pool_empty(self):
        with pytest.raises(ValueError):
            mean_pool(Tensor(np.zeros((0, 3))))


class TestCosine:
    def test_reference(self):
        assert cosine(vec(1, 1), vec(1, 0)).data.item() == pytest.approx(1 / math.sqrt(2), abs=1e-15)

    def test_opposite(self):
        assert cosine(vec(1, 2), vec(-2, -4)).data.item() == pytest.approx(-1.0, abs=1e-15)

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            cosine(vec(0, 0), vec(1, 0))

    def test_gradient_orthogonal_to_input(self, rng):
        u, v = vec(*rng.normal(size=4)), vec(*rng.normal(size=4))
        cosine(u, v).backward()
        assert abs(float(np.dot(u.grad, u.data))) < 1e-12


class TestCoSENT:
    def basis(self):
        return [vec(1, 0), vec(1, 0), vec(0, 1), vec(-1, 0)]

    def test_correct_ranking(self):
        # cos_pos = 1, cos_neg = 0
        loss = cosent_loss(PairBatch(self.basis(), [(0, 1)], [(0, 2)], lam=20.0)).data.item()
        assert loss == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-12)

    def test_reference_values(self):
        v = [vec(1, 0), vec(1, 0), vec(0.6, 0.8), vec(0.6, 0.8)]
        good = cosent_loss(PairBatch(v, [(0, 1)], [(0, 2)], lam=20.0)).data.item()
        bad = cosent_loss(PairBatch(v, [(0, 2)], [(0, 1)], lam=20.0)).data.item()
        assert good == pytest.approx(math.log1p(math.exp(-8.0)), rel=1e-12)
        assert bad == pytest.approx(math.log1p(math.exp(8.0)), rel=1e-12)

    def test_reversed_ranking_is_large(self):
        loss = cosent_loss(PairBatch(self.basis(), [(0, 3)], [(0, 1)], lam=8.0)).data.item()
        assert loss == pytest.approx(math.log1p(math.exp(16.0)), rel=1e-12)

    def test_empty_pairs(self):
        assert cosent_loss(PairBatch(self.basis(), [], [(0, 1)])).data.item() == 0.0
        assert cosent_loss(PairBatch(self.basis(), [(0, 1)], [])).data.item() == 0.0

    def test_pair_conflict(self):
        with pytest.raises(ConfigError):
            PairBatch(self.basis(), [(0, 1)], [(1, 0)])

    def test_out_of_range_pair(self):
        with pytest.raises(ConfigError):
            PairBatch(self.basis(), [(0, 9)], [(0, 1)])

    @settings(max_examples=50)
    @given(st.floats(-0.9, 0.9), st.floats(0.01, 0.5))
    def test_monotone_in_negative_similarity(self, c, step):
        def loss(neg_cos):
            ang = math.acos(neg_cos)
            v = [vec(1, 0), vec(1, 0), vec(math.cos(ang), math.sin(ang))]
            return cosent_loss(PairBatch(v, [(0, 1)], [(0, 2)], lam=5.0)).data.item()
        assert loss(min(c + step, 0.99)) > loss(c)

    def test_fit_improves_ranking(self, rng):
        start = rng.normal(size=(4, 6))
        pos, neg = [(0, 1), (2, 3)], [(0, 2), (1, 3)]
        before = cosent_loss(PairBatch([Tensor(v) for v in start], pos, neg)).data.item()
        fitted = fit_cosent(start, pos, neg, steps=100, lr=0.05)
        after = cosent_loss(PairBatch([Tensor(v) for v in fitted], pos, neg)).data.item()
        assert after < before


class TestPrecomputed:
    def test_round_trip(self, tmp_path):
        emb = PrecomputedEmbeddings({"2016-07-01": np.array([0.1, -2.5]), "store": np.array([1.0, 2.0])})
        emb.save(tmp_path / "v.tsv")
        back = PrecomputedEmbeddings.load(tmp_path / "v.tsv")
        assert back.dim == 2
        np.testing.assert_array_equal(back.lookup(["store", "2016-07-01 05:00"]), [[1, 2], [0.1, -2.5]])

    def test_missing_key(self, tmp_path):
        with pytest.raises(KeyError):
            PrecomputedEmbeddings({"a": np.ones(2)}).lookup(["b"])

    @pytest.mark.parametrize("body, lineno", [("a\t1,2\nb\t1\n", 2), ("a 1,2\n", 1), ("a\t1,x\n", 1)])
    def test_malformed(self, tmp_path, body, lineno):
        path = tmp_path / "bad.tsv"
        path.write_text(body)
        with pytest.raises(DataError, match=f":{lineno}:"):
            PrecomputedEmbeddings.load(path)

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.tsv").write_text("\n")
        with pytest.raises(DataError):
            PrecomputedEmbeddings.load(tmp_path / "e.tsv")
