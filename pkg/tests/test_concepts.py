import itertools
import json
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from stylus import concepts
from stylus.concepts import ConceptExercise, Embedder
from stylus.corpus import Clip, NoteEvent
from stylus.rng import derive_rng


def note(onset, pitch, offset=None, velocity=64):
    return NoteEvent(onset=onset, pitch=pitch,
                     offset=offset if offset is not None else onset + 0.2,
                     velocity=velocity)


def sum_embedder():
    return Embedder(fn=lambda roll: [float(np.asarray(roll).sum())], dim=1)


class TestInversion:
    def test_rotates_lowest_up_an_octave(self):
        assert concepts._invert((60, 64, 67), 1) == (64, 67, 72)
        assert concepts._invert((60, 64, 67), 2) == (67, 72, 76)
        assert concepts._invert((60, 64, 67), 3) == (72, 76, 79)

    def test_zero_is_identity(self):
        assert concepts._invert((60, 64, 67), 0) == (60, 64, 67)


def brute_force_variants(chords, max_shift=6, min_notes=3):
    out = []
    n_inv = max(len(ch) for ch in chords)
    for shift in range(-max_shift, max_shift + 1):
        for inv in range(n_inv):
            for rootless in (False, True):
                seq = []
                for ch in chords:
                    p = list(concepts._invert(ch, inv % len(ch)))
                    if rootless:
                        p = p[1:]
                        if len(p) < min_notes:
                            seq = None
                            break
                    p = [x + shift for x in p]
                    if any(not 21 <= x <= 108 for x in p):
                        seq = None
                        break
                    seq.append(tuple(p))
                if seq is not None:
                    out.append(tuple(seq))
    return out


class TestExerciseVariants:
    def test_four_note_chord_yields_104(self):
        e = ConceptExercise(concept_id=0, chords=((60, 64, 67, 71),))
        variants = concepts.exercise_variants(e)
        assert len(variants) == 13 * 4 * 2

    def test_triad_rootless_skipped(self):
        e = ConceptExercise(concept_id=0, chords=((60, 64, 67),))
        variants = concepts.exercise_variants(e)
        assert len(variants) == 13 * 3
        assert all(len(seq[0]) == 3 for seq in variants)

    def test_range_violations_dropped(self):
        e = ConceptExercise(concept_id=0, chords=((21, 25, 28, 31),))
        variants = concepts.exercise_variants(e)
        assert all(21 <= p <= 108 for seq in variants
                   for ch in seq for p in ch)
        assert len(variants) < 13 * 4 * 2

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            chords = tuple(
                tuple(sorted(rng.choice(range(30, 100), size=int(s),
                                        replace=False).tolist()))
                for s in rng.integers(3, 6, size=int(rng.integers(1, 4))))
            e = ConceptExercise(concept_id=0, chords=chords)
            assert concepts.exercise_variants(e) == \
                brute_force_variants(chords)


class TestRendering:
    def test_chords_rendered_through_harmony_conventions(self):
        roll = concepts.render_chord_sequence(((60, 64, 67), (62, 65, 69)))
        assert roll.shape == (88, 3000)
        # two chords: equal halves of the roll
        assert roll[60 - 21, 0:1500].all()
        assert roll[62 - 21, 1500:3000].all()
        assert set(np.unique(roll)) == {0.0, 1.0}

    def test_expand_concept_returns_rolls(self):
        e = ConceptExercise(concept_id=1, chords=((60, 64, 67),))
        rolls = concepts.expand_concept(e)
        assert len(rolls) == 39
        assert all(r.shape == (88, 3000) for r in rolls)


class TestCav:
    def test_direction_separates_synthetic_clusters(self):
        rng = np.random.default_rng(1)
        direction = rng.normal(size=8)
        direction /= np.linalg.norm(direction)
        pos = rng.normal(size=(30, 8)) + 3 * direction
        neg = rng.normal(size=(30, 8)) - 3 * direction
        cav = concepts.train_cav(pos, neg)
        cos = np.dot(cav.y, direction) / np.linalg.norm(cav.y)
        assert cos > 0.9

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            concepts.train_cav(np.zeros((3, 4)), np.zeros((3, 5)))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            concepts.train_cav(np.zeros((0, 4)), np.zeros((3, 4)))

    def test_score_is_linear(self):
        cav = concepts.ConceptVector(y=np.ones(1))
        roll = np.zeros((88, 3000))
        roll[40, :100] = 1.0
        assert concepts.concept_score(roll, sum_embedder(), cav) == 100.0


class TestSignCountRatio:
    def test_strictly_positive_fraction(self):
        assert concepts.sign_count_ratio([1.0, -1.0, 0.5, 2.0]) == 0.75

    def test_zero_counts_as_non_positive(self):
        assert concepts.sign_count_ratio([0.0, 1.0]) == 0.5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            concepts.sign_count_ratio([])


def brute_force_wilcoxon(a, b):
    diffs = [x - y for x, y in zip(a, b)]
    diffs = [d for d in diffs if d != 0]
    n = len(diffs)
    if n == 0:
        return Fraction(1)
    mags = sorted(abs(d) for d in diffs)
    rank2 = {}
    i = 0
    while i < n:
        j = i
        while j < n and mags[j] == mags[i]:
            j += 1
        for k in range(i, j):
            rank2[mags[k]] = (i + 1) + j
        i = j
    ranks2 = [rank2[abs(d)] for d in diffs]
    w_obs = sum(r for r, d in zip(ranks2, diffs) if d > 0)
    ge = le = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for r, s in zip(ranks2, signs) if s)
        ge += w >= w_obs
        le += w <= w_obs
    denom = 2 ** n
    return min(Fraction(1),
               2 * min(Fraction(le, denom), Fraction(ge, denom)))


class TestWilcoxon:
    def test_documented_three_pair_case(self):
        p = concepts.wilcoxon_exact_p([2.0, 3.0, 4.0], [1.0, 1.0, 1.0])
        assert p == Fraction(1, 4)

    def test_matches_enumeration_with_ties_and_zeros(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            n = int(rng.integers(1, 9))
            a = rng.integers(0, 5, size=n).astype(float)
            b = rng.integers(0, 5, size=n).astype(float)
            assert concepts.wilcoxon_exact_p(a, b) == \
                brute_force_wilcoxon(a, b)

    def test_matches_scipy_exact_no_ties(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = 10
            d = rng.normal(size=n)   # continuous: no ties, no zeros
            a = d
            b = np.zeros(n)
            want = stats.wilcoxon(a, b, mode="exact").pvalue
            assert float(concepts.wilcoxon_exact_p(a, b)) == \
                pytest.approx(want)

    def test_all_zero_diffs_warns_p_one(self, caplog):
        import logging
        with caplog.at_level(logging.WARNING, logger="stylus"):
            p = concepts.wilcoxon_exact_p([1.0, 2.0], [1.0, 2.0])
        assert p == Fraction(1)
        assert any("zero" in r.message for r in caplog.records)

    def test_large_n_uses_normal_approximation(self):
        rng = np.random.default_rng(4)
        d = rng.normal(loc=0.3, size=60)
        p = concepts.wilcoxon_signed_rank(d, np.zeros(60))
        want = stats.wilcoxon(d, np.zeros(60),
                              mode="approx", correction=False).pvalue
        assert p == pytest.approx(want, rel=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            concepts.wilcoxon_signed_rank([1.0], [1.0, 2.0])


class TestBonferroni:
    def test_scale_and_cap(self):
        assert concepts.bonferroni(0.01, 20) == pytest.approx(0.2)
        assert concepts.bonferroni(0.2, 20) == 1.0
        assert np.allclose(concepts.bonferroni([0.001, 0.5], 4),
                           [0.004, 1.0])

    def test_invalid_m(self):
        with pytest.raises(ValueError):
            concepts.bonferroni(0.5, 0)


class TestMaskedSensitivity:
    def _clip(self):
        return Clip(parent_id="r", performer="p", start=0.0,
                    notes=(note(10.0, 60, offset=11.0),))

    def test_heat_over_note_region_positive(self):
        heat = concepts.masked_sensitivity(self._clip(), sum_embedder(),
                                           concepts.ConceptVector(y=np.ones(1)))
        assert heat.shape == (88, 3000)
        # kernel positions covering the note remove all mass: ratio 1
        assert heat[30, 1000] == pytest.approx(1.0)
        assert heat[10, 200] == 0.0
        assert heat.min() >= 0.0

    def test_time_only_masking_ignores_pitch_rows(self):
        cav = concepts.ConceptVector(y=np.ones(1))
        by_pitch = concepts.masked_sensitivity(self._clip(), sum_embedder(),
                                               cav, mask_by_pitch=True)
        by_time = concepts.masked_sensitivity(self._clip(), sum_embedder(),
                                              cav, mask_by_pitch=False)
        assert by_pitch[0, 1000] == 0.0
        assert by_time[0, 1000] == pytest.approx(1.0)

    def test_zero_score_rejected(self):
        cav = concepts.ConceptVector(y=np.zeros(1))
        with pytest.raises(ValueError):
            concepts.masked_sensitivity(self._clip(), sum_embedder(), cav)

    def test_empty_clip_rejected(self):
        c = Clip(parent_id="r", performer="p", start=0.0, notes=())
        with pytest.raises(ValueError):
            concepts.masked_sensitivity(c, sum_embedder(),
                                        concepts.ConceptVector(y=np.ones(1)))


def reference_upgma(D):
    """Straightforward average-linkage reference on a distance matrix."""
    n = D.shape[0]
    active = {i: [i] for i in range(n)}
    dist = {(i, j): D[i, j] for i in range(n) for j in range(i + 1, n)}
    merges = []
    nid = n
    while len(active) > 1:
        best = min(dist, key=lambda k: (dist[k],
                                        min(min(active[k[0]]),
                                            min(active[k[1]])),
                                        max(min(active[k[0]]),
                                            min(active[k[1]]))))
        a, b = best
        h = dist[best]
        for k in list(active):
            if k in (a, b):
                continue
            da = dist[tuple(sorted((a, k)))]
            db = dist[tuple(sorted((b, k)))]
            wa, wb = len(active[a]), len(active[b])
            dist[tuple(sorted((nid, k)))] = (wa * da + wb * db) / (wa + wb)
        dist = {k: v for k, v in dist.items() if a not in k and b not in k}
        active[nid] = active.pop(a) + active.pop(b)
        merges.append((a, b, h))
        nid += 1
    return merges


class TestClustering:
    def test_hand_case(self):
        rows = np.array([[1.0, 2.0, 3.0],
                         [1.0, 2.0, 3.0],
                         [3.0, 2.0, 1.0],
                         [1.0, 3.0, 2.0]])
        d = concepts.cluster(rows, labels=("a", "b", "c", "d"))
        assert d.labels == ("a", "b", "c", "d")
        assert d.merges[0] == (0, 1, pytest.approx(0.0, abs=1e-12))
        assert d.merges[1][:2] == (3, 4)
        assert d.merges[1][2] == pytest.approx(0.5)
        assert d.merges[2][:2] == (2, 5)
        assert d.merges[2][2] == pytest.approx(5.5 / 3)

    def test_duplicate_rows_merge_first_at_zero(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            rows = rng.normal(size=(4, 6))
            rows[2] = rows[0]
            d = concepts.cluster(rows)
            assert d.merges[0][:2] == (0, 2)
            assert d.merges[0][2] == pytest.approx(0.0, abs=1e-9)

    def test_matches_reference_on_random_matrices(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            rows = rng.normal(size=(4, 8))
            D = concepts.correlation_distance(rows)
            want = reference_upgma(D)
            got = concepts.cluster(rows).merges
            assert [m[:2] for m in got] == [m[:2] for m in want]
            for g, w in zip(got, want):
                assert g[2] == pytest.approx(w[2])

    def test_zero_variance_row_rejected_by_name(self):
        rows = np.array([[1.0, 1.0, 1.0], [1.0, 2.0, 3.0]])
        with pytest.raises(ValueError, match="flatliner"):
            concepts.cluster(rows, labels=("flatliner", "ok"))

    def test_single_entity_rejected(self):
        with pytest.raises(ValueError):
            concepts.cluster(np.zeros((1, 3)))


class TestMostDistinctiveClip:
    def test_earliest_tie_wins(self):
        clips = [("c1", 1.0), ("c2", 5.0), ("c3", 5.0)]
        assert concepts.most_distinctive_clip(clips, lambda v: v) == "c2"

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            concepts.most_distinctive_clip([], lambda v: v)


class TestIo:
    def test_read_exercises(self, tmp_path):
        path = tmp_path / "ex.jsonl"
        path.write_text(json.dumps({"concept_id": 3,
                                    "chords": [[60, 64, 67]]}) + "\n")
        out = concepts.read_concept_exercises(path)
        assert out == [ConceptExercise(concept_id=3, chords=((60, 64, 67),))]

    def test_read_exercises_bad_line(self, tmp_path):
        path = tmp_path / "ex.jsonl"
        path.write_text('{"concept_id": 1}\n')
        with pytest.raises(ValueError, match=":1:"):
            concepts.read_concept_exercises(path)

    def test_dendrogram_json(self, tmp_path):
        d = concepts.Dendrogram(merges=((0, 1, 0.5),), labels=("a", "b"))
        path = tmp_path / "d.json"
        concepts.write_dendrogram(path, d)
        got = json.loads(path.read_text())
        assert got == {"labels": ["a", "b"], "merges": [[0, 1, 0.5]]}


class TestSignCountExperiment:
    def _setup(self):
        rng = np.random.default_rng(7)
        exercises = [ConceptExercise(concept_id=i,
                                     chords=((48 + i, 52 + i, 55 + i, 59 + i),))
                     for i in range(3)]
        variants = {e.concept_id: concepts.expand_concept(e)
                    for e in exercises}
        clips = {}
        for p in ("alice", "bob"):
            rolls = []
            for i in range(6):
                roll = np.zeros((88, 3000), dtype=np.float32)
                rows = rng.integers(0, 88, size=30)
                cols = rng.integers(0, 3000, size=30)
                roll[rows, cols] = 1.0
                rolls.append(roll)
            clips[p] = rolls
        return clips, variants

    def test_shapes_and_determinism(self):
        clips, variants = self._setup()
        emb = concepts.default_embedder()
        m1 = concepts.sign_count_experiment(clips, variants, emb,
                                            n_iter=3, seed=0)
        m2 = concepts.sign_count_experiment(clips, variants, emb,
                                            n_iter=3, seed=0)
        assert m1.performers == ("alice", "bob")
        assert m1.concepts == (0, 1, 2)
        assert m1.observed.shape == (2, 3, 3)
        assert np.array_equal(m1.observed, m2.observed)
        assert np.array_equal(m1.null, m2.null)

    def test_ratios_in_unit_interval(self):
        clips, variants = self._setup()
        m = concepts.sign_count_experiment(clips, variants,
                                           concepts.default_embedder(),
                                           n_iter=2, seed=1)
        assert ((m.observed >= 0) & (m.observed <= 1)).all()
        assert ((m.null >= 0) & (m.null <= 1)).all()

    def test_small_pool_rejected(self):
        clips, variants = self._setup()
        tiny = {0: variants[0], 1: variants[1][:10]}
        with pytest.raises(ValueError):
            concepts.sign_count_experiment(clips, tiny,
                                           concepts.default_embedder(),
                                           n_iter=1, seed=0)

    def test_summary_and_io(self, tmp_path):
        clips, variants = self._setup()
        m = concepts.sign_count_experiment(clips, variants,
                                           concepts.default_embedder(),
                                           n_iter=3, seed=2)
        means, corrected = concepts.summarise_sign_counts(m, m=3)
        assert means.shape == (2, 3) and corrected.shape == (2, 3)
        assert (corrected <= 1.0).all()
        concepts.write_sign_counts(tmp_path / "sc.csv", m)
        concepts.write_tested_sign_counts(tmp_path / "sct.csv", m,
                                          means, corrected)
        assert (tmp_path / "sc.csv").read_text().count("\n") == 2 * 3 * 3 + 1


class TestDefaultEmbedder:
    def test_average_pool_values(self):
        roll = np.zeros((88, 3000))
        roll[:11, :375] = 1.0   # exactly the first pooling window
        emb = concepts.default_embedder()(roll)
        assert emb.shape == (64,)
        assert emb[0] == pytest.approx(1.0)
        assert np.allclose(emb[1:], 0.0)

    def test_dim_checked(self):
        bad = Embedder(fn=lambda roll: [1.0, 2.0], dim=3)
        with pytest.raises(ValueError):
            bad(np.zeros((88, 3000)))
