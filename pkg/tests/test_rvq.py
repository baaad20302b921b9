import numpy as np
import pytest

from trajcodec import bspline, rvq
from trajcodec.bspline import SplineConfig
from trajcodec.rvq import Codebook


def brute_force_nearest(table, vector):
    """Independent linear-scan oracle with lowest-index tie-breaking."""
    best = None
    best_d = None
    for i, row in enumerate(table):
        d = sum((a - b) ** 2 for a, b in zip(row, vector))
        if best_d is None or d < best_d:
            best, best_d = i, d
    return best


def make_book(codewords, group="position", decay=0.99, zero_pinned=False):
    return Codebook.from_codewords(group, np.asarray(codewords, float), decay, zero_pinned)


ROLES7 = ("position",) * 3 + ("rotation",) * 3 + ("gripper",)


def random_books(rng, n_layers=3, k=16, dim=4, scale_decay=0.4):
    """Pipeline-shaped books: random codewords with the zero word pinned."""
    books = {}
    for group in rvq.GROUP_ORDER:
        tables = rng.normal(size=(n_layers, k, dim))
        tables *= scale_decay ** np.arange(n_layers)[:, None, None]
        tables[:, 0, :] = 0.0
        books[group] = make_book(tables, group=group, zero_pinned=True)
    return books


class TestNearestCodeword:
    def test_exact_match(self):
        table = np.arange(12.0).reshape(4, 3)
        idx, word = rvq.nearest_codeword(table, table[3].copy())
        assert idx == 3
        np.testing.assert_array_equal(word, table[3])

    def test_single_codeword(self):
        idx, _ = rvq.nearest_codeword(np.array([[1.0, 2.0]]), np.array([9.0, -4.0]))
        assert idx == 0

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            table = rng.normal(size=(8, 4))
            vector = rng.normal(size=4)
            idx, _ = rvq.nearest_codeword(table, vector)
            assert idx == brute_force_nearest(table, vector)

    def test_tie_breaks_to_lowest_index(self):
        table = np.array([[1.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
        idx, _ = rvq.nearest_codeword(table, np.array([1.0, 0.0]))
        assert idx == 0

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            rvq.nearest_codeword(np.array([[np.nan, 0.0]]), np.zeros(2))


class TestEncodeDecodeChannel:
    def test_single_layer_exact(self):
        s = np.array([0.4, -0.2, 0.9])
        book = make_book(np.stack([np.stack([s, np.zeros(3)])]))
        indices, trace = rvq.encode_channel(book, s)
        assert indices.tolist() == [0]
        np.testing.assert_allclose(trace[-1], 0.0, atol=1e-15)

    def test_deep_zero_codewords_keep_exactness(self):
        s = np.array([0.4, -0.2, 0.9])
        layer1 = np.stack([s, np.ones(3)])
        deeper = np.stack([np.zeros(3), np.ones(3)])
        book = make_book(np.stack([layer1, deeper, deeper]))
        indices, trace = rvq.encode_channel(book, s)
        assert indices.tolist() == [0, 0, 0]
        assert np.linalg.norm(trace[-1]) == 0.0
        np.testing.assert_array_equal(rvq.decode_channel(book, indices), s)

    def test_each_step_matches_per_layer_oracle_and_is_monotone(self):
        rng = np.random.default_rng(5)
        books = random_books(rng)
        book = books["position"]
        for _ in range(50):
            s = rng.normal(size=4)
            indices, trace = rvq.encode_channel(book, s)
            residual = s.copy()
            for layer in range(book.n_layers):
                want = brute_force_nearest(book.codewords[layer], residual)
                assert indices[layer] == want
                residual = residual - book.codewords[layer][want]
            norms = np.linalg.norm(trace, axis=1)
            assert all(b <= a + 1e-9 for a, b in zip(norms, norms[1:]))

    def test_dropped_layers_pass_residual_through(self):
        rng = np.random.default_rng(6)
        book = random_books(rng)["position"]
        s = rng.normal(size=4)
        mask = np.array([True, False, True])
        indices, trace = rvq.encode_channel(book, s, mask)
        assert indices[1] == -1
        np.testing.assert_array_equal(trace[1], trace[2])

    def test_inference_mask_is_default(self):
        rng = np.random.default_rng(7)
        book = random_books(rng)["position"]
        s = rng.normal(size=4)
        a, _ = rvq.encode_channel(book, s)
        b, _ = rvq.encode_channel(book, s, np.ones(3, dtype=bool))
        np.testing.assert_array_equal(a, b)

    def test_prefix_error_non_increasing_after_training(self):
        rng = np.random.default_rng(8)
        data = rng.normal(size=(400, 6, 2)) * 0.5
        books = rvq.init_codebooks(data, ("position", "gripper"),
                                   {"position": 16, "gripper": 8}, 4, 0.99, seed=3)
        book = books["position"]
        for sample in data[:100]:
            s = sample[:, 0]
            indices, _ = rvq.encode_channel(book, s)
            errs = [
                np.linalg.norm(s - rvq.decode_prefix(book, indices, layer))
                for layer in range(book.n_layers + 1)
            ]
            assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))

    def test_decode_validation(self):
        book = make_book(np.zeros((2, 4, 3)))
        with pytest.raises(ValueError, match="out of range"):
            rvq.decode_channel(book, np.array([0, 9]))
        with pytest.raises(ValueError, match="expected 2"):
            rvq.decode_channel(book, np.array([0]))
        with pytest.raises(ValueError, match="prefix"):
            rvq.decode_prefix(book, np.array([0, 0]), 3)


class TestEncodeChunk:
    def test_shape_and_grouping(self):
        rng = np.random.default_rng(9)
        books = random_books(rng, n_layers=8)
        control = rng.normal(size=(4, 7))
        indices = rvq.encode_chunk(books, control, ROLES7)
        assert indices.shape == (7, 8)
        assert indices.size == 56

    def test_single_channel_matches_encode_channel(self):
        rng = np.random.default_rng(10)
        books = random_books(rng)
        control = rng.normal(size=(4, 1))
        chunk_idx = rvq.encode_chunk(books, control, ("rotation",))
        chan_idx, _ = rvq.encode_channel(books["rotation"], control[:, 0])
        np.testing.assert_array_equal(chunk_idx[0], chan_idx)

    def test_swapping_position_channels_swaps_blocks(self):
        rng = np.random.default_rng(12)
        books = random_books(rng)
        control = rng.normal(size=(4, 7))
        swapped = control.copy()
        swapped[:, [0, 1]] = swapped[:, [1, 0]]
        a = rvq.encode_chunk(books, control, ROLES7)
        b = rvq.encode_chunk(books, swapped, ROLES7)
        np.testing.assert_array_equal(b[0], a[1])
        np.testing.assert_array_equal(b[1], a[0])
        np.testing.assert_array_equal(b[2:], a[2:])

    def test_round_trip_through_decode_chunk(self):
        rng = np.random.default_rng(13)
        books = random_books(rng)
        control = rng.normal(size=(4, 7))
        indices = rvq.encode_chunk(books, control, ROLES7)
        decoded = rvq.decode_chunk(books, indices, ROLES7)
        order = rvq.group_channel_order(ROLES7)
        for row, ch in enumerate(order):
            want = rvq.decode_channel(books[ROLES7[ch]], indices[row])
            np.testing.assert_array_equal(decoded[:, ch], want)

    def test_missing_role_book(self):
        rng = np.random.default_rng(14)
        books = random_books(rng)
        del books["gripper"]
        with pytest.raises(ValueError, match="gripper"):
            rvq.encode_chunk(books, rng.normal(size=(4, 7)), ROLES7)

    def test_unknown_role(self):
        rng = np.random.default_rng(15)
        books = random_books(rng)
        with pytest.raises(ValueError, match="unknown part roles"):
            rvq.encode_chunk(books, rng.normal(size=(4, 1)), ("elbow",))


class TestStableEncode:
    def test_result_is_a_fixed_point(self):
        rng = np.random.default_rng(16)
        data = rng.normal(size=(500, 6, 7)) * 0.5
        books = rvq.init_codebooks(
            data, ROLES7, {"position": 32, "rotation": 32, "gripper": 8}, 4, 0.99, seed=1
        )
        for sample in data[:50]:
            stable = rvq.stable_encode_chunk(books, sample, ROLES7)
            decoded = rvq.decode_chunk(books, stable, ROLES7)
            again = rvq.stable_encode_chunk(books, decoded, ROLES7)
            np.testing.assert_array_equal(stable, again)
            # and the plain greedy encoding of the decode is the code itself
            np.testing.assert_array_equal(rvq.encode_chunk(books, decoded, ROLES7), stable)


def ema_closed_form(v0, v, decay, n, m=1):
    """Codeword after n batch updates of m copies of v, starting from v0."""
    a = decay**n
    return (a * v0 + (1 - a) * m * v) / (a + (1 - a) * m)


class TestTrainEpoch:
    SPLINE = SplineConfig(degree_pos_rot=1, degree_grip=0, n_control=2, ridge_lambda=0.0)

    def run_epochs(self, book, vectors, epochs, seed=0, drop_p=0.0, batch_size=1024):
        # single position channel, control dim 2
        controls = vectors[:, :, None]
        chunks = [bspline.reconstruct_chunk(self.SPLINE, c, ("position",), 5) for c in controls]
        reports = []
        for epoch in range(epochs):
            reports.append(
                rvq.train_epoch(
                    {"position": book},
                    controls,
                    chunks,
                    ("position",),
                    self.SPLINE,
                    seed=seed + epoch,
                    drop_p=drop_p,
                    batch_size=batch_size,
                )
            )
        return reports

    def test_single_codeword_converges_geometrically(self):
        v = np.array([0.8, -0.4])
        v0 = np.array([2.0, 2.0])
        book = make_book(v0[None, None, :])
        batch = np.tile(v, (16, 1))
        for n in (1, 3, 10, 25):
            fresh = make_book(v0[None, None, :])
            self.run_epochs(fresh, batch, epochs=n)
            got = fresh.codewords[0, 0]
            want = ema_closed_form(v0, v, 0.99, n, m=16)
            np.testing.assert_allclose(got, want, rtol=1e-10)
            assert np.linalg.norm(got - v) <= 0.99**n * np.linalg.norm(v0 - v) + 1e-12

    def test_four_clusters_match_kmeans_oracle(self):
        rng = np.random.default_rng(21)
        centers = np.array([[4.0, 4.0], [-4.0, 4.0], [-4.0, -4.0], [4.0, -4.0]])
        data = np.concatenate(
            [c + 0.05 * rng.normal(size=(64, 2)) for c in centers]
        )
        rng.shuffle(data)
        seeds = data[:4].copy()  # shared initialization for both methods
        book = make_book(seeds[None, :, :])
        self.run_epochs(book, data, epochs=60, seed=5)

        # independent Lloyd iteration oracle from the same seeds
        oracle = seeds.copy()
        for _ in range(100):
            d = ((data[:, None, :] - oracle[None]) ** 2).sum(-1)
            labels = d.argmin(1)
            oracle = np.stack([data[labels == k].mean(0) for k in range(4)])
        got_labels = np.array(
            [rvq.nearest_codeword(book.codewords[0], x)[0] for x in data]
        )
        want_labels = ((data[:, None, :] - oracle[None]) ** 2).sum(-1).argmin(1)
        assert (got_labels == want_labels).all()
        np.testing.assert_allclose(
            np.sort(book.codewords[0], axis=0), np.sort(oracle, axis=0), atol=0.05
        )

    def test_drop_loss_equals_control_term_without_dropout(self):
        rng = np.random.default_rng(22)
        book = make_book(rng.normal(size=(2, 8, 2)))
        reports = self.run_epochs(book, rng.normal(size=(40, 2)), epochs=1, drop_p=0.0)
        assert reports[0].drop == pytest.approx(reports[0].recon_control, rel=1e-12)
        assert reports[0].commit == pytest.approx(2 * reports[0].recon_control, rel=1e-12)
        assert reports[0].total == pytest.approx(
            reports[0].recon + 1.0 * reports[0].commit + 0.2 * reports[0].drop, rel=1e-12
        )

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(23)
        data = rng.normal(size=(64, 2))
        out = []
        for _ in range(2):
            book = make_book(np.zeros((2, 4, 2)) + rng.standard_normal() * 0)
            book = make_book(np.linspace(-1, 1, 16).reshape(2, 4, 2))
            self.run_epochs(book, data, epochs=3, seed=42, drop_p=0.3)
            out.append(book.codewords.copy())
        np.testing.assert_array_equal(out[0], out[1])

    def test_ema_state_consistent_with_codewords(self):
        rng = np.random.default_rng(24)
        book = make_book(rng.normal(size=(2, 6, 2)))
        self.run_epochs(book, rng.normal(size=(100, 2)), epochs=2, drop_p=0.1)
        live = book.ema_counts >= 1e-2
        expected = book.ema_sums[live] / book.ema_counts[live][:, None]
        np.testing.assert_allclose(book.codewords[live], expected, atol=1e-10)

    def test_reseeding_revives_dead_codewords(self):
        rng = np.random.default_rng(25)
        # one far-away codeword never selected: EMA mass decays until reseed
        words = np.concatenate([rng.normal(size=(7, 2)), [[500.0, 500.0]]])[None]
        book = make_book(words)
        self.run_epochs(book, rng.normal(size=(200, 2)), epochs=40)
        assert np.linalg.norm(book.codewords[0], axis=1).max() < 100.0

    def test_zero_pinned_book_keeps_zero_word(self):
        rng = np.random.default_rng(26)
        data = rng.normal(size=(300, 6, 7)) * 0.5
        books = rvq.init_codebooks(
            data, ROLES7, {"position": 16, "rotation": 16, "gripper": 8}, 3, 0.99, seed=2
        )
        controls = data
        chunks = [
            bspline.reconstruct_chunk(SplineConfig(ridge_lambda=0.0), c, ROLES7, 10)
            for c in controls
        ]
        rvq.train_epoch(
            books, controls, chunks, ROLES7, SplineConfig(ridge_lambda=0.0),
            seed=1, drop_p=0.1, batch_size=64,
        )
        for book in books.values():
            assert (book.codewords[:, 0, :] == 0.0).all()

    def test_input_validation(self):
        book = make_book(np.zeros((1, 2, 2)))
        with pytest.raises(ValueError, match="empty"):
            rvq.train_epoch({"position": book}, np.empty((0, 2, 1)), [], ("position",),
                            self.SPLINE, seed=0)
        data = np.zeros((4, 2, 1))
        chunks = [np.zeros((5, 1))] * 4
        with pytest.raises(ValueError, match="drop_p"):
            rvq.train_epoch({"position": book}, data, chunks, ("position",),
                            self.SPLINE, seed=0, drop_p=1.0)


class TestInitCodebooks:
    def test_layer_shapes_and_pinned_zero(self):
        rng = np.random.default_rng(30)
        data = rng.normal(size=(100, 5, 7))
        books = rvq.init_codebooks(
            data, ROLES7, {"position": 16, "rotation": 8, "gripper": 4}, 3, 0.99, seed=7
        )
        assert set(books) == {"position", "rotation", "gripper"}
        assert books["position"].codewords.shape == (3, 16, 5)
        assert books["gripper"].codewords.shape == (3, 4, 5)
        for book in books.values():
            assert book.zero_pinned
            assert (book.codewords[:, 0, :] == 0.0).all()

    def test_deterministic(self):
        rng = np.random.default_rng(31)
        data = rng.normal(size=(50, 4, 1))
        a = rvq.init_codebooks(data, ("position",), {"position": 8}, 2, 0.99, seed=9)
        b = rvq.init_codebooks(data, ("position",), {"position": 8}, 2, 0.99, seed=9)
        np.testing.assert_array_equal(a["position"].codewords, b["position"].codewords)

    def test_groups_absent_from_roles_are_skipped(self):
        rng = np.random.default_rng(32)
        data = rng.normal(size=(50, 4, 2))
        books = rvq.init_codebooks(
            data, ("position", "position"), {"position": 8}, 2, 0.99, seed=1
        )
        assert set(books) == {"position"}


class TestUtilizationStats:
    def test_uniform_usage_scores_k(self):
        book = make_book(np.zeros((1, 4, 2)))
        encodings = [np.array([[k]]) for k in range(4)] * 5
        usage = rvq.utilization_stats({"position": book}, encodings, ("position",))
        assert len(usage) == 1
        assert usage[0].perplexity == pytest.approx(4.0)
        assert usage[0].dead == 0
        assert usage[0].histogram.sum() == 20

    def test_collapse_scores_one(self):
        book = make_book(np.zeros((1, 4, 2)))
        encodings = [np.array([[2]])] * 10
        usage = rvq.utilization_stats({"position": book}, encodings, ("position",))
        assert usage[0].perplexity == pytest.approx(1.0)
        assert usage[0].dead == 3

    def test_histogram_counts_all_assignments(self):
        rng = np.random.default_rng(33)
        book = make_book(np.zeros((2, 8, 2)))
        encodings = [rng.integers(0, 8, size=(3, 2)) for _ in range(17)]
        usage = rvq.utilization_stats(
            {"position": book}, encodings, ("position",) * 3
        )
        assert sum(u.histogram.sum() for u in usage) == 17 * 3 * 2

    def test_empty_encodings_rejected(self):
        book = make_book(np.zeros((1, 2, 2)))
        with pytest.raises(ValueError, match="no encodings"):
            rvq.utilization_stats({"position": book}, [], ("position",))
