import numpy as np
import pytest

from patchfield import (
    ActivationTensor,
    ClassPalette,
    ConfigError,
    LayerSpec,
    NNField,
    SearchConfig,
    TrainingDatabase,
    TrainingPair,
    correspondence_map,
    exhaustive_search,
    reconstruct,
    semantic_correspondence,
)
from patchfield.compose import DISTINCT_COLORS, round_half_up

from conftest import brute_force_reconstruct, make_db


def identity_field(db, layer_name, image_id):
    """Field mapping every cell of pair `image_id` to itself, distance 0."""
    spec = db.layer_specs[layer_name]
    tensor = db.pairs[image_id].tensors[layer_name]
    gh = tensor.height - spec.hyperpatch_h + 1
    gw = tensor.width - spec.hyperpatch_w + 1
    ys, xs = np.mgrid[0:gh, 0:gw]
    return NNField(
        layer_name=layer_name,
        ids=np.full((gh, gw), image_id, dtype=np.int64),
        ys=ys.astype(np.int64),
        xs=xs.astype(np.int64),
        dist=np.zeros((gh, gw)),
        eval_count=gh * gw,
    )


class TestReconstruct:
    def test_oracle_self_reconstruction_bit_exact(self, small_db):
        db, spec = small_db
        query = db.pairs[2].tensors["feat"]
        field = exhaustive_search(query, db, spec, [0, 1, 2, 3])
        raster, coverage = reconstruct(field, db, spec, source="input")
        assert coverage.uncovered_pixels == 0
        assert np.array_equal(raster, db.pairs[2].input_image)

    def test_half_up_rounding_on_overlap(self):
        # Two horizontally adjacent cells with patch 2, scale 1 overlap on the
        # middle column; plant source pixels 0 and 255 so the overlap pixel
        # averages to 127.5, which must round to 128.
        spec = LayerSpec("feat", 1, 2, 1, patch_size=2, scale=1)
        tensor = ActivationTensor("feat", np.zeros((1, 3, 1), dtype=np.float32))
        train_img = np.zeros((1, 3, 3), dtype=np.uint8)
        train_img[0, 0] = 255  # cell (0,0) copies columns 0..1 = [255, 0]
        train_img[0, 1] = 0  # cell (0,1) copies columns 1..2 = [0, 255]
        train_img[0, 2] = 255
        pair = TrainingPair(0, train_img, train_img.copy(), {"feat": tensor})
        db = TrainingDatabase([pair], {"feat": spec}, "feat")
        field = identity_field(db, "feat", 0)
        raster, coverage = reconstruct(field, db, spec, source="input")
        assert coverage.uncovered_pixels == 0
        # column 0: single contribution 255; column 1: (0+0)/2 = 0;
        # column 2: single contribution 255. Overlap with differing values:
        assert raster[0, 0].tolist() == [255, 255, 255]
        # now make the overlap genuinely mixed: 255 from the left cell's
        # second column vs 0 from the right cell's first column
        train_img2 = train_img.copy()
        train_img2[0, 1] = 255  # left cell contributes [255,255], right [255,0]... rebuild
        pair2 = TrainingPair(0, train_img2, train_img2.copy(), {"feat": tensor})
        db2 = TrainingDatabase([pair2], {"feat": spec}, "feat")
        f2 = identity_field(db2, "feat", 0)
        r2, _ = reconstruct(f2, db2, spec, source="input")
        # both cells copy train column 1 = 255 onto pixel 1 -> stays 255
        assert r2[0, 1].tolist() == [255, 255, 255]

    def test_mixed_overlap_rounds_half_up(self):
        # Direct check of the documented averaging: cell A copies source
        # value 0, cell B copies source value 255 onto the same pixel.
        spec = LayerSpec("feat", 1, 2, 1, patch_size=2, scale=1)
        tensor = ActivationTensor("feat", np.zeros((1, 3, 1), dtype=np.float32))
        train = np.zeros((1, 3, 3), dtype=np.uint8)
        train[0, 1] = 0
        train[0, 2] = 255
        pair = TrainingPair(0, train, train.copy(), {"feat": tensor})
        db = TrainingDatabase([pair], {"feat": spec}, "feat")
        field = identity_field(db, "feat", 0)
        # remap: cell (0,0) -> position (0,1): copies columns 1..2 = [0,255]
        # cell (0,1) -> position (0,1) as well: copies [0,255] shifted right
        field.xs[0, 0] = 1
        field.xs[0, 1] = 1
        raster, _ = reconstruct(field, db, spec, source="input")
        # pixel (0,1): contributions 255 (from cell 0's second column... )
        # cell (0,0) writes [0,255] at columns 0..1; cell (0,1) writes [0,255]
        # at columns 1..2 -> pixel 1 gets 255 and 0 -> 127.5 -> 128
        assert raster[0, 1].tolist() == [128, 128, 128]

    def test_round_half_up_scalar_rule(self):
        assert round_half_up(np.array([127.5])).tolist() == [128]
        assert round_half_up(np.array([0.49999])).tolist() == [0]
        assert round_half_up(np.array([254.5])).tolist() == [255]
        assert round_half_up(np.array([300.0])).tolist() == [255]

    def test_all_matches_to_red_pair_gives_red_raster(self):
        db, spec = make_db(
            n_pairs=2,
            tensor_h=6,
            tensor_w=6,
            depth=3,
            seed=9,
            output_colors=[(230, 10, 10), None],
        )
        field = identity_field(db, "feat", 0)
        raster, _ = reconstruct(field, db, spec, source="output")
        expected, uncovered = brute_force_reconstruct(field, db, spec, "output")
        assert uncovered == 0
        assert np.array_equal(raster, expected)
        assert raster[..., 0].mean() > 150

    def test_matches_brute_force_composer(self, small_db):
        db, spec = small_db
        query = db.pairs[0].tensors["feat"]
        field = exhaustive_search(query, db, spec, [0, 1, 2, 3])
        for source in ("input", "output"):
            raster, coverage = reconstruct(field, db, spec, source=source)
            expected, uncovered = brute_force_reconstruct(field, db, spec, source)
            assert np.array_equal(raster, expected)
            assert coverage.uncovered_pixels == uncovered

    def test_undersized_patch_reports_uncovered(self):
        # patch smaller than the hyperpatch footprint: the trailing rows and
        # columns of the image are provably unreachable and must be reported.
        db, spec = make_db(
            n_pairs=1, tensor_h=4, tensor_w=4, depth=2, patch_size=1, scale=1, seed=2
        )
        field = identity_field(db, "feat", 0)
        raster, coverage = reconstruct(field, db, spec, source="input")
        # grid is 3×3 with 1×1 patches: image is 4×4 -> 16 − 9 = 7 uncovered
        assert coverage.uncovered_pixels == 7
        assert np.all(raster[coverage.uncovered_mask] == 0)

    def test_source_flag_validated(self, small_db):
        db, spec = small_db
        field = identity_field(db, "feat", 0)
        with pytest.raises(ConfigError):
            reconstruct(field, db, spec, source="both")

    def test_field_layer_mismatch(self, small_db):
        db, spec = small_db
        field = identity_field(db, "feat", 0)
        other = LayerSpec("other", 2, 2, 4, 2, 1)
        with pytest.raises(ConfigError):
            reconstruct(field, db, other, source="input")


class TestCorrespondenceMap:
    def test_single_source_uniform_tint(self, small_db):
        db, spec = small_db
        field = identity_field(db, "feat", 0)
        query_image = db.pairs[0].input_image
        cmap = correspondence_map(field, db, spec, query_image)
        assert set(cmap.sources) == {0}
        assert cmap.legend == {"#E6194B": 0}
        expected = round_half_up(
            0.5 * query_image.astype(np.float64) + 0.5 * np.array(DISTINCT_COLORS[0])
        )
        assert np.array_equal(cmap.query_overlay, expected)

    def test_two_sources_two_rasters(self, small_db):
        db, spec = small_db
        field = identity_field(db, "feat", 0)
        field.ids[0, :] = 1  # first grid row matched to pair 1
        cmap = correspondence_map(field, db, spec, db.pairs[0].input_image)
        assert sorted(cmap.sources) == [0, 1]
        assert len(cmap.legend) == 2
        assert set(cmap.legend.values()) == {0, 1}

    def test_legend_colors_distinct_up_to_16(self):
        db, spec = make_db(n_pairs=16, tensor_h=6, tensor_w=6, depth=2, seed=3)
        field = identity_field(db, "feat", 0)  # 5×5 grid = 25 cells
        field.ids.reshape(-1)[:] = np.arange(field.ids.size) % 16
        cmap = correspondence_map(field, db, spec, db.pairs[0].input_image)
        assert len(cmap.legend) == 16  # 16 distinct colors, none reused
        assert sorted(cmap.legend.values()) == list(range(16))

    def test_empty_query_rejected(self, small_db):
        db, spec = small_db
        field = identity_field(db, "feat", 0)
        bad = NNField(
            layer_name="feat",
            ids=np.zeros((0, 0), dtype=np.int64),
            ys=np.zeros((0, 0), dtype=np.int64),
            xs=np.zeros((0, 0), dtype=np.int64),
            dist=np.zeros((0, 0)),
        )
        with pytest.raises(ConfigError):
            correspondence_map(bad, db, spec, db.pairs[0].input_image)


def two_region_pair(seed=0):
    """Tensors whose top half is pattern P and bottom half pattern Q; the
    second tensor swaps the halves. Images use non-palette grays so tints
    are visible, plus matching label rasters in exact palette colors."""
    rng = np.random.default_rng(seed)
    top = rng.standard_normal((4, 8, 3)).astype(np.float32)
    bottom = rng.standard_normal((4, 8, 3)).astype(np.float32)
    t_a = ActivationTensor("feat", np.concatenate([top, bottom], axis=0))
    t_b = ActivationTensor("feat", np.concatenate([bottom, top], axis=0))
    img_a = np.zeros((8, 8, 3), dtype=np.uint8)
    img_a[0:4] = (120, 120, 120)
    img_a[4:8] = (30, 30, 30)
    img_b = np.zeros((8, 8, 3), dtype=np.uint8)
    img_b[0:4] = (30, 30, 30)
    img_b[4:8] = (120, 120, 120)
    labels_a = np.zeros((8, 8, 3), dtype=np.uint8)
    labels_a[0:4] = (200, 40, 40)
    labels_a[4:8] = (40, 40, 200)
    return t_a, img_a, t_b, img_b, labels_a


class TestSemanticCorrespondence:
    palette = ClassPalette(
        names=("red_zone", "blue_zone"),
        colors=np.array([(200, 40, 40), (40, 40, 200)], dtype=np.uint8),
    )

    def test_identical_pair_coincident_tints(self, small_db):
        db, spec = small_db
        tensors = db.pairs[0].tensors
        image = db.pairs[0].input_image
        labels = np.zeros_like(image)
        labels[:4] = (200, 40, 40)
        labels[4:] = (40, 40, 200)
        config = SearchConfig((0,), iterations=128, rng_seed=0)
        results = semantic_correspondence(
            tensors, image, tensors, image, spec, labels, self.palette,
            ["red_zone", "blue_zone"], config=config,
        )
        assert len(results) == 2
        for res in results:
            assert np.array_equal(res.query_raster, res.train_raster)

    def test_absent_class_contributes_no_tint(self, small_db):
        db, spec = small_db
        tensors = db.pairs[0].tensors
        image = db.pairs[0].input_image
        labels = np.zeros_like(image)
        labels[:, :] = (200, 40, 40)  # the whole image is red_zone
        config = SearchConfig((0,), iterations=16, rng_seed=0)
        results = semantic_correspondence(
            tensors, image, tensors, image, spec, labels, self.palette,
            ["blue_zone"], config=config,
        )
        assert results[0].query_cells == 0
        assert np.array_equal(results[0].query_raster, image)
        assert np.array_equal(results[0].train_raster, image)

    def test_swapped_halves_cross_correspond(self):
        t_a, img_a, t_b, img_b, labels_a = two_region_pair(seed=12)
        spec = LayerSpec("feat", 2, 2, 3, 2, 1)
        pair_b = TrainingPair(0, img_b, img_b.copy(), {"feat": t_b})
        db = TrainingDatabase([pair_b], {"feat": spec}, "feat")
        oracle = exhaustive_search(t_a, db, spec, [0])
        # top-of-a patches (fully inside rows 0..3) must match bottom-of-b
        assert np.all(oracle.ys[0:3, :] >= 4)
        # and bottom-of-a (rows 4..6 anchor fully inside the bottom half)
        assert np.all(oracle.ys[4:7, :] <= 2)

        config = SearchConfig((0,), iterations=512, rng_seed=0)
        results = semantic_correspondence(
            {"feat": t_a}, img_a, {"feat": t_b}, img_b, spec, labels_a,
            self.palette, ["red_zone"], config=config,
        )
        res = results[0]
        # query tint covers the top half of a
        assert res.query_cells > 0
        q_tinted = np.any(res.query_raster != img_a, axis=2)
        assert q_tinted[0:4].any() and not q_tinted[4:].any()
        # train tint lands in the bottom half of b (where the pattern lives)
        t_tinted = np.any(res.train_raster != img_b, axis=2)
        assert t_tinted[4:].any() and not t_tinted[0:4].any()

    def test_missing_layer_rejected(self, small_db):
        db, spec = small_db
        image = db.pairs[0].input_image
        with pytest.raises(ConfigError):
            semantic_correspondence(
                {}, image, db.pairs[0].tensors, image, spec,
                np.zeros_like(image), self.palette, ["red_zone"],
            )
