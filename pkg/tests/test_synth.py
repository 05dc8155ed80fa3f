"""Generator self-consistency: determinism, landmark/feature agreement."""

import numpy as np
import pytest

from facealign.errors import ContractViolation
from facealign.geometry import (clusters_for_pattern, eye_centers,
                                flip_index_map, interocular_distance)
from facealign.synth import canonical_landmarks, synth_generate


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        a = synth_generate(5, 5, seed=11)
        b = synth_generate(5, 5, seed=11)
        for sa, sb in zip(a.samples, b.samples):
            np.testing.assert_array_equal(sa.image, sb.image)
            np.testing.assert_array_equal(sa.shape.coords, sb.shape.coords)
            assert sa.id == sb.id

    def test_different_seeds_differ(self):
        a = synth_generate(5, 2, seed=1)
        b = synth_generate(5, 2, seed=2)
        assert not np.array_equal(a.samples[0].image, b.samples[0].image)

    def test_count_and_coord_length(self):
        ds = synth_generate(5, 100, seed=0)
        assert len(ds) == 100
        assert all(s.shape.coords.size == 10 for s in ds.samples)

    def test_count_must_be_positive(self):
        with pytest.raises(ContractViolation):
            synth_generate(5, 0, seed=0)


class TestCanonicalModel:
    @pytest.mark.parametrize("pattern", [5, 29, 68])
    def test_mirror_symmetry_matches_flip_map(self, pattern):
        pts = canonical_landmarks(pattern)
        perm = flip_index_map(pattern)
        mirrored = pts.copy()
        mirrored[:, 0] = 1.0 - mirrored[:, 0]
        np.testing.assert_allclose(pts[perm], mirrored, atol=1e-12)

    @pytest.mark.parametrize("pattern", [5, 29, 68])
    def test_landmarks_inside_patch(self, pattern):
        ds = synth_generate(pattern, 30, seed=7)
        coords = ds.gt_coords()
        assert coords.min() > 0.0 and coords.max() < 1.0

    def test_interocular_distance_positive(self):
        ds = synth_generate(68, 10, seed=8)
        for s in ds.samples:
            assert 0.1 < interocular_distance(s.shape) < 0.4


class TestRenderedFeatureConsistency:
    @pytest.mark.parametrize("pattern", [5, 29, 68])
    def test_eye_center_matches_dark_blob_centroid(self, pattern):
        # the drawn eye is the darkest structure near the eye landmark;
        # its pixel centroid must sit within one pixel of the landmark
        ds = synth_generate(pattern, 12, seed=13)
        for s in ds.samples:
            img = s.image[:, :, 0]
            for center in eye_centers(s.shape):
                cx, cy = center * 50.0
                r0, r1 = int(cy) - 4, int(cy) + 5
                c0, c1 = int(cx) - 4, int(cx) + 5
                window = img[max(r0, 0):r1, max(c0, 0):c1]
                ys, xs = np.nonzero(window < 60.0)
                assert xs.size >= 3, "eye blob missing"
                got_x = xs.mean() + max(c0, 0) + 0.5
                got_y = ys.mean() + max(r0, 0) + 0.5
                dist = np.hypot(got_x - cx, got_y - cy)
                assert dist < 1.0, f"eye centroid off by {dist:.2f}px"

    def test_mouth_corner_sits_on_dark_pixels(self):
        ds = synth_generate(5, 8, seed=14)
        for s in ds.samples:
            pts = s.shape.points()
            img = s.image[:, :, 0]
            for corner in (pts[3], pts[4]):
                c = np.clip((corner * 50).astype(int), 1, 48)
                window = img[c[1] - 2:c[1] + 3, c[0] - 2:c[0] + 3]
                assert window.min() < 130.0

    def test_left_eye_cluster_box_is_dark_region(self):
        # occluding later relies on the cluster actually covering the eye
        ds = synth_generate(29, 6, seed=15)
        part = clusters_for_pattern(29)
        idx = part.clusters[part.index_of("left_eye")]
        for s in ds.samples:
            pts = s.shape.points()[idx]
            lo = (pts.min(axis=0) * 50).astype(int)
            hi = (pts.max(axis=0) * 50).astype(int) + 1
            box = s.image[lo[1]:hi[1], lo[0]:hi[0], 0]
            assert box.min() < 60.0  # eye pixels inside
