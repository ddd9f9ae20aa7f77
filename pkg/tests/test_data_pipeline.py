import json

import numpy as np
import pytest

from backend.errors import AnnotationError, DataError
from backend.utils.augment import augment
from backend.utils.dataset_io import SceneDirectory, parse_points, read_image, write_density, write_image
from backend.utils.density import gt_density
from backend.utils.scene import Scene
from backend.utils.synth import synth_scene


class TestGroundTruthDensity:
    def test_count_preserved_over_many_scenes(self):
        for seed in range(100):
            scene = synth_scene(seed, n_range=(0, 12), size=32)
            density = gt_density(scene.points, (scene.height, scene.width), sigma=4.0)
            assert density.count == pytest.approx(scene.count, abs=1e-9)
            assert (density.values >= 0).all()

    @pytest.mark.parametrize("point", [(0.0, 0.0), (32.0, 32.0), (0.0, 31.7), (16.0, 0.2)])
    def test_border_points_keep_unit_mass(self, point):
        assert gt_density([point], (32, 32), sigma=4.0).count == pytest.approx(1.0, abs=1e-12)

    def test_tiny_sigma_lands_in_one_pixel(self):
        values = gt_density([(5.5, 5.5)], (10, 10), sigma=0.1).values
        assert values[5, 5] == pytest.approx(1.0)
        assert values.sum() == pytest.approx(1.0)

    def test_symmetric_about_pixel_centre(self):
        values = gt_density([(8.5, 8.5)], (17, 17), sigma=2.0).values
        np.testing.assert_allclose(values, values[::-1, ::-1], atol=1e-15)
        assert np.unravel_index(values.argmax(), values.shape) == (8, 8)

    def test_empty_points(self):
        assert gt_density(np.zeros((0, 2)), (8, 8)).count == 0.0

    def test_point_outside(self):
        with pytest.raises(DataError):
            gt_density([(33.0, 1.0)], (32, 32))

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            gt_density([(1.0, 1.0)], (8, 8), sigma=0.0)


class TestSynth:
    def test_same_seed_same_scene(self):
        a, b = synth_scene(42), synth_scene(42)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.points, b.points)

    def test_different_seeds_differ(self):
        assert not np.array_equal(synth_scene(1).image, synth_scene(2).image)

    def test_image_range_and_shape(self):
        scene = synth_scene(3, size=48, channels=1)
        assert scene.image.shape == (48, 48, 1)
        assert scene.image.min() >= 0.0 and scene.image.max() <= 1.0

    def test_counts_within_range_and_mean_close(self):
        counts = [synth_scene(seed, n_range=(5, 15), size=32, clutter_level=0).count for seed in range(400)]
        assert min(counts) >= 5 and max(counts) <= 15
        assert abs(np.mean(counts) - 10.0) <= 0.5

    def test_fixed_count(self):
        assert synth_scene(0, n_range=(7, 7)).count == 7

    def test_bad_range(self):
        with pytest.raises(ValueError):
            synth_scene(0, n_range=(5, 2))


class TestAugment:
    def test_full_crop_without_flip_is_identity(self):
        scene = synth_scene(5, size=32)
        out = augment(scene, crop=32, flip_p=0.0, seed=1, index=3)
        np.testing.assert_array_equal(out.image, scene.image)
        np.testing.assert_array_equal(out.points, scene.points)

    def test_flip_twice_is_identity(self):
        scene = synth_scene(6, size=32)
        once = augment(scene, crop=32, flip_p=1.0)
        twice = augment(once, crop=32, flip_p=1.0)
        np.testing.assert_array_equal(twice.image, scene.image)
        np.testing.assert_allclose(twice.points, scene.points, atol=1e-12)
        np.testing.assert_array_equal(once.image, scene.image[:, ::-1, :])

    def test_cropped_points_stay_in_window(self):
        scene = synth_scene(7, n_range=(30, 30), size=64)
        for index in range(20):
            out = augment(scene, crop=32, seed=2, index=index)
            assert out.image.shape == (32, 32, 3)
            assert out.count <= scene.count
            if out.count:
                assert out.points.min() >= 0.0 and out.points.max() <= 32.0

    def test_keyed_on_seed_and_index(self):
        scene = synth_scene(8, size=64)
        a = augment(scene, crop=32, seed=4, index=9)
        b = augment(scene, crop=32, seed=4, index=9)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.points, b.points)

    def test_crop_larger_than_image(self):
        with pytest.raises(DataError):
            augment(synth_scene(0, size=16), crop=32)


class TestSceneDirectory:
    def test_round_trip(self, tmp_path):
        scenes = [synth_scene(seed, size=32, scene_id=f"scene{seed:04d}") for seed in range(3)]
        store = SceneDirectory(tmp_path)
        assert store.write(scenes) == 3
        loaded = store.read()
        assert [s.id for s in loaded] == ["scene0000", "scene0001", "scene0002"]
        for original, back in zip(scenes, loaded):
            np.testing.assert_array_equal(back.points, original.points)
            np.testing.assert_allclose(back.image, original.image, atol=0.5 / 255 + 1e-12)

    def test_grayscale_round_trip(self, tmp_path):
        scene = synth_scene(1, size=16, channels=1, scene_id="gray")
        write_image(scene.image, tmp_path / "gray.pgm")
        back = read_image(tmp_path / "gray.pgm")
        assert back.shape == (16, 16, 1)

    def test_missing_image(self, tmp_path):
        (tmp_path / "lonely.ann").write_text("1.0 2.0\n", encoding="utf-8")
        with pytest.raises(DataError, match="image file"):
            SceneDirectory(tmp_path).read()

    def test_missing_annotation(self, tmp_path):
        write_image(np.zeros((8, 8, 3)), tmp_path / "bare.pgm")
        with pytest.raises(DataError, match="annotation file"):
            SceneDirectory(tmp_path).read()

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataError):
            SceneDirectory(tmp_path / "nowhere").read()

    def test_empty_directory(self, tmp_path):
        assert SceneDirectory(tmp_path).read() == []

    def test_density_files_are_not_scenes(self, tmp_path):
        scene = synth_scene(2, size=16, scene_id="a")
        store = SceneDirectory(tmp_path)
        store.write([scene])
        write_density(gt_density(scene.points, (16, 16)), tmp_path, "a")
        assert store.ids() == ["a"]

    def test_out_of_bounds_annotation(self, tmp_path):
        write_image(np.zeros((8, 8, 3)), tmp_path / "x.pgm")
        (tmp_path / "x.ann").write_text("9.5 1.0\n", encoding="utf-8")
        with pytest.raises(DataError, match="outside"):
            SceneDirectory(tmp_path).read()


class TestAnnotations:
    def test_comments_and_blank_lines(self):
        points = parse_points("# heads\n1.5 2.5\n\n3 4  # second\n")
        np.testing.assert_array_equal(points, [[1.5, 2.5], [3.0, 4.0]])

    def test_malformed_line_reports_line_number(self):
        with pytest.raises(AnnotationError, match="f.ann:2"):
            parse_points("1 2\n3\n", source="f.ann")

    def test_non_numeric(self):
        with pytest.raises(AnnotationError):
            parse_points("a b\n")


def test_write_density_sidecar(tmp_path):
    density = gt_density([(4.0, 4.0), (10.0, 3.0)], (16, 16))
    image_path, json_path = write_density(density, tmp_path, "d", count=2.0)
    payload = json.loads(json_path.read_text(encoding="utf-8"))
    assert payload["count"] == 2.0
    assert payload["sum"] == pytest.approx(2.0)
    assert payload["shape"] == [16, 16]
    assert read_image(image_path).max() == 1.0


def test_scene_rejects_bad_image_rank():
    with pytest.raises(DataError):
        Scene(image=np.zeros((2, 2, 2, 2)))


class TestWriteFailures:
    @pytest.fixture
    def blocker(self, tmp_path):
        path = tmp_path / "taken"
        path.write_text("not a directory", encoding="utf-8")
        return path

    def test_scene_directory_over_a_file(self, blocker):
        with pytest.raises(DataError, match="taken"):
            SceneDirectory(blocker).write_scene(synth_scene(0, size=16, scene_id="a"))

    def test_density_into_a_file(self, blocker):
        with pytest.raises(DataError, match="taken"):
            write_density(gt_density([(2.0, 2.0)], (8, 8)), blocker, "d")

    def test_nested_under_a_file(self, blocker):
        with pytest.raises(DataError):
            SceneDirectory(blocker / "inner").write_scene(synth_scene(0, size=16, scene_id="a"))
