import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from src.errors import FormatError, InvalidInputError
from src.generator import (
    GaussianModel,
    Image,
    Leaf,
    Scene,
    UniformModel,
    _streams,
    generate_scene,
    model_from_dict,
    read_image,
    read_scene,
    render_image,
    scene_from_dict,
    scene_to_dict,
    write_image,
    write_preview,
    write_scene,
)
from src.geometry import Point2
from src.specfun import RadiusLaw, power_law_cdf

SMALL = RadiusLaw(1.0, 2.0, 8.0)
GAUSSIAN = GaussianModel.create(0.6, 0.1, 0.01, channels=3)


def covers(leaf, x, y):
    return (x - leaf.center.x) ** 2 + (y - leaf.center.y) ** 2 <= leaf.radius ** 2


def variance_components(scene, values):
    """Pooled within-leaf variance and between-leaf base-color variance, averaged over channels."""
    idx = scene.labels.ravel() - 1
    flat = values.reshape(idx.size, -1)
    counts = np.bincount(idx, minlength=scene.n_leaves)
    means = np.stack([np.bincount(idx, weights=flat[:, c], minlength=scene.n_leaves)
                      for c in range(flat.shape[1])], axis=1) / counts[:, None]
    within = np.sum((flat - means[idx]) ** 2) / (flat.shape[1] * (idx.size - scene.n_leaves))
    between = np.var(means, axis=0, ddof=1).mean() - within * np.mean(1.0 / counts)
    return within, between


def pre_clamp_gaussian(scene, model, seed):
    """Leaf colors plus texture before capping, from the render streams."""
    color_rng, texture_rng = _streams(seed)[1:]
    colors = color_rng.normal(model.mu_c, model.sigma_c, size=(scene.n_leaves, model.channels))
    texture = texture_rng.normal(0.0, model.sigma_t, size=(scene.side, scene.side, model.channels))
    return colors[scene.labels - 1] + texture


def two_leaf_scene(labels, first, second):
    """2x2 scene from two (x, y, r) leaves and a label array."""
    leaves = [Leaf(Point2(x, y), r) for x, y, r in (first, second)]
    return Scene(2, np.array(labels, dtype=np.int32), leaves, RadiusLaw(1.0, 2.0, 2.0), 0)


class TestScene:
    @pytest.mark.parametrize("seed", range(100))
    def test_every_pixel_shows_its_first_covering_leaf(self, seed):
        scene = generate_scene(SMALL, seed)
        assert scene.labels.min() == 1
        assert set(np.unique(scene.labels)) == set(range(1, scene.n_leaves + 1))
        for y in range(scene.side):
            for x in range(scene.side):
                k = scene.labels[y, x]
                assert covers(scene.leaves[k - 1], x, y)
                assert not any(covers(leaf, x, y) for leaf in scene.leaves[:k - 1])

    def test_radii_follow_the_law(self):
        scene = generate_scene(RadiusLaw(1.0, 3.0, 20.0), 4)
        radii = np.array([leaf.radius for leaf in scene.leaves])
        assert radii.min() >= 1.0 and radii.max() <= 3.0
        assert scene.draws >= scene.n_leaves

    @pytest.mark.parametrize("side", [
        64,
        pytest.param(256, marks=pytest.mark.slow),
    ])
    def test_drawn_radii_pass_ks(self, side):
        law = RadiusLaw(1.0, 4.0, float(side))
        scene = generate_scene(law, 8, record_draws=True)
        assert len(scene.drawn_radii) == scene.draws
        assert {leaf.radius for leaf in scene.leaves} <= set(scene.drawn_radii.tolist())
        assert stats.kstest(scene.drawn_radii, lambda r: power_law_cdf(r, law)).pvalue > 0.01

    def test_draws_not_recorded_by_default(self):
        assert generate_scene(SMALL, 3).drawn_radii is None

    def test_single_pixel_frame(self):
        scene = generate_scene(RadiusLaw(1.0, 2.0, 1.0), 0)
        assert scene.n_leaves == 1
        assert scene.labels.tolist() == [[1]]

    @pytest.mark.parametrize("s", [0.0, 2.5])
    def test_side_must_be_positive_integer(self, s):
        with pytest.raises(InvalidInputError):
            generate_scene(RadiusLaw(1.0, 2.0, s), 0)

    def test_same_seed_same_files(self, tmp_path):
        for name in ("a", "b"):
            scene = generate_scene(SMALL, 99)
            image = render_image(scene, GAUSSIAN, 99)
            write_scene(tmp_path / f"{name}.json", scene)
            write_image(tmp_path / f"{name}.pfm", image)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert (tmp_path / "a.pfm").read_bytes() == (tmp_path / "b.pfm").read_bytes()

    def test_different_seeds_differ(self):
        assert not np.array_equal(generate_scene(SMALL, 1).labels, generate_scene(SMALL, 2).labels)


class TestRender:
    def test_gaussian_range_and_shape(self):
        scene = generate_scene(SMALL, 5)
        image = render_image(scene, GAUSSIAN, 5)
        assert image.values.shape == (8, 8, 3)
        assert image.values.min() >= 0.0 and image.values.max() <= 1.0
        assert scene.render == {"model": GAUSSIAN.to_dict(), "seed": 5}

    def test_leaf_color_is_shared_without_texture(self):
        scene = generate_scene(SMALL, 6)
        image = render_image(scene, GaussianModel.create(0.5, 0.1, 0.0, channels=1), 6)
        for k in range(1, scene.n_leaves + 1):
            vals = image.values[scene.labels == k]
            assert np.ptp(vals) == 0.0

    def test_uniform_values_on_level_grid(self):
        scene = generate_scene(SMALL, 7)
        model = UniformModel(color_levels=16, texture_halfwidth=2, channels=1)
        image = render_image(scene, model, 7)
        levels = image.values * 15
        assert_allclose(levels, np.rint(levels), atol=1e-12)
        assert image.channels == 1

    def test_gaussian_variance_components(self):
        scene = generate_scene(RadiusLaw(1.0, 4.0, 192.0), 5)
        model = GaussianModel.create(0.5, 0.1, 0.05, channels=3)
        within, between = variance_components(scene, render_image(scene, model, 5).values)
        assert within == pytest.approx(0.05 ** 2, rel=0.1)
        assert between == pytest.approx(0.1 ** 2, rel=0.1)

    def test_uniform_texture_stays_near_leaf_color(self):
        scene = generate_scene(RadiusLaw(1.0, 3.0, 32.0), 2)
        model = UniformModel(color_levels=256, texture_halfwidth=10, channels=3)
        image = render_image(scene, model, 2)
        colors = _streams(2)[1].integers(0, 256, size=(scene.n_leaves, 3))
        levels = np.rint(image.values * 255).astype(int)
        offsets = levels - colors[scene.labels - 1]
        assert np.abs(offsets).max() <= 10
        assert np.abs(offsets).max() > 0

    def test_capping_keeps_pixel_order(self):
        scene = generate_scene(SMALL, 9)
        model = GaussianModel.create(0.8, 0.3, 0.2, channels=3)
        values = render_image(scene, model, 9).values
        raw = pre_clamp_gaussian(scene, model, 9)
        assert np.array_equal(values, np.clip(raw, 0.0, 1.0))
        assert ((raw < 0.0) | (raw > 1.0)).any()
        for c in range(3):
            order = np.argsort(raw[..., c], axis=None, kind="stable")
            assert np.all(np.diff(values[..., c].ravel()[order]) >= 0.0)

    def test_capped_fraction_grows_with_texture(self):
        scene = generate_scene(RadiusLaw(1.0, 3.0, 32.0), 10)
        fractions = []
        for sigma_t in (0.02, 0.05, 0.1, 0.2, 0.4):
            values = render_image(scene, GaussianModel.create(0.5, 0.1, sigma_t, channels=3), 10).values
            fractions.append(np.mean((values == 0.0) | (values == 1.0)))
        assert fractions == sorted(fractions)
        assert fractions[-1] > fractions[0]

    def test_model_does_not_move_geometry(self):
        a = generate_scene(SMALL, 8)
        render_image(a, UniformModel(), 8)
        b = generate_scene(SMALL, 8)
        render_image(b, GAUSSIAN, 8)
        assert np.array_equal(a.labels, b.labels)
        assert a.leaves == b.leaves


class TestSceneFiles:
    def test_round_trip(self, tmp_path, validate):
        scene = generate_scene(SMALL, 12)
        render_image(scene, GAUSSIAN, 12)
        write_scene(tmp_path / "scene.json", scene)
        back = read_scene(tmp_path / "scene.json")
        assert np.array_equal(back.labels, scene.labels)
        assert back.leaves == scene.leaves
        assert back.law == scene.law
        validate(scene_to_dict(scene), "scene")

    def test_label_gap(self):
        data = scene_to_dict(generate_scene(SMALL, 13))
        data["leaves"].append([0.0, 0.0, 1.5])
        with pytest.raises(FormatError):
            scene_from_dict(data)

    def test_radius_outside_law(self):
        data = scene_to_dict(generate_scene(SMALL, 14))
        data["leaves"][0][2] = 5.0
        with pytest.raises(FormatError):
            scene_from_dict(data)

    def test_pixel_under_earlier_leaf(self):
        scene = two_leaf_scene([[1, 2], [2, 2]], (0.0, 0.0, 1.5), (1.0, 1.0, 1.0))
        with pytest.raises(FormatError, match="earlier leaf 1"):
            scene_from_dict(scene_to_dict(scene))

    def test_pixel_outside_its_leaf(self):
        scene = two_leaf_scene([[2, 1], [1, 2]], (0.0, 0.0, 1.0), (1.0, 1.0, 1.0))
        with pytest.raises(FormatError, match="outside its leaf"):
            scene_from_dict(scene_to_dict(scene))

    def test_consistent_hand_built_scene(self):
        scene = two_leaf_scene([[1, 1], [1, 2]], (0.0, 0.0, 1.0), (1.0, 1.0, 1.0))
        assert scene_from_dict(scene_to_dict(scene)).n_leaves == 2

    def test_config_echo_round_trip(self, tmp_path, validate):
        scene = generate_scene(SMALL, 16)
        scene.config = {"seed": 16, "size": 8, "rmin": 1.0, "rmax": 2.0}
        write_scene(tmp_path / "scene.json", scene)
        back = read_scene(tmp_path / "scene.json")
        assert back.config == scene.config
        validate(scene_to_dict(back), "scene")

    def test_missing_key(self):
        data = scene_to_dict(generate_scene(SMALL, 15))
        del data["labels"]
        with pytest.raises(FormatError):
            scene_from_dict(data, path="scene.json")

    def test_bad_json_reports_location(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text('{"side": 2,\n "seed": }')
        with pytest.raises(FormatError) as excinfo:
            read_scene(path)
        assert excinfo.value.line == 2


class TestImageFiles:
    @pytest.mark.parametrize("channels", [1, 3])
    def test_pfm_round_trip(self, tmp_path, rng, channels):
        values = rng.random((4, 6, channels))
        write_image(tmp_path / "img.pfm", Image(values))
        back = read_image(tmp_path / "img.pfm")
        assert back.values.shape == (4, 6, channels)
        assert_allclose(back.values, values.astype(np.float32))

    def test_preview_round_trip(self, tmp_path, rng):
        values = rng.random((5, 3, 3))
        write_preview(tmp_path / "img.ppm", Image(values), ["seed 1"])
        back = read_image(tmp_path / "img.ppm")
        assert_allclose(back.values, values, atol=1.0 / 65535)

    def test_unknown_magic(self, tmp_path):
        path = tmp_path / "img.bin"
        path.write_bytes(b"XX 1 1\n")
        with pytest.raises(FormatError):
            read_image(path)

    @pytest.mark.parametrize("data", [
        b"P6\nabc 2\n255\n" + bytes(12),
        b"P5\n2 2\n0\n" + bytes(4),
        b"P5\n2 2\n70000\n" + bytes(8),
        b"P5\n0 2\n255\n",
        b"P5\n2 2\n",
    ])
    def test_malformed_pnm_header(self, tmp_path, data):
        path = tmp_path / "img.pgm"
        path.write_bytes(data)
        with pytest.raises(FormatError):
            read_image(path)

    def test_truncated_pfm(self, tmp_path, rng):
        path = tmp_path / "img.pfm"
        write_image(path, Image(rng.random((3, 3, 1))))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            read_image(path)


class TestModels:
    def test_gaussian_broadcasts(self):
        assert GAUSSIAN.mu_c == (0.6, 0.6, 0.6)
        assert GAUSSIAN.channels == 3

    @pytest.mark.parametrize("kwargs", [
        {"mu_c": 0.5, "sigma_c": 0.0, "sigma_t": 0.1},
        {"mu_c": 0.5, "sigma_c": 0.1, "sigma_t": -0.1},
        {"mu_c": [0.1, 0.2], "sigma_c": 0.1, "sigma_t": 0.1},
    ])
    def test_gaussian_rejects(self, kwargs):
        with pytest.raises(InvalidInputError):
            GaussianModel.create(**kwargs)

    def test_uniform_rejects(self):
        with pytest.raises(InvalidInputError):
            UniformModel(color_levels=1)
        with pytest.raises(InvalidInputError):
            UniformModel(channels=2)

    def test_from_dict(self):
        assert model_from_dict(GAUSSIAN.to_dict()) == GAUSSIAN
        uniform = UniformModel(64, 3, 1)
        assert model_from_dict(uniform.to_dict()) == uniform
        assert uniform.texture_levels == 7
        with pytest.raises(InvalidInputError):
            model_from_dict({"variant": "laplace"})
