import cv2
import numpy as np
import pytest

from src import assets, filters, storage
from src.face_analysis import LandmarkSet
from src.filters import FilterRegistryError, PlacementError
from src.imaging import Image, encode_rgba
from src.schemas import FilterSpec
from src.synthetic import render_identity_images


def _face():
    img, landmarks = render_identity_images(seed=3, identity_index=0, count=1)[0]
    return img, landmarks


def _random_image(seed=0, size=16) -> Image:
    return Image(np.random.default_rng(seed).uniform(0, 1, (size, size, 3)))


def test_identity_enhancement_returns_input_unchanged():
    img = _random_image()
    assert filters.apply_enhancement(img, "identity") is img


def test_unknown_filter_lists_valid_ids():
    with pytest.raises(FilterRegistryError) as excinfo:
        filters.apply_enhancement(_random_image(), "sparkle")
    assert "clarendon" in excinfo.value.details["valid"]


def test_enhancements_change_the_image_and_stay_in_range():
    img = _random_image()
    for filter_id in filters.ENHANCEMENT_IDS:
        out = filters.apply_enhancement(img, filter_id)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0
        assert not np.allclose(out.pixels, img.pixels), filter_id


def test_identity_lut_interpolates_exactly():
    lut = filters.bake_lut(filters.ToneRecipe(), size=17)
    pixels = np.random.default_rng(1).uniform(0, 1, (8, 8, 3))
    assert np.allclose(filters.apply_lut(pixels, lut), pixels, atol=1e-12)


def test_lut_matches_direct_tone_map_closely():
    recipe = filters.RECIPES["clarendon"]
    pixels = np.random.default_rng(2).uniform(0, 1, (32, 32, 3))
    via_lut = filters.apply_lut(pixels, filters.bake_lut(recipe))
    assert np.abs(via_lut - filters.tone_map(pixels, recipe)).max() < 0.02


def test_cube_format_and_parse_agree():
    lut = filters.bake_lut(filters.RECIPES["lofi"], size=5)
    parsed = filters.parse_cube(filters.format_cube(lut, title="lofi"))
    assert np.allclose(parsed.table, lut.table, atol=1e-6)


def test_malformed_cube_is_rejected():
    with pytest.raises(FilterRegistryError):
        filters.parse_cube("LUT_3D_SIZE 2\n0 0 0\n")


def test_bundled_luts_match_their_tone_recipes():
    for filter_id in filters.ENHANCEMENT_IDS:
        bundled = filters.get_lut(filter_id)
        assert bundled.size == filters.LUT_SIZE
        baked = filters.bake_lut(filters.RECIPES[filter_id])
        assert np.abs(bundled.table - baked.table).max() < 1e-6, filter_id


def test_clarendon_regression_values():
    img = Image(np.array([[[0.3, 0.3, 0.3], [0.7, 0.7, 0.7]]]))
    out = filters.apply_enhancement(img, "clarendon").pixels
    assert out[0, 0] == pytest.approx([0.21, 0.23, 0.26], abs=1e-6)
    assert out[0, 1] == pytest.approx([0.75, 0.77, 0.80], abs=1e-6)
    assert np.all(np.abs(out[0, 1] - out[0, 0]) >= 0.4)


def test_enhancements_commute_with_pixel_permutation():
    img = _random_image(seed=5, size=8)
    order = np.random.default_rng(6).permutation(64)

    def shuffle(pixels):
        return pixels.reshape(-1, 3)[order].reshape(8, 8, 3)

    for filter_id in filters.ENHANCEMENT_IDS:
        filtered_then_shuffled = shuffle(filters.apply_enhancement(img, filter_id).pixels)
        shuffled_then_filtered = filters.apply_enhancement(Image(shuffle(img.pixels)), filter_id).pixels
        assert np.allclose(filtered_then_shuffled, shuffled_then_filtered, atol=1e-12), filter_id


def test_constant_image_stays_constant():
    out = filters.apply_enhancement(Image.blank(6, 4, (0.5, 0.5, 0.5)), "valencia").pixels
    assert np.allclose(out, out[0, 0])


def test_export_luts_writes_loadable_tables(tmp_path):
    written = filters.export_luts(str(tmp_path))
    assert len(written) == len(filters.ENHANCEMENT_IDS)
    lofi = filters.load_lut((tmp_path / "lofi.npy").read_bytes())
    assert np.abs(lofi.table - filters.get_lut("lofi").table).max() < 1e-6


def test_malformed_or_missing_lut_tables(monkeypatch, tmp_path):
    with pytest.raises(FilterRegistryError):
        filters.load_lut(filters.save_lut(filters.Lut(table=np.zeros((2, 3, 2, 3)))))

    monkeypatch.setattr(filters, "BUNDLED_LUT_DIR", tmp_path)
    with pytest.raises(FilterRegistryError) as excinfo:
        filters.get_lut("lofi")
    assert excinfo.value.details["path"].endswith("lofi.npy")


def test_lut_directory_override(monkeypatch, tmp_path):
    inverted = filters.bake_lut(filters.ToneRecipe(), size=2)
    table = 1.0 - inverted.table
    (tmp_path / "gingham.cube").write_text(filters.format_cube(filters.Lut(table=table)))
    monkeypatch.setenv("BENCH_LUT_DIR", str(tmp_path))

    out = filters.apply_enhancement(Image.blank(2, 2, (0.2, 0.4, 0.6)), "gingham")
    assert np.allclose(out.pixels[0, 0], [0.8, 0.6, 0.4])


def test_assign_enhancements_is_seeded():
    first = filters.assign_enhancements(50, seed=9)
    assert first == filters.assign_enhancements(50, seed=9)
    assert set(first) <= set(filters.ENHANCEMENT_IDS)
    assert first != filters.assign_enhancements(50, seed=10)


def test_filter_spec_enforces_opacity():
    assert FilterSpec(kind="ar_overlay", filter_id="shades_leak").params["opacity"] == 0.95
    assert FilterSpec(kind="ar_overlay", filter_id="dog").params["opacity"] == 1.0
    with pytest.raises(ValueError):
        FilterSpec(kind="ar_overlay", filter_id="shades_no_leak", params={"opacity": 0.5})


def test_eyewear_holes_land_on_eye_centres():
    _, landmarks = _face()
    asset = assets.get_asset("glasses")
    affine = filters.placement_affine(landmarks, "glasses", asset)
    for hole, eye in zip(("left_eye", "right_eye"), landmarks.eye_centers()):
        mapped = affine @ np.array([*asset.anchors[hole], 1.0])
        assert np.allclose(mapped, eye, atol=1e-9)


def test_dog_nose_is_centred_on_nose_tip():
    _, landmarks = _face()
    asset = assets.get_asset("dog")
    affine = filters.placement_affine(landmarks, "dog", asset)
    centre = affine @ np.array([*asset.anchors["center"], 1.0])
    assert np.allclose(centre, landmarks.centroid("nose_tip"))


def test_dog_sprite_has_nose_and_two_ears():
    asset = assets.get_builtin_asset("dog")
    count, _, _, centroids = cv2.connectedComponentsWithStats((asset.alpha > 0).astype(np.uint8))
    assert count == 4
    nose_y = asset.anchors["center"][1]
    ears = [c for c in centroids[1:] if c[1] < nose_y - 10]
    assert len(ears) == 2
    assert (ears[0][0] - asset.anchors["center"][0]) * (ears[1][0] - asset.anchors["center"][0]) < 0


def test_dog_nose_spans_one_and_a_half_eye_distances():
    landmarks = LandmarkSet(left_eye=[(40.0, 50.0)] * 4, right_eye=[(80.0, 50.0)] * 4, nose_tip=[(60.0, 70.0)])
    asset = assets.get_asset("dog")
    affine = filters.placement_affine(landmarks, "dog", asset)

    def mapped(name):
        return affine @ np.array([*asset.anchors[name], 1.0])

    assert np.allclose(mapped("center"), (60.0, 70.0))
    assert np.linalg.norm(mapped("nose_right") - mapped("nose_left")) == pytest.approx(60.0)
    _, _, _, centroids = cv2.connectedComponentsWithStats((asset.alpha > 0).astype(np.uint8))
    ears = [c for c in centroids[1:] if c[1] < asset.anchors["center"][1] - 10]
    for ear in ears:
        assert (affine @ np.array([*ear, 1.0]))[1] < 50.0


def test_coincident_eyes_raise_placement_error():
    point = [(10.0, 10.0)] * 6
    landmarks = LandmarkSet(left_eye=point, right_eye=point, nose_tip=[(10.0, 20.0)])
    with pytest.raises(PlacementError):
        filters.placement_affine(landmarks, "shades_no_leak", assets.get_asset("shades"))


def test_shades_leak_keeps_information_that_no_leak_destroys():
    img, landmarks = _face()
    leak, placement = filters.render_ar(img, "shades_leak", landmarks)
    opaque, _ = filters.render_ar(img, "shades_no_leak", landmarks)
    full = placement.mask >= 1.0
    assert full.any()
    assert not np.allclose(leak.pixels[full], opaque.pixels[full])
    assert opaque.pixels[full].max() < 0.1


def test_ar_filter_on_blank_image_finds_no_landmarks():
    assert filters.apply_ar_filter(Image.blank(64, 64, (0.5, 0.5, 0.5)), "dog") is None


def test_asset_override_from_directory(monkeypatch, tmp_path):
    rgb = Image.blank(40, 20, (1.0, 0.0, 0.0))
    (tmp_path / "dog.png").write_bytes(encode_rgba(rgb, np.ones((20, 40))))
    monkeypatch.setenv("BENCH_ASSET_DIR", str(tmp_path))

    asset = assets.get_asset("dog")
    builtin = assets.get_builtin_asset("dog")
    assert asset.size == (40, 20)
    cx, cy = builtin.anchors["center"]
    assert asset.anchors["center"] == pytest.approx((cx * 40 / builtin.size[0], cy * 20 / builtin.size[1]))


def test_transform_dataset_excludes_records_without_landmarks(small_corpus, out_dir):
    manifest, _ = small_corpus
    blocked = manifest.records[1].image_id
    transforms = [filters._ar("dog")] * len(manifest.records)
    transforms[1] = lambda img, record: (None, None)

    variant = filters.transform_dataset(manifest, "dog", transforms, out_dir)

    assert [r.reason for r in variant.excluded if r.image_id == blocked] == ["landmarks_absent"]
    ids = [r.image_id for r in variant.records] + [r.image_id for r in variant.excluded]
    assert sorted(ids) == sorted(r.image_id for r in manifest.records)
    assert [r.image_id for r in variant.records] == [r.image_id for r in manifest.records if r.image_id in {x.image_id for x in variant.records}]
    for record in variant.records:
        assert record.provenance[-1].op == "ar_overlay"
        assert storage.read_bytes(storage.join(variant.root, record.path))


def test_random_enhancement_build_is_reproducible(small_corpus, tmp_path):
    manifest, _ = small_corpus
    first = filters.build_filtered_dataset(manifest, filters.RANDOM_ENHANCEMENT, 4, str(tmp_path / "a"))
    second = filters.build_filtered_dataset(manifest, filters.RANDOM_ENHANCEMENT, 4, str(tmp_path / "b"))
    assert first.name == "instagram"
    assert [r.provenance for r in first.records] == [r.provenance for r in second.records]
    for a, b in zip(first.records, second.records):
        assert storage.read_bytes(storage.join(first.root, a.path)) == storage.read_bytes(storage.join(second.root, b.path))
