import itertools

import numpy as np
import pytest

from gres_rela import synthdata as sd
from gres_rela.errors import GenerationError, InputError, SkipSignal


def scene_of(*objs, size=48):
    return sd.Scene(size, size, tuple(sd.ObjectSpec(i, *o) for i, o in enumerate(objs)), seed=0)


def test_generate_scene_deterministic():
    a = sd.generate_scene(11)
    b = sd.generate_scene(11)
    assert a == b
    assert np.array_equal(sd.render(a), sd.render(b))


def test_generate_scene_fixed_count():
    cfg = sd.SceneConfig(min_objects=2, max_objects=2)
    for seed in range(20):
        assert len(sd.generate_scene(seed, cfg).objects) == 2


def test_scene_config_bounds():
    with pytest.raises(InputError):
        sd.SceneConfig(min_objects=1, max_objects=3)
    with pytest.raises(InputError):
        sd.SceneConfig(min_objects=2, max_objects=7)
    with pytest.raises(InputError):
        sd.SceneConfig(height=10, width=10, max_size=8)


def test_placement_failure_raises():
    cfg = sd.SceneConfig(height=18, width=18, min_objects=6, max_objects=6, min_size=8, max_size=8)
    with pytest.raises(GenerationError):
        sd.generate_scene(0, cfg)


def test_no_overlap_and_inside_canvas_over_1000_seeds():
    for seed in range(1000):
        scene = sd.generate_scene(seed)
        assert 2 <= len(scene.objects) <= 6
        assert len({(o.shape, o.color) for o in scene.objects}) >= 2
        masks = [sd.object_mask(o, 48, 48) for o in scene.objects]
        for o in scene.objects:
            assert o.size <= o.cx < 48 - o.size and o.size <= o.cy < 48 - o.size
        for a, b in itertools.combinations(masks, 2):
            assert not np.any(a & b)


def test_render_examples():
    empty = sd.Scene(8, 8, (), seed=0)
    assert np.all(sd.render(empty) == 128)
    scene = scene_of(("circle", "red", 24, 24, 6))
    img = sd.render(scene)
    assert tuple(img[24, 24]) == (255, 0, 0)
    assert tuple(img[0, 0]) == (128, 128, 128)


def test_rasterization_rules():
    c = sd.object_mask(sd.ObjectSpec(0, "circle", "red", 10, 10, 3), 21, 21)
    assert c[10, 13] and c[13, 10] and not c[12, 13]  # 2^2+3^2 > 9
    s = sd.object_mask(sd.ObjectSpec(0, "square", "red", 10, 10, 3), 21, 21)
    assert s.sum() == 49
    t = sd.object_mask(sd.ObjectSpec(0, "triangle", "red", 10, 10, 4), 21, 21)
    assert t[6, 10] and not t[6, 11] and not t[5, 10]  # apex row has one pixel
    assert t[14, 6] and t[14, 14] and not t[15, 10]  # base row spans the full width


def test_render_matches_masks():
    scene = sd.generate_scene(5)
    img = sd.render(scene)
    for o in scene.objects:
        m = sd.object_mask(o, 48, 48)
        assert np.all(img[m] == sd.COLORS[o.color])
        assert sd.rasterize_mask(scene, [o.id]).sum() == m.sum()


def test_rasterize_mask_rules():
    scene = sd.generate_scene(6)
    assert not sd.rasterize_mask(scene, []).any()
    union = np.zeros((48, 48), bool)
    for o in scene.objects:
        union |= sd.object_mask(o, 48, 48)
    assert np.array_equal(sd.rasterize_mask(scene, scene.ids), union)
    a, b = scene.objects[:2]
    assert sd.rasterize_mask(scene, [a.id, b.id]).sum() == sd.object_mask(a, 48, 48).sum() + sd.object_mask(
        b, 48, 48
    ).sum()
    with pytest.raises(InputError):
        sd.rasterize_mask(scene, [99])


def test_counting_example():
    scene = scene_of(
        ("square", "blue", 8, 10, 4),
        ("square", "blue", 10, 36, 4),
        ("circle", "red", 38, 24, 5),
    )
    spec = sd.realize_expression(scene, "counting", seed=0)
    assert spec.text == "the two blue squares"
    assert spec.target_ids == {0, 1}


def test_compound_except_example():
    scene = scene_of(
        ("circle", "red", 8, 8, 4),
        ("square", "blue", 30, 10, 4),
        ("triangle", "green", 20, 36, 4),
    )
    for seed in range(100):
        spec = sd.realize_expression(scene, "compound_except", seed)
        excluded = spec.text.removeprefix("everything except ")
        if excluded == "the red circle":
            assert spec.target_ids == {1, 2}
            break
    else:
        pytest.fail("never excluded the red circle")


def test_absent_example():
    scene = scene_of(
        ("square", "red", 8, 8, 4),
        ("circle", "blue", 30, 10, 4),
    )
    texts = {sd.realize_expression(scene, "no_target_absent", s).text for s in range(20)}
    assert texts == {"the red circle", "the blue square"}
    spec = sd.realize_expression(scene, "no_target_absent", 0)
    assert spec.target_ids == frozenset() and spec.no_target


def test_absent_falls_back_to_one_present_attribute():
    scene = scene_of(("square", "red", 8, 8, 4), ("circle", "red", 30, 10, 4))
    # every present colour/shape pair is in the scene, so one attribute must be new
    for seed in range(10):
        spec = sd.realize_expression(scene, "no_target_absent", seed)
        d = spec.expr.desc
        assert (d.color == "red") != (d.shape in ("square", "circle"))


def test_deceptive_needs_corpus():
    scene = sd.generate_scene(3)
    with pytest.raises(SkipSignal):
        sd.realize_expression(scene, "no_target_deceptive", 0, corpus=[])


def test_multi_kinds_need_two_targets():
    scene = scene_of(("square", "red", 8, 8, 4), ("circle", "blue", 30, 10, 4))
    with pytest.raises(SkipSignal):
        sd.realize_expression(scene, "counting", 0)
    with pytest.raises(SkipSignal):
        sd.realize_expression(scene, "compound_except", 0)


def test_spatial_semantics():
    scene = scene_of(
        ("circle", "red", 10, 10, 4),
        ("circle", "red", 24, 30, 4),  # 2*24 == 48 -> right half
        ("square", "blue", 38, 38, 4),
    )
    left = sd.Desc("red", "circle", "left")
    assert [o.id for o in left.matching(scene)] == [0]
    far = sd.Extreme(sd.Desc("red", "circle"), "right")
    assert sd.satisfying_sets(far, scene) == [frozenset([1])]
    tie = scene_of(("circle", "red", 10, 10, 4), ("circle", "red", 10, 30, 4), ("square", "blue", 38, 38, 4))
    assert sd.satisfying_sets(sd.Extreme(sd.Desc("red", "circle"), "left"), tie) == [frozenset([0])]


def test_unknown_kind():
    with pytest.raises(InputError):
        sd.realize_expression(sd.generate_scene(0), "poem", 0)


def test_every_kind_verified_exhaustively():
    cfg = sd.DatasetConfig(train=80, val=0)
    for s in sd.generate_split(4, "train", 80, cfg):
        sets = sd.satisfying_sets(s.spec.expr, s.scene)
        if s.spec.no_target:
            assert sets == [] and not s.mask.any() and sd.is_relevant(s.spec.expr, s.scene)
        else:
            assert sets == [s.spec.target_ids]
            assert np.array_equal(s.mask, sd.rasterize_mask(s.scene, s.spec.target_ids))
        if s.spec.kind == "counting":
            k = len(s.spec.target_ids)
            assert s.spec.text.startswith(f"the {sd.NUMBER_WORDS[k]} ")
            assert len(s.spec.expr.desc.matching(s.scene)) == k


def test_kind_mixture_within_one():
    cfg = sd.DatasetConfig(train=57, val=0, mix_single=0.5, mix_multi=0.2, mix_notarget=0.3)
    kinds = sd.kind_schedule(57, cfg, np.random.default_rng(0))
    single = sum(k in sd.SINGLE_KINDS for k in kinds)
    multi = sum(k in sd.MULTI_KINDS for k in kinds)
    nt = sum(k in sd.NO_TARGET_KINDS for k in kinds)
    for got, want in ((single, 0.5), (multi, 0.2), (nt, 0.3)):
        assert abs(got - want * 57) <= 1


def test_mix_must_sum_to_one():
    with pytest.raises(InputError):
        sd.DatasetConfig(mix_single=0.5, mix_multi=0.5, mix_notarget=0.5)


def test_manifest_row_roundtrip():
    row = sd.ManifestRow("images/a.ppm", "masks/a.pgm", True, "the red circle and the blue square")
    assert sd.ManifestRow.parse(row.line()) == row
    with pytest.raises(InputError):
        sd.ManifestRow.parse("a\tb\t2\tx")


def test_netpbm_roundtrip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (6, 5, 3)).astype(np.uint8)
    sd.write_ppm(tmp_path / "a.ppm", img)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n5 6\n255\n")
    assert np.array_equal(sd.read_ppm(tmp_path / "a.ppm"), img)
    m = img[..., 0] > 100
    sd.write_pgm(tmp_path / "a.pgm", m)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n5 6\n255\n") and set(raw[len(b"P5\n5 6\n255\n") :]) <= {0, 255}
    assert np.array_equal(sd.read_pgm(tmp_path / "a.pgm"), m)
    with pytest.raises(InputError):
        sd.read_pgm(tmp_path / "a.ppm")


def test_build_dataset_deterministic_and_disjoint(tmp_path):
    cfg = sd.DatasetConfig(train=10, val=6)
    sd.build_dataset(tmp_path / "a", cfg, seed=7)
    sd.build_dataset(tmp_path / "b", cfg, seed=7)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 2 + 2 * 16
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    train = sd.generate_split(7, "train", 10, cfg)
    val = sd.generate_split(7, "val", 6, cfg, exclude_seeds={s.scene.seed for s in train})
    assert not {s.scene.seed for s in train} & {s.scene.seed for s in val}
    for row in sd.read_manifest(tmp_path / "a" / "train.tsv"):
        mask = sd.read_pgm(tmp_path / "a" / row.mask_path)
        assert row.no_target == (not mask.any())


def test_build_dataset_reports_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(InputError):
        sd.build_dataset(blocker / "sub", sd.DatasetConfig(train=1, val=1), seed=0)
