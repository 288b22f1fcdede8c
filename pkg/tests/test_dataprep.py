from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from facedepth.autodiff import Adam, Conv2d, Module, Tensor, mse_loss, no_grad, relu, tanh_act
from facedepth.dataprep import (
    CropParams,
    DatasetError,
    FaceSample,
    UnusableSampleError,
    VerificationPair,
    angle_subset,
    build_pair_set,
    crop_box,
    crop_extent,
    denormalize_depth,
    denormalize_gray,
    depth_to_8bit,
    estimate_head_distance,
    face_crop,
    normalize_depth,
    normalize_gray,
    read_dataset,
    read_pairs,
    read_pgm,
    sequence_subset,
    split_train_test,
    subject_geometry,
    synth_face_dataset,
    write_dataset,
    write_pairs,
    write_pgm,
)
from facedepth.dataprep.samples import pair_index_key, stack_batch
from facedepth.dataprep.synth import FAR_PLANE_MM
from facedepth.models import init_weights


def flat_sample(depth_mm=1000, size=64, pose=(0.0, 0.0, 0.0), seq=1, sid=1, frame=0, center=None):
    depth = np.full((size, size), depth_mm, dtype=np.uint16)
    gray = np.zeros((size, size), dtype=np.uint8)
    center = center or (size / 2, size / 2)
    return FaceSample(gray, depth, sid, seq, frame, center, pose)


# -- crop arithmetic ------------------------------------------------------------


@pytest.mark.parametrize("fx, distance, expected", [(365.0, 1000.0, 116.8), (370.0, 640.0, 185.0)])
def test_crop_width_worked_examples(fx, distance, expected):
    assert crop_extent(fx, 320.0, distance) == pytest.approx(expected, rel=1e-12)


@given(st.floats(300.0, 3000.0), st.floats(300.0, 3000.0))
def test_crop_width_is_inversely_proportional_to_distance(d1, d2):
    w1, w2 = crop_extent(365.0, 320.0, d1), crop_extent(365.0, 320.0, d2)
    assert w1 * d1 == pytest.approx(w2 * d2, rel=1e-12)


@given(st.integers(600, 3000))
def test_box_is_square_for_equal_focals_and_extents(d):
    s = flat_sample(d, size=400, center=(200.0, 200.0))
    x0, y0, x1, y1 = crop_box(s, CropParams(fx=365.0, fy=365.0))
    assert x1 - x0 == y1 - y0


def test_head_distance_ignores_missing_pixels():
    s = flat_sample(1000)
    s.depth[30:34, 30:34] = 0
    s.depth[28, 28] = 1600
    window = s.depth[27:38, 27:38].astype(float)
    assert estimate_head_distance(s.depth, s.head_center, 5) == pytest.approx(window[window > 0].mean())


def test_empty_depth_window_is_unusable():
    s = flat_sample(1000)
    s.depth[:] = 0
    with pytest.raises(UnusableSampleError):
        crop_box(s, CropParams(fx=365.0, fy=365.0))


def test_crop_box_matches_formula_and_output_size():
    s = flat_sample(1000, size=200, center=(100.0, 100.0))
    p = CropParams(fx=365.0, fy=365.0, out_size=32)
    x0, y0, x1, y1 = crop_box(s, p)
    assert (x0, y0, x1, y1) == (round(100 - 58.4), round(100 - 58.4), round(100 + 58.4), round(100 + 58.4))
    gray, depth = face_crop(s, p)
    assert gray.shape == depth.shape == (32, 32)
    # nearest-neighbour depth never invents values
    assert set(np.unique(depth)) <= set(np.unique(s.depth))


def test_crop_clamps_to_the_image_and_rejects_slivers():
    s = flat_sample(1000, size=64, center=(1.0, 1.0))
    x0, y0, x1, y1 = crop_box(s, CropParams(fx=50.0, fy=50.0))
    assert (x0, y0) == (0, 0) and x1 <= 64 and y1 <= 64
    with pytest.raises(UnusableSampleError):
        crop_box(flat_sample(1000), CropParams(fx=5.0, fy=5.0))


@pytest.mark.parametrize("bad", [dict(fx=0.0, fy=1.0), dict(fx=1.0, fy=-1.0), dict(fx=1.0, fy=1.0, radius=-1)])
def test_crop_params_validation(bad):
    with pytest.raises(ValueError):
        CropParams(**bad)


# -- subsets --------------------------------------------------------------------


@pytest.mark.parametrize(
    "pose, expected",
    [((0, 0, 0), "A1"), ((10, -10, 10), "A1"), ((10.001, 0, 0), "A2"), ((0, 0, -25), "A2")],
)
def test_angle_subset_boundaries(pose, expected):
    assert angle_subset(flat_sample(pose=pose)) == expected


@given(st.tuples(*[st.floats(-90, 90)] * 3), st.integers(1, 5))
def test_every_sample_lands_in_exactly_one_cell(pose, seq):
    s = flat_sample(pose=pose, seq=seq)
    assert (angle_subset(s) == "A1") == all(abs(a) <= 10 for a in pose)
    assert sequence_subset(s) == ("S123" if seq <= 3 else "S45")


def test_sequence_out_of_range():
    with pytest.raises(ValueError):
        sequence_subset(flat_sample(seq=6))


def test_train_test_split_is_subject_disjoint(tiny_faces):
    train, test = split_train_test(tiny_faces, {2})
    assert {s.subject_id for s in train} == {1, 3}
    assert {s.subject_id for s in test} == {2}
    assert len(train) + len(test) == len(tiny_faces)


# -- verification pairs ---------------------------------------------------------


def brute_force_pair_counts(samples):
    pos = neg = 0
    for a, b in combinations(samples, 2):
        if a.subject_id == b.subject_id:
            pos += 1
        else:
            neg += 1
    return pos, neg


def test_pairs_are_balanced_distinct_and_seeded(tiny_faces):
    pairs = build_pair_set(tiny_faces, 100, 0.5, seed=3)
    assert sum(p.label for p in pairs) == 50
    keys = [pair_index_key(p) for p in pairs]
    assert len(set(keys)) == len(keys)
    assert all(p.label == (p.sample_a.subject_id == p.sample_b.subject_id) for p in pairs)
    again = build_pair_set(tiny_faces, 100, 0.5, seed=3)
    assert keys == [pair_index_key(p) for p in again]
    assert keys != [pair_index_key(p) for p in build_pair_set(tiny_faces, 100, 0.5, seed=4)]


def test_exhausting_every_pair_matches_brute_force(tiny_faces):
    pos, neg = brute_force_pair_counts(tiny_faces)
    pairs = build_pair_set(tiny_faces, pos + neg, pos / (pos + neg), seed=0)
    assert len({pair_index_key(p) for p in pairs}) == pos + neg
    with pytest.raises(ValueError, match="same-subject"):
        build_pair_set(tiny_faces, 2 * pos + 2, 0.5, seed=0)


def test_pairs_need_two_subjects(tiny_faces):
    with pytest.raises(ValueError):
        build_pair_set([s for s in tiny_faces if s.subject_id == 1], 4)


def test_pair_label_must_agree_with_subjects(tiny_faces):
    a, b = tiny_faces[0], tiny_faces[-1]
    with pytest.raises(ValueError):
        VerificationPair(a, b, True)
    with pytest.raises(ValueError):
        VerificationPair(a, a, True)


# -- PGM and dataset I/O --------------------------------------------------------


@given(
    st.one_of(
        arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9))),
        arrays(np.uint16, st.tuples(st.integers(1, 9), st.integers(1, 9))),
    )
)
def test_pgm_round_trip(tmp_path_factory, img):
    path = tmp_path_factory.mktemp("pgm") / "x.pgm"
    write_pgm(path, img)
    back = read_pgm(path)
    assert back.dtype == img.dtype
    np.testing.assert_array_equal(back, img)


def test_pgm_sixteen_bit_is_big_endian(tmp_path):
    write_pgm(tmp_path / "d.pgm", np.array([[0x0102]], dtype=np.uint16))
    assert (tmp_path / "d.pgm").read_bytes().endswith(b"\x01\x02")


def test_pgm_header_comments_are_skipped(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x07\x09")
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[7, 9]])


@pytest.mark.parametrize("payload", [b"P2\n1 1\n255\n7", b"P5\n2 2\n255\n\x00", b"P5\n2"])
def test_malformed_pgm(tmp_path, payload):
    (tmp_path / "bad.pgm").write_bytes(payload)
    with pytest.raises(DatasetError):
        read_pgm(tmp_path / "bad.pgm")


def test_pgm_rejects_float_images(tmp_path):
    with pytest.raises(TypeError):
        write_pgm(tmp_path / "f.pgm", np.zeros((2, 2), dtype=np.float32))


def test_dataset_round_trip(tmp_path, tiny_faces):
    write_dataset(tiny_faces, tmp_path)
    back = read_dataset(tmp_path)
    assert len(back) == len(tiny_faces)
    for a, b in zip(tiny_faces, back):
        np.testing.assert_array_equal(a.gray, b.gray)
        np.testing.assert_array_equal(a.depth, b.depth)
        assert (a.subject_id, a.sequence_id, a.frame) == (b.subject_id, b.sequence_id, b.frame)
        assert a.head_center == b.head_center and a.pose == b.pose


def test_pair_file_round_trip(tmp_path, tiny_faces):
    pairs = build_pair_set(tiny_faces, 20, seed=1)
    write_pairs(tmp_path / "pairs.csv", pairs)
    back = read_pairs(tmp_path / "pairs.csv", {s.depth_path: s for s in tiny_faces})
    assert [pair_index_key(p) for p in back] == [pair_index_key(p) for p in pairs]
    assert [p.label for p in back] == [p.label for p in pairs]


def test_missing_dataset_and_files(tmp_path, tiny_faces):
    with pytest.raises(DatasetError):
        read_dataset(tmp_path / "nope")
    with pytest.raises(DatasetError):
        read_dataset(tmp_path)
    write_dataset(tiny_faces[:2], tmp_path)
    (tmp_path / "subject_01" / "0001_depth.pgm").unlink()
    with pytest.raises(DatasetError, match="0001_depth"):
        read_dataset(tmp_path)


def test_unknown_sample_in_pair_file(tmp_path, tiny_faces):
    (tmp_path / "p.csv").write_text("path_a,path_b,label\nsubject_09/0000_depth.pgm,subject_01/0000_depth.pgm,0\n")
    with pytest.raises(DatasetError):
        read_pairs(tmp_path / "p.csv", {s.depth_path: s for s in tiny_faces})


# -- normalization --------------------------------------------------------------


def test_gray_normalization_endpoints_and_round_trip():
    x = np.arange(256, dtype=np.uint8)
    v = normalize_gray(x)
    assert v[0] == -1.0 and v[-1] == 1.0
    np.testing.assert_array_equal(denormalize_gray(v), x)
    np.testing.assert_array_equal(denormalize_gray(np.array([-3.0, 3.0])), [0, 255])


@given(arrays(np.uint16, 16, elements=st.integers(400, 2000)))
def test_depth_round_trip_within_the_range(depth):
    np.testing.assert_array_equal(denormalize_depth(normalize_depth(depth, 400, 2000), 400, 2000), depth)


def test_missing_depth_maps_to_far():
    v = normalize_depth(np.array([0, 400, 2000, 2600], dtype=np.uint16), 400, 2000)
    np.testing.assert_array_equal(v, [1.0, -1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        normalize_depth(np.zeros(2, np.uint16), 10, 10)


def test_eight_bit_depth_quantization():
    q = depth_to_8bit(np.array([0, 400, 1200, 2000, 5000], dtype=np.uint16), 400, 2000)
    np.testing.assert_array_equal(q, [0, 0, 128, 255, 255])


# -- synthetic faces ------------------------------------------------------------


def test_synthesis_is_deterministic(tiny_faces):
    again = synth_face_dataset(3, 10, 32, seed=5)
    for a, b in zip(tiny_faces, again):
        assert a.gray.tobytes() == b.gray.tobytes() and a.depth.tobytes() == b.depth.tobytes()
        assert a.pose == b.pose
    other = synth_face_dataset(1, 2, 32, seed=6)
    assert other[0].depth.tobytes() != tiny_faces[0].depth.tobytes()


def test_synthetic_layout_and_annotations(tiny_faces):
    assert len(tiny_faces) == 30
    keys = [(s.subject_id, s.sequence_id, s.frame) for s in tiny_faces]
    assert keys == sorted(keys)
    assert {s.sequence_id for s in tiny_faces} == {1, 2, 3, 4, 5}
    for s in tiny_faces:
        assert all(abs(a) <= 30 for a in s.pose)
        if s.sequence_id <= 3:
            assert sum(a != 0 for a in s.pose) == 1


def test_background_is_far_plane_and_head_nearer(tiny_faces):
    for s in tiny_faces:
        head = s.depth < FAR_PLANE_MM
        assert head.any() and (s.depth[~head] == FAR_PLANE_MM).all()
        assert s.depth[head].max() < FAR_PLANE_MM
        # the annotated head center lies on the head
        cx, cy = (int(v) for v in s.head_center)
        assert head[cy, cx]


def test_subject_geometries_differ():
    vecs = [subject_geometry(0, sid).vector() for sid in range(1, 11)]
    for a, b in combinations(vecs, 2):
        assert np.linalg.norm(a - b) > 0
    assert subject_geometry(0, 3) == subject_geometry(0, 3)


def test_synthesis_rejects_bad_sizes():
    with pytest.raises(ValueError):
        synth_face_dataset(1, 1, 40, seed=0)


class ThreeLayerRegressor(Module):
    def __init__(self, width=8):
        super().__init__()
        self.c1 = Conv2d(1, width, 5, padding=2)
        self.c2 = Conv2d(width, width, 5, padding=2)
        self.c3 = Conv2d(width, 1, 5, padding=2)

    def forward(self, x):
        return tanh_act(self.c3(relu(self.c2(relu(self.c1(x))))))


def test_gray_to_depth_mapping_is_learnable(tiny_faces):
    train, test = split_train_test(tiny_faces, {3})

    def arrays_of(samples):
        g = stack_batch([normalize_gray(s.gray) for s in samples])
        d = stack_batch([normalize_depth(s.depth, 400, 2000) for s in samples])
        return g, d

    gx, gy = arrays_of(train)
    tx, ty = arrays_of(test)
    net = ThreeLayerRegressor()
    init_weights(net, 0)
    opt = Adam(net.named_parameters(), lr=2e-3, betas=(0.9, 0.999))
    rng = np.random.default_rng(0)
    for _ in range(200):
        idx = rng.choice(len(gx), 8, replace=False)
        opt.zero_grad()
        mse_loss(net(Tensor(gx[idx])), gy[idx]).backward()
        opt.step()
    with no_grad():
        model = mse_loss(net(Tensor(tx)), ty).item()
    mean = np.broadcast_to(gy.mean(axis=0), ty.shape)
    baseline = mse_loss(Tensor(mean), ty).item()
    assert model < baseline
