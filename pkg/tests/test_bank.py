"""Instance bank: seeding, dedup on insert, canonical frames, persistence."""
import zlib

import numpy as np
import pytest

from conftest import cluster_in_box, human_annotation

from sparse3d import (
    Annotation,
    Box3D,
    ClassId,
    InstanceBank,
    Provenance,
    Scene,
    bank_init,
    bank_insert,
    load_bank,
    save_bank,
)
from sparse3d.bank import bank_from_bytes, bank_to_bytes, canonicalize_points
from sparse3d.errors import ChecksumMismatch, MalformedBinary, UnknownScene, VersionMismatch
from sparse3d.geometry import in_box_mask


def _scene_with_boxes(scene_id, boxes, classes=None, seed=0, background=40):
    classes = classes or [ClassId.CAR] * len(boxes)
    rng = np.random.default_rng(seed)
    chunks = [cluster_in_box(b, 12, seed=seed + i) for i, b in enumerate(boxes)]
    chunks.append(
        np.column_stack(
            [rng.uniform(30, 60, background), rng.uniform(30, 60, background),
             rng.uniform(-0.2, 0.2, background), np.full(background, 0.1)]
        )
    )
    annotations = [human_annotation(b, c) for b, c in zip(boxes, classes)]
    return Scene(scene_id, np.vstack(chunks), annotations, None)


def _sorted_rows(points: np.ndarray) -> np.ndarray:
    return points[np.lexsort(points.T[::-1])]


def test_bank_init_one_entry_per_seed_annotation():
    scenes = [
        _scene_with_boxes(f"s{i:03d}", [Box3D(5, -3, 0.8, 4, 1.7, 1.6, 0.4)], seed=i)
        for i in range(100)
    ]
    bank = bank_init(scenes)
    assert bank.total() == 100
    assert len(bank.scene_ids()) == 100
    assert all(len(bank.entries_for(s.id)) == 1 for s in scenes)


def test_unannotated_scene_is_tracked_empty():
    pts = np.zeros((5, 4))
    bank = bank_init([Scene("empty0", pts, [], None)])
    assert bank.scene_ids() == ["empty0"]
    assert bank.entries_for("empty0") == []
    assert bank.total() == 0


def test_entry_points_are_canonical():
    box = Box3D(12.0, -7.0, 0.9, 4.2, 1.8, 1.5, 0.9)
    scene = _scene_with_boxes("c0", [box], seed=4)
    bank = bank_init([scene])
    entry = bank.entries_for("c0")[0]
    centered = Box3D(0, 0, 0, box.l, box.w, box.h, 0.0)
    assert in_box_mask(entry.points_local, centered).all()
    assert len(entry.points_local) == 12


def test_points_at_pose_round_trip():
    box = Box3D(-9.0, 14.0, 0.85, 3.9, 1.7, 1.6, -1.2)
    scene = _scene_with_boxes("r0", [box], seed=6)
    bank = bank_init([scene])
    entry = bank.entries_for("r0")[0]
    original = scene.points[in_box_mask(scene.points, box)]
    np.testing.assert_allclose(
        _sorted_rows(entry.points_at_pose()), _sorted_rows(original), atol=1e-9
    )


def test_insert_skips_overlapping_boxes():
    box = Box3D(0, 0, 0.8, 4, 1.8, 1.6, 0.0)
    scene = _scene_with_boxes("d0", [box], seed=1)
    bank = bank_init([scene])
    # same footprint shifted half a length: IoU well above the 0.3 threshold
    overlapping = human_annotation(Box3D(1.0, 0, 0.8, 4, 1.8, 1.6, 0.0))
    assert bank_insert(bank, "d0", [overlapping], scene.points) == 0
    disjoint = human_annotation(Box3D(20, 20, 0.8, 4, 1.8, 1.6, 0.0))
    assert bank_insert(bank, "d0", [disjoint], scene.points) == 1
    assert bank.total() == 2


def test_insert_is_idempotent():
    box = Box3D(3, 3, 0.8, 4, 1.8, 1.6, 0.5)
    scene = _scene_with_boxes("i0", [box], seed=2)
    bank = bank_init([scene])
    assert bank_insert(bank, "i0", scene.annotations, scene.points) == 0
    assert bank.total() == 1


def test_insert_into_untracked_scene_raises():
    bank = InstanceBank()
    with pytest.raises(UnknownScene):
        bank_insert(bank, "ghost", [], np.zeros((0, 4)))
    with pytest.raises(UnknownScene):
        bank.entries_for("ghost")


def test_size_by_class_counts():
    boxes = [
        Box3D(0, 0, 0.8, 4, 1.8, 1.6, 0.0),
        Box3D(15, 0, 0.85, 0.8, 0.6, 1.7, 0.0),
        Box3D(-15, 0, 0.85, 1.8, 0.6, 1.7, 0.0),
    ]
    classes = [ClassId.CAR, ClassId.PEDESTRIAN, ClassId.CYCLIST]
    bank = bank_init([_scene_with_boxes("m0", boxes, classes, seed=8)])
    assert bank.size_by_class() == {
        ClassId.CAR: 1,
        ClassId.PEDESTRIAN: 1,
        ClassId.CYCLIST: 1,
    }


def _mixed_bank():
    scene_a = _scene_with_boxes(
        "a0",
        [Box3D(4, 2, 0.8, 4, 1.8, 1.6, 0.3), Box3D(-12, 9, 0.85, 0.8, 0.6, 1.7, 1.0)],
        [ClassId.CAR, ClassId.PEDESTRIAN],
        seed=3,
    )
    scene_b = _scene_with_boxes("b0", [Box3D(7, -8, 0.85, 1.8, 0.6, 1.7, -0.7)],
                                [ClassId.CYCLIST], seed=5)
    bank = bank_init([scene_a, scene_b])
    bank.track_scene("unlabeled0")
    pseudo = Annotation(
        box=Box3D(18, 18, 0.8, 3.9, 1.7, 1.5, 0.1),
        class_id=ClassId.CAR,
        provenance=Provenance.pseudo(2),
    )
    extra = np.vstack([scene_b.points, cluster_in_box(pseudo.box, 9, seed=7)])
    bank_insert(bank, "b0", [pseudo], extra)
    return bank


def test_save_load_round_trip(tmp_path):
    bank = _mixed_bank()
    path = tmp_path / "bank.s3db"
    save_bank(bank, path)
    loaded = load_bank(path)
    assert loaded.scene_ids() == bank.scene_ids()  # includes the empty scene
    assert loaded.total() == bank.total()
    for sid in bank.scene_ids():
        for got, want in zip(loaded.entries_for(sid), bank.entries_for(sid)):
            assert got.box == want.box  # box geometry survives at full precision
            assert got.class_id == want.class_id
            assert got.provenance == want.provenance
            quantized = want.points_local.astype(np.float32).astype(np.float64)
            assert np.array_equal(got.points_local, quantized)
    # quantization happens once: a second save is byte-identical
    assert bank_to_bytes(loaded) == path.read_bytes()


def test_empty_bank_round_trip():
    loaded = bank_from_bytes(bank_to_bytes(InstanceBank()))
    assert loaded.scene_ids() == []
    assert loaded.total() == 0


def test_corrupted_payload_rejected():
    blob = bytearray(bank_to_bytes(_mixed_bank()))
    blob[len(blob) // 2] ^= 0xFF
    with pytest.raises(ChecksumMismatch):
        bank_from_bytes(bytes(blob))


def test_truncated_file_rejected():
    blob = bank_to_bytes(_mixed_bank())
    with pytest.raises(ChecksumMismatch):
        bank_from_bytes(blob[:-3])


def test_bad_magic_rejected():
    blob = bank_to_bytes(InstanceBank())
    with pytest.raises(MalformedBinary):
        bank_from_bytes(b"XXXX" + blob[4:])


def test_future_version_rejected():
    blob = bank_to_bytes(InstanceBank())
    body = bytearray(blob[:-4])
    body[4:6] = (2).to_bytes(2, "little")  # version field follows the magic
    tampered = bytes(body) + zlib.crc32(bytes(body)).to_bytes(4, "little")
    with pytest.raises(VersionMismatch):
        bank_from_bytes(tampered)
