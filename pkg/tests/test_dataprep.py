import json

import numpy as np
import pytest

from shadowkit.dataprep import (
    apply_normalization, compute_normalization, dilate, load_edge_groundtruth, load_manifest,
    region_mask_to_edge_gt, sample_patches, split_even_odd, write_warnings,
)
from shadowkit.errors import ConfigError, ShapeError
from shadowkit.utils import save_binary_png, save_rgb


def test_region_mask_edges_mark_both_sides():
    mask = np.zeros((6, 8), dtype=bool)
    mask[:, 4:] = True
    edges = region_mask_to_edge_gt(mask)
    assert np.all(edges[:, 3]) and np.all(edges[:, 4])
    assert edges.sum() == 12


def test_uniform_mask_has_no_edges():
    assert not region_mask_to_edge_gt(np.ones((5, 5), dtype=bool)).any()


@pytest.mark.parametrize('radius, area', [(0, 1), (1, 5), (2, 13)])
def test_dilation_uses_a_disc(radius, area):
    edges = np.zeros((9, 9), dtype=bool)
    edges[4, 4] = True
    assert dilate(edges, radius).sum() == area


def _two_line_scene():
    rng = np.random.default_rng(0)
    image = rng.integers(0, 256, size=(64, 64, 3)).astype(np.uint8)
    canny_edges = np.zeros((64, 64), dtype=bool)
    canny_edges[:, 30] = True
    canny_edges[:, 45] = True
    gt = np.zeros((64, 64), dtype=bool)
    gt[:, 30] = True
    return image, canny_edges, gt


def test_sampling_balances_classes_on_the_lattice():
    image, canny_edges, gt = _two_line_scene()
    patches = sample_patches(image, canny_edges, gt, n_max=800, seed=1)
    positives = [p for p in patches if p.positive]
    negatives = [p for p in patches if not p.positive]
    # rows 15, 18, ..., 48 are the eligible lattice rows
    assert len(positives) == 12
    assert len(negatives) == 12
    for p in patches:
        r, c = p.center
        assert r % 3 == 0 and c % 3 == 0
        assert 14 <= r <= 49
        assert p.x.shape == (28, 28, 3)
        np.testing.assert_array_equal(p.x, image[r - 14:r + 14, c - 14:c + 14])
    for p in positives:
        label = p.y.reshape(5, 5)
        assert np.all(label[:, 2] == 1) and label.sum() == 5
    for p in negatives:
        assert p.center[1] == 45
        assert not p.y.any()


def test_sampling_caps_and_is_deterministic():
    image, canny_edges, gt = _two_line_scene()
    a = sample_patches(image, canny_edges, gt, n_max=5, seed=7)
    b = sample_patches(image, canny_edges, gt, n_max=5, seed=7)
    assert len(a) == 10
    assert [p.center for p in a] == [p.center for p in b]


def test_negatives_never_outnumber_positives():
    image, canny_edges, _ = _two_line_scene()
    gt = np.zeros((64, 64), dtype=bool)
    assert sample_patches(image, canny_edges, gt) == []


def test_unary_labels():
    image, canny_edges, gt = _two_line_scene()
    patches = sample_patches(image, canny_edges, gt, label_size=1)
    assert all(p.y.shape == (1,) for p in patches)


def test_sampling_rejects_large_cap_and_shape_mismatch():
    image, canny_edges, gt = _two_line_scene()
    with pytest.raises(ConfigError):
        sample_patches(image, canny_edges, gt, n_max=801)
    with pytest.raises(ShapeError):
        sample_patches(image, canny_edges[:10], gt)


def test_normalization_statistics():
    image, canny_edges, gt = _two_line_scene()
    patches = sample_patches(image, canny_edges, gt)
    stats = compute_normalization(patches)
    normalized = np.stack([p.x for p in apply_normalization(patches, stats)])
    np.testing.assert_allclose(normalized.mean(axis=(0, 1, 2)), 0.0, atol=1e-9)
    np.testing.assert_allclose(normalized.std(axis=(0, 1, 2)), 1.0, atol=1e-9)


def test_constant_channel_keeps_a_std_floor():
    image, canny_edges, gt = _two_line_scene()
    image[..., 2] = 9
    stats = compute_normalization(sample_patches(image, canny_edges, gt))
    assert stats.std[2] == pytest.approx(1e-8)


def _write_dataset(root, stems, with_mask, with_edges=()):
    mask = np.zeros((32, 32), dtype=bool)
    mask[:, 16:] = True
    for stem in stems:
        save_rgb(np.zeros((32, 32, 3), dtype=np.uint8), str(root / 'images' / f'{stem}.png'))
        if stem in with_mask:
            save_binary_png(mask, str(root / 'masks' / f'{stem}.png'))
        if stem in with_edges:
            edges = np.zeros((32, 32), dtype=bool)
            edges[3, 3] = True
            save_binary_png(edges, str(root / 'edges' / f'{stem}.png'))


def test_manifest_skips_images_without_masks(tmp_path):
    _write_dataset(tmp_path, ['a', 'b'], with_mask={'a'})
    manifest = load_manifest(str(tmp_path))
    assert [e.stem for e in manifest.entries] == ['a']
    assert len(manifest.warnings) == 1 and manifest.warnings[0]['stem'] == 'b'

    out = tmp_path / 'warnings.jsonl'
    write_warnings(manifest, str(out))
    assert json.loads(out.read_text().splitlines()[0])['stem'] == 'b'


def test_empty_directory_gives_empty_manifest(tmp_path):
    manifest = load_manifest(str(tmp_path))
    assert len(manifest) == 0 and manifest.warnings == []


def test_even_odd_split(tmp_path):
    stems = ['s0', 's1', 's2', 's3', 's4']
    _write_dataset(tmp_path, stems, with_mask=set(stems))
    train, test = split_even_odd(load_manifest(str(tmp_path)))
    assert [e.stem for e in train.entries] == ['s0', 's2', 's4']
    assert [e.stem for e in test.entries] == ['s1', 's3']
    assert test.split == 'test'


def test_edge_file_preferred_over_mask(tmp_path):
    _write_dataset(tmp_path, ['a', 'b'], with_mask={'a', 'b'}, with_edges={'a'})
    entries = {e.stem: e for e in load_manifest(str(tmp_path)).entries}
    _, edges_a = load_edge_groundtruth(entries['a'])
    mask_b, edges_b = load_edge_groundtruth(entries['b'])
    assert edges_a.sum() == 1
    np.testing.assert_array_equal(edges_b, region_mask_to_edge_gt(mask_b))
