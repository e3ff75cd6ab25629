import math

import numpy as np
import pytest

import fastaid

SIX_NODE = """1 root 1 node1
2 root 1 node2
3 2 2 node3
4 2 2 node4
5 4 3 node5
6 4 3 node6
"""


def test_version():
    assert fastaid.__version__.count(".") == 2


def test_tree_probabilities():
    tree = fastaid.LabelTree.parse(SIX_NODE)
    assert len(tree) == 6
    assert tree.depth == 3
    assert tree.frontier_ids == [1, 3, 5, 6]
    p = tree.class_probabilities(np.zeros(6))
    assert p == pytest.approx([0.5, 0.5, 0.25, 0.25, 0.125, 0.125], abs=1e-12)
    # ancestor-path target: -log P over nodes 2, 4, 6
    assert tree.ce_loss(np.zeros(6), 6) == pytest.approx(6 * math.log(2))


def test_volume_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.random((5, 4, 3))
    v = fastaid.Volume(a, spacing=(1.0, 2.0, 1.5))
    assert v.shape == [5, 4, 3]
    assert np.array_equal(v.numpy(), a)
    path = tmp_path / "v.nii.gz"
    fastaid.write_nifti(v, path)
    back = fastaid.read_nifti(path)
    assert isinstance(back, fastaid.Volume)
    assert back.spacing == [1.0, 2.0, 1.5]
    np.testing.assert_allclose(back.numpy(), a, rtol=1e-6)


def test_metrics():
    a = np.zeros((4, 4, 4), dtype=np.int32)
    b = np.zeros((4, 4, 4), dtype=np.int32)
    a[:2] = 1
    b[1:3] = 1
    pred, truth = fastaid.LabelVolume(a), fastaid.LabelVolume(b)
    assert fastaid.dsc(pred, truth, 1) == pytest.approx(0.5)
    assert fastaid.vs(pred, truth, 1) == pytest.approx(1.0)
    assert fastaid.icv(pred) == pytest.approx(32.0)
    w = fastaid.wilcoxon_signed_rank([1.5, 2.5, 0.5, 3.0, 4.0], [0, 0, 0, 0, 0])
    assert w.exact and w.p == pytest.approx(0.0625)
    assert fastaid.mann_whitney_u([1, 2, 3], [4, 5, 6]).p == pytest.approx(0.1)
    ba = fastaid.bland_altman([1.0, 3.0], [2.0, 2.0])
    assert ba.mean_diff == pytest.approx(0.0)
    assert ba.loa_high == pytest.approx(1.96 * math.sqrt(2))


def test_augment_identities():
    img, _ = fastaid.generate_phantom(3, 24)
    a = img.numpy()
    np.testing.assert_allclose(fastaid.ghosting(img, 2, 1.0).numpy(), a, atol=1e-9)
    rot, lab = fastaid.rotate3d(img, (0.0, 0.0, 0.0))
    assert lab is None
    np.testing.assert_allclose(rot.numpy(), a, atol=1e-12)
    np.testing.assert_allclose(fastaid.add_gaussian_noise(img, 0.0, 5).numpy(), a, atol=1e-12)
    x, y = fastaid.random_augment(img, None, "", 7)
    x2, _ = fastaid.random_augment(img, None, "", 7)
    assert np.array_equal(x.numpy(), x2.numpy())


def test_train_and_segment(tmp_path):
    tree = fastaid.phantom_tree()
    train = [fastaid.generate_phantom(s, 16) for s in range(3)]
    val = [fastaid.generate_phantom(100, 16)]
    cfg = '{"max_iters": 40, "patience_iters": 40, "validate_every": 20}'
    model = fastaid.train(train, val, tree, cfg)
    assert sum(model.plane_weights) == pytest.approx(1.0)
    path = tmp_path / "m.fam"
    model.save(path)
    loaded = fastaid.Model.load(path)
    img, _ = val[0]
    seg = fastaid.segment(img, loaded, tree)
    assert isinstance(seg, fastaid.LabelVolume)
    assert set(np.unique(seg.numpy())) <= set(tree.frontier_ids)
    vote = fastaid.segment(img, loaded, tree, mode="vote", threads=2)
    assert vote.shape == seg.shape


def test_errors_map_to_exception():
    with pytest.raises(fastaid.Error):
        fastaid.LabelTree.parse("1 root 1 a\n2 1 1 b\n")
    with pytest.raises(fastaid.Error):
        fastaid.dsc(fastaid.LabelVolume(np.zeros((2, 2, 2))), fastaid.LabelVolume(np.zeros((3, 2, 2))), 1)
