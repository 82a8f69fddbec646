import numpy as np
import pytest

from tdminv.metrics import ssim
from tdminv.phantoms import KINDS, MAX_REF_SSIM, gen_phantom, make_phantom


@pytest.mark.parametrize("kind", KINDS)
def test_pair_deterministic_and_distinct(kind):
    a = gen_phantom(kind, 48, seed=3)
    b = gen_phantom(kind, 48, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    ref, tgt = a
    assert ref.shape == tgt.shape == (48, 48)
    assert ref.min() >= 0 and ref.max() <= 1 and tgt.min() >= 0 and tgt.max() <= 1
    assert ssim(ref, tgt) < MAX_REF_SSIM


def test_seed_changes_pair():
    a = gen_phantom("ellipses", 32, seed=1)
    b = gen_phantom("ellipses", 32, seed=2)
    assert not np.array_equal(a[1], b[1])


def test_zero_deformation_adds_only_detail():
    p = make_phantom("brain-like", 64, seed=0, deform=False, detail=True)
    diff = p.target != p.reference
    assert diff.any()
    assert not (diff & ~p.detail_mask).any()
    q = make_phantom("ellipses", 64, seed=0, deform=False, detail=False)
    assert np.array_equal(q.reference, q.target)


def test_detail_absent_from_reference():
    p = make_phantom("brain-like", 128, seed=5)
    m = p.detail_mask
    assert m.any() and m.sum() < 0.02 * m.size
    assert p.target[m].mean() > p.reference[m].mean() + 0.2


def test_bad_arguments():
    with pytest.raises(ValueError):
        gen_phantom("squares", 64)
    with pytest.raises(ValueError):
        gen_phantom("ellipses", 16)
