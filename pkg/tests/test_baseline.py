import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sltgates.baseline import (edge_popup_train, popup_mask, random_mask_control, random_masks,
                               retain_count, straight_through)
from sltgates.layers import NetworkSpec, init_weights
from sltgates.pipeline import RunConfig
from sltgates.tensor import Tensor, backward, elementwise_mul
from sltgates.tensor import sum as tsum

TOY = dict(dataset="synthetic", batch_size=32, synthetic_n=200)


def test_k_one_all_ones():
    assert popup_mask(np.random.default_rng(0).normal(size=(4, 5)), 1.0).all()


def test_top_two_of_three():
    np.testing.assert_array_equal(popup_mask(np.array([3.0, 1.0, 2.0]), 2 / 3), [1, 0, 1])


def test_ties_go_to_lowest_index():
    np.testing.assert_array_equal(popup_mask(np.ones(4), 0.5), [1, 1, 0, 0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=3), st.floats(0.01, 1.0),
       st.integers(0, 2**31))
def test_exact_cardinality(shape, k, seed):
    # coarse integer scores force plenty of ties
    s = np.random.default_rng(seed).integers(0, 3, size=shape).astype(float)
    m = popup_mask(s, k)
    assert m.shape == tuple(shape)
    assert m.sum() == retain_count(s.size, k) == min(s.size, int(np.ceil(round(k * s.size, 9))))
    # every kept score is at least every dropped one
    if 0 < m.sum() < m.size:
        assert s[m].min() >= s[~m].max()


def test_retain_count_bounds():
    assert retain_count(3, 2 / 3) == 2
    assert retain_count(10, 0.01) == 1
    with pytest.raises(ValueError):
        retain_count(10, 0.0)


def test_straight_through_gradient():
    s = Tensor([0.3, -0.2, 0.9], requires_grad=True)
    w = Tensor([2.0, 3.0, 4.0])
    out = tsum(elementwise_mul(straight_through(s, popup_mask(s.data, 2 / 3)), w))
    assert out.item() == 6.0
    backward(out)
    np.testing.assert_array_equal(s.grad, [2.0, 3.0, 4.0])


def test_random_masks_cardinality_and_seed():
    net = init_weights(NetworkSpec("lenet300", width=0.1))
    a = random_masks(net, 0.5, seed=1)
    b = random_masks(net, 0.5, seed=1)
    for m, layer in zip(a, net.layers):
        assert m.shape == layer.shape
        assert m.sum() == retain_count(m.size, 0.5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], random_masks(net, 0.5, seed=2)[0])


def test_edge_popup_toy_run_is_deterministic_and_frozen():
    cfg = RunConfig(**TOY, epochs=3, seed=5, retain_k=0.5, log_wall_time=False)
    a, b = edge_popup_train(cfg), edge_popup_train(cfg)
    assert a.artifact == b.artifact
    assert [m.row() for m in a.metrics] == [m.row() for m in b.metrics]
    assert a.network.weight_checksum() == a.checksum
    assert a.artifact.method == "edgepopup"
    for lm in a.artifact.layers:
        assert lm.active == retain_count(lm.total, 0.5)


def test_edge_popup_beats_random_on_toy():
    cfg = RunConfig(**TOY, epochs=10, seed=0, retain_k=0.5)
    ep = edge_popup_train(cfg).final["test_ticket_acc"]
    rnd = random_mask_control(cfg)
    assert rnd["artifact"].method == "random"
    assert ep >= 0.95
    assert ep >= rnd["test_acc"]
