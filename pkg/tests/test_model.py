import numpy as np
import pytest

from cil_toolkit.core import (
    BACKBONE_ONLY,
    CONVNET,
    EVAL,
    MLP,
    NONE,
    TRAIN,
    BackboneSpec,
    CrossEntropyTerm,
    OptimizerState,
    ShapeError,
    backward,
    build_model,
    compute_gradients,
    expand_head,
    forward,
    model_checksum,
    set_freeze,
    sgd_step,
)
from cil_toolkit.core.tensor import FLOAT64


def _convnet_spec():
    return BackboneSpec(
        kind=CONVNET,
        input_shape=(1, 6, 6),
        embedding_dim=4,
        conv_channels=[2, 3, 3, 4],
        kernel_size=3,
        dropout_rate=0.5,
    )


def test_zero_weight_model_gives_zero_logits(mlp_spec, rng):
    model = build_model(mlp_spec, [(0, [0, 1, 2])], seed=0)
    for _, tensor in model.state_tensors():
        tensor[...] = 0
    logits = forward(model, rng.standard_normal((5, 8)), 0)
    assert logits.shape == (5, 3)
    assert np.all(logits == 0)


def test_eval_forward_is_repeatable():
    model = build_model(_convnet_spec(), [(0, [0, 1])], seed=3)
    batch = np.random.default_rng(0).standard_normal((4, 1, 6, 6))
    first = forward(model, batch, 0, mode=EVAL)
    second = forward(model, batch, 0, mode=EVAL)
    np.testing.assert_array_equal(first, second)


def test_mlp_forward_matches_hand_rolled_chain():
    spec = BackboneSpec(kind=MLP, input_shape=(5,), embedding_dim=4, hidden_sizes=[7, 4])
    model = build_model(spec, [(0, [0, 1, 2])], seed=9, dtype=FLOAT64)
    rng = np.random.default_rng(9)
    for name in ("dense0.bias", "dense1.bias"):
        model.params[name][...] = rng.standard_normal(model.params[name].shape)
    model.heads[0].bias[...] = rng.standard_normal(3)
    x = rng.standard_normal((1, 5))

    expected = []
    for row in x:
        hidden = list(row)
        for layer in ("dense0", "dense1"):
            weight = model.params[f"{layer}.weight"]
            bias = model.params[f"{layer}.bias"]
            hidden = [
                max(0.0, sum(hidden[i] * weight[i, j] for i in range(len(hidden))) + bias[j])
                for j in range(weight.shape[1])
            ]
        head = model.heads[0]
        expected.append(
            [
                sum(hidden[i] * head.weight[i, j] for i in range(len(hidden))) + head.bias[j]
                for j in range(head.width)
            ]
        )

    np.testing.assert_allclose(forward(model, x, 0), np.array(expected), rtol=0, atol=1e-12)


def test_forward_rejects_bad_shape_and_unknown_head(mlp_spec):
    model = build_model(mlp_spec, [(0, [0, 1])], seed=0)
    with pytest.raises(ShapeError):
        forward(model, np.zeros((2, 7)), 0)
    with pytest.raises(KeyError):
        forward(model, np.zeros((2, 8)), 5)


def test_train_mode_updates_running_stats_only_when_asked():
    model = build_model(_convnet_spec(), [(0, [0, 1])], seed=1)
    batch = np.random.default_rng(1).standard_normal((3, 1, 6, 6)) + 2.0
    before = {k: v.copy() for k, v in model.buffers.items()}

    forward(model, batch, 0, mode=TRAIN, update_running_stats=False)
    for name, value in model.buffers.items():
        np.testing.assert_array_equal(value, before[name])

    forward(model, batch, 0, mode=TRAIN)
    assert not np.array_equal(model.buffers["bn0.running_mean"], before["bn0.running_mean"])


def test_empty_selection_gives_zero_gradients(mlp_spec, rng):
    model = build_model(mlp_spec, [(0, [0, 1])], seed=0, dtype=FLOAT64)
    term = CrossEntropyTerm(labels=np.zeros(0, dtype=np.int64), rows=np.zeros(0, dtype=np.int64))
    grads = backward(model, rng.standard_normal((4, 8)), 0, term)
    assert set(grads) == {name for name, _ in model.named_parameters()}
    assert all(np.all(g == 0) for g in grads.values())


def test_heads_share_one_backbone_pass(mlp_spec, rng):
    model = build_model(mlp_spec, [(0, [0, 1, 2]), (1, [0, 1])], seed=2, dtype=FLOAT64)
    batch = rng.standard_normal((6, 8))
    losses = {
        0: CrossEntropyTerm(labels=np.array([0, 1, 2, 0, 1, 2])),
        1: CrossEntropyTerm(labels=np.array([0, 1]), rows=np.array([0, 1])),
    }
    _, joint = compute_gradients(model, batch, losses, mode=EVAL)
    separate = [backward(model, batch, h, term) for h, term in losses.items()]

    for name, value in model.backbone_parameters():
        np.testing.assert_allclose(joint[name], separate[0][name] + separate[1][name], atol=1e-12)

    storage = {name: id(value) for name, value in model.params.items()}
    sgd_step(model, joint, 0.1, None, OptimizerState())
    assert {name: id(value) for name, value in model.params.items()} == storage


def test_expand_head_keeps_existing_columns():
    model = build_model(
        BackboneSpec(kind=MLP, input_shape=(4,), embedding_dim=3, hidden_sizes=[3]),
        [(0, [0, 1, 2, 3, 4])],
        seed=0,
    )
    head = model.heads[0]
    grown = expand_head(head, [5, 6, 7], 0.05, np.random.default_rng(0))

    assert grown.width == 8
    assert grown.class_labels == [0, 1, 2, 3, 4, 5, 6, 7]
    np.testing.assert_array_equal(grown.weight[:, :5], head.weight)
    np.testing.assert_array_equal(grown.bias[:5], head.bias)
    assert np.all(np.abs(grown.weight[:, 5:]) <= 0.05)
    assert np.all(grown.bias[5:] == 0)

    same = expand_head(head, [], 0.05, np.random.default_rng(0))
    assert same.class_labels == head.class_labels
    np.testing.assert_array_equal(same.weight, head.weight)


def test_expand_head_is_seeded_and_rejects_duplicates(mlp_spec):
    head = build_model(mlp_spec, [(0, [0, 1])], seed=0).heads[0]
    first = expand_head(head, [2, 3], 0.01, np.random.default_rng(7))
    second = expand_head(head, [2, 3], 0.01, np.random.default_rng(7))
    np.testing.assert_array_equal(first.weight, second.weight)
    with pytest.raises(ValueError):
        expand_head(head, [1, 2], 0.01, np.random.default_rng(7))


def test_backbone_only_freeze_leaves_backbone_untouched(mlp_spec, rng):
    model = build_model(mlp_spec, [(0, [0, 1])], seed=0)
    mask = set_freeze(model, BACKBONE_ONLY)
    batch = rng.standard_normal((4, 8))
    term = CrossEntropyTerm(labels=np.array([0, 1, 0, 1]))
    before = model_checksum(model, scope="backbone")
    head_before = model.heads[0].weight.copy()

    _, grads = compute_gradients(model, batch, {0: term}, freeze_mask=mask)
    sgd_step(model, grads, 0.5, mask, OptimizerState())

    assert model_checksum(model, scope="backbone") == before
    assert not np.array_equal(model.heads[0].weight, head_before)


def test_freeze_scopes_enumerate_parameter_groups():
    spec = BackboneSpec(kind=MLP, input_shape=(4,), embedding_dim=16, hidden_sizes=[16, 16])
    model = build_model(spec, [(0, [0, 1])], seed=0)
    assert set_freeze(model, BACKBONE_ONLY).trainable() == ["head.0.weight", "head.0.bias"]
    unfrozen = set_freeze(model, NONE)
    assert not any(unfrozen.frozen.values())
    assert len(unfrozen.frozen) == 6
    with pytest.raises(ValueError):
        set_freeze(model, "heads")


def test_checksum_tracks_scope(mlp_spec):
    model = build_model(mlp_spec, [(0, [0, 1])], seed=0)
    clone = model.copy()
    assert model_checksum(clone) == model_checksum(model)
    clone.heads[0].bias[0] += 1
    assert model_checksum(clone) != model_checksum(model)
    assert model_checksum(clone, scope="backbone") == model_checksum(model, scope="backbone")


def test_backbone_spec_validation():
    with pytest.raises(ValueError):
        BackboneSpec(kind=MLP, input_shape=(4,), embedding_dim=5, hidden_sizes=[8, 4])
    with pytest.raises(ValueError):
        BackboneSpec(kind=CONVNET, input_shape=(1, 4, 4), embedding_dim=2, conv_channels=[2, 2])
    with pytest.raises(ValueError):
        BackboneSpec(kind="rnn", input_shape=(4,), embedding_dim=4)
    spec = _convnet_spec()
    assert BackboneSpec.from_dict(spec.to_dict()) == spec
