import numpy as np
import pytest

from seglabel.datapipe import PromptKind, TrainExample
from seglabel.errors import (CorruptCheckpoint, EmptyOcclusion, ShapeMismatch)
from seglabel.model import (Model, ModelConfig, OcclusionPlan, OptimizerState,
                            TrainHyper, batch_loss_and_grads, forward,
                            inference_plan, init_model, load_checkpoint, loss,
                            parameter_count, parameter_spec, patchify,
                            random_plan, save_checkpoint, train_step,
                            unpatchify)
from seglabel.palette import ColorPalette
from seglabel.rasters import ClassMask, ImageBuffer
from seglabel.rng import Rng

from conftest import random_image

TINY = ModelConfig(canvas_side=16, patch_size=8, embed_dim=8, depth=1, heads=2, seed=3)
PAL = ColorPalette(((0, 0, 0), (255, 0, 0)))


def _canvas(rng, cfg):
    return random_image(rng, 2 * cfg.canvas_side, cfg.canvas_side)


def _example(rng, cfg, kind=PromptKind.FULL_MASK):
    if kind == PromptKind.SCRIBBLE:
        half = random_image(rng, cfg.canvas_side, cfg.canvas_side)
        inp = ImageBuffer(np.concatenate([half.pixels, half.pixels], axis=0))
    else:
        inp = _canvas(rng, cfg)
    return TrainExample(inp, _canvas(rng, cfg), kind, PAL)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(canvas_side=60, patch_size=8)
    with pytest.raises(ValueError):
        ModelConfig(embed_dim=65, heads=4)


def test_init_determinism():
    a, b = init_model(TINY), init_model(TINY)
    assert a.params.keys() == b.params.keys()
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    c = init_model(ModelConfig(canvas_side=16, patch_size=8, embed_dim=8,
                               depth=1, heads=2, seed=4))
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


def test_parameter_count_formula():
    for cfg in (TINY, ModelConfig(), ModelConfig(canvas_side=32, depth=2)):
        model = init_model(cfg)
        assert model.param_count() == parameter_count(cfg)
        assert sum(int(np.prod(s)) for _, s in parameter_spec(cfg)) == parameter_count(cfg)


def test_init_bounds():
    model = init_model(TINY)
    assert model.all_finite()
    assert all(np.abs(v).max() < 1.0 for v in model.params.values())
    rng = Rng(0)
    pred = forward(model, _canvas(rng, TINY), _canvas(rng, TINY),
                   inference_plan(TINY), PromptKind.FULL_MASK)
    assert np.abs(pred).max() < 1.0


def test_patchify_round_trip(rng):
    canvas = rng.random((32, 16, 3))
    tokens = patchify(canvas, 8)
    assert tokens.shape == (8, 192)
    assert np.array_equal(unpatchify(tokens, 8, 32, 16), canvas)


def test_forward_output_shape(rng):
    model = init_model(TINY)
    pred = forward(model, _canvas(rng, TINY), _canvas(rng, TINY),
                   inference_plan(TINY), PromptKind.FULL_MASK)
    assert pred.shape == (32, 16, 3)


def test_forward_shape_mismatch(rng):
    model = init_model(TINY)
    bad = random_image(rng, 16, 16)
    with pytest.raises(ShapeMismatch):
        forward(model, bad, bad, inference_plan(TINY), PromptKind.FULL_MASK)


def test_occlusion_blindness(rng):
    """Content of occluded target patches must not influence the output."""
    model = init_model(TINY)
    inp = _canvas(rng, TINY)
    tgt = _canvas(rng, TINY)
    plan = random_plan(TINY, rng)
    pred1 = forward(model, inp, tgt, plan, PromptKind.FULL_MASK)
    # scramble pixels inside one occluded patch
    idx = next(iter(plan.indices))
    cols = TINY.canvas_side // TINY.patch_size
    r, c = divmod(idx, cols)
    px = tgt.pixels.copy()
    patch = slice(r * 8, (r + 1) * 8), slice(c * 8, (c + 1) * 8)
    px[patch] = 255 - px[patch]
    pred2 = forward(model, inp, ImageBuffer(px), plan, PromptKind.FULL_MASK)
    assert np.array_equal(pred1, pred2)


def test_non_occluded_patch_changes_output(rng):
    model = init_model(TINY)
    inp = _canvas(rng, TINY)
    tgt = _canvas(rng, TINY)
    plan = OcclusionPlan(indices=frozenset({0}), mask_ratio=0.1)
    pred1 = forward(model, inp, tgt, plan, PromptKind.FULL_MASK)
    px = tgt.pixels.copy()
    px[8:16, 0:8] = 255 - px[8:16, 0:8]  # patch 2 (row 1, col 0), not occluded
    pred2 = forward(model, inp, ImageBuffer(px), plan, PromptKind.FULL_MASK)
    assert not np.array_equal(pred1, pred2)


def test_prompt_kind_flip_changes_output(rng):
    model = init_model(TINY)
    inp, tgt = _canvas(rng, TINY), _canvas(rng, TINY)
    plan = inference_plan(TINY)
    a = forward(model, inp, tgt, plan, PromptKind.FULL_MASK)
    b = forward(model, inp, tgt, plan, PromptKind.SCRIBBLE)
    assert not np.array_equal(a, b)


def test_equal_tokens_make_prompt_kinds_identical(rng):
    model = init_model(TINY)
    model.params["token.scribble"] = model.params["token.seg"].copy()
    inp, tgt = _canvas(rng, TINY), _canvas(rng, TINY)
    plan = inference_plan(TINY)
    a = forward(model, inp, tgt, plan, PromptKind.FULL_MASK)
    b = forward(model, inp, tgt, plan, PromptKind.SCRIBBLE)
    assert np.array_equal(a, b)


# --- loss ---------------------------------------------------------------------


def test_loss_zero_when_equal(rng):
    pred = rng.random((32, 16, 3))
    plan = random_plan(TINY, rng)
    assert loss(pred, pred.copy(), plan, 8) == 0.0


def test_loss_constant_offset():
    plan = OcclusionPlan(indices=frozenset({0, 3}), mask_ratio=0.25)
    target = np.zeros((32, 16, 3))
    pred = target.copy()
    cols = 2
    for idx in plan.indices:
        r, c = divmod(idx, cols)
        pred[r * 8:(r + 1) * 8, c * 8:(c + 1) * 8] += 0.1
    assert loss(pred, target, plan, 8) == pytest.approx(0.1)


def test_loss_ignores_non_occluded(rng):
    plan = OcclusionPlan(indices=frozenset({0}), mask_ratio=0.1)
    target = np.zeros((32, 16, 3))
    pred = target.copy()
    base = loss(pred, target, plan, 8)
    pred[20, 10, 0] = 0.7  # outside patch 0
    assert loss(pred, target, plan, 8) == base


def test_loss_empty_plan(rng):
    with pytest.raises(EmptyOcclusion):
        loss(np.zeros((32, 16, 3)), np.zeros((32, 16, 3)),
             OcclusionPlan(indices=frozenset(), mask_ratio=0.0), 8)


def test_loss_nonnegative_and_zero_iff_perfect(rng):
    plan = random_plan(TINY, rng)
    a, b = rng.random((32, 16, 3)), rng.random((32, 16, 3))
    assert loss(a, b, plan, 8) > 0.0


# --- gradients ------------------------------------------------------------------


def test_gradient_check_tiny_config():
    """Analytic gradients vs central finite differences in float64.

    Runs on a model re-randomized to healthy weight magnitudes, and samples
    coordinates whose gradient is clearly above the double-precision FD noise
    floor (relative error against a noise-level gradient is meaningless).
    """
    model = init_model(TINY).astype(np.float64)
    rr = np.random.default_rng(42)
    for k in model.params:
        model.params[k] = rr.normal(0.0, 0.3, size=model.params[k].shape)
    rng = Rng(7)
    examples = [_example(rng, TINY), _example(rng, TINY, PromptKind.SCRIBBLE)]
    plans = [random_plan(TINY, rng), random_plan(TINY, rng)]
    value, grads = batch_loss_and_grads(model, examples, plans)
    names = sorted(model.params)

    def loss_at(params):
        return batch_loss_and_grads(Model(TINY, params), examples, plans)[0]

    checked = 0
    picker = np.random.default_rng(0)
    while checked < 20:
        name = names[picker.integers(len(names))]
        idx = tuple(picker.integers(s) for s in model.params[name].shape)
        if abs(grads[name][idx]) < 1e-6:
            continue
        eps = 1e-5
        pp = {k: v.copy() for k, v in model.params.items()}
        pp[name][idx] += eps
        pm = {k: v.copy() for k, v in model.params.items()}
        pm[name][idx] -= eps
        fd = (loss_at(pp) - loss_at(pm)) / (2 * eps)
        an = grads[name][idx]
        rel = abs(fd - an) / max(abs(fd), abs(an))
        assert rel < 1e-4, f"{name}{idx}: fd={fd} analytic={an} rel={rel}"
        checked += 1


# --- training step ----------------------------------------------------------------


def test_zero_lr_leaves_parameters(rng):
    model = init_model(TINY)
    state = OptimizerState.zeros_like(model)
    examples = [_example(rng, TINY)]
    plans = [random_plan(TINY, rng)]
    new_model, _, stats = train_step(model, examples, plans, state, TrainHyper(lr=0.0))
    for k in model.params:
        assert np.array_equal(model.params[k], new_model.params[k])
    assert stats["loss"] > 0


def test_training_trajectories_deterministic():
    def run():
        rng = Rng(5)
        model = init_model(TINY)
        state = OptimizerState.zeros_like(model)
        examples = [_example(rng, TINY)]
        losses = []
        for _ in range(10):
            plans = [random_plan(TINY, rng)]
            model, state, stats = train_step(model, examples, plans, state,
                                             TrainHyper(lr=0.05))
            losses.append(stats["loss"])
        return losses, model

    l1, m1 = run()
    l2, m2 = run()
    assert l1 == l2
    assert all(np.array_equal(m1.params[k], m2.params[k]) for k in m1.params)


def test_short_overfit_descends(rng):
    """50 steps on one fixed example with the repo-default schedule."""
    from seglabel.palette import render_mask
    from seglabel.trainer import StageConfig, _lr_schedule

    ids = np.zeros((32, 16), dtype=np.uint8)
    ids[0:8, 0:8] = 1
    ids[16:24, 8:16] = 1
    target = render_mask(ClassMask(ids), PAL)
    example = TrainExample(_canvas(rng, TINY), target, PromptKind.FULL_MASK, PAL)
    plans = [random_plan(TINY, rng)]
    model = init_model(TINY)
    state = OptimizerState.zeros_like(model)
    stage = StageConfig(stage=1, epochs=1)  # defaults: lr 1.0, warmup, decay tail
    first = None
    for step in range(50):
        hyper = TrainHyper(lr=_lr_schedule(step, 50, stage))
        model, state, stats = train_step(model, [example], plans, state, hyper)
        if first is None:
            first = stats["loss"]
    final, _ = batch_loss_and_grads(model, [example], plans)
    assert final < 0.2 * first


# --- checkpoints --------------------------------------------------------------------


def test_checkpoint_round_trip():
    model = init_model(TINY)
    data = save_checkpoint(model)
    loaded = load_checkpoint(data)
    assert loaded.cfg == model.cfg
    for k in model.params:
        assert np.array_equal(loaded.params[k], model.params[k])
    # byte-identical re-serialization
    assert save_checkpoint(loaded) == data


def test_checkpoint_size_formula():
    model = init_model(TINY)
    data = save_checkpoint(model)
    header_len = int.from_bytes(data[4:8], "little")
    assert len(data) == 8 + header_len + 4 * parameter_count(TINY)


def test_checkpoint_corruption_paths():
    model = init_model(TINY)
    data = save_checkpoint(model)
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(data[:-4])  # payload length mismatch
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(data[:8] + b"X" + data[9:])  # broken header JSON

    # header claiming a different config than the tensor table
    import json as _json
    import struct as _struct
    header_len = int.from_bytes(data[4:8], "little")
    header = _json.loads(data[8:8 + header_len])
    header["config"]["embed_dim"] = 16
    head = _json.dumps(header, sort_keys=True).encode()
    tampered = data[:4] + _struct.pack("<I", len(head)) + head + data[8 + header_len:]
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tampered)
