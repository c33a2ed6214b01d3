import numpy as np
import pytest

from camflow.actions import Action, NULL_ACTION
from camflow.camera import CameraPose, Intrinsics, integrate_action
from camflow.extension import (
    BufferEntry,
    HeadMode,
    HistoryBuffer,
    MODE_PROBS,
    autoregressive_extend,
    build_head_condition,
    sample_training_mode,
)
from camflow.model import Denoiser, ModelConfig

CFG = ModelConfig(
    frame_size=16,
    patch=4,
    d_model=16,
    n_blocks=1,
    n_heads=2,
    mlp_ratio=2,
    chunk_frames=4,
    n_scenes=4,
    time_dim=16,
    enc_channels=(4, 4),
    dtype="float64",
)


@pytest.fixture(scope="module")
def model():
    return Denoiser(CFG)


@pytest.fixture(scope="module")
def params(model):
    return model.init_params(np.random.default_rng(0))


def _entry(rng, model, pose=None):
    cfg = model.cfg
    tokens = rng.standard_normal((cfg.chunk_tokens, cfg.d_model))
    start = pose or CameraPose(rng.uniform(2, 6, 3), rng.uniform(-1, 1), 0.0)
    act = Action(np.array([0, 0, 1.0]), np.zeros(3), 0.1, 0.0)
    traj = integrate_action(start, act, cfg.chunk_frames)
    return BufferEntry(tokens=tokens, trajectory=traj, action=act)


def test_single_frame_head(model):
    rng = np.random.default_rng(1)
    tpf = model.cfg.tokens_per_frame
    first = rng.standard_normal((tpf, model.cfg.d_model))
    head = build_head_condition(HeadMode.SINGLE_FRAME, None, first, tpf, model.cfg.chunk_frames)
    assert head.head_frames == 1
    assert int(head.mask.sum()) == tpf
    assert head.mask.shape == (1, (1 + model.cfg.chunk_frames) * tpf)


def test_last_clip_head(model):
    rng = np.random.default_rng(2)
    buf = HistoryBuffer(capacity=3)
    e = _entry(rng, model)
    buf.append(e)
    head = build_head_condition(
        HeadMode.LAST_CLIP, buf, None, model.cfg.tokens_per_frame, model.cfg.chunk_frames
    )
    assert head.head_frames == model.cfg.chunk_frames
    assert np.array_equal(head.head_tokens, e.tokens)
    assert int(head.mask.sum()) == model.cfg.chunk_tokens


def test_multi_clip_uses_newest_two(model):
    rng = np.random.default_rng(3)
    buf = HistoryBuffer(capacity=4)
    entries = [_entry(rng, model) for _ in range(3)]
    for e in entries:
        buf.append(e)
    head = build_head_condition(
        HeadMode.MULTI_CLIP, buf, None, model.cfg.tokens_per_frame, model.cfg.chunk_frames
    )
    assert head.head_frames == 2 * model.cfg.chunk_frames
    expected = np.concatenate([entries[1].tokens, entries[2].tokens])
    assert np.array_equal(head.head_tokens, expected)


def test_insufficient_history_errors(model):
    tpf = model.cfg.tokens_per_frame
    with pytest.raises(ValueError):
        build_head_condition(HeadMode.SINGLE_FRAME, None, None, tpf, model.cfg.chunk_frames)
    buf = HistoryBuffer(capacity=2)
    with pytest.raises(ValueError):
        build_head_condition(HeadMode.LAST_CLIP, buf, None, tpf, model.cfg.chunk_frames)
    buf.append(_entry(np.random.default_rng(4), model))
    with pytest.raises(ValueError):
        build_head_condition(HeadMode.MULTI_CLIP, buf, None, tpf, model.cfg.chunk_frames)


def test_mode_ratio_reproduction():
    rng = np.random.default_rng(0)
    counts = {m: 0 for m in HeadMode}
    n = 100_000
    for _ in range(n):
        counts[sample_training_mode(rng)] += 1
    for mode, p in MODE_PROBS.items():
        assert abs(counts[mode] / n - p) < 0.01
    assert abs(sum(MODE_PROBS.values()) - 1.0) < 1e-12


def test_mode_sampling_seeded_reproducible():
    a = [sample_training_mode(np.random.default_rng(7)) for _ in range(5)]
    b = [sample_training_mode(np.random.default_rng(7)) for _ in range(5)]
    assert a == b


def test_ring_buffer_semantics(model):
    rng = np.random.default_rng(5)
    buf = HistoryBuffer(capacity=2)
    entries = [_entry(rng, model) for _ in range(5)]
    for e in entries:
        buf.append(e)
    assert len(buf) == 2
    kept = buf.entries()
    assert kept[0] is entries[3]
    assert kept[1] is entries[4]
    with pytest.raises(ValueError):
        HistoryBuffer(capacity=0)


def test_rollout_trajectory_continuity(model, params):
    rng = np.random.default_rng(6)
    K = Intrinsics.square_fov(model.cfg.frame_size)
    buf = HistoryBuffer(capacity=4)
    start = CameraPose(np.array([4.0, 0.5, 4.0]))
    first = rng.standard_normal((model.cfg.tokens_per_frame, model.cfg.d_model))
    act = Action(np.array([0, 0, 1.0]), np.zeros(3), 0.1, 0.0)
    trajs = []
    for i in range(3):
        tokens, traj, stats = autoregressive_extend(
            model, params, buf, act, K, rng,
            steps=2, guidance=0.0, first_frame_tokens=first, start_pose=start,
        )
        assert tokens.shape == (model.cfg.chunk_tokens, model.cfg.d_model)
        trajs.append(traj)
    for prev, nxt in zip(trajs, trajs[1:]):
        expected = integrate_action(prev[-1], act, 1)[0]
        assert expected.almost_equal(nxt[0], tol=1e-9)


def test_rollout_buffer_capacity(model, params):
    rng = np.random.default_rng(7)
    K = Intrinsics.square_fov(model.cfg.frame_size)
    buf = HistoryBuffer(capacity=2)
    start = CameraPose(np.array([4.0, 0.5, 4.0]))
    first = rng.standard_normal((model.cfg.tokens_per_frame, model.cfg.d_model))
    for i in range(5):
        autoregressive_extend(
            model, params, buf, NULL_ACTION, K, rng,
            steps=1, guidance=0.0, first_frame_tokens=first, start_pose=start,
        )
    assert len(buf) == 2


def test_rollout_needs_reference(model, params):
    rng = np.random.default_rng(8)
    K = Intrinsics.square_fov(model.cfg.frame_size)
    with pytest.raises(ValueError):
        autoregressive_extend(
            model, params, HistoryBuffer(), NULL_ACTION, K, rng, steps=1, guidance=0.0
        )


def test_sampler_abort_carries_chunk_index(model, params):
    rng = np.random.default_rng(9)
    K = Intrinsics.square_fov(model.cfg.frame_size)
    buf = HistoryBuffer(capacity=2)
    start = CameraPose(np.array([4.0, 0.5, 4.0]))
    first = rng.standard_normal((model.cfg.tokens_per_frame, model.cfg.d_model))

    def bad_sampler(model_, params_, act_, mask_, head_, steps_, g_, scenes_, rng_):
        raise RuntimeError("non-finite state at sampler step 1")

    with pytest.raises(RuntimeError, match="chunk 0"):
        autoregressive_extend(
            model, params, buf, NULL_ACTION, K, rng,
            steps=1, guidance=0.0, first_frame_tokens=first, start_pose=start,
            sampler=bad_sampler,
        )
