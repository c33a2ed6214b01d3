"""Dev probe: acceptance-profile training + directionality readout."""

import pickle
import sys
import time

import numpy as np

from camflow.actions import Action
from camflow.camera import Intrinsics, integrate_action, wrap_angle
from camflow.alignment import rpe, umeyama_sim3, apply_sim3
from camflow.data import ACTION_TEMPLATES
from camflow.evalkit import recover_trajectory
from camflow.extension import HistoryBuffer, autoregressive_extend
from camflow.model import Denoiser, ModelConfig
from camflow.train import TrainConfig, generate_training_data, train
from camflow.world import generate_world, render_frame
from camflow.session import default_start_pose
from camflow.data import _free_start, _traj_clear

STEPS = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
GUIDANCE = float(sys.argv[2]) if len(sys.argv) > 2 else 1.5
SAMPLE_STEPS = 16

t0 = time.time()
ds = generate_training_data(n_worlds=20, episodes_per_world=34, frame_size=32, seed=0)
print(f"data: {ds.total_chunks()} chunks {time.time()-t0:.0f}s", flush=True)

model = Denoiser(ModelConfig(frame_size=32))
tcfg = TrainConfig(steps=STEPS, batch_size=8, lr=2e-3, seed=0)
state = train(model, ds, tcfg)
print(f"train: {time.time()-t0:.0f}s loss {np.mean(state.losses[:50]):.4f} -> {np.mean(state.losses[-50:]):.4f}", flush=True)
with open("/tmp/dir_model.pkl", "wb") as f:
    pickle.dump({"params": state.params}, f)

# directionality eval
K = Intrinsics.square_fov(32)
rng = np.random.default_rng(123)
names = ["W", "S", "A", "D", "YawLeft", "YawRight"]
correct = 0
total = 0
rpes = []
per_name = {}
for trial in range(60):
    name = names[trial % 6]
    wi = int(rng.integers(0, 20))
    world = generate_world(wi)  # seed*1000+wi with seed=0 -> wi
    scene = wi + 1
    # collision-free commanded trajectory
    for _ in range(50):
        start = _free_start(world, rng)
        d_trans, d_rot = ACTION_TEMPLATES[name]
        act = Action(d_trans, d_rot, 0.15 if np.linalg.norm(d_trans) else 0.0,
                     0.1 if np.linalg.norm(d_rot) else 0.0)
        traj = integrate_action(start, act, 8)
        if _traj_clear(world, start, traj):
            break
    first = render_frame(world, start, K, 0)
    buf = HistoryBuffer(4)
    tokens, gen_traj, _ = autoregressive_extend(
        model, state.params, buf, act, K, np.random.default_rng(trial),
        steps=SAMPLE_STEPS, guidance=GUIDANCE, scene_id=scene,
        first_frame_tokens=model.patchify(first[None, None])[0],
        start_pose=start,
    )
    frames = np.clip(model.unpatchify(tokens[None], 8)[0], 0, 1)
    rec = recover_trajectory(frames, world, K, init=start, times=list(range(1, 9)),
                             unreliable_threshold=np.inf, refinements=4)
    est = rec.trajectory
    ok = False
    if np.linalg.norm(d_trans) > 0:
        from camflow.camera import rotation_cw
        axis_w = rotation_cw(start.yaw, start.pitch) @ d_trans
        disp = est[-1].position - start.position
        ok = float(disp @ axis_w) > 0
        sim = umeyama_sim3(est, traj)
        r = rpe(apply_sim3(sim, est), traj)
        rpes.append(r.rpe_trans)
    else:
        dyaw = wrap_angle(est[-1].yaw - start.yaw)
        ok = dyaw * d_rot[1] > 0
    correct += ok
    total += 1
    per_name.setdefault(name, []).append(ok)
    if trial % 12 == 11:
        print(f"  trial {trial+1}: acc so far {correct}/{total}", flush=True)

print(f"\nACCURACY: {correct}/{total} = {correct/total:.2%}")
for n in names:
    print(f"  {n}: {sum(per_name[n])}/{len(per_name[n])}")
print(f"RPE_trans mean {np.mean(rpes):.3f} median {np.median(rpes):.3f}")
print(f"total {time.time()-t0:.0f}s")
