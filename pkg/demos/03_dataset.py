"""Chunk sampling, temporal inversion and distribution balancing."""

import numpy as np

from camflow import generate_world, sample_training_chunk, temporal_inversion
from camflow.camera import Intrinsics
from camflow.data import DatasetManifest, ManifestEntry, balance_manifest, direction_bin
from camflow.train import generate_training_data

world = generate_world(3)
rng = np.random.default_rng(0)
K = Intrinsics.square_fov(32)

print("== single chunks ==")
for _ in range(4):
    c = sample_training_chunk(world, rng, vocab=("W", "S", "YawLeft"), L=8, K=K)
    inv = temporal_inversion(c)
    print(f"{c.clip_id}: action alpha={c.actions[0].alpha:.3f} "
          f"bin={direction_bin(c)} -> inverted bin={direction_bin(inv)}")

print("\n== episodes and balance ==")
ds = generate_training_data(n_worlds=2, episodes_per_world=6, frame_size=32, seed=2)
bins: dict = {}
for e in range(ds.n_episodes):
    for ci in range(ds.chunks_per_episode):
        for inverted in (False, True):
            b = ds.displacement_bin(e, ci, inverted)
            bins[b] = bins.get(b, 0) + 1
print("direction bins (with inverted twins):", dict(sorted(bins.items())))

entries = [
    ManifestEntry(path=f"{b}.gcch", chunk_count=n, action_histogram={}, direction_bin=b)
    for b, n in bins.items()
]
import warnings

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    weights = balance_manifest(DatasetManifest(entries=entries))
print("per-entry balance weights:", np.round(weights, 4))
print("weights sum:", weights.sum())
