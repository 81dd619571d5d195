"""Scratch calibration: train on the grid and run the behavioral checks."""
import sys
import time

import numpy as np

from spnpb.dataset import save_trials
from spnpb.evaluate import (
    check_heteroscedasticity,
    check_line_search,
    check_online_adaptation,
    check_pb_organization,
    check_variance_control,
)
from spnpb.model import ModelConfig, save_model
from spnpb.simulator import collect_trials, default_grid
from spnpb.training import TrainConfig, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 300
tag = sys.argv[2] if len(sys.argv) > 2 else f"e{epochs}"
lr_pb = float(sys.argv[3]) if len(sys.argv) > 3 else 1e-3
lr_decay = float(sys.argv[4]) if len(sys.argv) > 4 else 1.0
lr_decay_pb = float(sys.argv[5]) if len(sys.argv) > 5 else 1.0
train_seed = int(sys.argv[6]) if len(sys.argv) > 6 else 0

trials = collect_trials(default_grid(base_seed=0), steps_per_trial=200, trials_per_config=3)
print(f"{len(trials)} trials")
save_trials(trials, f"/tmp/cal_{tag}.csv")

t0 = time.time()
losses = []
def on_epoch(e, loss):
    losses.append(loss)
    if e % 200 == 0 or e == epochs - 1:
        print(f"epoch {e}: {loss:.1f}  ({time.time()-t0:.0f}s)", flush=True)

params = train(trials, TrainConfig(epochs=epochs, lr_pb=lr_pb, lr_decay=lr_decay,
                                   lr_decay_pb=lr_decay_pb, seed=train_seed),
               on_epoch=on_epoch)
print(f"train time: {time.time()-t0:.0f}s")
save_model(params, f"/tmp/cal_model_{tag}.json")
print("pb table:")
for lab, row in zip(params.pb_labels, params.pb_table):
    print(f"  {lab}: ({row[0]:+.4f}, {row[1]:+.4f})")

for check in (check_heteroscedasticity, check_pb_organization):
    t1 = time.time()
    r = check(params)
    print(f"{r.line()}  [{time.time()-t1:.0f}s]", flush=True)
t1 = time.time()
r = check_online_adaptation(params)
print(f"{r.line()}  [{time.time()-t1:.0f}s]", flush=True)
t1 = time.time()
r = check_line_search(params)
print(f"{r.line()}  [{time.time()-t1:.0f}s]", flush=True)
t1 = time.time()
r = check_variance_control(params)
print(f"{r.line()}  [{time.time()-t1:.0f}s]", flush=True)
