"""Scratch probe of the 500-epoch model: sigma ratio protocols, adaptation
nearest-row diagnosis, and alpha geometry of the PB table."""

import sys
import numpy as np

sys.path.insert(0, "src")

from spnpb.adaptation import LivePB
from spnpb.analysis import nearest_row
from spnpb.autodiff import Tape
from spnpb.dataset import load_trials, parse_env_label
from spnpb.experiments import run_adaptation_episode
from spnpb.model import RecurrentState, forward, load_model
from spnpb.simulator import SimConfig

params = load_model(sys.argv[1] if len(sys.argv) > 1 else "/tmp/cal_model_e500p03.json")
trials = load_trials(sys.argv[2] if len(sys.argv) > 2 else "/tmp/cal_e500p03.csv")
labels = params.pb_labels
pb = params.pb_table

print("== per-config centroids ==")
configs = sorted(set(labels))
cents = {}
for cfg in configs:
    rows = np.array([pb[i] for i, l in enumerate(labels) if l == cfg])
    cents[cfg] = rows.mean(axis=0)
    print(f"  {cfg}: centroid ({cents[cfg][0]:+.4f}, {cents[cfg][1]:+.4f}) "
          f"spread {np.mean(np.linalg.norm(rows - cents[cfg], axis=1)):.4f}")

print("\n== centroid distances within beta groups ==")
for beta in ("0.1", "1.0"):
    group = [c for c in configs if c.endswith(beta)]
    for i in range(len(group)):
        for j in range(i + 1, len(group)):
            d = np.linalg.norm(cents[group[i]] - cents[group[j]])
            print(f"  {group[i]} <-> {group[j]}: {d:.4f}")

# common-input sigma: teacher-force every trial's sequence under each PB row,
# average predicted sigma_trans per row, then compare beta groups
print("\n== common-input sigma per PB row ==")
h_width = params.config.layer_widths[4]
row_sigma = np.zeros(len(pb))
for k in range(len(pb)):
    sigs = []
    for trial in trials:
        st = RecurrentState.zeros(h_width)
        s_n = params.stats.normalize_state(trial.states)
        u_n = params.stats.normalize_command(trial.commands)
        for t in range(len(s_n) - 1):
            pred, st = forward(params, st, s_n[t], u_n[t], pb[k], Tape())
            sigs.append(np.sqrt(pred.variance[0]))
    row_sigma[k] = np.mean(sigs)
    print(f"  row {k} ({labels[k]}): mean sigma_trans {row_sigma[k]:.4f}")

lo = [row_sigma[i] for i, l in enumerate(labels) if l.endswith("0.1")]
hi = [row_sigma[i] for i, l in enumerate(labels) if l.endswith("1.0")]
print(f"  common-input beta ratio: {np.mean(hi) / np.mean(lo):.3f}")

print("\n== adaptation nearest-row diagnosis ==")
for env_label, alpha, beta in (("alpha=0.4,beta=0.1", 0.4, 0.1),
                               ("alpha=0.6,beta=1.0", 0.6, 1.0)):
    sim = SimConfig(alpha=alpha, beta=beta)
    hits_row = hits_cent = 0
    for seed in range(10):
        ep = run_adaptation_episode(params, sim, n_ticks=200, seed=seed)
        k = nearest_row(pb, ep.final_p)
        cfg_names = list(cents.keys())
        kc = cfg_names[int(np.argmin([np.linalg.norm(cents[c] - ep.final_p)
                                      for c in cfg_names]))]
        ok_row = labels[k] == env_label
        ok_cent = kc == env_label
        hits_row += ok_row
        hits_cent += ok_cent
        print(f"  {env_label} seed {seed}: final ({ep.final_p[0]:+.3f}, {ep.final_p[1]:+.3f})"
              f" nearest-row {labels[k]}{' *' if ok_row else ''}"
              f" nearest-centroid {kc}{' *' if ok_cent else ''}")
    print(f"  {env_label}: row hits {hits_row}/10, centroid hits {hits_cent}/10")
