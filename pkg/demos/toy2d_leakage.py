"""
Soft labels leak memorized data in two dimensions
=================================================

A small ReLU network memorizes 100 points whose labels are pure noise.
A student trained on 60 of them through the teacher's soft labels then
labels the other 40 better than chance, while a student trained on the
bare labels of the same 60 points does not.

Run with ``python demos/toy2d_leakage.py [outdir]``; decision boundaries
are written there as SVG.
"""

import sys
from pathlib import Path

import numpy as np

from leaklab.data import gen_toy_2d, make_partition
from leaklab.distill import TrainConfig, make_soft_labels, one_hot, train_student, train_teacher
from leaklab.metrics import accuracy
from leaklab.numkit import RngState
from leaklab.plotting import emit_decision_boundary

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
rng = RngState(0)

# Gaussian inputs, three classes drawn uniformly at random. Half of the 200
# points go to the teacher; the rest are never memorized and serve as the
# validation baseline.
data = gen_toy_2d(rng.child("data"), 200, 3)
part = make_partition(rng.child("partition"), data, 0.5, 0.6)
train, test = part.student_train_idx, part.student_test_idx
teacher_data = data.subset(part.teacher_idx)

teacher, _ = train_teacher(rng.child("teacher"), teacher_data, "mlp1", [100], TrainConfig(steps=20_000, lr=1e-2, stop_loss=1e-3))
print(f"teacher accuracy on its own data: {accuracy(teacher, teacher_data.inputs, teacher_data.labels):.2f}")

# %%
# Two students with the teacher's architecture. Both see the same 60 points;
# one gets soft labels at temperature 20, the other one-hot labels.
tau = 20.0
X = data.inputs[train]
soft = make_soft_labels(teacher, X, tau)
config = TrainConfig(steps=20_000, lr=1e-2)
soft_student, _ = train_student(rng.child("soft"), X, soft, tau, "mlp1", [100], config)
hard_student, _ = train_student(rng.child("hard"), X, one_hot(data.labels[train], 3), 1.0, "mlp1", [100], config)

for name, student in [("soft labels", soft_student), ("labels only", hard_student)]:
    acc = accuracy(student, data.inputs[test], data.labels[test])
    print(f"{name:>12}: accuracy on the 40 held-out memorized points = {acc:.2f} (chance 0.33)")

X_val, y_val = part.val_data(data)
for name, model in [("teacher", teacher), ("soft-label student", soft_student)]:
    print(f"{name} on 100 fresh points nobody memorized: {accuracy(model, X_val, y_val):.2f}")

# %%
# The soft-label student's decision regions trace the teacher's closely,
# which is where its held-out accuracy comes from.
held_out = (data.inputs[test], data.labels[test])
bounds = (-3.0, 3.0, -3.0, 3.0)
for name, model in [("teacher", teacher), ("soft_student", soft_student), ("hard_student", hard_student)]:
    emit_decision_boundary(model, bounds, 150, out / f"toy2d_{name}.svg", held_out, title=name.replace("_", " "))
print(f"decision boundaries written to {out}/")
