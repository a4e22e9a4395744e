"""Baseline: threshold on GC content."""
import csv
import json
import os

with open("data/train.csv", newline="") as f:
    rows = list(csv.DictReader(f))

cut = int(len(rows) * 0.8)
train, valid = rows[:cut], rows[cut:]


def gc(seq):
    return sum(c in "GC" for c in seq) / max(len(seq), 1)


def mean(xs):
    return sum(xs) / max(len(xs), 1)


pos = [gc(r["sequence"]) for r in train if r["label"] == "1"]
neg = [gc(r["sequence"]) for r in train if r["label"] == "0"]
threshold = (mean(pos) + mean(neg)) / 2
low_is_positive = mean(pos) < mean(neg)


def predict(seq):
    below = gc(seq) < threshold
    return "1" if below == low_is_positive else "0"


def accuracy(part):
    return sum(predict(r["sequence"]) == r["label"] for r in part) / len(part)


os.makedirs("artifacts", exist_ok=True)
with open("artifacts/gc_model.json", "w") as f:
    json.dump({"threshold": threshold, "low_is_positive": low_is_positive}, f)
with open("metrics.json", "w") as f:
    json.dump({"train": {"accuracy": accuracy(train)}, "validation": {"accuracy": accuracy(valid)}}, f)
print("validation accuracy", accuracy(valid))
