"""Presence of the single most class-discriminative k-mer."""
import argparse
import csv
import json
import os

parser = argparse.ArgumentParser()
parser.add_argument("--k", type=int, default=6)
args = parser.parse_args()

with open("data/train.csv", newline="") as f:
    rows = list(csv.DictReader(f))

cut = int(len(rows) * 0.8)
train, valid = rows[:cut], rows[cut:]


def kmers(seq, k):
    return {seq[i:i + k] for i in range(len(seq) - k + 1)}


pos_counts, neg_counts = {}, {}
n_pos = n_neg = 0
for r in train:
    counts = pos_counts if r["label"] == "1" else neg_counts
    if r["label"] == "1":
        n_pos += 1
    else:
        n_neg += 1
    for km in kmers(r["sequence"], args.k):
        counts[km] = counts.get(km, 0) + 1

best = max(
    sorted(pos_counts),
    key=lambda km: pos_counts[km] / max(n_pos, 1) - neg_counts.get(km, 0) / max(n_neg, 1),
)


def predict(seq):
    return "1" if best in seq else "0"


def accuracy(part):
    return sum(predict(r["sequence"]) == r["label"] for r in part) / len(part)


os.makedirs("artifacts", exist_ok=True)
with open("artifacts/kmer_model.json", "w") as f:
    json.dump({"kmer": best, "k": args.k}, f)
with open("metrics.json", "w") as f:
    json.dump({"train": {"accuracy": accuracy(train)}, "validation": {"accuracy": accuracy(valid)}}, f)
print("selected k-mer", best, "validation accuracy", accuracy(valid))
