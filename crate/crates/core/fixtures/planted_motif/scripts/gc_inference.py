import argparse
import csv
import json

parser = argparse.ArgumentParser()
parser.add_argument("--input", required=True)
parser.add_argument("--output", required=True)
args = parser.parse_args()

with open("artifacts/gc_model.json") as f:
    model = json.load(f)

with open(args.input, newline="") as f:
    rows = list(csv.DictReader(f))

with open(args.output, "w", newline="") as f:
    out = csv.writer(f)
    out.writerow(["prediction"])
    for row in rows:
        seq = row["sequence"]
        gc = sum(c in "GC" for c in seq) / max(len(seq), 1)
        below = gc < model["threshold"]
        out.writerow(["1" if below == model["low_is_positive"] else "0"])
