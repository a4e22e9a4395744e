import argparse
import csv
import json

parser = argparse.ArgumentParser()
parser.add_argument("--input", required=True)
parser.add_argument("--output", required=True)
args = parser.parse_args()

with open("artifacts/kmer_model.json") as f:
    kmer = json.load(f)["kmer"]

with open(args.input, newline="") as f:
    rows = list(csv.DictReader(f))

with open(args.output, "w", newline="") as f:
    out = csv.writer(f)
    out.writerow(["prediction", "score"])
    for row in rows:
        hit = kmer in row["sequence"]
        out.writerow(["1" if hit else "0", "1.0" if hit else "0.0"])
