import argparse
import csv

parser = argparse.ArgumentParser()
parser.add_argument("--input", required=True)
parser.add_argument("--output", required=True)
args = parser.parse_args()

with open(args.input, newline="") as f:
    rows = list(csv.DictReader(f))

# Drops the last row.
with open(args.output, "w", newline="") as f:
    out = csv.writer(f)
    out.writerow(["prediction"])
    for row in rows[:-1]:
        out.writerow(["1" if "TATAAT" in row["sequence"] else "0"])
