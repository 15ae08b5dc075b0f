"""Build the bundled benchmark CSVs under data/.

balance.csv is generated from the rule that defines the Balance Scale
problem: every (left weight, left distance, right weight, right distance) in
1..5, labelled by which side has the larger torque.  The row order is the
nested loop order of the original UCI file.

cancer.csv and pima.csv are converted from copies shipped inside packages on
PyPI, since the sandbox has no direct route to the UCI archive:

    pip download --no-deps -d /tmp/dl pydataset keel-ds
    python scripts/prepare_data.py --pydataset /tmp/dl/pydataset-0.2.0.tar.gz \
        --keel /tmp/dl/keel_ds-0.2.5-py3-none-any.whl

Cancer (Wisconsin original, 699 rows) has 16 missing "bare nuclei" values;
they are filled with the median of that column so that all 699 patterns are
kept.
"""

import argparse
import csv
import io
import itertools
import statistics
import tarfile
import zipfile
from pathlib import Path

DATA = Path(__file__).resolve().parent.parent / "data"
CANCER_COLUMNS = ["clump_thickness", "cell_size", "cell_shape", "adhesion", "epithelial_size",
                  "bare_nuclei", "chromatin", "nucleoli", "mitoses"]
PIMA_COLUMNS = ["preg", "plas", "pres", "skin", "insu", "mass", "pedi", "age"]


def write_balance():
    with open(DATA / "balance.csv", "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["left_weight", "left_distance", "right_weight", "right_distance", "class"])
        for lw, ld, rw, rd in itertools.product(range(1, 6), repeat=4):
            left, right = lw * ld, rw * rd
            out.writerow([lw, ld, rw, rd, "L" if left > right else "R" if right > left else "B"])


def write_cancer(pydataset_tar):
    with tarfile.open(pydataset_tar) as outer:
        member = next(m for m in outer.getmembers() if m.name.endswith("resources.tar.gz"))
        inner = tarfile.open(fileobj=io.BytesIO(outer.extractfile(member).read()))
        raw = inner.extractfile("resources/rdata/csv/MASS/biopsy.csv").read().decode()
    rows = list(csv.DictReader(io.StringIO(raw)))
    fill = statistics.median(int(r["V6"]) for r in rows if r["V6"] != "NA")
    with open(DATA / "cancer.csv", "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(CANCER_COLUMNS + ["class"])
        for r in rows:
            values = [r[f"V{i}"] if r[f"V{i}"] != "NA" else str(int(fill)) for i in range(1, 10)]
            out.writerow(values + [r["class"]])


def write_pima(keel_wheel):
    raw = zipfile.ZipFile(keel_wheel).read("keel_ds/data/balanced/raw/pima.dat").decode()
    with open(DATA / "pima.csv", "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(PIMA_COLUMNS + ["class"])
        for line in raw.splitlines():
            line = line.strip()
            if line and not line.startswith("@"):
                out.writerow([c.strip() for c in line.split(",")])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--pydataset", help="pydataset sdist (for cancer.csv)")
    parser.add_argument("--keel", help="keel-ds wheel (for pima.csv)")
    args = parser.parse_args()
    DATA.mkdir(exist_ok=True)
    write_balance()
    if args.pydataset:
        write_cancer(args.pydataset)
    if args.keel:
        write_pima(args.keel)


if __name__ == "__main__":
    main()
