"""Rebuild data/wdbc.csv and data/heart_cleveland.csv from offline copies.

wdbc.csv is written from the copy of the UCI WDBC table that ships with
scikit-learn. heart_cleveland.csv is written from the Cleveland table in the
Orange3 wheel, with categorical values mapped back to the UCI numeric codes
and missing values written as "?". The Orange copy stores the diagnosis as
0/1, so the `num` column only carries 0 and 1 here.

PIMA is not bundled by either package; place the 768-row Kaggle/UCI file at
data/pima.csv (header Pregnancies,...,Outcome) to enable it.

usage: python3 scripts/make_fixtures.py path/to/orange3-*.whl
"""
import csv
import os
import sys
import zipfile

import sklearn

OUT = os.path.join(os.path.dirname(__file__), "..", "data")

WDBC_NAMES = [
    f"{base}_{kind}"
    for kind in ("mean", "se", "worst")
    for base in (
        "radius", "texture", "perimeter", "area", "smoothness", "compactness",
        "concavity", "concave_points", "symmetry", "fractal_dimension",
    )
]


def wdbc():
    src = os.path.join(os.path.dirname(sklearn.__file__), "datasets", "data", "breast_cancer.csv")
    with open(src) as f:
        rows = list(csv.reader(f))[1:]
    with open(os.path.join(OUT, "wdbc.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["diagnosis"] + WDBC_NAMES)
        for r in rows:
            # sklearn encodes malignant as 0
            w.writerow(["M" if r[-1] == "0" else "B"] + r[:-1])


HEART_CODES = {
    1: {"male": "1", "female": "0"},
    2: {"typical ang": "1", "atypical ang": "2", "non-anginal": "3", "asymptomatic": "4"},
    6: {"normal": "0", "ST-T abnormal": "1", "left vent hypertrophy": "2"},
    10: {"upsloping": "1", "flat": "2", "downsloping": "3"},
    12: {"normal": "3", "fixed defect": "6", "reversable defect": "7"},
}
HEART_NAMES = ["age", "sex", "cp", "trestbps", "chol", "fbs", "restecg", "thalach",
               "exang", "oldpeak", "slope", "ca", "thal", "num"]


def heart(wheel):
    text = zipfile.ZipFile(wheel).read("Orange/datasets/heart_disease.tab").decode()
    lines = text.splitlines()[3:]
    with open(os.path.join(OUT, "heart_cleveland.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HEART_NAMES)
        for line in lines:
            cells = line.split("\t")
            out = []
            for j, c in enumerate(cells):
                c = c.strip()
                if c in ("", "?"):
                    out.append("?")
                elif j in HEART_CODES:
                    out.append(HEART_CODES[j][c])
                else:
                    out.append(c)
            w.writerow(out)


if __name__ == "__main__":
    wdbc()
    heart(sys.argv[1])
