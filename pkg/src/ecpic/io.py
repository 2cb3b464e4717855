"""CSV and flat key=value output with shortest round-trip float formatting."""
import csv
import math

import numpy as np

LEDGER_COLUMNS = ("i", "dek_dt", "deps_dt", "div_gamma", "div_gammaE", "D",
                  "gammaK_left_face", "residue")


def fmt(value):
    """Shortest decimal that parses back to the same value."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (tuple, list)):
        return " ".join(fmt(v) for v in value)
    return str(value)


def parse_number(text):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return float(text)


def write_timeseries(path, rows, columns=None):
    from .scenario import TIMESERIES_COLUMNS
    columns = columns or TIMESERIES_COLUMNS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row[c]) for c in columns])


def read_timeseries(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: parse_number(v) for k, v in row.items()} for row in reader]


def ledger_rows(ledger):
    n = len(ledger.D)
    # gamma_K is stored per face i+1/2, so cell i's left face is index i-1
    left = np.roll(ledger.gamma_K, 1)
    for i in range(n):
        yield {"i": i, "dek_dt": ledger.dek_dt[i], "deps_dt": ledger.deps_dt[i],
               "div_gamma": ledger.div_gamma[i], "div_gammaE": ledger.div_gamma_E[i],
               "D": ledger.D[i], "gammaK_left_face": left[i], "residue": ledger.residue[i]}


def write_ledger(path, ledger):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LEDGER_COLUMNS)
        for row in ledger_rows(ledger):
            w.writerow([fmt(row[c]) for c in LEDGER_COLUMNS])


def read_ledger(path):
    with open(path, newline="") as fh:
        return [{k: parse_number(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_meta(path, mapping):
    with open(path, "w") as fh:
        for key in sorted(mapping):
            fh.write(f"{key}={fmt(mapping[key])}\n")


def read_meta(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key] = value
    return out


def isclose_rows(a, b):
    """Bitwise comparison helper for round-trip checks (NaN equals NaN)."""
    if a.keys() != b.keys():
        return False
    for k in a:
        x, y = a[k], b[k]
        if isinstance(x, float) and math.isnan(x):
            if not (isinstance(y, float) and math.isnan(y)):
                return False
        elif x != y:
            return False
    return True
