"""Rebuild a UCI-format ``communities.data`` from the copy bundled in the ethicml wheel.

Use this only when the UCI original cannot be downloaded.  ethicml's
``crime.csv`` is derived from the UCI file with these differences, all of
which this script carries over:

* the first UCI record is missing (it was consumed as a CSV header), so the
  result has 1993 rows instead of 1994;
* columns that contain any missing value were removed; they are written back
  as all-``?`` columns, which the loader drops exactly as it would drop the
  original partially-missing columns;
* ``state`` was one-hot encoded and is decoded here;
* row order was shuffled; rows are written sorted by state, fold and name.

Usage::

    python scripts/rebuild_communities_data.py ethicml-1.3.0-py3-none-any.whl data/communities.data
"""

import csv
import io
import sys
import zipfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fairmaml.crime import UCI_COLUMNS  # noqa: E402

MEMBER = "ethicml/data/csvs/crime.csv"


def read_source(path: Path) -> str:
    if path.suffix == ".whl":
        with zipfile.ZipFile(path) as zf:
            return zf.read(MEMBER).decode()
    return path.read_text()


def rebuild(source: Path, dest: Path) -> int:
    reader = csv.DictReader(io.StringIO(read_source(source)))
    state_cols = [c for c in reader.fieldnames if c.startswith("state_")]
    out = []
    for row in reader:
        states = [c for c in state_cols if row[c] in ("1", "True", "true")]
        if len(states) != 1:
            raise ValueError(f"row {reader.line_num}: cannot decode state from one-hot columns")
        rec = {"state": states[0].split("_", 1)[1]}
        for col in UCI_COLUMNS[1:]:
            rec[col] = row.get(col, "?")
        out.append([rec[c] for c in UCI_COLUMNS])
    out.sort(key=lambda r: (int(r[0]), int(r[4]), r[3]))
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text("".join(",".join(r) + "\n" for r in out))
    return len(out)


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    n = rebuild(Path(sys.argv[1]), Path(sys.argv[2]))
    print(f"wrote {n} records to {sys.argv[2]}")
