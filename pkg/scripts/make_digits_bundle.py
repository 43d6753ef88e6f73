"""Regenerate the bundled digit images (src/noisyact/data/digits.csv.gz).

The bundle is the classic 8x8 hand-written digit set as distributed with
scikit-learn (a downsampled copy of the UCI optical recognition of
handwritten digits data). Each CSV row is 64 integer pixel values in
0..16 followed by the class label 0..9. scikit-learn is only needed to
rebuild the bundle, never at package run time.

Usage: python scripts/make_digits_bundle.py
"""

import gzip
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits


def main() -> None:
    digits = load_digits()
    table = np.column_stack([digits.data, digits.target]).astype(np.int64)
    out = Path(__file__).resolve().parents[1] / "src" / "noisyact" / "data" / "digits.csv.gz"
    out.parent.mkdir(parents=True, exist_ok=True)
    # mtime=0 keeps the archive byte-stable across rebuilds
    with open(out, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
        payload = "\n".join(",".join(str(v) for v in row) for row in table) + "\n"
        fh.write(payload.encode("ascii"))
    print(f"wrote {out} ({out.stat().st_size} bytes, {len(table)} rows)")


if __name__ == "__main__":
    main()
