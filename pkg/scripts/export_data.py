"""Export the bundled datasets into ./data.

Sources are packages reachable from the PyPI mirror:

* ``rdatasets`` (MASS::biopsy) -> data/winconsin.csv, the UCI
  breast-cancer-wisconsin file layout (id, 9 attributes, class 2/4, '?').
* ``mlxtend`` wheel (mnist_5k.csv.gz) -> data/mnist5k-{images-idx3,labels-idx1}-ubyte.gz

Run once; the outputs are committed.
"""
import glob
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "data"


def export_winconsin():
    import rdatasets

    df = rdatasets.data("MASS", "biopsy")
    lines = []
    for _, row in df.iterrows():
        vals = [str(int(row["ID"]))]
        for c in [f"V{i}" for i in range(1, 10)]:
            v = row[c]
            vals.append("?" if v != v else str(int(v)))
        vals.append("2" if row["class"] == "benign" else "4")
        lines.append(",".join(vals))
    (OUT / "winconsin.csv").write_text("\n".join(lines) + "\n")


def export_mnist(wheel):
    z = zipfile.ZipFile(wheel)
    raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    arr = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    images = arr[:, :-1].astype(np.uint8)
    labels = arr[:, -1].astype(np.uint8)
    n = len(images)
    with gzip.GzipFile(OUT / "mnist5k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(OUT / "mnist5k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())


if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    export_winconsin()
    wheels = glob.glob(sys.argv[1] if len(sys.argv) > 1 else "mlxtend-*.whl")
    if wheels:
        export_mnist(wheels[0])
    else:
        print("mlxtend wheel not found; `pip download --no-deps mlxtend` first")
