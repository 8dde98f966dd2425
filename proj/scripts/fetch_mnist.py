#!/usr/bin/env python3
"""Write 10,000 MNIST digits as IDX files.

The digits come from the `mnist` npm package (10,000 samples stored as JSON,
pixels in [0, 1]). Needs `npm` unless --tarball points at a downloaded
package. Output: <out>/images-idx3-ubyte and <out>/labels-idx1-ubyte.
"""

import argparse
import json
import pathlib
import struct
import subprocess
import tarfile
import tempfile


def load_digits(tarball: pathlib.Path):
    images, labels = [], []
    with tarfile.open(tarball) as tar:
        for digit in range(10):
            member = tar.getmember(f"package/src/digits/{digit}.json")
            data = json.load(tar.extractfile(member))["data"]
            if len(data) % 784:
                raise SystemExit(f"digit {digit}: pixel count is not a multiple of 784")
            for start in range(0, len(data), 784):
                images.append(bytes(round(255 * v) for v in data[start:start + 784]))
                labels.append(digit)
    return images, labels


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist", type=pathlib.Path)
    ap.add_argument("--tarball", type=pathlib.Path, help="mnist-*.tgz from `npm pack mnist`")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tarball = args.tarball
        if tarball is None:
            subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=tmp, check=True,
                           stdout=subprocess.DEVNULL)
            tarball = next(pathlib.Path(tmp).glob("mnist-*.tgz"))
        images, labels = load_digits(tarball)

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(args.out / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} digits to {args.out}")


if __name__ == "__main__":
    main()
