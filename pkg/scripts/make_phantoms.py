"""Write a corpus of synthetic HR phantom slices plus a Y-only manifest.

    python3 scripts/make_phantoms.py OUT_DIR --count 20 --size 128 --seed 0

Follow with ``gancircle simulate OUT_DIR/manifest.txt --out SIM_DIR`` to add
the degraded LR counterparts.
"""
import argparse
from pathlib import Path

from gancircle import data as D
from gancircle.phantoms import phantom_corpus


def write_corpus(out, count, size, seed):
    out = Path(out)
    (out / "hr").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, img in enumerate(phantom_corpus(count, size, seed)):
        name = f"hr/ph{i:04d}.png"
        D.write_slice(out / name, D.ImageSlice(img, slice_id=f"ph{i:04d}"))
        entries.append(D.ManifestEntry(name, "Y", None))
    D.write_manifest(D.DatasetManifest(entries, header={"source": "phantoms", "seed": seed}), out / "manifest.txt")
    return out / "manifest.txt"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    print(write_corpus(a.out, a.count, a.size, a.seed))


if __name__ == "__main__":
    main()
