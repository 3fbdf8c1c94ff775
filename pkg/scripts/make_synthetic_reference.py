"""Write the synthetic HR-HS reference used by the desk-scale manifests to disk."""
import argparse

from mrcd.evaluate import synthetic_reference
from mrcd.image import write_cube


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help=".cube (flat binary) or .hdr/.raw (ENVI) path")
    ap.add_argument("--rows", type=int, default=60)
    ap.add_argument("--cols", type=int, default=60)
    ap.add_argument("--bands", type=int, default=30)
    ap.add_argument("--endmembers", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--snr-db", type=float, default=40.0)
    a = ap.parse_args()
    cube = synthetic_reference(a.rows, a.cols, a.bands, a.endmembers, a.seed, snr_db=a.snr_db)
    write_cube(cube, a.out)
    print(f"wrote {cube.bands}x{cube.rows}x{cube.cols} cube to {a.out}")


if __name__ == "__main__":
    main()
