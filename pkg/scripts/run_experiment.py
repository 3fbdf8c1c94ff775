"""Run a Monte-Carlo ROC experiment from a manifest and print an AUC / distance table.

    python scripts/run_experiment.py scripts/manifests/desk_ms.txt --out results/desk_ms.csv
"""
import argparse
import logging
import time
import warnings
from pathlib import Path

from mrcd.evaluate import MAP_TYPES, ExperimentManifest, run_experiment


def format_table(report) -> str:
    table = report.table()
    dets = list(dict.fromkeys(d for d, _ in table))
    head = f"{'':>8} {'':>5} " + " ".join(f"{mt:>9}" for mt in MAP_TYPES)
    lines = [head, "-" * len(head)]
    for d in dets:
        for j, label in enumerate(("AUC", "Dist.")):
            vals = " ".join(f"{table[(d, mt)][j]:9.6f}" for mt in MAP_TYPES)
            lines.append(f"{d if j == 0 else '':>8} {label:>5} {vals}")
    return "\n".join(lines)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("manifest")
    ap.add_argument("--out", help="CSV report path")
    ap.add_argument("--curves-dir", help="directory for averaged ROC curves")
    ap.add_argument("--quiet-warnings", action="store_true",
                    help="hide covariance-regularization warnings (expected on rank-deficient LR-HS data)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    if args.quiet_warnings:
        warnings.filterwarnings("ignore", message=".*ill-conditioned.*")

    m = ExperimentManifest.read(args.manifest)
    t0 = time.time()
    report = run_experiment(m, progress=lambda i, c: logging.info("region %d, configuration %d done", i, c))
    print(f"\nmode={m.mode}  endmembers={report.K}  pairs={len(m.configs) * m.regions}  "
          f"failures={len(report.failures)}  {time.time() - t0:.1f}s\n")
    print(format_table(report))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.write(args.out, args.curves_dir)
        print(f"\nreport written to {args.out}")


if __name__ == "__main__":
    main()
