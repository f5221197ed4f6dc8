"""Full model vs the L1-loss arm vs the arm without redundant counting, same data and budget.

Writes one report.json per arm under --out and prints a comparison table.

    python scripts/run_ablations.py --out runs/ablations
"""
import argparse
import json
import time
from pathlib import Path

from disclabel.experiment import ARMS, DeskConfig, run_desk_experiment, summary_table, with_overrides


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", required=True)
    p.add_argument("--arms", nargs="+", choices=ARMS, default=list(ARMS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--n-phantoms", type=int)
    p.add_argument("--train-seed", type=int)
    args = p.parse_args()
    cfg = with_overrides(DeskConfig(), epochs=args.epochs, n_phantoms=args.n_phantoms, train_seed=args.train_seed)
    t0 = time.perf_counter()
    reports = run_desk_experiment(
        args.out, cfg, arms=tuple(args.arms),
        progress=lambda r: print(f"epoch {r['epoch']:3d}  train {r['train_loss']:.4f}  [{time.perf_counter() - t0:.0f}s]",
                                 flush=True))
    table = summary_table(reports)
    print(table)
    (Path(args.out) / "summary.txt").write_text(table + "\n")
    with open(Path(args.out) / "summary.json", "w", encoding="utf-8") as f:
        json.dump({arm: {k: r[k] for k in ("fnr", "fpr", "dist_mean_mm", "dist_std_mm", "dist_median_mm")}
                   for arm, r in reports.items()}, f, indent=1)


if __name__ == "__main__":
    main()
