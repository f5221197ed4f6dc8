"""Desk-scale end-to-end run: 100 phantoms, train the full model, report on the 20 held out.

    python scripts/run_desk_experiment.py --out runs/desk
"""
import argparse
import json
import time

from disclabel.experiment import DeskConfig, run_desk_experiment, summary_table, with_overrides


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--n-phantoms", type=int)
    p.add_argument("--data-seed", type=int)
    p.add_argument("--train-seed", type=int)
    args = p.parse_args()
    cfg = with_overrides(DeskConfig(), epochs=args.epochs, n_phantoms=args.n_phantoms,
                         data_seed=args.data_seed, train_seed=args.train_seed)
    t0 = time.perf_counter()

    def progress(rec):
        print(f"epoch {rec['epoch']:3d}  train {rec['train_loss']:.4f}  val {rec['val_loss']:.4f}  "
              f"[{time.perf_counter() - t0:.0f}s]", flush=True)

    reports = run_desk_experiment(args.out, cfg, arms=("full",), progress=progress)
    print(summary_table(reports))
    print(json.dumps({k: reports["full"][k] for k in ("fnr", "fpr", "dist_mean_mm", "dist_median_mm")}))


if __name__ == "__main__":
    main()
