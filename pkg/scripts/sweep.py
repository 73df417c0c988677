"""Size, latency and accuracy against final sparsity for one trained model.

Each point prune-trains a copy of the same dense model and is timed on the
sparse engine. Writes sweep_<kind>.csv.

    python scripts/sweep.py --kind cnn --sparsities 0 0.25 0.5 0.75 0.9
"""

from pathlib import Path

from _common import parser, setup
from omad import pipeline as P
from omad.evaluate import write_sweep


def main():
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--kind", choices=("mlp", "cnn"), default="mlp")
    p.add_argument("--sparsities", type=float, nargs="+")
    args = p.parse_args()
    cfg = setup(args)
    seed = args.seeds[0]
    recs, _ = P.load_main(cfg, seed)
    mw = P.main_windows(recs, cfg)
    test = P.trial_split(mw, cfg, seed)
    tm = P.fit_main_nn(args.kind, mw.x[~test], mw.group[~test], cfg, seed)
    rows = P.run_sweep(tm, mw.x[test], mw.group[test], cfg, seed, args.sparsities)
    for r in rows:
        print(f"sparsity={r.sparsity:.2f} size={r.size_bytes} latency_ms={r.latency_ms:.3f} "
              f"accuracy={r.accuracy:.4f}{'  ERROR ' + r.error if r.error else ''}")
    write_sweep(Path(args.out) / f"sweep_{args.kind}.csv", rows)


if __name__ == "__main__":
    main()
