"""Dense vs pruned (50%) MLP7 and CNN: size, single-thread latency, accuracy.

Writes results_compression.csv with one dense and one pruned row per model
and seed.

    python scripts/compression.py --seeds 0 1 2
"""

from pathlib import Path

from _common import parser, setup
from omad import pipeline as P
from omad.evaluate import COMPRESSION_COLUMNS, write_csv


def main():
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--models", nargs="+", choices=("mlp", "cnn"), default=["mlp", "cnn"])
    args = p.parse_args()
    cfg = setup(args)
    rows = []
    for seed in args.seeds:
        recs, _ = P.load_main(cfg, seed)
        mw = P.main_windows(recs, cfg)
        test = P.trial_split(mw, cfg, seed)
        for kind in args.models:
            reports, _, _ = P.compression_pair(kind, mw, test, cfg, seed)
            for r in reports:
                rows.append({**P.report_rows([r], "compression")[0], "seed": seed, "iqr_ms": r.extra["iqr_ms"]})
                print(f"seed {seed} {r.model:<5} pruned={r.pruned!s:<5} size={r.model_size_bytes} "
                      f"latency_ms={r.latency_ms_per_minibatch:.3f} accuracy={r.accuracy:.4f}")
    write_csv(Path(args.out) / "results_compression.csv", COMPRESSION_COLUMNS + ("seed", "iqr_ms"), rows)


if __name__ == "__main__":
    main()
