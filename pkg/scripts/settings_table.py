"""Three pipeline settings x {RF, SVM, MLP7} over several seeds.

Writes results_settings.csv (one row per setting, model and seed) and
results_settings_mean.csv (seed means).

    python scripts/settings_table.py --uci /data/eeg --seeds 0 1 2
"""

from collections import defaultdict
from pathlib import Path

import numpy as np

from _common import parser, setup
from omad import pipeline as P
from omad.evaluate import SETTINGS_COLUMNS, write_csv


def main():
    args = parser(__doc__.splitlines()[0]).parse_args()
    cfg = setup(args)
    out = Path(args.out)
    rows, acc = [], defaultdict(list)
    for seed in args.seeds:
        recs, _ = P.load_main(cfg, seed)
        mw = P.main_windows(recs, cfg)
        feats = P.main_features(mw)
        test = P.trial_split(mw, cfg, seed)
        det = P.train_detector(P.load_artifacts(cfg, seed), cfg, seed)
        tags = P.tag_windows(det.net, det.prep, recs, mw, cfg)
        print(f"seed {seed}: {tags.n_removed} of {len(mw)} windows tagged as artifacts")
        for setting in P.Setting:
            for r in P.run_setting(setting, mw, feats, test, cfg, seed, tags):
                rows.append({"setting": r.setting, "model": r.model, "seed": seed,
                             "accuracy": r.accuracy, "f1": r.f1})
                acc[(r.setting, r.model)].append((r.accuracy, r.f1))
                print(f"seed {seed} {r.setting:<38} {r.model:<5} accuracy={r.accuracy:.4f} f1={r.f1:.4f}")
    write_csv(out / "results_settings.csv", SETTINGS_COLUMNS + ("seed",), rows)
    means = [{"setting": s, "model": m, "accuracy": float(np.mean([a for a, _ in v])),
              "f1": float(np.mean([f for _, f in v]))} for (s, m), v in acc.items()]
    write_csv(out / "results_settings_mean.csv", SETTINGS_COLUMNS, means)


if __name__ == "__main__":
    main()
