"""Place recognition across a bright reference drive and a dim query drive."""
import argparse

from evbias.experiments import vpr_trial
from evbias.io import ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--kinds", default="fastslow,constant,pxth")
    ap.add_argument("--query", default="lo-bright-route")
    args = ap.parse_args()

    cfg = ExperimentConfig()
    for kind in args.kinds.split(","):
        tr = vpr_trial(kind, args.seed, cfg, query=args.query)
        print(f"{kind:>9}: R@1 {tr.recall_at_1:.3f} "
              f"({len(tr.reference.frames)} reference / {len(tr.query.frames)} query frames, "
              f"{tr.query.slow_changes} slow steps on the query drive)")


if __name__ == "__main__":
    main()
