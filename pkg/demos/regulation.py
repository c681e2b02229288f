"""Event rate under brightness steps: default biases vs the fast-and-slow loop.

Prints the settled in-band share per controller and a coarse rate trace.
"""
import argparse

import numpy as np

from evbias.experiments import regulation_trial
from evbias.io import ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--kinds", default="default,fastslow")
    args = ap.parse_args()

    cfg = ExperimentConfig()
    lo, hi = cfg.controller.bounds.r_lo, cfg.controller.bounds.r_hi
    for kind in args.kinds.split(","):
        st = regulation_trial(kind, args.seed, cfg)
        print(f"{kind:>9}: {st.in_band:.1%} of {st.n_ticks} settled ticks in "
              f"[{lo:.1e}, {hi:.1e}] Hz, {st.slow_changes} slow steps, {st.wall:.1f} s")
        # roughly one sample per second of scene time
        trace = st.rates[::max(1, 1_000_000 // cfg.controller.tau)]
        print("           rate/MHz:", " ".join(f"{r / 1e6:.1f}" for r in np.asarray(trace)))


if __name__ == "__main__":
    main()
