"""Open-loop event counts on the drifting grating as single biases are swept."""
import argparse

from evbias.events import DEFAULT_BIAS
from evbias.scenes import grating_scene
from evbias.sim import SimConfig, simulate

SWEEPS = {
    "b_refr": (759.37, 2000.0, 5000.0, 10250.0),
    "b_pr": (10.0, 20.0, 44.16, 100.0),
    "b_on": (381445.0, 762890.0, 1525780.0),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    scene = grating_scene()
    sim = SimConfig(seed=args.seed)
    for name, values in SWEEPS.items():
        for v in values:
            bias = DEFAULT_BIAS.replace(**{name: v})
            if name == "b_on":
                bias = bias.replace(b_off=DEFAULT_BIAS.b_off * v / DEFAULT_BIAS.b_on)
            n = simulate(scene, bias, sim).events.size
            print(f"{name:>6} = {v:>10.2f} pA -> {n:>8d} events")


if __name__ == "__main__":
    main()
