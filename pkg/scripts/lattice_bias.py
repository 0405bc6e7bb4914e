"""Binomial-lattice Snell values against step count.

The diffusion comparisons allow a fixed lattice bias; this prints how far
the lattice value moves as the step count grows, for each built-in model.
"""

import argparse

from randstop.models import REGISTRY


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, nargs="+", default=[250, 500, 1000, 2000, 4000, 8000])
    args = parser.parse_args(argv)
    for name, factory in REGISTRY.items():
        model = factory()
        values = [model.oracle(steps=n) for n in args.steps]
        ref = values[-1]
        print(name)
        for n, v in zip(args.steps, values):
            print(f"  steps={n:6d}  value={v:.10f}  diff_to_finest={v - ref:+.2e}")


if __name__ == "__main__":
    main()
