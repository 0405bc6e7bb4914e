"""Extract a pure stopping rule from a random plan on a random tree and show the trace."""

import argparse
import json

import numpy as np

from randstop.derandomize import plan_to_rule
from randstop.plans import plan_value, random_plan
from randstop.tree import evaluate_stopped, random_tree, snell_envelope


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--depth", type=int, default=3)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    tree = random_tree(rng, max_depth=args.depth, min_depth=args.depth)
    h = rng.uniform(-1, 1, tree.size)
    plan = random_plan(tree, rng)
    log = []
    rule = plan_to_rule(h, plan, trace=log)
    for entry in log:
        if entry["reached"]:
            print(json.dumps(entry, sort_keys=True))
    print(f"plan value  {plan_value(h, plan): .6f}")
    print(f"rule value  {evaluate_stopped(h, rule): .6f}  (stops at nodes {rule.stop_nodes.tolist()})")
    print(f"Snell value {snell_envelope(tree, h)[0]: .6f}")


if __name__ == "__main__":
    main()
