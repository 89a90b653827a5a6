"""Desk-scale unsupervised run: track the cycle error |F(G(x)) - x| from initialisation.

    python3 scripts/desk_unsupervised.py --steps 40 --budget 1800
"""
import argparse
import json
import logging

from gancircle.experiments import desk_unsupervised


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--train", type=int, default=256)
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--budget", type=float, default=1800.0)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    r = desk_unsupervised(a.train, budget_s=a.budget, batch_size=a.batch, seed=a.seed, max_steps=a.steps)
    print(json.dumps({"cycle_init": r.cycle_init, "cycle_final": r.cycle_final, "reduction": r.reduction,
                      "steps": r.steps, "seconds": r.seconds, "all_finite": r.all_finite}, indent=2))


if __name__ == "__main__":
    main()
