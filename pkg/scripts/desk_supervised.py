"""Desk-scale supervised run: G-forward on phantom patches vs the bicubic baseline.

    python3 scripts/desk_supervised.py --steps 480 --budget 900
"""
import argparse
import json
import logging
from dataclasses import asdict

from gancircle.experiments import desk_supervised


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--train", type=int, default=256, help="training patches")
    p.add_argument("--test", type=int, default=48, help="held-out patches")
    p.add_argument("--steps", type=int, default=480)
    p.add_argument("--budget", type=float, default=900.0, help="wall-clock seconds")
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    r = desk_supervised(a.train, a.test, a.budget, a.batch, a.seed, max_steps=a.steps)
    print(json.dumps(dict(asdict(r), psnr_gain=r.psnr_gain, ssim_gain=r.ssim_gain), indent=2))


if __name__ == "__main__":
    main()
