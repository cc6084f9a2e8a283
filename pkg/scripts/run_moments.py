"""Moment checks: RP entry moments, MSE limits, exact RS variance, normality coverage."""

import argparse

from sketchreg.linalg import RngStream
from sketchreg.moments import (
    UVDistribution,
    check_rp_conditions,
    mse_limit_check,
    normality_check,
    rs_variance_check,
)
from sketchreg.montecarlo import Design, DgpSpec

UVS = {
    "gaussian_indep": UVDistribution.gaussian_indep,
    "gaussian_equal": UVDistribution.gaussian_equal,
    "product": UVDistribution.product,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("what", choices=("rp", "mse", "normality", "all"))
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--quick", action="store_true", help="reduced replication counts")
    args = ap.parse_args()
    q = 10 if args.quick else 1

    if args.what in ("rp", "all"):
        for j, s in enumerate(("gaussian", "countsketch", "srht", "srft")):
            print(check_rp_conditions(s, 256, 64, 20_000 // q, RngStream(args.seed, 11 + j)).format(), "\n")

    if args.what in ("mse", "all"):
        for u, (name, make) in enumerate(UVS.items()):
            uv = make()
            print(f"U,V law: {name}")
            for j, s in enumerate(("uniform", "bernoulli", "countsketch", "gaussian", "srht")):
                print(mse_limit_check(s, uv, 10_000, 200, 5000 // q, RngStream(args.seed, 100 + 10 * u + j)).format())
            print(rs_variance_check(uv, 10_000, 200, 5000 // q, RngStream(args.seed, 200 + u)).format(), "\n")

    if args.what in ("normality", "all"):
        cells = [(s, h) for s in ("bernoulli", "countsketch", "srht") for h in (False, True)]
        for j, (s, hetero) in enumerate(cells):
            dgp = DgpSpec(Design.EXOGENOUS, hetero=hetero)
            rep = normality_check(s, dgp, 20_000, 500, max(1000, 2000 // q), RngStream(args.seed, 300 + j))
            print(f"hetero={hetero} probe_only={rep.metadata['empirical_probe_only']}")
            print(rep.format(), "\n")


if __name__ == "__main__":
    main()
