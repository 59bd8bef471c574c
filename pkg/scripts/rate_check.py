"""Spread of the scaled edge-probability errors up a ladder of network sizes."""

import argparse
import json

from netgee.inference import RateCheckConfig, rate_check


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--gamma", type=float, default=0.0)
    parser.add_argument("--reps", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--follow-regime", action="store_true", help="shrink p and q with the size as the growth regime dictates")
    parser.add_argument("--json", help="also dump the full report here")
    args = parser.parse_args()

    report = rate_check(RateCheckConfig(gamma=args.gamma, reps=args.reps, base_seed=args.seed, follow_regime=args.follow_regime))
    print(f"{'m':>4} {'K':>4} {'p':>6} {'q':>6} {'sd(p)':>8} {'sd(q)':>8} {'KS p':>7} {'KS q':>7}")
    for r in report["rows"]:
        ks_p = "-" if r["ks_p_within"] is None else f"{r['ks_p_within']:.3f}"
        ks_q = "-" if r["ks_p_between"] is None else f"{r['ks_p_between']:.3f}"
        print(f"{r['m']:>4} {r['K']:>4} {r['p']:>6.3f} {r['q']:>6.3f} {r['sd_scaled_p']:>8.4f} {r['sd_scaled_q']:>8.4f} {ks_p:>7} {ks_q:>7}")
    print(f"p non-increasing: {report['p_sd_nonincreasing']}  q non-increasing: {report['q_sd_nonincreasing']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report, fh, indent=2)


if __name__ == "__main__":
    main()
