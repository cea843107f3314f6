"""Estimate P[S_t > 0] for a few coefficient sets of the quadratic form

    S_t = <alpha, W_t> + sum_i beta_i (W^i_t)^2 + sum_{i != j} gamma_ij int W^i dW^j + delta t

next to the algebraic verdict (alpha = 0, gamma symmetric, A NSD, delta <= 0).
A positive probability that does not vanish as t -> 0 marks coefficients
that cannot come from a boundary maximum of an invariant set.
"""

import argparse

from invlab.expansion import TaylorCoefficients, lemma_conclusion_check, lemma_falsifier

CASES = {
    "linear": TaylorCoefficients([1.0], [0.0], None, 0.0),
    "negative definite": TaylorCoefficients([0.0, 0.0], [-1.0, -1.0], [[0, 1], [1, 0]], 0.0),
    "indefinite": TaylorCoefficients([0.0, 0.0], [0.0, 0.0], [[0, 1], [1, 0]], 0.0),
    "antisymmetric": TaylorCoefficients([0.0, 0.0], [0.0, 0.0], [[0, 1], [-1, 0]], 0.0),
    "drift only": TaylorCoefficients([0.0], [0.0], None, 1.0),
    "inward drift": TaylorCoefficients([0.0], [-0.5], None, -1.0),
}


def main():
    ap = argparse.ArgumentParser(description="quadratic-form falsifier sweep")
    ap.add_argument("--N", type=int, default=4000)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--times", type=float, nargs="+", default=[0.001, 0.01, 0.1, 1.0])
    args = ap.parse_args()

    head = " ".join(f"t={t:<7g}" for t in args.times)
    print(f"{'case':>18} {'conclusions':>11}  {head}")
    for k, (name, c) in enumerate(CASES.items()):
        verdict = lemma_conclusion_check(c)
        rep = lemma_falsifier(c, args.times, args.N, args.seed + k, args.steps)
        probs = " ".join(f"{p:<9.4f}" for p in rep.probabilities)
        print(f"{name:>18} {'hold' if verdict.passed else 'fail':>11}  {probs}")


if __name__ == "__main__":
    main()
