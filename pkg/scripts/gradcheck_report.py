"""Print the finite-difference error of every registered op, per input."""
import argparse
import time

import intelliz  # noqa: F401
from intelliz.grad import GRADCHECK_REGISTRY, grad_check, make_rng


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--epsilon", type=float, default=1e-5)
    args = ap.parse_args()
    t0 = time.perf_counter()
    worst = 0.0
    for name in sorted(GRADCHECK_REGISTRY):
        errs = []
        for seed in range(args.seeds):
            op, inputs = GRADCHECK_REGISTRY[name](make_rng(seed))
            errs.append(grad_check(op, inputs, epsilon=args.epsilon).max_error)
        worst = max(worst, max(errs))
        print(f"{name:30s} max error {max(errs):.2e}")
    print(f"worst {worst:.2e}  ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
