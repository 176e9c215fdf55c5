"""Bubble levels of the perturbed problem against the Sobolev threshold.

Run with ``python3 demos/bubble_threshold.py``.
"""
from hslab.model import ProblemSpec
from hslab.testfn import bubble_threshold_check


def main() -> None:
    spec = ProblemSpec.perturbed(4, 1.0, 2.5)
    for rec in bubble_threshold_check(spec, [4.0, 8.0, 16.0, 32.0]):
        state = "below" if rec.below else "above"
        print(f"mu={rec.mu:5.1f}  sup={rec.supPhi:.4f}  threshold={rec.threshold:.4f}  {state}  margin={rec.margin:+.4f}")


if __name__ == "__main__":
    main()
