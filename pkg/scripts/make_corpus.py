"""Write a synthetic tool corpus (tool files, annotations, trajectories, fixtures)."""
import argparse

from toolgen.synthetic import write_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="target directory")
    ap.add_argument("--tools", type=int, default=100)
    ap.add_argument("--trajectories", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    for name, path in write_corpus(a.out, a.tools, a.trajectories, a.seed).items():
        print(f"{name:<13} {path}")


if __name__ == "__main__":
    main()
