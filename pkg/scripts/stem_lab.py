from __future__ import annotations
"""
Tiny harness:
- Re-scores published (correctness, detectability, imperceptibility) triples
  under the four table weight settings and prints the gap to the printed composite.
- Counts, per dataset, how many of the 66 grid settings each method wins.
Swap in your own triples to compare new methods.
"""
import json

from src.stonemark.config import PATHS
from src.stonemark.metrics import TABLE_WEIGHTS, grid_leaderboard, stem

TOL = 1e-3


def main():
    published = json.loads((PATHS.data / "published_stem.json").read_text(encoding="utf-8"))
    for dataset, methods in published.items():
        print(f"\n{dataset}")
        for method, row in methods.items():
            cells = []
            for w, printed in zip(TABLE_WEIGHTS, row["composites"]):
                got = stem(tuple(row["components"]), w).composite
                flag = "" if abs(got - printed) <= TOL else " !"
                cells.append(f"{w.label()} {got:.4f} vs {printed:.3f}{flag}")
            print(f"  {method:<6} " + " | ".join(cells))
        board = grid_leaderboard({m: tuple(r["components"]) for m, r in methods.items()})
        shares = ", ".join(f"{m} {board.share(m):.1f}%" for m in board.wins)
        print(f"  grid wins ({board.total} settings, {board.ties} ties): {shares}")


if __name__ == "__main__":
    main()
