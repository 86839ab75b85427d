"""Print parameter and multiply-add totals for every budget row at 3x224x224."""

import argparse

from coordatt.cost import check_budgets


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.parse_args()
    print(f"{'configuration':34s} {'measured':>10s} {'target':>8s} {'dev':>8s}  result")
    for row in check_budgets():
        print(f"{row['label']:34s} {row['measured'] / 1e6:9.3f}M {row['target'] / 1e6:7.2f}M "
              f"{row['relative_deviation']:+8.2%}  {'ok' if row['passed'] else 'OUT OF TOLERANCE'}")


if __name__ == "__main__":
    main()
