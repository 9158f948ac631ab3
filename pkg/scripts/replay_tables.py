"""Replay the published likelihood-ratio tables from the bundled LL fixtures.

Prints the recomputed statistic / df / p-value next to the printed values for
every table and lists the rows that do not match.

    python scripts/replay_tables.py [--fixtures PATH] [--out replay.json]
"""

import argparse
import json

from choicefit.replay import load_fixtures, replay, replay_stat_text


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--fixtures", help="LL fixtures JSON (default: bundled)")
    parser.add_argument("--out", help="write the full replay report as JSON")
    args = parser.parse_args(argv)

    fixtures = load_fixtures(args.fixtures)
    rep = replay(fixtures)
    for table in fixtures["tables"]:
        print(f"== {table['id']}")
        print(replay_stat_text(rep, table["id"]))
        print()
    print(rep.exceptions_text())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(rep.to_json(), fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
