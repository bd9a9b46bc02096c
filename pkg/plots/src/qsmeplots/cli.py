"""Command-line entry point: render one figure from a YAML figure spec."""

from __future__ import annotations

import argparse
import sys

from .render import SpecError, load_spec, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qsme-plots",
        description="Render a figure from qsme CSV outputs given a YAML figure spec.",
    )
    parser.add_argument("spec", help="figure spec file (YAML)")
    parser.add_argument("--out", help="override the output image path")
    args = parser.parse_args(argv)

    try:
        spec = load_spec(args.spec)
        if args.out:
            spec.out = args.out
        out = render(spec)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
