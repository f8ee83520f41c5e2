"""Regenerate the scenario programs in programs/ from the scenario builders.

    python scripts/gen_programs.py [--check]

With --check, exit 1 if any shipped file differs from the generated text.
"""
import argparse
import sys
from pathlib import Path

from creole.parser import pretty_process
from creole.scenarios import adaptation, coordination, integration

OUT = Path(__file__).resolve().parents[1] / "programs"

PROGRAMS = {
    "adaptation_picasa": ("Adaptation: a YQL count client, an adapter and the Picasa-like store.",
                          lambda: adaptation("picasa")),
    "adaptation_flickr": ("The same client rewired to the Flickr-like store, which counts natively.",
                          lambda: adaptation("flickr")),
    "integration": ("Integration: adapter over a facade merging both stores.", integration),
    "coordination": ("Coordination: search s, count t and mediator c on one VM.", coordination),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args(argv)
    stale = []
    for name, (header, build) in PROGRAMS.items():
        text = f"// {header}\n{pretty_process(build())}\n"
        path = OUT / f"{name}.cre"
        if args.check:
            if not path.exists() or path.read_text() != text:
                stale.append(path.name)
        else:
            path.write_text(text)
            print(f"wrote {path}")
    if stale:
        print("out of date: " + ", ".join(stale))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
