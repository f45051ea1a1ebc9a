#!/usr/bin/env python3
"""Regenerate tests/fixtures/minimal_dyn.elf and print what the parser reads from it.

Needs gcc and GNU ld.  The output is deterministic for a given toolchain; the
checked-in copy is what the tests pin, so only rerun this on purpose.
"""

import argparse
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

from gardenctl.isolation import parse_elf

HERE = Path(__file__).resolve().parent
FIXTURES = HERE.parent / "tests" / "fixtures"

LINK_FLAGS = [
    "-O2", "-nostdlib", "-fno-asynchronous-unwind-tables",
    "-Wl,--no-as-needed", "-lm",
    "-Wl,--enable-new-dtags,-rpath,/g/x-glibc/lib",
    "-Wl,--dynamic-linker,/g/x-glibc/lib/ld-linux-x86-64.so.2",
    "-Wl,--build-id=none", "-Wl,-z,noseparate-code", "-Wl,-z,max-page-size=0x10",
    "-Wl,-z,norelro", "-s",
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=FIXTURES / "minimal_dyn.elf")
    ap.add_argument("--cc", default="gcc")
    ap.add_argument("--dry-run", action="store_true", help="build into a temp dir, do not overwrite")
    args = ap.parse_args(argv)

    if shutil.which(args.cc) is None:
        print(f"{args.cc} not found", file=sys.stderr)
        return 2
    src = FIXTURES / "minimal_dyn.c"
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "fixture"
        subprocess.run([args.cc, *LINK_FLAGS, "-o", str(out), str(src)], check=True)
        data = out.read_bytes()
        if not args.dry_run:
            args.out.write_bytes(data)
    info = parse_elf(data)
    print(f"{len(data)} bytes -> {'(dry run)' if args.dry_run else args.out}")
    print(f"kind        {info.kind}")
    print(f"needed      {info.needed}")
    print(f"rpath_dirs  {info.rpath_dirs}")
    print(f"interpreter {info.interpreter}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
