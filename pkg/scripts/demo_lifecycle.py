#!/usr/bin/env python3
"""Walk a toy package through the whole garden lifecycle in a scratch directory.

personal build -> public install from git -> v2 -> export -> add/rollback,
printing each step's result.  Everything lives under --workdir (a temp dir
by default) and is removed afterwards unless --keep is given.
"""

import argparse
import io
import shutil
import subprocess
import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from gardenkit import git_commit_all, make_config, seed_toolchain, write_toy_source  # noqa: E402

from gardenctl.cli import main as garden  # noqa: E402


def run(argv, env):
    out, err = io.StringIO(), io.StringIO()
    code = garden(argv, env, out, err)
    if code:
        raise SystemExit(f"garden {' '.join(argv)} failed ({code}):\n{err.getvalue()}")
    return out.getvalue()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", type=Path)
    ap.add_argument("--keep", action="store_true")
    args = ap.parse_args(argv)

    work = args.workdir or Path(tempfile.mkdtemp(prefix="garden-demo-"))
    work.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        cfg = make_config(work)
        seeds = seed_toolchain(cfg)
        env = {"HOME": str(work), "PATH": "/usr/bin:/bin",
               "GARDEN_ROOT": str(cfg.public_root), "GARDEN_PERSONAL_ROOT": str(cfg.personal_root)}

        src = write_toy_source(work / "src", "1.0", seeds)
        git_commit_all(src, "toy 1.0")
        print("personal:", run(["install", "--personal", "--source", str(src)], env).strip())
        v1 = Path(run(["install", "--source", str(src), "git:HEAD"], env).strip())
        print("public v1:", v1)
        write_toy_source(src, "2.0", seeds)
        git_commit_all(src, "toy 2.0")
        v2 = Path(run(["install", "--source", str(src), "git:HEAD"], env).strip())
        print("public v2:", v2)
        print(run(["avail", "toy"], env), end="")

        dest = work / "second"
        print("export:", run(["export", v1.name, "--dest", str(dest)], env).strip())
        print("re-export:", run(["export", v1.name, "--dest", str(dest)], env).strip())

        for h in (v2.name, v1.name):
            shell = run(["add", h], env)
            said = subprocess.run(["sh", "-c", shell + "hello"], env=env, capture_output=True, text=True)
            print(f"add {h}: {said.stdout.strip()}")
        print(run(["check", str(v1)], env), end="")
    finally:
        if not args.keep and args.workdir is None:
            shutil.rmtree(work, ignore_errors=True)
    print(f"done in {time.perf_counter() - t0:.2f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
