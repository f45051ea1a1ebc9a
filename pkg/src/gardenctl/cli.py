"""``garden-core``: the command-line front end.

Environment-changing subcommands (``add``, ``add-treetop``, ``env``) print
POSIX shell text on stdout and nothing else; the generated ``garden`` shell
function evals it.  Exit codes: 0 success, 2 user error, 1 aborted build or
isolation violation.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import shlex
import shutil
import subprocess
import sys
import time
from pathlib import Path

from gardenctl import builder, closure, envsynth, isolation, store
from gardenctl.errors import CentralUnconfigured, GardenError, TargetExists
from gardenctl.hashname import is_hash_name, parse_hash_name
from gardenctl.recipe import TREETOP_SUFFIX, find_treetop, load_recipe, load_treetop, resolve_deps

log = logging.getLogger("gardenctl")

SUBCOMMANDS = (
    "pull", "avail", "show", "add", "add-treetop", "env", "configure", "make",
    "install", "export", "check", "compose-roots", "bootstrap",
)


def _common(parser):
    parser.add_argument("--root", help="public garden root (GARDEN_ROOT)")
    parser.add_argument("--personal-root", help="personal garden root (GARDEN_PERSONAL_ROOT)")
    parser.add_argument("--storepath", help="colon-separated roots to search (GARDEN_STOREPATH)")
    parser.add_argument("--treetop", help="treetop file or name")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="garden-core", description="multi-version software garden")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True

    def add(name, help):
        p = sub.add_parser(name, help=help)
        _common(p)
        return p

    p = add("pull", "copy packages from $GARDEN_CENTRAL into the public root")
    p.add_argument("target", nargs="?", help="hash-name or treetop; default pulls everything")
    p = add("avail", "list packages whose name contains PATTERN")
    p.add_argument("pattern", nargs="?", default="")
    p = add("show", "print a package's metadata and composition files")
    p.add_argument("hashname")
    p = add("add", "emit shell code adding packages to the environment")
    p.add_argument("hashnames", nargs="+")
    p = add("add-treetop", "emit shell code adding a treetop's export list")
    p.add_argument("name", nargs="?")
    p = add("env", "emit shell code for environment changes")
    p.add_argument("--add", nargs="+", default=[], metavar="HASHNAME")
    p.add_argument("--add-treetop", metavar="TREETOP")
    p = add("configure", "cache the build environment for direct builds")
    p.add_argument("source", nargs="?", default=".")
    p = add("make", "run make in the cached build environment (gmk)")
    p.add_argument("--source", default=".")
    p.add_argument("make_args", nargs=argparse.REMAINDER)
    p = add("install", "build and install a package (garden-install)")
    p.add_argument("revspec", nargs="?", help="e.g. git:HEAD (required unless --personal)")
    p.add_argument("--source", default=".")
    p.add_argument("--personal", action="store_true")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--push", action="store_true", help="send only the new package")
    g.add_argument("--export", action="store_true", help="send the full closure")
    p = add("export", "copy a package closure to $GARDEN_CENTRAL_DEST")
    p.add_argument("hashname")
    p.add_argument("--push", action="store_true")
    p.add_argument("--dest")
    p = add("check", "isolation check of a file or directory (garden-check-ldd-clean)")
    p.add_argument("paths", nargs="+")
    add("compose-roots", "symlink every package into the canonical root")
    p = add("bootstrap", "write the gardenrc shell integration file")
    p.add_argument("--target")
    p.add_argument("--force", action="store_true")
    return parser


def _config(args, environ):
    return store.load_config(
        environ,
        public_root=args.root,
        personal_root=args.personal_root,
        storepath=args.storepath,
    )


def _load_treetop_arg(ref, config):
    p = Path(ref)
    for cand in (p, Path(str(p) + TREETOP_SUFFIX)):
        if cand.is_file():
            return load_treetop(cand)
    if config.treetop_dir is not None:
        cand = config.treetop_dir / (ref + TREETOP_SUFFIX)
        if cand.is_file():
            return load_treetop(cand)
    raise GardenError(f"treetop {ref!r} not found")


def _shell_quote(value: str) -> str:
    escaped = "".join("\\" + c if c in '\\"$`' else c for c in value)
    return f'"{escaped}"'


def shell_text(before: envsynth.Environment, after: envsynth.Environment, runtime_vars) -> str:
    lines = []
    for var in runtime_vars:
        if after.vars.get(var) != before.vars.get(var) and var in after.vars:
            lines.append(f"export {var}={_shell_quote(':'.join(after.vars[var]))}")
    for line in after.source_lines:
        if line not in before.source_lines:
            kw, _, path = line.partition(" ")
            lines.append(f"{kw} {shlex.quote(path)}")
    return "".join(line + "\n" for line in lines)


def cmd_env_add(hashnames, treetop, config, environ) -> str:
    before = envsynth.Environment.from_process(environ, config.runtime_vars)
    env = before
    if treetop is not None:
        env = envsynth.add_treetop(env, treetop, config)
    visited = set()
    for h in hashnames:
        env = envsynth.add_package(env, parse_hash_name(h), config, visited)
    return shell_text(before, env, config.runtime_vars)


def _core_invocation():
    exe = shutil.which("garden-core")
    if exe:
        return shlex.quote(exe)
    return f"{shlex.quote(sys.executable)} -m gardenctl"


GARDENRC = """\
# gardenrc: shell integration for the software garden.
# Generated by `garden-core bootstrap`; source it from your shell startup file.
export GARDEN_ROOT={root}
export GARDEN_PERSONAL_ROOT={personal}
export GARDEN_STOREPATH={storepath}

_garden_core() {{ {core} "$@"; }}

garden() {{
    if [ $# -eq 0 ]; then
        _garden_core --help
        return $?
    fi
    _garden_cmd=$1
    shift
    case $_garden_cmd in
        add)
            _garden_out=$(_garden_core env --add "$@") || return $?
            eval "$_garden_out"
            ;;
        add-treetop)
            _garden_out=$(_garden_core env --add-treetop "$@") || return $?
            eval "$_garden_out"
            ;;
        *)
            _garden_core "$_garden_cmd" "$@"
            ;;
    esac
}}
"""


def cmd_bootstrap(config, target, force=False, core=None) -> Path:
    target = Path(target)
    if target.exists() and not force:
        raise TargetExists(f"{target} exists; pass --force to overwrite")
    target.parent.mkdir(parents=True, exist_ok=True)
    text = GARDENRC.format(
        root=_shell_quote(str(config.public_root)),
        personal=_shell_quote(str(config.personal_root)),
        storepath=_shell_quote(":".join(str(r) for r in config.storepath)),
        core=core or _core_invocation(),
    )
    target.write_text(text)
    return target


def cmd_pull(config, target=None) -> closure.TransferReport:
    central = config.central
    if central is None or not central.is_dir():
        raise CentralUnconfigured("GARDEN_CENTRAL is not set or not readable")
    dest = config.public_root
    if target is None:
        report = closure.TransferReport()
        for h, path in store.list_packages(central):
            if closure.copy_package(path, dest, h):
                report.sent.append(h)
                report.bytes += closure._tree_bytes(path)
            else:
                report.skipped.append(h)
        return report
    if is_hash_name(target):
        return closure.export(parse_hash_name(target), dest, "full", [central])
    treetop = _load_treetop_arg(target, config)
    report = closure.TransferReport()
    for sym in sorted(treetop.pins):
        report.merge(closure.export(treetop.pins[sym], dest, "full", [central]))
    return report


def _resolve_here(source, config):
    recipe = load_recipe(source)
    treetop = find_treetop(recipe, config.treetop_dir)
    return resolve_deps(recipe, treetop, config.storepath, system=config.system)


def cmd_configure(source, config) -> Path:
    source = Path(source).resolve()
    rr = _resolve_here(source, config)
    out = config.personal_root / str(rr.self_hashname)
    env = envsynth.synth_build_env(rr, out, "direct", workdir=source)
    return envsynth.write_env_cache(env, rr.self_hashname.digest, source)


def cmd_make(source, make_args, config, environ, stderr=None) -> int:
    source = Path(source).resolve()
    rr = _resolve_here(source, config)
    env = envsynth.load_env_cache(source, rr.self_hashname.digest)
    make = environ.get("GARDEN_MAKE", "make")
    exe = shutil.which(make, path=environ.get("PATH")) or make
    proc = subprocess.run([exe, *make_args], cwd=source, env=env.render())
    return proc.returncode


def _fmt_time(ts):
    return time.strftime("%Y-%m-%d", time.gmtime(ts)) if ts else "-"


def run(args, environ, out, err) -> int:
    config = _config(args, environ)
    cmd = args.command

    if cmd in ("add", "add-treetop", "env"):
        if cmd == "add":
            hashnames, tt = args.hashnames, None
        elif cmd == "add-treetop":
            ref = args.name or args.treetop
            if not ref:
                raise GardenError("add-treetop needs a treetop name or path")
            hashnames, tt = [], _load_treetop_arg(ref, config)
        else:
            hashnames = args.add
            tt = _load_treetop_arg(args.add_treetop, config) if args.add_treetop else None
        out.write(cmd_env_add(hashnames, tt, config, environ))
        return 0

    if cmd == "avail":
        rows = store.avail(args.pattern, config)
        if args.json:
            json.dump([
                {"hashname": str(h), "path": str(root / str(h)), "meta": m.as_dict() if m else None}
                for h, root, m in rows
            ], out, indent=2)
            out.write("\n")
        else:
            for h, root, m in rows:
                extra = f"\t{_fmt_time(m.born_on)}\t{m.mode}" if m else ""
                out.write(f"{root / str(h)}{extra}\n")
        return 0

    if cmd == "show":
        res = store.show(parse_hash_name(args.hashname), config)
        if args.json:
            json.dump(res.as_dict(), out, indent=2)
            out.write("\n")
        else:
            m = res.meta
            out.write(f"{res.path}\n")
            out.write(f"  born on:  {_fmt_time(m.born_on)} ({m.born_on})\n")
            out.write(f"  mode:     {m.mode}\n")
            if m.git_revision:
                out.write(f"  revision: {m.git_revision}\n")
            if m.source_url:
                out.write(f"  source:   {m.source_url}\n")
            for name, first in res.env_files.items():
                out.write(f"  garden-env/{name}: {first}\n")
        return 0

    if cmd == "configure":
        path = cmd_configure(args.source, config)
        err.write(f"build environment saved to {path}\n")
        return 0

    if cmd == "make":
        make_args = [a for a in args.make_args if a != "--"]
        return cmd_make(args.source, make_args, config, environ)

    if cmd == "install":
        mode = "personal" if args.personal else "public"
        export_after = "push" if args.push else "full" if args.export else "none"
        req = builder.BuildRequest(Path(args.source), args.revspec, mode, export_after)
        res = builder.garden_install(req, config)
        if args.json:
            json.dump({
                "hashname": str(res.hashname),
                "path": str(res.store_path),
                "reused": res.reused,
                "meta": res.meta.as_dict(),
                "export": res.export_report.as_dict() if res.export_report else None,
            }, out, indent=2)
            out.write("\n")
        else:
            out.write(f"{res.store_path}\n")
        return 0

    if cmd == "export":
        dest = Path(args.dest) if args.dest else config.central_dest
        if dest is None:
            raise CentralUnconfigured("no --dest given and GARDEN_CENTRAL_DEST is not set")
        h = parse_hash_name(args.hashname)
        report = closure.export(h, dest, "push" if args.push else "full", config)
        if config.notify_group:
            closure.notify(h, config.notify_group)
        _write_transfer(report, args, out)
        return 0

    if cmd == "pull":
        _write_transfer(cmd_pull(config, args.target), args, out)
        return 0

    if cmd == "check":
        reports = []
        for p in args.paths:
            p = Path(p)
            if p.is_dir():
                reports.append(isolation.check_tree(p, config))
            else:
                reports.append(isolation.check_clean(p, config))
        if args.json:
            json.dump([r.as_dict() for r in reports], out, indent=2)
            out.write("\n")
        else:
            for r in reports:
                out.write(r.render() + "\n")
        return 0 if all(r.overall == "clean" for r in reports) else 1

    if cmd == "compose-roots":
        rep = store.compose_roots(config)
        if args.json:
            json.dump({k: [str(p) for p in v] for k, v in vars(rep).items()}, out, indent=2)
            out.write("\n")
        else:
            out.write(f"created {len(rep.created)}, already present {len(rep.already_present)}, "
                      f"conflicting {len(rep.conflicting)}\n")
            for p in rep.conflicting:
                out.write(f"  conflict: {p}\n")
        return 0

    if cmd == "bootstrap":
        home = environ.get("HOME") or os.path.expanduser("~")
        target = args.target or os.path.join(home, "etc", "gardenrc")
        path = cmd_bootstrap(config, target, args.force, core=environ.get("GARDEN_CORE"))
        err.write(f"wrote {path}; add `. {path}` to your shell startup file\n")
        return 0

    raise GardenError(f"unknown subcommand {cmd!r}")


def _write_transfer(report, args, out):
    if args.json:
        json.dump(report.as_dict(), out, indent=2)
        out.write("\n")
    else:
        out.write(f"sent {len(report.sent)}, skipped {len(report.skipped)}, {report.bytes} bytes\n")


def main(argv=None, environ=None, stdout=None, stderr=None) -> int:
    environ = os.environ if environ is None else environ
    out = stdout or sys.stdout
    err = stderr or sys.stderr
    parser = build_parser()
    try:
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="garden: %(levelname)s: %(message)s",
        stream=err,
    )
    try:
        return run(args, environ, out, err)
    except GardenError as exc:
        err.write(f"garden: error: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        err.write(f"garden: error: {exc}\n")
        return 1


def gmk_main(argv=None) -> int:
    """Entry point for the ``gmk`` alias: ``gmk [configure] [make args]``."""
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv[:1] == ["configure"]:
        return main(["configure", *argv[1:]])
    return main(["make", "--", *argv])


def install_main(argv=None) -> int:
    """Entry point for the ``garden-install`` alias."""
    argv = list(sys.argv[1:] if argv is None else argv)
    return main(["install", *argv])


def entry() -> None:
    sys.exit(main())


def gmk_entry() -> None:
    sys.exit(gmk_main())


def install_entry() -> None:
    sys.exit(install_main())
