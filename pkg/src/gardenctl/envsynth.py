"""Environment synthesis for builds (``build_*`` expansion) and interactive ``add``."""

from __future__ import annotations

import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from gardenctl.errors import CacheMissing, CacheStale, CircularDependency, UnknownVariable
from gardenctl.hashname import TOKEN_RE, HashName, parse_hash_name
from gardenctl.recipe import ResolvedRecipe, env_symbol
from gardenctl.store import ENV_DIR, GardenConfig, locate, locate_in

DEPS_DIR = "DEPS"
DEFAULT_SCRIPT = "default.sh"
PROPAGATED = Path("nix-support") / "propagated-user-env"
NO_PATH = "/path-not-set"
NO_HOME = "/homeless-shelter"
LOADER_NAME = "ld-linux-x86-64.so.2"
CACHE_DIR = ".garden"
CACHE_FILE = "envcache"
_VAR_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


@dataclass(frozen=True)
class JoinRule:
    var: str
    subdirs: tuple = ()
    prefix: str = ""
    separator: str = ":"


JOIN_RULES = {
    "CPPFLAGS": JoinRule("CPPFLAGS", ("include",), "-I", " "),
    "LDFLAGS": JoinRule("LDFLAGS", ("lib", "lib64"), "-L", " "),
    "PATH": JoinRule("PATH", ("bin",)),
    "PYTHONPATH": JoinRule("PYTHONPATH", ("lib-python",)),
    "LD_LIBRARY_PATH": JoinRule("LD_LIBRARY_PATH", ("lib", "lib64")),
    "MANPATH": JoinRule("MANPATH", ("share/man",)),
}


def join_rule(var: str) -> JoinRule:
    return JOIN_RULES.get(var) or JoinRule(var)


@dataclass
class Environment:
    vars: dict = field(default_factory=dict)
    scalars: dict = field(default_factory=dict)
    source_lines: list = field(default_factory=list)

    def copy(self) -> "Environment":
        return Environment(
            {k: list(v) for k, v in self.vars.items()}, dict(self.scalars), list(self.source_lines)
        )

    def render(self) -> dict:
        """Flatten to the ``name -> text`` mapping a child process sees."""
        out = dict(self.scalars)
        for var, entries in self.vars.items():
            out[var] = render_flags(var, entries)
        return out

    @classmethod
    def from_process(cls, environ, runtime_vars) -> "Environment":
        env = cls()
        for var in runtime_vars:
            value = environ.get(var)
            if value:
                env.vars[var] = list(dict.fromkeys(p for p in value.split(":") if p))
        return env


# -- build variable expansion ----------------------------------------------

def expand_entry_tokens(text: str, roots) -> list:
    """Whitespace-split ``text``; hash-name tokens (optionally ``<hash>/suffix``) become store paths."""
    out = []
    for tok in text.split():
        m = TOKEN_RE.match(tok)
        if m and (m.end() == len(tok) or tok[m.end()] == "/"):
            path = locate_in(HashName(m.group(1), m.group(2)), roots)
            tok = str(path) + tok[m.end():]
        out.append(tok)
    return out


def _expand_one(var, path: Path, roots, seen) -> list:
    env_file = path / ENV_DIR / var
    if env_file.is_file():
        return expand_entry_tokens(env_file.read_text(), roots)
    rule = join_rule(var)
    found = [str(path / sub) for sub in rule.subdirs if (path / sub).is_dir()]
    if found:
        return found
    propagated = path / PROPAGATED
    if propagated.is_file():
        result = []
        for d in propagated.read_text().split():
            if d in seen:
                continue
            seen.add(d)
            result.append(d)
            result.extend(_expand_one(var, Path(d), roots, seen))
        return result
    return []


def expand_build_var(var: str, elements, config: GardenConfig) -> list:
    """Expand a ``build_<var>`` list of package paths into ordered, duplicate-free entries."""
    roots = config.storepath if isinstance(config, GardenConfig) else list(config)
    entries = []
    for element in elements:
        p = Path(element)
        entries.extend(_expand_one(var, p, roots, {str(p)}))
    return list(dict.fromkeys(entries))


def render_flags(var: str, entries, toolchain=None) -> str:
    if not _VAR_RE.fullmatch(var or ""):
        raise UnknownVariable(f"not a variable name: {var!r}")
    rule = join_rule(var)
    if var == "LDFLAGS":
        parts = [f"-L{e} -Wl,-rpath,{e}" for e in entries]
        if toolchain:
            binutils, glibc = toolchain
            parts.append(
                f"-B {binutils}/bin -B {glibc}/lib -Wl,--dynamic-linker,{glibc}/lib/{LOADER_NAME}"
            )
        return " ".join(parts)
    return rule.separator.join(rule.prefix + e for e in entries)


# -- interactive add --------------------------------------------------------

def promote(env: Environment, var: str, element: str) -> Environment:
    new = env.copy()
    current = new.vars.get(var, [])
    new.vars[var] = [element] + [e for e in current if e != element]
    return new


def add_package(env: Environment, hashname, config: GardenConfig, visited=None,
                _stack=()) -> Environment:
    """Add one package (and its DEPS pre-loads) to ``env``.

    ``visited`` collects hash-names already added during this operation so
    each package is processed once.
    """
    hashname = hashname if isinstance(hashname, HashName) else parse_hash_name(hashname)
    if visited is None:
        visited = set()
    if hashname in _stack:
        cycle = list(_stack[_stack.index(hashname):]) + [hashname]
        raise CircularDependency(cycle)
    if hashname in visited:
        return env
    path = locate(hashname, config)
    env_dir = path / ENV_DIR
    stack = _stack + (hashname,)

    deps_dir = env_dir / DEPS_DIR
    if deps_dir.is_dir():
        for dep_file in sorted(deps_dir.iterdir()):
            if not dep_file.is_file():
                continue
            for line in dep_file.read_text().split():
                env = add_package(env, parse_hash_name(line), config, visited, stack)

    for var in config.runtime_vars:
        f = env_dir / var
        if not f.is_file():
            continue
        for entry in reversed(expand_entry_tokens(f.read_text(), config.storepath)):
            env = promote(env, var, entry)

    script = env_dir / DEFAULT_SCRIPT
    if script.is_file():
        env = env.copy()
        line = f"source {script}"
        if line not in env.source_lines:
            env.source_lines.append(line)
    visited.add(hashname)
    return env


def add_treetop(env: Environment, treetop, config: GardenConfig) -> Environment:
    visited = set()
    for sym in treetop.export_list:
        env = add_package(env, treetop.pins[sym], config, visited)
    return env


# -- build environment ------------------------------------------------------

def _toolchain(rr: ResolvedRecipe):
    from gardenctl.closure import strip_version_stem

    by_stem = {strip_version_stem(h.label): p for h, p in rr.resolved_deps.values()}
    if "binutils" in by_stem and "glibc" in by_stem:
        return by_stem["binutils"], by_stem["glibc"]
    return None


def synth_build_env(rr: ResolvedRecipe, out_path, mode: str = "clean", *, workdir=None,
                    tmp=None) -> Environment:
    """The complete, hermetic environment for running a package's helper.

    Nothing from the calling process is consulted.  ``workdir`` becomes
    ``PWD``, which POSIX shells export to their children regardless.
    """
    if mode not in ("clean", "direct"):
        raise ValueError(f"mode must be clean or direct, not {mode!r}")
    recipe = rr.recipe
    if tmp is None and mode == "direct" and workdir is not None:
        tmp = Path(workdir) / CACHE_DIR / "tmp"
        tmp.mkdir(parents=True, exist_ok=True)
    elif tmp is None:
        tmp = tempfile.mkdtemp(prefix=f"garden-build-{rr.self_hashname.digest}-")
    scalars = {
        "out": str(out_path),
        "system": rr.system,
        "name": recipe.label,
        "install_command": recipe.install_command,
        "TMP": str(tmp),
        "HOME": NO_HOME,
        "PATH": NO_PATH,
    }
    if workdir is not None:
        scalars["PWD"] = str(workdir)
    for ref, (_, path) in rr.resolved_deps.items():
        sym = env_symbol(ref)
        if sym:
            scalars[sym] = str(path)
    toolchain = _toolchain(rr)
    for var, refs in recipe.build_vars.items():
        paths = [rr.resolved_deps[r][1] for r in refs]
        entries = expand_build_var(var, paths, rr.storepath)
        scalars[var] = render_flags(var, entries, toolchain if var == "LDFLAGS" else None)
    return Environment(scalars=scalars)


# -- env cache for direct builds --------------------------------------------

def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace("\n", "\\n")


def _unescape(value: str) -> str:
    out = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch == "\\" and i + 1 < len(value):
            nxt = value[i + 1]
            out.append("\n" if nxt == "n" else nxt)
            i += 2
            continue
        out.append(ch)
        i += 1
    return "".join(out)


def cache_path(directory) -> Path:
    return Path(directory) / CACHE_DIR / CACHE_FILE


def write_env_cache(env: Environment, recipe_digest: str, directory) -> Path:
    path = cache_path(directory)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"recipe_digest={recipe_digest}"]
    lines += [f"{k}={_escape(v)}" for k, v in env.render().items()]
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".envcache-")
    with os.fdopen(fd, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
    return path


def load_env_cache(directory, current_recipe_digest: str) -> Environment:
    path = cache_path(directory)
    if not path.is_file():
        raise CacheMissing(f"no build environment cached in {path.parent}; run `garden configure`")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("recipe_digest="):
        raise CacheStale(f"{path} is unreadable; run `garden configure`")
    if lines[0].partition("=")[2] != current_recipe_digest:
        raise CacheStale(f"recipe changed since configure; run `garden configure`")
    scalars = {}
    for line in lines[1:]:
        key, _, value = line.partition("=")
        scalars[key] = _unescape(value)
    return Environment(scalars=scalars)
