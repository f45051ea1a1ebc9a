"""Recipe (``garden.recipe``) and treetop file parsing, plus dependency resolution.

Recipe grammar, one statement per line::

    # comment
    name = "aien-system"
    version = "2.41"
    treetop = "Aien2"
    helper = "garden-helper"
    install_command = "./garden-helper --install"

    [deps]
    gcc = @treetop
    zlib = "<hash-name>"

    [build]
    CPPFLAGS = [gcc, glibc, boost]

A treetop file holds ``sym = "<hash-name>"`` pins and at most one
``export = [sym, ...]`` line.  A trailing ``;`` is tolerated on any line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from gardenctl.errors import (
    DuplicateKey,
    ExportOfUnpinnedSymbol,
    MalformedHashName,
    RecipeSyntaxError,
    TreetopRequired,
    UnknownKey,
    UnpinnedSymbol,
)
from gardenctl.hashname import HashInputs, HashName, compute_package_hash, parse_hash_name

RECIPE_FILENAME = "garden.recipe"
TREETOP_SUFFIX = ".treetop"
FROM_TREETOP = "@treetop"
SCALAR_KEYS = ("name", "version", "treetop", "helper", "install_command")
SECTIONS = ("deps", "build")

_SYMBOL_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_KEY_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class Literal(str):
    """A quoted value, as opposed to a bare symbol."""


@dataclass
class Recipe:
    name: str
    version: str
    install_command: str
    helper_path: str = "garden-helper"
    treetop_ref: str | None = None
    deps: dict = field(default_factory=dict)
    build_vars: dict = field(default_factory=dict)
    # raw file bytes and location, filled in by load_recipe
    raw: bytes = b""
    source_dir: Path | None = None

    @property
    def label(self):
        return f"{self.name}-{self.version}"

    def symbols(self):
        """Every symbol named by deps or build lists, in first-seen order."""
        seen = dict.fromkeys(self.deps)
        for refs in self.build_vars.values():
            for ref in refs:
                if not isinstance(ref, Literal):
                    seen.setdefault(ref)
        return list(seen)


@dataclass
class Treetop:
    name: str = ""
    pins: dict = field(default_factory=dict)
    export_list: list = field(default_factory=list)


@dataclass
class ResolvedRecipe:
    recipe: Recipe
    resolved_deps: dict  # ref -> (HashName, Path)
    self_hashname: HashName
    hash_inputs: HashInputs
    system: str
    storepath: list = field(default_factory=list)


# -- line scanner -----------------------------------------------------------

class _Line:
    def __init__(self, text, lineno, filename):
        self.text = text
        self.lineno = lineno
        self.filename = filename
        self.pos = 0

    def error(self, msg, cls=RecipeSyntaxError, col=None):
        return cls(msg, self.lineno, (self.pos if col is None else col) + 1, self.filename)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def at_end(self):
        self.skip_ws()
        if self.pos < len(self.text) and self.text[self.pos] == ";":
            self.pos += 1
            self.skip_ws()
        return self.pos >= len(self.text) or self.text[self.pos] == "#"

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch):
        if self.peek() != ch:
            raise self.error(f"expected {ch!r}")
        self.pos += 1

    def word(self, regex, what):
        self.skip_ws()
        m = regex.match(self.text, self.pos)
        if not m:
            raise self.error(f"expected {what}")
        self.pos = m.end()
        return m.group()

    def quoted(self):
        self.expect('"')
        out = []
        while True:
            if self.pos >= len(self.text):
                raise self.error("unterminated string")
            ch = self.text[self.pos]
            self.pos += 1
            if ch == '"':
                return Literal("".join(out))
            if ch == "\\":
                if self.pos >= len(self.text) or self.text[self.pos] not in '"\\':
                    raise self.error("bad escape")
                ch = self.text[self.pos]
                self.pos += 1
            out.append(ch)

    def value(self, allow_treetop=False):
        ch = self.peek()
        if ch == '"':
            return self.quoted()
        if ch == "[":
            return self.list_value()
        if ch == "@" and allow_treetop:
            start = self.pos
            self.pos += 1
            if self.word(_SYMBOL_RE, "'treetop' after '@'") != "treetop":
                raise self.error("only @treetop is supported", col=start)
            return FROM_TREETOP
        raise self.error("expected a quoted string or a list")

    def list_value(self):
        self.expect("[")
        items = []
        if self.peek() == "]":
            self.pos += 1
            return items
        while True:
            if self.peek() == '"':
                items.append(self.quoted())
            else:
                items.append(self.word(_SYMBOL_RE, "symbol"))
            ch = self.peek()
            self.pos += 1
            if ch == "]":
                return items
            if ch != ",":
                self.pos -= 1
                raise self.error("expected ',' or ']'")


def _statements(text, filename):
    """Yield (line, section, key) for every statement, leaving the scanner at the value."""
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _Line(raw, lineno, filename)
        if line.at_end():
            continue
        if line.peek() == "[":
            line.pos += 1
            name = line.word(_KEY_RE, "section name")
            line.expect("]")
            if not line.at_end():
                raise line.error("trailing text after section header")
            yield line, name, None
            section = name
            continue
        key = line.word(_KEY_RE, "key")
        line.expect("=")
        yield line, section, key


def _hash_literal(line, value):
    try:
        return parse_hash_name(value)
    except MalformedHashName as exc:
        raise MalformedHashName(f"{line.filename or '<input>'}:{line.lineno}: {exc}") from None


def parse_recipe(text: str, filename: str | None = None) -> Recipe:
    scalars = {}
    deps = {}
    build = {}
    seen_sections = set()
    for line, section, key in _statements(text, filename):
        if key is None:
            if section not in SECTIONS:
                raise line.error(f"unknown section [{section}]", UnknownKey, col=0)
            if section in seen_sections:
                raise line.error(f"duplicate section [{section}]", DuplicateKey, col=0)
            seen_sections.add(section)
            continue
        col = line.pos
        if section is None:
            if key not in SCALAR_KEYS:
                raise line.error(f"unknown key {key!r}", UnknownKey, col=0)
            value = line.value()
            if not isinstance(value, Literal):
                raise line.error(f"{key} must be a quoted string", col=col)
            target = scalars
        elif section == "deps":
            if not _SYMBOL_RE.fullmatch(key):
                raise line.error(f"bad dependency symbol {key!r}", col=0)
            value = line.value(allow_treetop=True)
            if isinstance(value, list):
                raise line.error("dependency pin must be a hash-name or @treetop", col=col)
            if value != FROM_TREETOP:
                _hash_literal(line, value)
            target = deps
        else:
            value = line.value()
            if not isinstance(value, list):
                raise line.error("build variables take a list", col=col)
            for item in value:
                if isinstance(item, Literal):
                    _hash_literal(line, item)
            target = build
        if not line.at_end():
            raise line.error("trailing text")
        if key in target:
            raise line.error(f"duplicate key {key!r}", DuplicateKey, col=0)
        target[key] = value

    nlines = len(text.splitlines())
    for required in ("name", "version", "install_command"):
        if not scalars.get(required):
            raise RecipeSyntaxError(f"missing or empty key {required!r}", nlines, 1, filename)
    recipe = Recipe(
        name=str(scalars["name"]),
        version=str(scalars["version"]),
        install_command=str(scalars["install_command"]),
        helper_path=str(scalars.get("helper", "garden-helper")),
        treetop_ref=str(scalars["treetop"]) if "treetop" in scalars else None,
        deps=deps,
        build_vars=build,
        raw=text.encode(),
    )
    try:
        HashName("0" * 32, recipe.label)
    except MalformedHashName:
        raise RecipeSyntaxError(f"{recipe.label!r} is not a valid package label", 1, 1, filename)
    return recipe


def parse_treetop(text: str, name: str = "", filename: str | None = None) -> Treetop:
    pins = {}
    export = None
    for line, section, key in _statements(text, filename):
        if key is None:
            raise line.error("treetop files have no sections", col=0)
        if key == "export":
            if export is not None:
                raise line.error("duplicate export list", DuplicateKey, col=0)
            value = line.value()
            if not isinstance(value, list) or any(isinstance(v, Literal) for v in value):
                raise line.error("export takes a list of symbols")
            export = value
        else:
            value = line.value()
            if not isinstance(value, Literal):
                raise line.error("pin must be a quoted hash-name")
            if key in pins:
                raise line.error(f"duplicate pin {key!r}", DuplicateKey, col=0)
            pins[key] = _hash_literal(line, value)
        if not line.at_end():
            raise line.error("trailing text")
    export = export or []
    for sym in export:
        if sym not in pins:
            raise ExportOfUnpinnedSymbol(f"treetop {name or filename or ''} exports unpinned symbol {sym!r}")
    return Treetop(name=name, pins=pins, export_list=list(export))


def load_recipe(source_dir) -> Recipe:
    source_dir = Path(source_dir)
    path = source_dir / RECIPE_FILENAME
    recipe = parse_recipe(path.read_text(), filename=str(path))
    recipe.source_dir = source_dir
    return recipe


def load_treetop(path) -> Treetop:
    path = Path(path)
    name = path.name[: -len(TREETOP_SUFFIX)] if path.name.endswith(TREETOP_SUFFIX) else path.name
    return parse_treetop(path.read_text(), name=name, filename=str(path))


def find_treetop(recipe: Recipe, treetop_dir=None) -> Treetop | None:
    """Look up ``recipe.treetop_ref``: path relative to the recipe first, then the treetop directory."""
    ref = recipe.treetop_ref
    if not ref:
        return None
    base = recipe.source_dir or Path.cwd()
    candidates = [base / ref, base / (ref + TREETOP_SUFFIX)]
    if treetop_dir:
        candidates.append(Path(treetop_dir) / (ref + TREETOP_SUFFIX))
    for cand in candidates:
        if cand.is_file():
            return load_treetop(cand)
    raise TreetopRequired(
        f"treetop {ref!r} not found (looked in {', '.join(str(c) for c in candidates)})"
    )


def resolve_deps(recipe: Recipe, treetop: Treetop | None, storepath, system: str | None = None,
                 helper_bytes: bytes | None = None) -> ResolvedRecipe:
    from gardenctl.store import default_system, locate_in

    storepath = [Path(r) for r in storepath]
    if not storepath:
        raise ValueError("storepath must name at least one root")
    refs = recipe.symbols()
    for items in recipe.build_vars.values():
        refs.extend(i for i in items if isinstance(i, Literal) and i not in refs)

    pinned = {}
    for ref in refs:
        if isinstance(ref, Literal):
            pinned[ref] = parse_hash_name(ref)
            continue
        spec = recipe.deps.get(ref)
        if spec is not None and spec != FROM_TREETOP:
            pinned[ref] = parse_hash_name(spec)
            continue
        if treetop is None:
            if spec == FROM_TREETOP:
                raise TreetopRequired(f"{ref!r} is pinned @treetop but the recipe has no treetop")
            raise UnpinnedSymbol(f"symbol {ref!r} is neither in [deps] nor in a treetop")
        if ref not in treetop.pins:
            raise UnpinnedSymbol(f"symbol {ref!r} is not pinned by treetop {treetop.name!r}")
        pinned[ref] = treetop.pins[ref]

    resolved = {ref: (h, locate_in(h, storepath)) for ref, h in pinned.items()}

    if helper_bytes is None:
        helper_bytes = b""
        if recipe.source_dir is not None:
            helper = Path(recipe.source_dir) / recipe.helper_path
            if helper.is_file():
                helper_bytes = helper.read_bytes()
    system = system or default_system()
    inputs = HashInputs.build(recipe.raw, helper_bytes, system, [str(h) for h, _ in resolved.values()])
    self_hash = HashName(compute_package_hash(inputs), recipe.label)
    return ResolvedRecipe(recipe, resolved, self_hash, inputs, system, storepath)


def env_symbol(ref) -> str | None:
    """Name of the ``<symbol>=<path>`` scalar exported for ``ref``, if any."""
    if isinstance(ref, Literal) or not _SYMBOL_RE.fullmatch(ref):
        return None
    return ref
