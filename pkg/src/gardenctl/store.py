"""Garden roots: configuration, lookup, metadata and atomic installation."""

from __future__ import annotations

import contextlib
import fcntl
import logging
import os
import platform
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from gardenctl.errors import (
    CanonicalUnwritable,
    ConfigError,
    CorruptExisting,
    CrossDeviceStaging,
    MalformedHashName,
    PackageNotFound,
)
from gardenctl.hashname import HashName, TOKEN_RE, parse_hash_name

log = logging.getLogger(__name__)

ENV_DIR = "garden-env"
META_FILE = "META"
REFERENCES_FILE = "REFERENCES"
LOCK_DIR = ".locks"
STAGING_DIR = ".staging"
DEFAULT_RUNTIME_VARS = ("PATH", "PYTHONPATH", "LD_LIBRARY_PATH", "MANPATH")
CONFIG_KEYS = {
    "root": "public_root",
    "personal_root": "personal_root",
    "storepath": "storepath",
    "central": "central",
    "central_dest": "central_dest",
    "canonical_root": "canonical_root",
    "treetop_dir": "treetop_dir",
    "notify_group": "notify_group",
    "runtime_vars": "runtime_vars",
}
ENV_KEYS = {
    "GARDEN_ROOT": "public_root",
    "GARDEN_PERSONAL_ROOT": "personal_root",
    "GARDEN_STOREPATH": "storepath",
    "GARDEN_CENTRAL": "central",
    "GARDEN_CENTRAL_DEST": "central_dest",
    "GARDEN_CANONICAL_ROOT": "canonical_root",
    "GARDEN_TREETOP_DIR": "treetop_dir",
    "GARDEN_NOTIFY_GROUP": "notify_group",
}


def default_system() -> str:
    return f"{platform.machine() or 'unknown'}-{platform.system().lower() or 'unknown'}"


@dataclass
class GardenConfig:
    public_root: Path
    personal_root: Path
    storepath: list = None
    central: Path | None = None
    central_dest: Path | None = None
    canonical_root: Path | None = None
    treetop_dir: Path | None = None
    notify_group: str | None = None
    runtime_vars: tuple = DEFAULT_RUNTIME_VARS
    system: str = field(default_factory=default_system)

    def __post_init__(self):
        self.public_root = _abspath(self.public_root)
        self.personal_root = _abspath(self.personal_root)
        if not self.storepath:
            self.storepath = [self.personal_root, self.public_root]
        self.storepath = [_abspath(p) for p in self.storepath]
        if len(set(self.storepath)) != len(self.storepath):
            raise ConfigError(f"storepath has duplicate entries: {self.storepath}")
        if self.personal_root not in self.storepath:
            self.storepath.insert(0, self.personal_root)
        if self.public_root not in self.storepath:
            self.storepath.append(self.public_root)
        if self.storepath.index(self.personal_root) > self.storepath.index(self.public_root):
            raise ConfigError("personal root must precede the public root in storepath")
        for name in ("central", "central_dest", "canonical_root", "treetop_dir"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, _abspath(value))
        self.runtime_vars = tuple(self.runtime_vars)

    @property
    def public_storepath(self):
        """Storepath with the personal root removed (public installs see no personal packages)."""
        return [r for r in self.storepath if r != self.personal_root]

    @property
    def isolation_roots(self):
        roots = list(self.storepath)
        if self.canonical_root is not None:
            roots.append(self.canonical_root)
        return roots


def _abspath(p) -> Path:
    p = Path(os.path.expanduser(str(p)))
    if not p.is_absolute():
        raise ConfigError(f"garden roots must be absolute paths, got {p}")
    return Path(os.path.normpath(p))


def config_file_path(environ=None) -> Path:
    environ = os.environ if environ is None else environ
    if environ.get("GARDEN_CONFIG"):
        return Path(environ["GARDEN_CONFIG"])
    home = environ.get("HOME") or os.path.expanduser("~")
    return Path(home) / ".config" / "garden" / "config"


def read_config_file(path) -> dict:
    from gardenctl.recipe import _statements  # same scalar grammar as recipes

    path = Path(path)
    if not path.is_file():
        return {}
    values = {}
    for line, section, key in _statements(path.read_text(), str(path)):
        if key is None or key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{line.lineno}: unknown config entry")
        value = line.value()
        if isinstance(value, list):
            value = list(value)
        else:
            value = str(value)
        values[CONFIG_KEYS[key]] = value
    return values


def load_config(environ=None, **overrides) -> GardenConfig:
    """Build a config from defaults, the config file, ``GARDEN_*`` variables and overrides, in that order."""
    environ = os.environ if environ is None else environ
    home = environ.get("HOME") or os.path.expanduser("~")
    values = {
        "public_root": "/garden",
        "personal_root": os.path.join(home, "garden"),
    }
    values.update(read_config_file(config_file_path(environ)))
    for var, key in ENV_KEYS.items():
        if environ.get(var):
            values[key] = environ[var]
    values.update({k: v for k, v in overrides.items() if v is not None})
    sp = values.get("storepath")
    if isinstance(sp, str):
        values["storepath"] = [p for p in sp.split(":") if p]
    rv = values.get("runtime_vars")
    if isinstance(rv, str):
        values["runtime_vars"] = tuple(v for v in rv.replace(":", " ").split() if v)
    return GardenConfig(**values)


# -- lookup -----------------------------------------------------------------

def locate_in(hashname, roots) -> Path:
    hashname = hashname if isinstance(hashname, HashName) else parse_hash_name(hashname)
    for root in roots:
        cand = Path(root) / str(hashname)
        if cand.is_dir():
            return cand
    raise PackageNotFound(hashname, roots)


def locate(hashname, config: GardenConfig) -> Path:
    return locate_in(hashname, config.storepath)


def list_packages(root):
    """Yield (HashName, path) for every package directory directly under ``root``."""
    root = Path(root)
    if not root.is_dir():
        return
    for entry in sorted(os.listdir(root)):
        if entry.startswith("."):
            continue
        try:
            h = parse_hash_name(entry)
        except MalformedHashName:
            continue
        path = root / entry
        if path.is_dir():
            yield h, path


# -- metadata ---------------------------------------------------------------

@dataclass
class PackageMeta:
    hashname: HashName
    born_on: int
    mode: str = "personal"
    git_revision: str | None = None
    source_url: str | None = None

    def __post_init__(self):
        if self.mode not in ("personal", "public"):
            raise ValueError(f"mode must be personal or public, not {self.mode!r}")
        if self.git_revision is not None and (
            len(self.git_revision) != 40 or any(c not in "0123456789abcdef" for c in self.git_revision)
        ):
            raise ValueError(f"git revision must be 40 hex characters: {self.git_revision!r}")

    def render(self) -> str:
        lines = [f"hashname = {self.hashname}", f"born_on = {self.born_on}", f"mode = {self.mode}"]
        if self.git_revision:
            lines.append(f"revision = {self.git_revision}")
        if self.source_url:
            lines.append(f"source_url = {self.source_url}")
        return "\n".join(lines) + "\n"

    def as_dict(self):
        return {
            "hashname": str(self.hashname),
            "born_on": self.born_on,
            "mode": self.mode,
            "revision": self.git_revision,
            "source_url": self.source_url,
        }


def read_meta(package_path) -> PackageMeta:
    package_path = Path(package_path)
    text = (package_path / ENV_DIR / META_FILE).read_text()
    fields = {}
    for raw in text.splitlines():
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        key, sep, value = raw.partition("=")
        if not sep:
            raise ValueError(f"bad META line {raw!r}")
        fields[key.strip()] = value.strip()
    hashname = parse_hash_name(fields.get("hashname", package_path.name))
    return PackageMeta(
        hashname=hashname,
        born_on=int(fields["born_on"]),
        mode=fields.get("mode", "personal"),
        git_revision=fields.get("revision") or None,
        source_url=fields.get("source_url") or None,
    )


def write_meta(package_path, meta: PackageMeta):
    env_dir = Path(package_path) / ENV_DIR
    env_dir.mkdir(parents=True, exist_ok=True)
    (env_dir / META_FILE).write_text(meta.render())


def read_references(package_path):
    from gardenctl.errors import CorruptReferences

    path = Path(package_path) / ENV_DIR / REFERENCES_FILE
    if not path.exists():
        return []
    refs = []
    for n, raw in enumerate(path.read_text().splitlines(), 1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            refs.append(parse_hash_name(raw))
        except MalformedHashName as exc:
            raise CorruptReferences(f"{path}:{n}: {exc}") from None
    return refs


def write_references(package_path, refs):
    env_dir = Path(package_path) / ENV_DIR
    env_dir.mkdir(parents=True, exist_ok=True)
    lines = sorted({str(r) for r in refs})
    (env_dir / REFERENCES_FILE).write_text("".join(line + "\n" for line in lines))


def avail(name_pattern: str, config: GardenConfig):
    """All packages whose label contains ``name_pattern``, one entry per hash-name."""
    found = {}
    for root in config.storepath:
        for h, path in list_packages(root):
            if name_pattern not in h.label or h in found:
                continue
            try:
                meta = read_meta(path)
            except (OSError, ValueError, KeyError):
                meta = None
            found[h] = (h, Path(root), meta)
    return sorted(found.values(), key=lambda t: (t[0].label, t[2].born_on if t[2] else 0, t[0].digest))


# -- writers ----------------------------------------------------------------

@contextlib.contextmanager
def package_lock(root, name):
    """Exclusive advisory lock on ``<root>/.locks/<name>.lock``."""
    lock_dir = Path(root) / LOCK_DIR
    lock_dir.mkdir(parents=True, exist_ok=True)
    with open(lock_dir / f"{name}.lock", "a") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def make_staging(root) -> Path:
    """A fresh directory on the same filesystem as ``root``."""
    staging = Path(root) / STAGING_DIR
    staging.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(dir=staging))


def _same_device(a, b) -> bool:
    return os.stat(a).st_dev == os.stat(b).st_dev


def install_atomic(staging_dir, hashname, root, meta: PackageMeta, *, locked=False) -> Path:
    """Rename a populated ``staging_dir`` to ``<root>/<hashname>``.

    An existing package with the same hash-name wins and the staging copy is
    discarded.  Pass ``locked=True`` when the caller already holds the
    per-hashname lock.
    """
    staging_dir = Path(staging_dir)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    dest = root / str(hashname)
    lock = contextlib.nullcontext() if locked else package_lock(root, str(hashname))
    with lock:
        if dest.exists():
            try:
                read_meta(dest)
            except (OSError, ValueError, KeyError) as exc:
                raise CorruptExisting(f"{dest} exists but its META is unreadable: {exc}") from None
            shutil.rmtree(staging_dir, ignore_errors=True)
            log.info("%s already present in %s", hashname, root)
            return dest
        if not _same_device(staging_dir, root):
            raise CrossDeviceStaging(f"staging dir {staging_dir} is not on the filesystem of {root}")
        write_meta(staging_dir, meta)
        os.rename(staging_dir, dest)
    return dest


@dataclass
class LinkReport:
    created: list = field(default_factory=list)
    already_present: list = field(default_factory=list)
    conflicting: list = field(default_factory=list)


def compose_roots(config: GardenConfig) -> LinkReport:
    canonical = config.canonical_root
    if canonical is None:
        raise CanonicalUnwritable("no canonical root configured")
    try:
        canonical.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CanonicalUnwritable(f"cannot create {canonical}: {exc}") from None
    if not os.access(canonical, os.W_OK):
        raise CanonicalUnwritable(f"{canonical} is not writable")
    report = LinkReport()
    handled = set()
    for root in config.storepath:
        if Path(root) == canonical:
            continue
        for h, path in list_packages(root):
            if h in handled:
                continue
            handled.add(h)
            link = canonical / str(h)
            if link.is_symlink():
                report.already_present.append(link)
            elif link.exists():
                report.conflicting.append(link)
            else:
                os.symlink(path, link)
                report.created.append(link)
    return report


# -- show -------------------------------------------------------------------

def expand_tokens(text: str, roots) -> str:
    """Replace every hash-name token in ``text`` with its located path."""
    def sub(m):
        h = HashName(m.group(1), m.group(2))
        return str(locate_in(h, roots))
    return TOKEN_RE.sub(sub, text)


@dataclass
class ShowResult:
    path: Path
    meta: PackageMeta
    env_files: dict  # relative name -> expanded first line

    def as_dict(self):
        return {"path": str(self.path), "meta": self.meta.as_dict(), "env_files": self.env_files}


def show(hashname, config: GardenConfig) -> ShowResult:
    path = locate(hashname, config)
    meta = read_meta(path)
    env_dir = path / ENV_DIR
    files = {}
    for dirpath, _, filenames in os.walk(env_dir):
        for fn in sorted(filenames):
            full = Path(dirpath) / fn
            rel = str(full.relative_to(env_dir))
            if rel == META_FILE:
                continue
            try:
                first = full.read_text().splitlines()[:1]
            except UnicodeDecodeError:
                first = []
            line = first[0] if first else ""
            try:
                line = expand_tokens(line, config.storepath)
            except PackageNotFound:
                pass
            files[rel] = line
    return ShowResult(path, meta, dict(sorted(files.items())))


def now() -> int:
    return int(time.time())
