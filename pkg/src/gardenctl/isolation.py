"""Dynamic-link inspection and the garden closure check (an ``ldd``-style gate).

Libraries are resolved only through the file's own RPATH/RUNPATH entries;
system search directories are never consulted, so anything that would
only load from the host OS shows up as NOT-FOUND.
"""

from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

from gardenctl.errors import GardenError, MalformedElf, UnsupportedElfClass
from gardenctl.hashname import ALPHABET, DIGEST_LEN, is_hash_name

ELF_MAGIC = b"\x7fELF"
MANIFEST_MAGIC = "GARDEN-DYNINFO 1"
NOT_FOUND = "NOT-FOUND"

PT_DYNAMIC = 2
PT_INTERP = 3
PT_LOAD = 1
DT_NULL = 0
DT_NEEDED = 1
DT_STRTAB = 5
DT_STRSZ = 10
DT_RPATH = 15
DT_RUNPATH = 29


@dataclass
class DynInfo:
    kind: str = "other"  # elf-binary | elf-shared-object | script | declared-manifest | other
    needed: list = field(default_factory=list)
    rpath_dirs: list = field(default_factory=list)
    interpreter: str | None = None
    shebang: str | None = None

    @property
    def flagged_rpaths(self):
        """RPATH entries that are relative or use ``$ORIGIN``."""
        return [d for d in self.rpath_dirs if "$ORIGIN" in d or "${ORIGIN}" in d or not os.path.isabs(d)]


# -- ELF --------------------------------------------------------------------

def _unpack(fmt, data, offset, what):
    size = struct.calcsize(fmt)
    if offset < 0 or offset + size > len(data):
        raise MalformedElf(f"truncated {what}", offset)
    return struct.unpack_from(fmt, data, offset)


def _cstring(data, offset, limit, what):
    if offset < 0 or offset >= limit:
        raise MalformedElf(f"{what} string offset out of bounds", offset)
    end = data.find(b"\0", offset, limit)
    if end < 0:
        raise MalformedElf(f"unterminated {what} string", offset)
    return data[offset:end].decode("utf-8", "surrogateescape")


def parse_elf(data: bytes) -> DynInfo:
    if len(data) < 16:
        raise MalformedElf("truncated ELF identification", len(data))
    ei_class, ei_data = data[4], data[5]
    if ei_class != 2 or ei_data != 1:
        raise UnsupportedElfClass(
            f"only 64-bit little-endian ELF is supported (class={ei_class}, data={ei_data})"
        )
    (e_type,) = _unpack("<H", data, 16, "ELF header")
    (e_phoff,) = _unpack("<Q", data, 0x20, "ELF header")
    e_phentsize, e_phnum = _unpack("<HH", data, 0x36, "ELF header")
    if e_phnum and e_phentsize < 56:
        raise MalformedElf(f"program header entry size {e_phentsize} too small", 0x36)

    loads = []
    interp = None
    dynamic = None
    for i in range(e_phnum):
        off = e_phoff + i * e_phentsize
        p_type, _, p_offset, p_vaddr, _, p_filesz, p_memsz, _ = _unpack(
            "<IIQQQQQQ", data, off, "program header"
        )
        if p_type == PT_LOAD:
            loads.append((p_vaddr, p_offset, p_filesz))
        elif p_type == PT_INTERP:
            if p_offset + p_filesz > len(data):
                raise MalformedElf("PT_INTERP extends past end of file", p_offset)
            interp = _cstring(data, p_offset, p_offset + p_filesz, "interpreter")
        elif p_type == PT_DYNAMIC:
            dynamic = (p_offset, p_filesz)

    info = DynInfo(kind="elf-binary" if e_type == 2 or interp else "elf-shared-object")
    info.interpreter = interp
    if dynamic is None:
        return info

    dyn_off, dyn_size = dynamic
    if dyn_off + dyn_size > len(data):
        raise MalformedElf("PT_DYNAMIC extends past end of file", dyn_off)
    entries = []
    for off in range(dyn_off, dyn_off + dyn_size - 15, 16):
        tag, val = _unpack("<qQ", data, off, "dynamic entry")
        if tag == DT_NULL:
            break
        entries.append((tag, val))
    tags = {}
    for tag, val in entries:
        tags.setdefault(tag, val)
    if DT_STRTAB not in tags:
        if any(t in (DT_NEEDED, DT_RPATH, DT_RUNPATH) for t, _ in entries):
            raise MalformedElf("dynamic section has no DT_STRTAB", dyn_off)
        return info

    strtab_addr = tags[DT_STRTAB]
    for vaddr, off, filesz in loads:
        if vaddr <= strtab_addr < vaddr + filesz:
            str_off = strtab_addr - vaddr + off
            str_end = off + filesz
            break
    else:
        raise MalformedElf(f"DT_STRTAB address {strtab_addr:#x} not in any PT_LOAD segment", dyn_off)
    if DT_STRSZ in tags:
        str_end = min(str_end, str_off + tags[DT_STRSZ])
    str_end = min(str_end, len(data))

    rpath, runpath = [], []
    for tag, val in entries:
        if tag == DT_NEEDED:
            info.needed.append(_cstring(data, str_off + val, str_end, "DT_NEEDED"))
        elif tag == DT_RPATH:
            rpath.extend(_cstring(data, str_off + val, str_end, "DT_RPATH").split(":"))
        elif tag == DT_RUNPATH:
            runpath.extend(_cstring(data, str_off + val, str_end, "DT_RUNPATH").split(":"))
    info.rpath_dirs = [d for d in rpath + runpath if d]
    return info


# -- manifests and scripts --------------------------------------------------

def parse_manifest(text: str) -> DynInfo:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MANIFEST_MAGIC:
        raise ValueError("not a GARDEN-DYNINFO manifest")
    info = DynInfo(kind="declared-manifest")
    for raw in lines[1:]:
        raw = raw.strip()
        if not raw or raw.startswith("#"):
            continue
        key, _, value = raw.partition(" ")
        value = value.strip()
        if key == "NEEDED":
            info.needed.append(value)
        elif key == "RPATH":
            info.rpath_dirs.extend(d for d in value.split(":") if d)
        elif key == "INTERP":
            info.interpreter = value
        else:
            raise ValueError(f"unknown manifest line {raw!r}")
    return info


def render_manifest(info: DynInfo) -> str:
    lines = [MANIFEST_MAGIC]
    lines += [f"NEEDED {n}" for n in info.needed]
    lines += [f"RPATH {d}" for d in info.rpath_dirs]
    if info.interpreter:
        lines.append(f"INTERP {info.interpreter}")
    return "\n".join(lines) + "\n"


def _classify(head: bytes) -> str:
    if head.startswith(ELF_MAGIC):
        return "elf"
    if head.startswith(b"#!"):
        return "script"
    if head.startswith(MANIFEST_MAGIC.encode()):
        return "manifest"
    return "other"


def extract_dynamic_deps(file) -> DynInfo:
    data = Path(file).read_bytes()
    kind = _classify(data[:len(MANIFEST_MAGIC)])
    if kind == "elf":
        return parse_elf(data)
    if kind == "script":
        first = data[2:].split(b"\n", 1)[0].decode("utf-8", "surrogateescape").strip()
        return DynInfo(kind="script", shebang=first.split()[0] if first else "")
    if kind == "manifest":
        try:
            return parse_manifest(data.decode("utf-8"))
        except (UnicodeDecodeError, ValueError):
            pass
    return DynInfo()


# -- checking ---------------------------------------------------------------

@dataclass
class Resolution:
    needed: str
    path: str
    verdict: str

    def render(self):
        return f"  {self.needed} => {self.path} [{self.verdict}]"


@dataclass
class CleanReport:
    file: Path
    kind: str = "other"
    resolutions: list = field(default_factory=list)
    interpreter_verdict: str = "absent"
    interpreter: str | None = None
    error: str | None = None

    @property
    def overall(self):
        if self.error:
            return "dirty"
        ok = all(r.verdict == "clean" for r in self.resolutions)
        return "clean" if ok and self.interpreter_verdict in ("clean", "absent") else "dirty"

    def render(self):
        lines = [f"{self.file}: {self.overall}"]
        if self.error:
            lines.append(f"  error: {self.error}")
        lines += [r.render() for r in self.resolutions]
        if self.interpreter:
            lines.append(f"  {self.interpreter} [{self.interpreter_verdict}]")
        return "\n".join(lines)

    def as_dict(self):
        return {
            "file": str(self.file),
            "kind": self.kind,
            "overall": self.overall,
            "resolutions": [vars(r) for r in self.resolutions],
            "interpreter": self.interpreter,
            "interpreter_verdict": self.interpreter_verdict,
            "error": self.error,
        }


def in_garden(path, roots) -> bool:
    """Lexical test: ``path`` lies inside a package directory of one of ``roots``."""
    norm = os.path.normpath(path)
    if not os.path.isabs(norm):
        return False
    for root in roots:
        root = os.path.normpath(str(root))
        if not norm.startswith(root.rstrip("/") + "/"):
            continue
        first = norm[len(root.rstrip("/")) + 1:].split("/", 1)[0]
        if is_hash_name(first):
            return True
    return False


def _roots(config):
    return config.isolation_roots if hasattr(config, "isolation_roots") else list(config)


def check_info(file, info: DynInfo, config) -> CleanReport:
    roots = _roots(config)
    report = CleanReport(Path(file), info.kind)
    flagged = set(info.flagged_rpaths)
    for d in info.rpath_dirs:
        if d in flagged:
            report.resolutions.append(Resolution(f"RPATH {d}", d, "violation"))
    search = [d for d in info.rpath_dirs if d not in flagged]
    for name in info.needed:
        found = next((os.path.join(d, name) for d in search if os.path.exists(os.path.join(d, name))), None)
        if found is None:
            report.resolutions.append(Resolution(name, NOT_FOUND, "violation"))
        else:
            verdict = "clean" if in_garden(found, roots) else "violation"
            report.resolutions.append(Resolution(name, found, verdict))
    exe = info.interpreter or info.shebang
    if exe:
        report.interpreter = exe
        report.interpreter_verdict = "clean" if in_garden(exe, roots) else "violation"
    return report


def check_clean(file, config) -> CleanReport:
    try:
        info = extract_dynamic_deps(file)
    except GardenError as exc:
        report = CleanReport(Path(file), "elf")
        report.error = str(exc)
        return report
    return check_info(file, info, config)


@dataclass
class TreeReport:
    root: Path
    files: list = field(default_factory=list)

    @property
    def overall(self):
        return "dirty" if self.dirty_files else "clean"

    @property
    def dirty_files(self):
        return [r for r in self.files if r.overall == "dirty"]

    @property
    def checked(self):
        return len(self.files)

    def render(self):
        head = f"{self.root}: {self.overall} ({self.checked} files checked)"
        return "\n".join([head] + [r.render() for r in self.files])

    def as_dict(self):
        return {
            "root": str(self.root),
            "overall": self.overall,
            "checked": self.checked,
            "files": [r.as_dict() for r in self.files],
        }


def check_tree(directory, config) -> TreeReport:
    """Check every ELF file, script and manifest under ``directory``; violations first."""
    directory = Path(directory)
    reports = []
    for dirpath, dirnames, filenames in os.walk(directory):
        dirnames.sort()
        for fn in sorted(filenames):
            path = Path(dirpath) / fn
            if path.is_symlink() or not path.is_file():
                continue
            with open(path, "rb") as fh:
                head = fh.read(len(MANIFEST_MAGIC))
            if _classify(head) == "other":
                continue
            report = check_clean(path, config)
            if report.kind == "other" and report.error is None:
                continue
            reports.append(report)
    reports.sort(key=lambda r: (r.overall != "dirty", str(r.file)))
    return TreeReport(directory, reports)


_DIGEST_RE = re.compile(rb"(?<![%s])[%s]{%d}(?![%s])" % ((ALPHABET.encode(),) * 2 + (DIGEST_LEN,) + (ALPHABET.encode(),)))


def scan_refs(directory, known_digests) -> set:
    """Digests from ``known_digests`` that appear anywhere in the bytes of files under ``directory``."""
    known = set(known_digests)
    found = set()
    for dirpath, _, filenames in os.walk(directory):
        for fn in filenames:
            path = Path(dirpath) / fn
            if path.is_symlink() or not path.is_file():
                continue
            for m in _DIGEST_RE.finditer(path.read_bytes()):
                digest = m.group().decode()
                if digest in known:
                    found.add(digest)
    return found
