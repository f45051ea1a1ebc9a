"""Runtime closures, diamond detection, export between roots and availability notices."""

from __future__ import annotations

import logging
import os
import re
import shutil
import socket
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from gardenctl.errors import DestUnwritable, PackageNotFound
from gardenctl.hashname import HashName, parse_hash_name
from gardenctl.store import locate_in, make_staging, package_lock, read_references

log = logging.getLogger(__name__)

_VERSION_RE = re.compile(r"[0-9][0-9A-Za-z._]*\Z")
NOTIFY_PREFIX = "GARDEN-NEW 1"


@dataclass
class ClosureGraph:
    root: HashName
    members: list = field(default_factory=list)
    edges: dict = field(default_factory=dict)

    def __contains__(self, h):
        return h in self.edges


def _roots_of(config):
    return config.storepath if hasattr(config, "storepath") else [Path(r) for r in config]


def compute_closure(root, config) -> ClosureGraph:
    """Breadth-first walk of ``garden-env/REFERENCES`` from ``root``.

    ``config`` is a GardenConfig or a plain list of roots to search.
    Neighbours are visited in sorted order, so member order is stable.
    """
    roots = _roots_of(config)
    root = root if isinstance(root, HashName) else parse_hash_name(root)
    locate_in(root, roots)
    graph = ClosureGraph(root)
    queue = deque([root])
    graph.edges[root] = None
    while queue:
        h = queue.popleft()
        graph.members.append(h)
        path = locate_in(h, roots)
        refs = sorted(set(read_references(path)), key=str)
        graph.edges[h] = refs
        for ref in refs:
            if ref in graph.edges:
                continue
            try:
                locate_in(ref, roots)
            except PackageNotFound:
                raise PackageNotFound(ref, roots, referrer=str(h)) from None
            graph.edges[ref] = None
            queue.append(ref)
    return graph


def strip_version_stem(label: str) -> str:
    head, sep, last = label.rpartition("-")
    if sep and head and _VERSION_RE.match(last):
        return head
    return label


@dataclass
class DiamondConflict:
    stem: str
    versions: list
    witness_paths: list

    def render(self):
        lines = [f"diamond dependency on {self.stem}:"]
        for chain in self.witness_paths:
            lines.append("  " + " -> ".join(h.label for h in chain))
        return "\n".join(lines)


def _parents(graph: ClosureGraph):
    parent = {graph.root: None}
    queue = deque([graph.root])
    while queue:
        h = queue.popleft()
        for ref in graph.edges.get(h) or ():
            if ref not in parent:
                parent[ref] = h
                queue.append(ref)
    return parent


def _chain(parent, h):
    chain = []
    while h is not None:
        chain.append(h)
        h = parent[h]
    return chain[::-1]


def detect_diamond(graph: ClosureGraph) -> list:
    groups = {}
    for h in graph.members:
        groups.setdefault(strip_version_stem(h.label), []).append(h)
    parent = _parents(graph)
    conflicts = []
    for stem in sorted(groups):
        versions = groups[stem]
        if len({h.digest for h in versions}) < 2:
            continue
        versions = sorted(versions, key=str)
        conflicts.append(DiamondConflict(stem, versions, [_chain(parent, v) for v in versions]))
    return conflicts


# -- export -----------------------------------------------------------------

@dataclass
class TransferReport:
    sent: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    bytes: int = 0

    def as_dict(self):
        return {
            "sent": [str(h) for h in self.sent],
            "skipped": [str(h) for h in self.skipped],
            "bytes": self.bytes,
        }

    def merge(self, other: "TransferReport"):
        seen = set(self.sent) | set(self.skipped)
        self.sent += [h for h in other.sent if h not in seen]
        self.skipped += [h for h in other.skipped if h not in seen and h not in self.sent]
        self.bytes += other.bytes


def _tree_bytes(path) -> int:
    total = 0
    for dirpath, _, filenames in os.walk(path):
        for fn in filenames:
            p = os.path.join(dirpath, fn)
            if not os.path.islink(p):
                total += os.path.getsize(p)
    return total


def copy_package(src: Path, dest_root: Path, hashname) -> bool:
    """Copy one package into ``dest_root`` via staging + rename.  False if it was already there."""
    dest = dest_root / str(hashname)
    if dest.exists():
        return False
    staging = make_staging(dest_root)
    try:
        tree = staging / str(hashname)
        shutil.copytree(src, tree, symlinks=True)
        with package_lock(dest_root, str(hashname)):
            if dest.exists():
                return False
            os.rename(tree, dest)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return True


def export(root, dest_root, mode: str = "full", config=None) -> TransferReport:
    if mode not in ("full", "push"):
        raise ValueError(f"export mode must be full or push, not {mode!r}")
    roots = _roots_of(config)
    root = root if isinstance(root, HashName) else parse_hash_name(root)
    dest_root = Path(dest_root)
    try:
        dest_root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DestUnwritable(f"cannot create {dest_root}: {exc}") from None
    if not os.access(dest_root, os.W_OK):
        raise DestUnwritable(f"{dest_root} is not writable")
    members = compute_closure(root, roots).members if mode == "full" else [root]
    report = TransferReport()
    with package_lock(dest_root, "export"):
        for h in members:
            src = locate_in(h, roots)
            if copy_package(src, dest_root, h):
                report.sent.append(h)
                report.bytes += _tree_bytes(src)
            else:
                report.skipped.append(h)
    return report


# -- notification -----------------------------------------------------------

def parse_group(group_and_port: str):
    host, sep, port = (group_and_port or "").rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
        raise ValueError(f"expected address:port, got {group_and_port!r}")
    return host, int(port)


def notify(hashname, group_and_port: str, ttl: int = 1) -> bool:
    """Send one best-effort ``GARDEN-NEW`` datagram; returns False (with a warning) on failure."""
    try:
        host, port = parse_group(group_and_port)
    except ValueError as exc:
        log.warning("notification not sent: %s", exc)
        return False
    payload = f"{NOTIFY_PREFIX} {hashname}\n".encode()
    try:
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_UDP) as sock:
            sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, ttl)
            sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)
            sock.sendto(payload, (host, port))
    except OSError as exc:
        log.warning("notification to %s failed: %s", group_and_port, exc)
        return False
    return True
