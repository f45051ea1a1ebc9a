"""The ``garden-install`` pipeline."""

from __future__ import annotations

import logging
import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

from gardenctl import closure
from gardenctl.envsynth import synth_build_env
from gardenctl.errors import (
    DirtyWorktree,
    HelperFailed,
    InvalidRequest,
    IsolationViolation,
    NotARepository,
    OutUnpopulated,
    UnknownRevspec,
)
from gardenctl.hashname import HashName
from gardenctl.isolation import TreeReport, check_tree, scan_refs
from gardenctl.recipe import find_treetop, load_recipe, resolve_deps
from gardenctl.store import (
    ENV_DIR,
    GardenConfig,
    PackageMeta,
    install_atomic,
    list_packages,
    make_staging,
    now,
    package_lock,
    read_meta,
    write_references,
)

log = logging.getLogger(__name__)


@dataclass
class BuildRequest:
    source: Path
    revspec: str | None = None
    mode: str = "public"
    export_after: str = "none"  # none | full | push

    def __post_init__(self):
        self.source = Path(self.source)
        if self.mode not in ("personal", "public"):
            raise InvalidRequest(f"mode must be personal or public, not {self.mode!r}")
        if self.export_after not in ("none", "full", "push"):
            raise InvalidRequest(f"bad export mode {self.export_after!r}")
        if self.mode == "public" and not self.revspec:
            raise InvalidRequest("public installs need a revspec such as git:HEAD")
        if self.export_after != "none" and self.mode != "public":
            raise InvalidRequest("only public installs can be exported")


@dataclass
class BuildResult:
    hashname: HashName
    store_path: Path
    log: str
    clean_report: TreeReport | None
    meta: PackageMeta
    reused: bool = False
    export_report: object = None


def _git(args, cwd, check=True):
    return subprocess.run(
        ["git", *args], cwd=cwd, capture_output=True, text=True, check=check
    )


def verify_clean_worktree(source) -> None:
    source = Path(source)
    if not source.is_dir():
        raise NotARepository(f"{source} does not exist")
    probe = _git(["rev-parse", "--is-inside-work-tree"], source, check=False)
    if probe.returncode != 0 or probe.stdout.strip() != "true":
        raise NotARepository(f"{source} is not a git working tree")
    status = _git(["status", "--porcelain", "--untracked-files=all", "--", "."], source)
    dirty = [line[3:] for line in status.stdout.splitlines() if line.strip()]
    if dirty:
        raise DirtyWorktree(dirty)


def _revision(revspec: str) -> str:
    return revspec[4:] if revspec.startswith("git:") else revspec


def checkout_clean(source, revspec: str):
    """Clone ``source`` into a temp dir at ``revspec``; returns (dir, 40-hex revision)."""
    source = Path(source)
    rev = _revision(revspec)
    resolved = _git(["rev-parse", "--verify", "--quiet", f"{rev}^{{commit}}"], source, check=False)
    if resolved.returncode != 0 or not rev:
        raise UnknownRevspec(f"cannot resolve {revspec!r} in {source}")
    sha = resolved.stdout.strip()
    tmp = Path(tempfile.mkdtemp(prefix="garden-src-"))
    try:
        top = _git(["rev-parse", "--show-toplevel"], source).stdout.strip()
        _git(["clone", "--quiet", "--local", "--no-checkout", top, str(tmp)], source)
        _git(["-c", "advice.detachedHead=false", "checkout", "--quiet", sha], tmp)
    except subprocess.CalledProcessError as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        raise UnknownRevspec(f"checkout of {revspec!r} failed: {exc.stderr.strip()}") from None
    subdir = os.path.relpath(source.resolve(), Path(top).resolve())
    return (tmp if subdir == "." else tmp / subdir), sha


def run_helper(env, workdir, out_path, install_command=None):
    """Run the recipe's install command with exactly ``env``; returns (status, log)."""
    variables = env.render() if hasattr(env, "render") else dict(env)
    command = install_command or variables["install_command"]
    proc = subprocess.run(
        command,
        shell=True,
        cwd=workdir,
        env=variables,
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        stdin=subprocess.DEVNULL,
    )
    output = proc.stdout.decode("utf-8", "replace")
    if proc.returncode != 0:
        raise HelperFailed(proc.returncode, output)
    out_path = Path(out_path)
    if not out_path.is_dir() or not any(out_path.iterdir()):
        raise OutUnpopulated(f"helper succeeded but {out_path} is missing or empty\n{output}")
    return proc.returncode, output


def _rewrite_staging_paths(out_path: Path, final_path: Path):
    """Point composition files written with ``$out`` at the final store path."""
    env_dir = out_path / ENV_DIR
    if not env_dir.is_dir():
        return
    old, new = str(out_path), str(final_path)
    for dirpath, _, filenames in os.walk(env_dir):
        for fn in filenames:
            p = Path(dirpath) / fn
            if p.is_symlink():
                continue
            try:
                text = p.read_text()
            except UnicodeDecodeError:
                continue
            if old in text:
                p.write_text(text.replace(old, new))


def _source_url(source: Path):
    res = _git(["config", "--get", "remote.origin.url"], source, check=False)
    url = res.stdout.strip()
    return url or str(source.resolve())


def garden_install(req: BuildRequest, config: GardenConfig) -> BuildResult:
    public = req.mode == "public"
    workdir = req.source
    revision = None
    cleanup = None
    if public:
        verify_clean_worktree(req.source)
        workdir, revision = checkout_clean(req.source, req.revspec)
        cleanup = workdir
    try:
        return _build(req, config, Path(workdir), revision)
    finally:
        if cleanup is not None:
            shutil.rmtree(cleanup, ignore_errors=True)


def _build(req, config, workdir, revision):
    public = req.mode == "public"
    target_root = config.public_root if public else config.personal_root
    storepath = config.public_storepath if public else config.storepath

    recipe = load_recipe(workdir)
    treetop = find_treetop(recipe, config.treetop_dir)
    rr = resolve_deps(recipe, treetop, storepath, system=config.system)
    hashname = rr.self_hashname
    final = target_root / str(hashname)
    target_root.mkdir(parents=True, exist_ok=True)

    with package_lock(target_root, str(hashname)):
        if final.is_dir():
            log.info("%s already installed at %s", hashname, final)
            result = BuildResult(hashname, final, "", None, read_meta(final), reused=True)
        else:
            result = _run_build(req, config, workdir, revision, rr, target_root)
    if public and req.export_after != "none":
        result.export_report = publish(hashname, config, req.export_after)
    return result


def _run_build(req, config, workdir, revision, rr, target_root):
    hashname = rr.self_hashname
    staging = make_staging(target_root)
    tmp = Path(tempfile.mkdtemp(prefix=f"garden-tmp-{hashname.digest}-"))
    try:
        out = staging / str(hashname)
        env = synth_build_env(rr, out, "clean", workdir=workdir, tmp=tmp)
        _, output = run_helper(env, workdir, out)

        final = target_root / str(hashname)
        _rewrite_staging_paths(out, final)
        refs = sorted({h for h, _ in rr.resolved_deps.values()}, key=str)
        write_references(out, refs)

        roots = list(rr.storepath) + [target_root]
        if config.canonical_root is not None:
            roots.append(config.canonical_root)
        report = check_tree(out, list(dict.fromkeys(roots)))
        if report.overall != "clean":
            raise IsolationViolation(report)

        known = {h.digest for root in config.storepath for h, _ in list_packages(root)}
        known.discard(hashname.digest)
        stray = scan_refs(out, known) - {h.digest for h in refs}
        for digest in sorted(stray):
            log.warning("%s mentions %s, which is not a declared dependency", hashname, digest)

        meta = PackageMeta(
            hashname=hashname,
            born_on=now(),
            mode=req.mode,
            git_revision=revision,
            source_url=_source_url(req.source) if req.mode == "public" else None,
        )
        path = install_atomic(out, hashname, target_root, meta, locked=True)
        return BuildResult(hashname, path, output, report, meta)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
        shutil.rmtree(tmp, ignore_errors=True)


def publish(hashname, config: GardenConfig, mode: str = "full"):
    """Send a public package (or its whole closure) to ``$GARDEN_CENTRAL_DEST`` and announce it."""
    from gardenctl.errors import CentralUnconfigured

    if config.central_dest is None:
        raise CentralUnconfigured("GARDEN_CENTRAL_DEST is not set")
    report = closure.export(hashname, config.central_dest, mode, config.public_storepath)
    if config.notify_group:
        closure.notify(hashname, config.notify_group)
    return report
