"""Builders for throwaway gardens, packages and source repositories used by the tests."""

import hashlib
import os
import subprocess
import textwrap
from pathlib import Path

from gardenctl.hashname import HashName, base32_encode
from gardenctl.store import GardenConfig, PackageMeta, write_meta, write_references

GIT_ENV = {
    "GIT_AUTHOR_NAME": "Garden Test",
    "GIT_AUTHOR_EMAIL": "test@example.invalid",
    "GIT_COMMITTER_NAME": "Garden Test",
    "GIT_COMMITTER_EMAIL": "test@example.invalid",
    "GIT_CONFIG_NOSYSTEM": "1",
}


def fake_hash(label, salt="") -> HashName:
    digest = base32_encode(hashlib.sha256(f"{salt}/{label}".encode()).digest()[:20])
    return HashName(digest, label)


def padded(prefix, label) -> HashName:
    """A valid hash-name whose digest starts with ``prefix`` (for abbreviated sample digests)."""
    return HashName((prefix + "0" * 32)[:32], label)


def make_package(root, h, *, files=None, env=None, deps=None, refs=(), mode="public",
                 born_on=1_700_000_000, revision=None, symlinks=None):
    """Materialize a package directory for ``h`` under ``root`` and return its path."""
    root = Path(root)
    path = root / str(h)
    path.mkdir(parents=True)
    for rel, content in (files or {}).items():
        f = path / rel
        f.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, bytes):
            f.write_bytes(content)
        else:
            f.write_text(content)
    for rel, target in (symlinks or {}).items():
        f = path / rel
        f.parent.mkdir(parents=True, exist_ok=True)
        os.symlink(target, f)
    env_dir = path / "garden-env"
    env_dir.mkdir(exist_ok=True)
    for var, content in (env or {}).items():
        (env_dir / var).parent.mkdir(parents=True, exist_ok=True)
        (env_dir / var).write_text(content)
    for var, names in (deps or {}).items():
        d = env_dir / "DEPS"
        d.mkdir(exist_ok=True)
        (d / var).write_text("".join(f"{n}\n" for n in names))
    write_references(path, refs)
    write_meta(path, PackageMeta(h, born_on, mode, revision))
    return path


def make_config(tmp_path, **kw) -> GardenConfig:
    public = Path(tmp_path) / "public"
    personal = Path(tmp_path) / "personal"
    public.mkdir(exist_ok=True)
    personal.mkdir(exist_ok=True)
    return GardenConfig(public_root=public, personal_root=personal, **kw)


HOST_TOOLS = ("mkdir", "chmod", "cat", "cp", "ln", "rm", "env", "printf", "sh")


def seed_toolchain(config):
    """Install bootstrap packages: a shell and a minimal stdenv of host tool links."""
    sh = fake_hash("sh-1.0", "seed")
    make_package(config.public_root, sh, symlinks={"bin/sh": "/bin/sh"})
    stdenv = fake_hash("stdenv-linux", "seed")
    links = {}
    for tool in HOST_TOOLS:
        for d in ("/bin", "/usr/bin"):
            if os.path.exists(f"{d}/{tool}"):
                links[f"bin/{tool}"] = f"{d}/{tool}"
                break
    make_package(config.public_root, stdenv, symlinks=links,
                 env={"PATH": f"{stdenv}/bin\n"})
    return {"sh": sh, "stdenv": stdenv}


TOY_HELPER = """\
#!/bin/sh
# garden-helper for the toy package
set -e
case "$1" in
  --install)
    mkdir -p "$out/bin" "$out/garden-env"
    printf '#!%s/bin/sh\\necho "hello from toy {version}"\\n' "$sh" > "$out/bin/hello"
    chmod +x "$out/bin/hello"
{extra}    hashname=${{out##*/}}
    echo "$hashname/bin" > "$out/garden-env/PATH"
    ;;
esac
"""


def toy_recipe(version, seeds, extra_deps=None, build=None, name="toy"):
    deps = {"sh": seeds["sh"], "stdenv": seeds["stdenv"], **(extra_deps or {})}
    lines = [
        f'name = "{name}"',
        f'version = "{version}"',
        'helper = "garden-helper"',
        'install_command = "./garden-helper --install"',
        "",
        "[deps]",
    ]
    lines += [f'{sym} = "{h}"' for sym, h in deps.items()]
    lines += ["", "[build]", "PATH = [stdenv]"]
    for var, syms in (build or {}).items():
        lines.append(f"{var} = [{', '.join(syms)}]")
    return "\n".join(lines) + "\n"


def write_toy_source(src, version, seeds, *, extra_helper="", extra_deps=None, build=None,
                     name="toy"):
    src = Path(src)
    src.mkdir(parents=True, exist_ok=True)
    (src / "garden.recipe").write_text(toy_recipe(version, seeds, extra_deps, build, name))
    helper = src / "garden-helper"
    helper.write_text(TOY_HELPER.format(version=version, extra=textwrap.indent(extra_helper, "    ")))
    helper.chmod(0o755)
    return src


def git(src, *args):
    env = {**os.environ, **GIT_ENV}
    return subprocess.run(["git", *args], cwd=src, env=env, check=True,
                          capture_output=True, text=True).stdout.strip()


def git_commit_all(src, message="commit"):
    src = Path(src)
    if not (src / ".git").exists():
        git(src, "init", "-q")
    git(src, "add", "-A")
    git(src, "commit", "-q", "-m", message)
    return git(src, "rev-parse", "HEAD")


def tree_digest(path) -> str:
    """Recursive content hash of a directory (names, modes, file bytes, link targets)."""
    h = hashlib.sha256()
    path = Path(path)
    for dirpath, dirnames, filenames in os.walk(path):
        dirnames.sort()
        for fn in sorted(filenames + [d for d in dirnames if os.path.islink(os.path.join(dirpath, d))]):
            p = Path(dirpath) / fn
            rel = p.relative_to(path)
            if p.is_symlink():
                h.update(b"L" + str(rel).encode() + b"\0" + os.readlink(p).encode() + b"\0")
            else:
                st = p.stat()
                h.update(b"F" + str(rel).encode() + b"\0" + oct(st.st_mode).encode() + b"\0")
                h.update(p.read_bytes())
    return h.hexdigest()
