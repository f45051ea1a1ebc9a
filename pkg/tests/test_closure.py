import logging
import os
import socket

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gardenctl.closure import (
    TransferReport,
    compute_closure,
    detect_diamond,
    export,
    notify,
    parse_group,
    strip_version_stem,
)
from gardenctl.errors import DestUnwritable, PackageNotFound

from gardenkit import fake_hash, make_config, make_package, tree_digest


def reachable(adj, start):
    """Oracle: Warshall transitive closure over an adjacency matrix."""
    n = len(adj)
    m = [row[:] for row in adj]
    for k in range(n):
        for i in range(n):
            if m[i][k]:
                for j in range(n):
                    if m[k][j]:
                        m[i][j] = True
    return {start} | {j for j in range(n) if m[start][j]}


def materialize_dag(root, n, edges, salt=""):
    hs = [fake_hash(f"p{i}-1.0", salt) for i in range(n)]
    for i in range(n):
        make_package(root, hs[i], refs=[hs[j] for j in sorted(edges.get(i, ()))])
    return hs


@st.composite
def dags(draw):
    n = draw(st.integers(1, 12))
    edges = {}
    for i in range(n):
        targets = draw(st.sets(st.integers(i + 1, n - 1), max_size=4)) if i < n - 1 else set()
        edges[i] = targets
    return n, edges


@settings(max_examples=40, deadline=None)
@given(dags())
def test_closure_matches_oracle(tmp_path_factory, dag):
    n, edges = dag
    root = tmp_path_factory.mktemp("g")
    hs = materialize_dag(root, n, edges)
    adj = [[j in edges.get(i, ()) for j in range(n)] for i in range(n)]
    g = compute_closure(hs[0], [root])
    assert set(g.members) == {hs[i] for i in reachable(adj, 0)}
    assert g.members == compute_closure(hs[0], [root]).members
    assert g.members[0] == hs[0]


def test_closure_handles_cycles(tmp_path):
    a, b = fake_hash("a-1"), fake_hash("b-1")
    make_package(tmp_path, a, refs=[b])
    make_package(tmp_path, b, refs=[a])
    assert set(compute_closure(a, [tmp_path]).members) == {a, b}


def test_closure_broken_reference(tmp_path):
    a, gone = fake_hash("a-1"), fake_hash("gone-1")
    make_package(tmp_path, a, refs=[gone])
    with pytest.raises(PackageNotFound) as exc:
        compute_closure(a, [tmp_path])
    assert str(gone) in str(exc.value) and str(a) in str(exc.value)


def test_closure_spans_roots(tmp_path):
    cfg = make_config(tmp_path)
    a, b = fake_hash("a-1"), fake_hash("b-1")
    make_package(cfg.personal_root, a, refs=[b], mode="personal")
    make_package(cfg.public_root, b)
    assert compute_closure(a, cfg).members == [a, b]


@pytest.mark.parametrize("label,stem", [
    ("libC-1.0", "libC"),
    ("gcc-4.6.1", "gcc"),
    ("stdenv-linux", "stdenv-linux"),
    ("python-2.7.1", "python"),
    ("glibc-2.12.2", "glibc"),
    ("x", "x"),
    ("openssl-1.0.0e", "openssl"),
])
def test_strip_version_stem(label, stem):
    assert strip_version_stem(label) == stem


def diamond_graph(root, shared=False):
    c1 = fake_hash("libC-1.0")
    c2 = c1 if shared else fake_hash("libC-2.0")
    a, b, top = fake_hash("A-1"), fake_hash("B-1"), fake_hash("root-1")
    make_package(root, c1)
    if not shared:
        make_package(root, c2)
    make_package(root, a, refs=[c1])
    make_package(root, b, refs=[c2])
    make_package(root, top, refs=[a, b])
    return top, a, b, c1, c2


def test_diamond_two_libc_versions(tmp_path):
    top, a, b, c1, c2 = diamond_graph(tmp_path)
    conflicts = detect_diamond(compute_closure(top, [tmp_path]))
    assert len(conflicts) == 1
    c = conflicts[0]
    assert c.stem == "libC"
    assert set(c.versions) == {c1, c2}
    chains = {tuple(ch) for ch in c.witness_paths}
    assert chains == {(top, a, c1), (top, b, c2)}
    assert "root-1 -> A-1 -> libC-1.0" in c.render()


def test_diamond_resolved_by_shared_pin(tmp_path):
    top, *_ = diamond_graph(tmp_path, shared=True)
    assert detect_diamond(compute_closure(top, [tmp_path])) == []


def test_same_label_different_digest_is_a_diamond(tmp_path):
    c1, c2 = fake_hash("libC-1.0", "x"), fake_hash("libC-1.0", "y")
    top = fake_hash("root-1")
    make_package(tmp_path, c1)
    make_package(tmp_path, c2)
    make_package(tmp_path, top, refs=[c1, c2])
    assert len(detect_diamond(compute_closure(top, [tmp_path]))) == 1


def test_export_full_and_idempotent(tmp_path):
    src = tmp_path / "src"
    hs = materialize_dag(src, 5, {0: {1, 2}, 1: {3}, 2: {3}})
    dest = tmp_path / "dest"
    rep = export(hs[0], dest, "full", [src])
    assert sorted(map(str, rep.sent)) == sorted(map(str, hs[:4]))
    assert rep.bytes > 0
    for h in hs[:4]:
        assert tree_digest(dest / str(h)) == tree_digest(src / str(h))
    assert not (dest / str(hs[4])).exists()
    again = export(hs[0], dest, "full", [src])
    assert again.sent == [] and len(again.skipped) == 4
    assert not any(p.startswith(".staging") and os.listdir(dest / p) for p in os.listdir(dest))


def test_export_push_sends_root_only(tmp_path):
    src = tmp_path / "src"
    hs = materialize_dag(src, 3, {0: {1, 2}})
    rep = export(hs[0], tmp_path / "dest", "push", [src])
    assert rep.sent == [hs[0]]
    with pytest.raises(ValueError):
        export(hs[0], tmp_path / "dest", "sideways", [src])


def test_export_dest_unwritable(tmp_path):
    src = tmp_path / "src"
    hs = materialize_dag(src, 1, {})
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(DestUnwritable):
        export(hs[0], blocker / "dest", "full", [src])


def test_transfer_report_merge():
    a, b, c = fake_hash("a-1"), fake_hash("b-1"), fake_hash("c-1")
    r = TransferReport([a], [b], 10)
    r.merge(TransferReport([a, c], [b], 5))
    assert r.sent == [a, c] and r.skipped == [b] and r.bytes == 15
    assert r.as_dict()["sent"] == [str(a), str(c)]


def test_parse_group():
    assert parse_group("239.255.71.1:7071") == ("239.255.71.1", 7071)
    for bad in ("239.255.71.1", ":80", "host:0", "host:x", ""):
        with pytest.raises(ValueError):
            parse_group(bad)


def _listener():
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind(("127.0.0.1", 0))
    sock.settimeout(2)
    return sock


def test_notify_unicast_payload():
    h = fake_hash("toy-1.0")
    with _listener() as sock:
        port = sock.getsockname()[1]
        assert notify(h, f"127.0.0.1:{port}")
        data, _ = sock.recvfrom(512)
    assert data == f"GARDEN-NEW 1 {h}\n".encode()


def test_notify_multicast_loopback():
    h = fake_hash("toy-1.0")
    group = "239.255.71.7"
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_UDP)
    try:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind(("", 0))
        port = sock.getsockname()[1]
        mreq = socket.inet_aton(group) + socket.inet_aton("0.0.0.0")
        try:
            sock.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
        except OSError:
            pytest.skip("no multicast-capable interface")
        sock.settimeout(2)
        if not notify(h, f"{group}:{port}"):
            pytest.skip("multicast send not permitted here")
        try:
            data, _ = sock.recvfrom(512)
        except socket.timeout:
            pytest.skip("multicast loopback not delivered in this sandbox")
        assert data == f"GARDEN-NEW 1 {h}\n".encode()
    finally:
        sock.close()


def test_notify_failure_is_a_warning(caplog):
    with caplog.at_level(logging.WARNING):
        assert notify(fake_hash("toy-1.0"), "not-an-address") is False
        assert notify(fake_hash("toy-1.0"), "256.1.1.1:9") is False
    assert len(caplog.records) == 2
