from dscg_localizer.io import Filesystem, is_remote, join_uri, parent_uri


def test_join_uri_local():
    assert join_uri("/tmp/rooms", "scenes", "scene_0001.json") == "/tmp/rooms/scenes/scene_0001.json"


def test_join_uri_remote():
    assert join_uri("s3://bucket/datasets", "rooms", "manifest.json") == "s3://bucket/datasets/rooms/manifest.json"
    assert parent_uri("s3://bucket/datasets/model.ckpt") == "s3://bucket/datasets"
    assert is_remote("memory://x") and not is_remote("/tmp/x")


def test_filesystem_open_local(tmp_path):
    fs = Filesystem()
    file_path = tmp_path / "example.txt"
    with fs.open(str(file_path), "wt") as handle:
        handle.write("hello")
    assert file_path.read_text() == "hello"


def test_write_creates_parents(tmp_path):
    fs = Filesystem()
    target = tmp_path / "nested" / "deeper" / "report.json"
    fs.write_json(str(target), {"b": 1, "a": [1.5]})
    assert target.read_text() == '{\n  "a": [\n    1.5\n  ],\n  "b": 1\n}\n'
    assert fs.read_json(str(target)) == {"a": [1.5], "b": 1}


def test_memory_backend_round_trip():
    fs = Filesystem()
    path = "memory://dscg-tests/ckpt/model.bin"
    fs.write_bytes(path, b"\x00\x01payload")
    assert fs.exists(path)
    assert fs.read_bytes(path) == b"\x00\x01payload"


def test_checksums(tmp_path):
    fs = Filesystem()
    path = tmp_path / "blob.bin"
    path.write_bytes(b"abc")
    info = fs.compute_checksums(str(path))
    assert info.size == 3
    assert info.checksum_sha256 == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
