import struct
import zlib

import pytest
import torch

from restoreq.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from restoreq.errors import CheckpointError, CheckpointVersionError
from restoreq.model import build_discriminator, build_generator, parameter_arrays


@pytest.mark.parametrize("build", [build_generator, build_discriminator])
def test_roundtrip_is_bit_exact(tmp_path, build):
    net = build(seed=5)
    if net.role == "discriminator":
        # populate batch-norm running statistics
        net.train()
        with torch.no_grad():
            net(torch.rand(8, 3, 32, 32, generator=torch.Generator().manual_seed(0)))
        net.eval()
    save_checkpoint(net, tmp_path / "n.ckpt", {"trained_stages": [1]})
    loaded = load_checkpoint(tmp_path / "n.ckpt")
    a, b = parameter_arrays(net), parameter_arrays(loaded)
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].dtype == b[k].dtype
        assert a[k].tobytes() == b[k].tobytes(), k
    assert loaded.spec == net.spec
    assert loaded.meta == {"trained_stages": [1]}


def test_save_is_byte_stable(tmp_path):
    net = build_generator(seed=1)
    save_checkpoint(net, tmp_path / "a.ckpt")
    save_checkpoint(load_checkpoint(tmp_path / "a.ckpt"), tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def _rewrite_version(path, version):
    data = bytearray(path.read_bytes()[:-4])
    struct.pack_into("<I", data, 4, version)
    path.write_bytes(bytes(data) + struct.pack("<I", zlib.crc32(bytes(data))))


def test_version_mismatch(tmp_path):
    p = tmp_path / "n.ckpt"
    save_checkpoint(build_discriminator(), p)
    _rewrite_version(p, 2)
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(p)


@pytest.mark.parametrize("cut", [1, 100, 5000])
def test_truncated_file(tmp_path, cut):
    p = tmp_path / "n.ckpt"
    save_checkpoint(build_discriminator(), p)
    p.write_bytes(p.read_bytes()[:-cut])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_flipped_byte(tmp_path):
    p = tmp_path / "n.ckpt"
    save_checkpoint(build_generator(), p)
    data = bytearray(p.read_bytes())
    data[len(data) // 2] ^= 0xFF
    p.write_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        read_checkpoint(p)


def test_not_a_checkpoint(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"hello world, definitely not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.ckpt")
