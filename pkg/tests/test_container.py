import struct

import numpy as np
import pytest

from fioinv.container import FORMAT_VERSION, MAGIC, load_inverse, save_inverse
from fioinv.dense import complex_gaussian
from fioinv.errors import InvalidInputError
from fioinv.problems import make_ellipse_2d, make_gaussian_1d
from fioinv.solver import build_inverse


@pytest.fixture(scope="module", params=["1d", "2d"])
def saved(request, tmp_path_factory):
    if request.param == "1d":
        inv = build_inverse(make_gaussian_1d(128, sigma2=0.05), eps_peel=1e-6)
    else:
        inv = build_inverse(make_ellipse_2d(16), eps_peel=1e-4, eps_bff=1e-6)
    path = tmp_path_factory.mktemp("c") / "inv.fio"
    nbytes = save_inverse(inv, path)
    return inv, path, nbytes


def test_size_reported(saved):
    _, path, nbytes = saved
    assert path.stat().st_size == nbytes


def test_round_trip_applies_bitwise(saved):
    inv, path, _ = saved
    back = load_inverse(path)
    assert back.h is None
    v = complex_gaussian(np.random.default_rng(0), inv.N)
    assert np.array_equal(back.apply_G(v), inv.apply_G(v))
    assert np.array_equal(back.apply_K(v), inv.apply_K(v))
    assert np.array_equal(back.apply_KH(v), inv.apply_KH(v))
    assert back.config == inv.config
    assert back.problem.label == inv.problem.label
    assert back.problem.params.get("sigma2") == inv.problem.params.get("sigma2")


def _rewrite(path, dst, **kw):
    raw = bytearray(path.read_bytes())
    magic, version, hlen = struct.unpack_from("<8sIQ", raw)
    struct.pack_into("<8sIQ", raw, 0, kw.get("magic", magic), kw.get("version", version), hlen)
    dst.write_bytes(bytes(raw[:kw.get("cut", len(raw))]))
    return dst


def test_rejects_bad_magic(saved, tmp_path):
    _, path, _ = saved
    with pytest.raises(InvalidInputError, match="not a factorization"):
        load_inverse(_rewrite(path, tmp_path / "x", magic=b"NOTMAGIC"))


def test_rejects_other_version(saved, tmp_path):
    _, path, _ = saved
    with pytest.raises(InvalidInputError, match="version"):
        load_inverse(_rewrite(path, tmp_path / "x", version=FORMAT_VERSION + 1))


@pytest.mark.parametrize("cut", [4, -8])
def test_rejects_truncation(saved, tmp_path, cut):
    _, path, nbytes = saved
    with pytest.raises(InvalidInputError):
        load_inverse(_rewrite(path, tmp_path / "x", cut=cut % nbytes))


def test_magic_prefix(saved):
    _, path, _ = saved
    assert path.read_bytes()[:8] == MAGIC
