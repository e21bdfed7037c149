import numpy as np
import pytest

from conftest import make_exp
from membrane_lab import __version__
from membrane_lab.membrane_sim import run_prelimit
from membrane_lab.sim.io import read_bundle, write_bundle, write_bundle_csv


@pytest.fixture(scope="module")
def batch():
    exp = make_exp(beta=1.0, gamma=1.0, eps=0.5, lam=0.5, n_paths=12, seed=4)
    return run_prelimit(exp).batch


def test_binary_round_trip(tmp_path, batch):
    p = tmp_path / "b.bin"
    write_bundle(p, batch, "abc123")
    back, header = read_bundle(p)
    assert header["config_hash"] == "abc123" and header["version"] == __version__
    assert header["seed"] == 4
    for k, v in batch.arrays().items():
        assert np.array_equal(v, back.arrays()[k]), k
    assert back.meta == batch.meta


def test_bad_magic(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOTABUNDLE")
    with pytest.raises(ValueError):
        read_bundle(p)


def test_csv_header_and_rows(tmp_path, batch):
    p = tmp_path / "p.csv"
    n = write_bundle_csv(p, batch, "abc123", max_paths=3, command="simulate")
    lines = p.read_text().splitlines()
    assert n == 3
    assert lines[0] == f"# membrane-lab {__version__}"
    assert lines[1] == "# config_hash abc123"
    assert "# paths_written 3 of 12" in lines
    body = [l for l in lines if not l.startswith("#")]
    assert body[0].split(",")[:3] == ["path", "t", "x"]
    assert len(body) == 1 + 3 * batch.times.size
    first = body[1].split(",")
    assert float(first[1]) == 0.0 and float(first[2]) == batch.x[0, 0]
    # full precision survives the text round trip
    last = body[-1].split(",")
    assert float(last[2]) == batch.x[2, -1]
