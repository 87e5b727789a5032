import numpy as np
import pytest

from conftest import series
from tsreasoner.errors import TypeMismatch
from tsreasoner.registry import UNIMPLEMENTED, coerce, default_registry
from tsreasoner.retrieval import RetrievalClient


@pytest.fixture(scope="module")
def reg():
    return default_registry()


def test_alias_and_canonical_resolve_to_same_op(reg):
    assert reg.lookup("convertBinaryOP").canonical == "convert_binary"
    assert reg.lookup("AnomalDetOP") is reg.lookup("anomaly_score")
    assert reg.lookup("UniPreOP") is reg.lookup("forecast_uni")


def test_alias_table_is_total(reg):
    table = reg.alias_table()
    assert len(table) == len(reg)
    assert all(reg.lookup(c) is reg.lookup(d) for d, c in table.items())


def test_unimplemented_ops_point_to_substitutes(reg):
    for name, (_, sub) in UNIMPLEMENTED.items():
        op = reg.lookup(name)
        assert not op.implemented
        assert reg.lookup(sub).implemented


def test_retrieval_ops_only_with_client(tmp_path):
    assert default_registry().lookup("getEnvDataOP") is None
    reg = default_registry(RetrievalClient(cache_dir=tmp_path))
    assert reg.lookup("getEnvDataOP").implemented


def test_call_binds_and_coerces(reg):
    out = reg.call("ApplyOP", {"data": np.array([1.0, 4.0]), "fn": "scale", "c": 2})
    assert list(out.values) == [2.0, 8.0]


def test_call_rejects_extra_and_missing(reg):
    with pytest.raises(TypeMismatch):
        reg.call("ApplyOP", {"data": series([1.0]), "fn": "abs", "colour": 1})
    with pytest.raises(TypeMismatch):
        reg.call("ApplyOP", {"fn": "abs"})


def test_call_unimplemented(reg):
    with pytest.raises(TypeMismatch):
        reg.call("getChptOP", {})


@pytest.mark.parametrize("value,kind", [(2.5, "int"), (True, "number"), ("x", "series"), (3, "text")])
def test_coerce_rejects(value, kind):
    with pytest.raises(TypeMismatch):
        coerce(value, kind, "arg")


def test_coerce_accepts():
    assert coerce(3.0, "int", "n") == 3
    assert coerce(series([1.0]), "frame", "f").width == 1
    np.testing.assert_array_equal(coerce([[0, 1], [1, 0]], "matrix", "m"), [[0, 1], [1, 0]])


def test_signature_rendering(reg):
    assert reg.lookup("detectSpikesOP").signature() == "detectSpikesOP(data, z=3.0)"
