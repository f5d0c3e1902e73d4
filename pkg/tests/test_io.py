import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from majdesign import io
from majdesign.ct import Geometry, build_projector
from majdesign.majorizers import MajorizerSpec
from majdesign.operators import DFTOperator, IdentityOperator, StackedOperator, materialize


def test_matrix_round_trip_dense(tmp_path, rng):
    A = rng.standard_normal((4, 3))
    io.write_matrix(tmp_path / "a.mtx", A)
    np.testing.assert_array_equal(io.read_matrix(tmp_path / "a.mtx"), A)


def test_matrix_round_trip_complex_hermitian(tmp_path, rng):
    B = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    H = B @ B.conj().T
    io.write_matrix(tmp_path / "h.mtx", H, symmetric=True)
    np.testing.assert_allclose(io.read_matrix(tmp_path / "h.mtx"), H, rtol=1e-15)


def test_matrix_round_trip_sparse(tmp_path):
    m = sp.random(6, 5, density=0.3, random_state=1, format="csr")
    io.write_matrix(tmp_path / "s.mtx", m)
    back = io.read_matrix(tmp_path / "s.mtx")
    assert sp.issparse(back)
    np.testing.assert_array_equal(back.toarray(), m.toarray())


@pytest.mark.parametrize("suffix", [".csv", ".mtx"])
def test_vector_round_trip(tmp_path, rng, suffix):
    v = rng.standard_normal(7) + 1j * rng.standard_normal(7)
    io.write_vector(tmp_path / f"v{suffix}", v)
    np.testing.assert_array_equal(io.read_vector(tmp_path / f"v{suffix}"), v)


def test_vector_csv_layout(tmp_path):
    io.write_vector(tmp_path / "v.csv", np.array([1.0, 2.5]))
    assert (tmp_path / "v.csv").read_text() == "re,im\n1.0,0.0\n2.5,0.0\n"
    out = io.read_vector(tmp_path / "v.csv")
    assert not np.iscomplexobj(out)


def test_vector_csv_without_header(tmp_path):
    (tmp_path / "v.csv").write_text("1,0\n2,1\n")
    np.testing.assert_array_equal(io.read_vector(tmp_path / "v.csv"), [1, 2 + 1j])


def test_csv_full_precision(tmp_path):
    x = 0.1 + 0.2
    io.write_csv(tmp_path / "t.csv", ("iter", "value"), [(1, x), (2, np.float64(1 / 3))])
    head, rows = io.read_csv(tmp_path / "t.csv")
    assert head == ["iter", "value"]
    assert float(rows[0][1]) == x and rows[1][0] == "2"
    assert float(rows[1][1]) == 1 / 3


def test_image_round_trip(tmp_path, rng):
    img = rng.standard_normal((3, 5))
    io.write_image(tmp_path / "i.csv", img, img.shape)
    assert (tmp_path / "i.csv").read_text().splitlines()[0] == "# shape 3 5"
    np.testing.assert_array_equal(io.read_image(tmp_path / "i.csv"), img)


def test_config_round_trip(tmp_path):
    io.write_config(tmp_path / "c.cfg", {"a": 1, "b": "x y"})
    (tmp_path / "c.cfg").write_text((tmp_path / "c.cfg").read_text() + "# comment\n\nc = 2 # tail\n")
    assert io.read_config(tmp_path / "c.cfg") == {"a": "1", "b": "x y", "c": "2"}


def test_config_malformed(tmp_path):
    (tmp_path / "c.cfg").write_text("just words\n")
    with pytest.raises(ValueError):
        io.read_config(tmp_path / "c.cfg")


def test_coerce():
    assert io.coerce("3", 1) == 3
    assert io.coerce("0.5", 1.0) == 0.5
    assert io.coerce("yes", False) is True
    assert io.coerce("a, b", ("x",)) == ("a", "b")
    assert io.coerce("s", "t") == "s"


def test_parse_K_descriptors(tmp_path):
    assert isinstance(io.parse_K("identity", 4), IdentityOperator)
    assert isinstance(io.parse_K("dft", 4), DFTOperator)
    assert io.parse_K("dft:2x3", 6).grid == (2, 3)
    S = io.parse_K("stacked:dft+identity", 5)
    assert isinstance(S, StackedOperator) and S.rows == 10
    with pytest.raises(ValueError):
        io.parse_K("dft:2x2", 5)
    with pytest.raises(ValueError):
        io.parse_K("wavelet", 4)


def test_parse_K_projector(tmp_path):
    io.write_config(tmp_path / "geom.cfg", {"n": 6, "n_views": 4, "n_channels": 8, "pixel_size": 1.0})
    K = io.parse_K("stacked:projector@geom.cfg+identity", 36, tmp_path)
    ref = build_projector(Geometry(6, 4, 8)).matrix.toarray()
    np.testing.assert_array_equal(materialize(K.blocks[0]), ref)
    with pytest.raises(ValueError):
        io.parse_K("projector@geom.cfg", 25, tmp_path)


def test_majorizer_round_trip(tmp_path, rng):
    K = StackedOperator([DFTOperator(6), IdentityOperator(6)])
    M = MajorizerSpec(K, rng.random(12), alpha=1.75, certified=True, method="power-iteration")
    path = io.write_majorizer(tmp_path / "m.txt", M, extra={"seed": 3})
    cfg = io.read_config(path)
    assert cfg["K"] == "stacked:dft+identity" and cfg["d_file"] == "m.d.mtx" and cfg["seed"] == "3"
    assert (tmp_path / "m.d.mtx").exists()
    back = io.read_majorizer(path)
    assert back.alpha == M.alpha and back.certified and back.method == "power-iteration"
    np.testing.assert_array_equal(back.d, M.d)
    np.testing.assert_allclose(back.dense(), M.dense(), atol=1e-14)


def test_majorizer_round_trip_realified(tmp_path, rng):
    M = MajorizerSpec(DFTOperator(8), rng.random(8) + 0.1).realified()
    back = io.read_majorizer(io.write_majorizer(tmp_path / "m.txt", M))
    assert back.real_part
    np.testing.assert_allclose(back.dense(), M.dense(), atol=1e-14)


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
def test_vector_csv_exact_property(tmp_path_factory, vals):
    path = tmp_path_factory.mktemp("v") / "v.csv"
    io.write_vector(path, np.array(vals))
    np.testing.assert_array_equal(io.read_vector(path), np.array(vals))
