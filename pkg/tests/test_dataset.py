import numpy as np
import pytest

from dpdglm.dataset import load_csv
from dpdglm.errors import InputError


def write(tmp_path, text):
    path = tmp_path / "data.csv"
    path.write_text(text)
    return path


def test_load_defaults(poisson_csv):
    dataset = load_csv(poisson_csv)
    assert dataset.y_column == "y"
    assert dataset.x_columns == ["one", "x"]
    np.testing.assert_array_equal(dataset.sample.y, [0, 1, 1, 3, 4])
    assert dataset.sample.X.shape == (5, 2)


def test_explicit_columns_and_intercept(tmp_path):
    path = write(tmp_path, "count,a,b\n1,0.5,9\n2,0.1,9\n0,-1.0,9\n")
    dataset = load_csv(path, y_column="count", x_columns=["a"], intercept=True)
    np.testing.assert_array_equal(dataset.sample.X, [[1.0, 0.5], [1.0, 0.1], [1.0, -1.0]])
    assert dataset.design_names == ["(intercept)", "a"]


def test_first_column_is_the_default_response(tmp_path):
    dataset = load_csv(write(tmp_path, "count,a\n1,0.5\n2,0.1\n"))
    assert dataset.y_column == "count"


def test_blank_lines_are_skipped(tmp_path):
    dataset = load_csv(write(tmp_path, "y,x\n1,0.5\n\n2,0.1\n"))
    assert dataset.sample.n == 2


@pytest.mark.parametrize(
    "text,line,fragment",
    [
        ("y,x\n1,0.5\n,0.2\n", 3, "missing value"),
        ("y,x\n1,0.5\n2,abc\n", 3, "not a number"),
        ("y,x\n1,0.5\n2,0.1\n3\n", 4, "expected 2 fields"),
        ("y,x\n1,nan\n", 2, "non-finite"),
    ],
)
def test_malformed_rows_report_line_numbers(tmp_path, text, line, fragment):
    with pytest.raises(InputError) as info:
        load_csv(write(tmp_path, text))
    assert info.value.line == line
    assert f"line {line}" in str(info.value)
    assert fragment in str(info.value)


def test_response_outside_support(tmp_path, poisson):
    with pytest.raises(InputError) as info:
        load_csv(write(tmp_path, "y,x\n1,0.5\n2.5,0.1\n"), model=poisson)
    assert info.value.line == 3


def test_header_problems(tmp_path):
    with pytest.raises(InputError, match="not in header"):
        load_csv(write(tmp_path, "y,x\n1,2\n"), x_columns=["z"])
    with pytest.raises(InputError, match="duplicate"):
        load_csv(write(tmp_path, "y,y\n1,2\n"))
    with pytest.raises(InputError, match="covariate"):
        load_csv(write(tmp_path, "y\n1\n"))
    with pytest.raises(InputError, match="empty"):
        load_csv(write(tmp_path, ""))
    with pytest.raises(InputError, match="no data rows"):
        load_csv(write(tmp_path, "y,x\n"))
    with pytest.raises(InputError, match="cannot open"):
        load_csv(tmp_path / "absent.csv")
