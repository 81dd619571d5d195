"""Tests for the versioned CSV reader and writer."""

import numpy as np
import pytest

from spnpb.csvio import SCHEMAS, read_csv, write_csv


def test_rows_round_trip_through_text(tmp_path):
    path = tmp_path / "proj.csv"
    rows = [
        (0, "alpha=0.2,", 0.1, -0.2, 1e-300, np.pi),
    ]
    # comma inside a string cell must be rejected, not silently written
    with pytest.raises(ValueError):
        write_csv(path, "pb_projection", rows)

    rows = [
        (0, "alpha=0.2", 0.1, -0.2, 1e-300, np.pi),
        (1, "beta=1.0", -0.0, 7.0 / 3.0, 2.5e17, -1.0000000000000002),
    ]
    write_csv(path, "pb_projection", rows)
    name, columns, got = read_csv(path)
    assert name == "pb_projection"
    assert columns == SCHEMAS["pb_projection"][1]
    assert len(got) == 2
    for row_in, row_out in zip(rows, got):
        assert int(row_out[0]) == row_in[0]
        assert row_out[1] == row_in[1]
        for cell, value in zip(row_out[2:], row_in[2:]):
            assert float(cell) == value


def test_written_file_is_byte_deterministic(tmp_path):
    rows = [(t, 0.1 * t, -0.2 * t, t + 5, t % 2 == 0) for t in range(8)]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(a, "adaptation_trajectory", rows)
    write_csv(b, "adaptation_trajectory", rows)
    assert a.read_bytes() == b.read_bytes()


def test_booleans_are_written_as_zero_one(tmp_path):
    path = tmp_path / "traj.csv"
    write_csv(path, "adaptation_trajectory", [(0, 0.0, 0.0, 3, False), (1, 0.0, 0.0, 4, True)])
    _, _, rows = read_csv(path)
    assert [r[4] for r in rows] == ["0", "1"]


def test_write_rejects_wrong_width():
    with pytest.raises(ValueError):
        write_csv("/dev/null", "control_average", [(0, 1.0, 2.0)])


def test_read_validates_schema_name_and_version(tmp_path):
    path = tmp_path / "avg.csv"
    write_csv(path, "control_average", [(0, 0.0, 0.0, 0.5)])
    read_csv(path, schema="control_average")
    with pytest.raises(ValueError):
        read_csv(path, schema="prediction_trace")

    bumped = tmp_path / "bumped.csv"
    lines = path.read_text().splitlines()
    lines[0] = "# schema=control_average version=999"
    bumped.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError):
        read_csv(bumped)


def test_read_rejects_missing_schema_line_and_bad_header(tmp_path):
    bare = tmp_path / "bare.csv"
    bare.write_text("tick,w\n0,1.0\n")
    with pytest.raises(ValueError):
        read_csv(bare)

    mangled = tmp_path / "mangled.csv"
    mangled.write_text("# schema=control_average version=1\ntick,nope\n")
    with pytest.raises(ValueError):
        read_csv(mangled)


def test_read_rejects_truncated_row(tmp_path):
    path = tmp_path / "avg.csv"
    write_csv(path, "control_average", [(0, 0.0, 0.0, 0.5)])
    with open(path, "a") as fh:
        fh.write("1,0.0\n")
    with pytest.raises(ValueError):
        read_csv(path)


def test_floats_survive_with_full_precision(tmp_path):
    path = tmp_path / "avg.csv"
    value = 0.1 + 0.2  # not exactly 0.3
    write_csv(path, "control_average", [(0, value, 1.0 / 3.0, 1e-17)])
    _, _, rows = read_csv(path)
    assert float(rows[0][1]) == value
    assert float(rows[0][2]) == 1.0 / 3.0
    assert float(rows[0][3]) == 1e-17
