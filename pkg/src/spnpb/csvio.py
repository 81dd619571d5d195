"""Versioned CSV output.

Every file starts with a schema comment line, then a header row, then
data rows; floats carry 17 significant digits.  Rows are validated
against the declared column count on write.
"""

from __future__ import annotations

from .dataset import fmt

SCHEMAS = {
    "pb_projection": (1, ["trial_id", "label", "pc1", "pc2", "p_raw_0", "p_raw_1"]),
    "adaptation_trajectory": (1, ["tick", "p_0", "p_1", "buffer_len", "updated"]),
    "control_episode": (
        1,
        [
            "tick",
            "w_ref_orig_trans", "w_ref_orig_rot",
            "w_ref_trans", "w_ref_rot",
            "w_trans", "w_rot",
            "sigma_trans", "sigma_rot",
        ],
    ),
    "control_average": (1, ["tick", "w_ref_orig_trans", "mean_w_trans", "mean_sigma_trans"]),
    "prediction_trace": (
        1,
        ["tick", "w_trans", "w_rot", "u_trans", "u_rot",
         "pred_trans", "pred_rot", "sigma_trans", "sigma_rot"],
    ),
}


def _cell(value):
    if isinstance(value, str):
        if "," in value or "\n" in value:
            raise ValueError(f"cell {value!r} would break the CSV")
        return value
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    if isinstance(value, bool):
        return str(int(value))
    return fmt(value)


def write_csv(path, schema, rows):
    version, columns = SCHEMAS[schema]
    with open(path, "w") as fh:
        fh.write(f"# schema={schema} version={version}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(
                    f"schema {schema} expects {len(columns)} columns, row has {len(row)}")
            fh.write(",".join(_cell(v) for v in row) + "\n")


def read_csv(path, schema=None):
    """Read a schema'd CSV back; returns (schema_name, columns, rows of strings)."""
    with open(path) as fh:
        head = fh.readline().strip()
        if not head.startswith("# schema="):
            raise ValueError(f"{path} is missing its schema line")
        fields = dict(part.split("=", 1) for part in head[2:].split())
        name = fields["schema"]
        if schema is not None and name != schema:
            raise ValueError(f"{path} holds schema {name}, expected {schema}")
        version, columns = SCHEMAS[name]
        if int(fields["version"]) != version:
            raise ValueError(f"{path}: unsupported {name} version {fields['version']}")
        header = fh.readline().strip().split(",")
        if header != columns:
            raise ValueError(f"{path}: header does not match schema {name}")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"{path}: row width does not match schema {name}")
    return name, columns, rows
