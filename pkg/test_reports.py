"""
Tests des documents de sortie, des schémas publiés et des écrivains CSV / PGM
"""

import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

import cli
import reports
from certify import BasinCell, BasinGrid, CellCode, GridSpec
from flow_engine import Sample

SCHEMA_DIR = Path(__file__).parent / "docs" / "schemas"


def _basin(codes) -> BasinGrid:
    """Grille 2x2 ; codes indexés [j][i]"""
    grid = GridSpec(0.0, 2.0, 0.0, 2.0, 2)
    cells = [BasinCell(i, j, grid.center(i, j), codes[j][i]) for j in range(2) for i in range(2)]
    return BasinGrid(grid, (0.5, 0.5), cells)


OUTPUTS = [
    ("invert", ["invert", "--map", "square2d", "--target", "4,0"]),
    ("invert", ["invert", "--map", "exp1d", "--target", "0"]),
    ("trace", ["trace", "--map", "square2d", "--start", "0,1", "--format", "json"]),
    ("certify", ["certify", "--map", "shear10", "--r0", "1.2", "--samples", "500", "--trapped", "8"]),
    ("certify", ["certify", "--map", "exp1d", "--samples", "200"]),
    ("fixtures", ["list-fixtures", "--format", "json"]),
    ("error", ["invert", "--map", "nosuchmap", "--target", "1"]),
    ("error", ["trace", "--expr", "x1^3", "--dim", "1", "--x0", "1", "--start", "0"]),
]


def _docs_schema(name: str) -> dict:
    return json.loads((SCHEMA_DIR / f"{name}.schema.json").read_text())


class TestSchemas:
    @pytest.mark.parametrize("name", sorted(reports.SCHEMA_MODELS))
    def test_properties_match_generated_schema(self, name):
        generated = reports.document_schema(name)
        assert set(_docs_schema(name)["properties"]) == set(generated["properties"])

    @pytest.mark.parametrize("name", sorted(reports.SCHEMA_MODELS))
    def test_published_schema_requires_at_least_the_model(self, name):
        generated = reports.document_schema(name)
        docs = _docs_schema(name)
        assert set(generated.get("required", [])) <= set(docs.get("required", []))
        assert set(docs.get("required", [])) <= set(docs["properties"])

    @pytest.mark.parametrize("name,argv", OUTPUTS)
    def test_cli_output_validates(self, name, argv):
        _, text = cli.run(argv)
        reports.validate_document(name, text)
        reports.validate_document(name, text, _docs_schema(name))

    def test_basin_output_validates(self, tmp_path):
        _, text = cli.run(["basin", "--map", "identity2d", "--bounds=-1,1,-1,1", "--res", "5",
                           "--out", str(tmp_path / "b"), "--workers", "1"])
        reports.validate_document("basin", text)
        reports.validate_document("basin", text, _docs_schema("basin"))

    def test_invalid_document_is_rejected(self):
        bad = {"status": "maybe", "error_type": "ConfigError", "message": "x"}
        with pytest.raises(jsonschema.ValidationError):
            reports.validate_document("error", bad)
        with pytest.raises(jsonschema.ValidationError):
            reports.validate_document("error", bad, _docs_schema("error"))

    def test_export_writes_generated_schemas(self, tmp_path):
        written = reports.export_schemas(tmp_path)
        assert len(written) == len(reports.SCHEMA_MODELS)
        for name in reports.SCHEMA_MODELS:
            exported = json.loads((tmp_path / f"{name}.schema.json").read_text())
            assert exported == reports.document_schema(name)

    def test_unknown_document(self):
        with pytest.raises(KeyError):
            reports.document_schema("nope")


class TestSamplesCsv:
    def test_header_and_values(self):
        samples = [Sample(0.0, np.array([1.0, 2.0]), 0.0), Sample(0.5, np.array([0.1, 0.2]), 1e-12)]
        text = reports.samples_csv(samples, 2, "s", "ConvergedToBase")
        lines = text.splitlines()
        assert lines[0] == "# outcome=ConvergedToBase"
        assert lines[1] == "s,x1,x2,residual"
        assert lines[3] == "0.5,0.1,0.2,1e-12"

    def test_values_survive_text(self):
        value = 1.0 / 3.0
        text = reports.samples_csv([Sample(value, np.array([value]), 0.0)], 1)
        assert float(text.splitlines()[1].split(",")[0]) == value


class TestBasinWriters:
    def test_pgm_top_row_is_largest_y(self):
        basin = _basin([[CellCode.IN_BASIN, CellCode.OUT],
                        [CellCode.UNDETERMINED, CellCode.OUTSIDE_DOMAIN]])
        data = reports.pgm_bytes(basin)
        header = b"P5\n2 2\n255\n"
        assert data.startswith(header)
        assert list(data[len(header):]) == [128, 64, 255, 0]

    def test_csv_codes(self):
        basin = _basin([[CellCode.IN_BASIN, CellCode.OUT],
                        [CellCode.OUT, CellCode.IN_BASIN]])
        lines = reports.basin_csv(basin).splitlines()
        assert lines[0] == "x,y,code"
        assert lines[1] == "0.5,0.5,255"
        assert lines[2] == "1.5,0.5,0"

    def test_document_counts(self):
        basin = _basin([[CellCode.IN_BASIN, CellCode.OUT],
                        [CellCode.OUT, CellCode.IN_BASIN]])
        doc = reports.basin_document("demo", basin, 0.25, ["demo.pgm"])
        assert doc.counts == {"InBasin": 2, "Out": 2, "Undetermined": 0, "OutsideDomain": 0}
        assert doc.bounds == [0.0, 2.0, 0.0, 2.0]


class TestWriteOutput:
    def test_text_and_bytes(self, tmp_path):
        text_path = reports.write_output(tmp_path / "sub" / "a.json", "{}")
        assert Path(text_path).read_text() == "{}"
        bytes_path = reports.write_output(tmp_path / "b.pgm", b"P5")
        assert Path(bytes_path).read_bytes() == b"P5"


def test_error_document():
    doc = json.loads(reports.error_json("ConfigError", "bad"))
    assert doc == {"status": "error", "error_type": "ConfigError", "message": "bad"}


def test_numerical_failure_document():
    doc = json.loads(reports.error_json("SingularJacobian", "det 0", status="failed", reason="SingularJacobian"))
    assert doc == {"status": "failed", "error_type": "SingularJacobian", "message": "det 0", "reason": "SingularJacobian"}
