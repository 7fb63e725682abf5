import csv
import xml.etree.ElementTree as ET

from vaelm.estimators import REPORT_FIELDS
from vaelm.plots import CURVE_FIELDS, svg_curve, write_plots


def _records():
    recs = [{"phase": "reset", "event": "decoder_reset", "epoch": 0}]
    for e in range(1, 4):
        recs.append({"phase": "main", "epoch": e, "train_loss": 5.0 - e, "val_loss": 6.0 - e,
                     **{k: float(e) for k in REPORT_FIELDS}})
    return recs


def test_write_plots(tmp_path):
    paths = write_plots(_records(), tmp_path)
    assert len(paths) == 1 + len(CURVE_FIELDS)
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert [r["epoch"] for r in rows] == ["1", "2", "3"]
    assert float(rows[-1]["val_loss"]) == 3.0
    for key in CURVE_FIELDS:
        root = ET.parse(tmp_path / f"{key}.svg").getroot()
        assert root.tag.endswith("svg")


def test_svg_handles_flat_and_empty():
    ET.fromstring(svg_curve([1, 2], [3.0, 3.0], "flat"))
    ET.fromstring(svg_curve([], [], "empty"))
    ET.fromstring(svg_curve([1, 2], [float("inf"), 1.0], "a < b & c"))
