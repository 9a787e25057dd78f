import csv
import json

import pytest
from fastapi.testclient import TestClient

from dmriqc.detectors import OracleModel
from dmriqc.pipeline import ThresholdConfig, qc_volume, recompute_verdicts, write_report
from dmriqc.service import create_app
from dmriqc.simulate import make_benchmark, write_phantom_set
from dmriqc.volume import AXIAL, SAGITTAL, load_dwi, read_labels_csv


@pytest.fixture(scope="module")
def served(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    write_phantom_set(root / "clean", 2, shape=(40, 40, 26), gradients=2, seed=2, prefix="svc-")
    make_benchmark(
        root / "clean", root / "bench", {"ghosting": 0.3, "motion": 0.5},
        severity_range=(0.5, 0.9), seed=4,
    )
    labels = read_labels_csv(root / "bench" / "labels.csv")
    report_dir = root / "reports"
    reports = {}
    for path in sorted((root / "bench" / "volumes").iterdir()):
        volume = load_dwi(path)
        report = qc_volume(volume, OracleModel(AXIAL, labels), OracleModel(SAGITTAL, labels))
        write_report(report, report_dir / volume.id, thumbnails=True)
        reports[volume.id] = report
    label_out = root / "decisions.csv"
    app = create_app(report_dir, label_out)
    return TestClient(app), reports, label_out


def test_list_reports(served):
    client, reports, _ = served
    res = client.get("/api/reports")
    assert res.status_code == 200
    assert res.json()["reports"] == sorted(reports)


def test_get_report(served):
    client, reports, _ = served
    vid = sorted(reports)[0]
    res = client.get(f"/api/reports/{vid}")
    assert res.status_code == 200
    body = res.json()
    assert body["volume_id"] == vid
    assert body["version"] == 1
    assert client.get("/api/reports/nope").status_code == 404


def test_threshold_preview_matches_recompute(served):
    client, reports, _ = served
    vid = sorted(reports)[0]
    report = reports[vid]
    for t in range(1, 11):
        res = client.get(f"/api/reports/{vid}", params={"threshold-preview": t})
        assert res.status_code == 200
        expected = recompute_verdicts(report.slices, ThresholdConfig(t, t))
        assert res.json()["verdicts"] == expected


def test_thumbnail_endpoint(served):
    client, reports, _ = served
    vid = sorted(reports)[0]
    flagged = [s for s in reports[vid].slices if s["flag"]]
    assert flagged, "fixture should produce flagged slices"
    s = flagged[0]
    res = client.get(f"/api/slices/{vid}/{s['view']}/{s['gradient']}/{s['index']}.png")
    assert res.status_code == 200
    assert res.headers["content-type"] == "image/png"
    assert res.content[:8] == b"\x89PNG\r\n\x1a\n"
    clean = [s for s in reports[vid].slices if not s["flag"]][0]
    res = client.get(f"/api/slices/{vid}/{clean['view']}/{clean['gradient']}/{clean['index']}.png")
    assert res.status_code == 404


def test_post_decision_and_export(served):
    client, reports, label_out = served
    vid = sorted(reports)[0]
    s = reports[vid].slices[0]
    decision = {
        "volume_id": vid,
        "view": s["view"],
        "gradient_index": s["gradient"],
        "slice_index": s["index"],
        "expert_label": 1,
        "prior_flag": s["flag"],
        "reviewer": "tester",
    }
    res = client.post("/api/decisions", json=decision)
    assert res.status_code == 201, res.text
    res = client.get("/api/export/labels")
    assert res.status_code == 200
    rows = list(csv.DictReader(res.text.splitlines()))
    assert rows[-1]["volume_id"] == vid
    assert rows[-1]["source"] == "expert"
    assert rows[-1]["label"] == "1"
    # file ingestible by the core label reader (extra columns ignored)
    labels = read_labels_csv(label_out)
    assert labels[(vid, s["view"], s["gradient"], s["index"])] == 1


def test_post_decision_unknown_slice_400(served):
    client, reports, _ = served
    vid = sorted(reports)[0]
    decision = {
        "volume_id": vid,
        "view": "axial",
        "gradient_index": 99,
        "slice_index": 999,
        "expert_label": 1,
        "prior_flag": False,
    }
    res = client.post("/api/decisions", json=decision)
    assert res.status_code == 400
    assert "not present" in res.json()["detail"]


def test_post_malformed_decision_400(served):
    client, _, _ = served
    res = client.post("/api/decisions", json={"volume_id": "x"})
    assert res.status_code == 400


def test_decisions_survive_restart(served, tmp_path):
    client, reports, label_out = served
    vid = sorted(reports)[0]
    s = reports[vid].slices[1]
    client.post("/api/decisions", json={
        "volume_id": vid, "view": s["view"], "gradient_index": s["gradient"],
        "slice_index": s["index"], "expert_label": 0, "prior_flag": s["flag"],
    })
    # new app instance re-reads the decision log
    app2 = create_app(label_out.parent / "reports", label_out)
    client2 = TestClient(app2)
    before = client.get("/api/export/labels").text
    after = client2.get("/api/export/labels").text
    assert before == after
