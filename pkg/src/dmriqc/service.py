"""Local review service: serves QC reports and collects expert decisions.

Reports are read-only; decisions append to a separate label CSV (core
label columns plus ``source``, ``reviewer``, ``timestamp``) that the
finetune path ingests directly. Restarts re-read the decision file.
"""

from __future__ import annotations

import csv
import threading
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .pipeline import ThresholdConfig, read_report, recompute_verdicts

API_VERSION = 1

DECISION_HEADER = [
    "volume_id",
    "view",
    "gradient_index",
    "slice_index",
    "label",
    "source",
    "reviewer",
    "prior_flag",
    "timestamp",
]


class ReviewDecision(BaseModel):
    volume_id: str
    view: str
    gradient_index: int
    slice_index: int
    expert_label: int
    prior_flag: bool
    reviewer: str = "anonymous"


class ReportStore:
    """Read-only report.json index plus the append-only decision log."""

    def __init__(self, report_dir, label_out):
        self.report_dir = Path(report_dir)
        self.label_out = Path(label_out)
        self._write_lock = threading.Lock()
        self.reports = {}
        for path in sorted(self.report_dir.rglob("report.json")):
            report = read_report(path)
            self.reports[report.volume_id] = (report, path.parent)
        self.decisions: list[dict] = []
        if self.label_out.is_file():
            with open(self.label_out, newline="") as fh:
                self.decisions = list(csv.DictReader(fh))

    def slice_exists(self, decision: ReviewDecision) -> bool:
        entry = self.reports.get(decision.volume_id)
        if entry is None:
            return False
        report, _ = entry
        return any(
            s["view"] == decision.view
            and s["gradient"] == decision.gradient_index
            and s["index"] == decision.slice_index
            for s in report.slices
        )

    def append_decision(self, decision: ReviewDecision) -> dict:
        row = {
            "volume_id": decision.volume_id,
            "view": decision.view,
            "gradient_index": str(decision.gradient_index),
            "slice_index": str(decision.slice_index),
            "label": str(decision.expert_label),
            "source": "expert",
            "reviewer": decision.reviewer,
            "prior_flag": str(int(decision.prior_flag)),
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        with self._write_lock:
            new_file = not self.label_out.exists()
            self.label_out.parent.mkdir(parents=True, exist_ok=True)
            with open(self.label_out, "a", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=DECISION_HEADER)
                if new_file:
                    writer.writeheader()
                writer.writerow(row)
            self.decisions.append(row)
        return row

    def export_csv(self) -> str:
        if self.label_out.is_file():
            return self.label_out.read_text()
        return ",".join(DECISION_HEADER) + "\n"


def create_app(report_dir, label_out, ui_dir=None) -> FastAPI:
    store = ReportStore(report_dir, label_out)
    app = FastAPI(title="dmriqc review service")
    app.state.store = store

    @app.exception_handler(RequestValidationError)
    def malformed_request(request, exc):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/api/reports")
    def list_reports():
        return {"version": API_VERSION, "reports": sorted(store.reports)}

    @app.get("/api/reports/{volume_id}")
    def get_report(
        volume_id: str,
        threshold_preview: int | None = Query(default=None, alias="threshold-preview", ge=0),
    ):
        entry = store.reports.get(volume_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"no report for {volume_id!r}")
        report, _ = entry
        payload = report.to_dict()
        if threshold_preview is not None:
            preview = ThresholdConfig(threshold_preview, threshold_preview)
            payload["verdicts"] = recompute_verdicts(report.slices, preview)
            payload["thresholds"] = {"axial": threshold_preview, "sagittal": threshold_preview}
            payload["threshold_preview"] = threshold_preview
        return payload

    @app.get("/api/slices/{volume_id}/{view}/{gradient}/{index}.png")
    def get_thumbnail(volume_id: str, view: str, gradient: int, index: int):
        entry = store.reports.get(volume_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"no report for {volume_id!r}")
        _, directory = entry
        path = directory / f"{view}_{gradient}_{index}.png"
        if not path.is_file():
            raise HTTPException(status_code=404, detail="thumbnail not rendered")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.post("/api/decisions", status_code=201)
    def post_decision(decision: ReviewDecision):
        if decision.expert_label not in (0, 1):
            raise HTTPException(status_code=400, detail="expert_label must be 0 or 1")
        if not store.slice_exists(decision):
            raise HTTPException(
                status_code=400,
                detail=f"slice {decision.view}/{decision.gradient_index}/{decision.slice_index} "
                f"not present in report for {decision.volume_id!r}",
            )
        return {"version": API_VERSION, "stored": store.append_decision(decision)}

    @app.get("/api/export/labels")
    def export_labels():
        return Response(content=store.export_csv(), media_type="text/csv")

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve_reports(report_dir, port: int = 8099, label_out="decisions.csv", host: str = "127.0.0.1", ui_dir=None):
    """Run the review service until interrupted."""
    import uvicorn

    app = create_app(report_dir, label_out, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
