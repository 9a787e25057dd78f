"""Build the review-service fixtures the frontend integration tests run against.

Creates two small labeled benchmarks (a base training set and a fresh set
with different geometry/severity), then writes QC reports with thumbnails
for the fresh volumes using ground-truth oracle detectors.

Usage: python3 make_fixtures.py <out_dir>
"""

import json
import sys
from pathlib import Path

from dmriqc.detectors import OracleModel
from dmriqc.pipeline import qc_volume, write_report
from dmriqc.simulate import make_benchmark, write_phantom_set
from dmriqc.volume import AXIAL, SAGITTAL, load_dwi, read_labels_csv

MIX = {"ghosting": 0.25, "herringbone": 0.1, "motion": 0.5}


def main(out_dir: Path) -> None:
    base_clean = out_dir / "base-clean"
    write_phantom_set(base_clean, 4, shape=(44, 44, 26), gradients=2, seed=21, prefix="base-")
    make_benchmark(base_clean, out_dir / "base", MIX, severity_range=(0.5, 0.9), seed=31)

    fresh_clean = out_dir / "fresh-clean"
    write_phantom_set(
        fresh_clean, 3, shape=(40, 40, 24), gradients=2, seed=91, noise=0.03, prefix="fresh-"
    )
    make_benchmark(fresh_clean, out_dir / "fresh", MIX, severity_range=(0.35, 0.6), seed=41)

    labels = read_labels_csv(out_dir / "fresh" / "labels.csv")
    report_dir = out_dir / "reports"
    volume_ids = []
    for path in sorted((out_dir / "fresh" / "volumes").iterdir()):
        volume = load_dwi(path)
        report = qc_volume(volume, OracleModel(AXIAL, labels), OracleModel(SAGITTAL, labels))
        write_report(report, report_dir / volume.id, thumbnails=True)
        volume_ids.append(volume.id)

    print(json.dumps({"report_dir": str(report_dir), "volumes": volume_ids}))


if __name__ == "__main__":
    main(Path(sys.argv[1]))
