"""End-to-end: the counting pipeline consuming this adapter as its detector.

Pure black-box coupling. The pipeline is driven through its own CLI and the
adapter through the stdio wire protocol; nothing here imports across the
package boundary, and the test is skipped when the pipeline isn't installed.
"""
import base64
import csv
import importlib.util
import io
import json
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path

import pytest
from PIL import Image

pytestmark = pytest.mark.skipif(
    importlib.util.find_spec("trafficpm") is None,
    reason="counting pipeline not installed",
)


def _png_bytes(draw_rect: bool) -> bytes:
    img = Image.new("L", (64, 48), 30)
    if draw_rect:
        for yy in range(15, 33):
            for xx in range(12, 42):
                img.putpixel((xx, yy), 230)
    buf = io.BytesIO()
    img.convert("RGB").save(buf, format="PNG")
    return buf.getvalue()


def _log_entry(ts: datetime, body: bytes) -> str:
    return json.dumps(
        {
            "camera_id": "cam01",
            "image_timestamp": ts.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "source_url": "http://camera.invalid/frame.png",
            "fetched_at": ts.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "body_b64": base64.b64encode(body).decode("ascii"),
        },
        sort_keys=True,
    )


def test_pipeline_counts_via_stdio_adapter(tmp_path):
    frames = [
        (datetime(2026, 3, 2, 9, 0, 7, tzinfo=timezone.utc), _png_bytes(False)),
        (datetime(2026, 3, 2, 9, 5, 7, tzinfo=timezone.utc), _png_bytes(True)),
    ]
    log_path = tmp_path / "fetch_log.jsonl"
    log_path.write_text("\n".join(_log_entry(ts, body) for ts, body in frames) + "\n")

    out_dir = tmp_path / "out"
    adapter_cmd = f"{sys.executable} -m detector_adapter --model blob --stdin --score-floor 0.3"
    config = {
        "archive_dir": str(tmp_path / "archive"),
        "out_dir": str(out_dir),
        "replay_log": str(log_path),
        "cameras": ["cam01"],
        "analysis_camera": "cam01",
        "detector": {"kind": "stdio", "target": adapter_cmd},
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config, indent=2))

    proc = subprocess.run(
        [sys.executable, "-m", "trafficpm", "run", "--config", str(config_path)],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr

    with open(out_dir / "counts.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [row["bin_start"] for row in rows] == ["2026-03-02T09:00:00Z", "2026-03-02T09:05:00Z"]
    assert [float(row["car"]) for row in rows] == [0.0, 1.0]
    assert all(float(row["truck"]) == 0.0 and float(row["bus"]) == 0.0 for row in rows)
