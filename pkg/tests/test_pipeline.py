import json

import numpy as np
import pytest

from lipdub.bundle import save_track
from lipdub.pipeline import EXIT_IO, EXIT_LEAK, EXIT_OK, EXIT_REJECTED, block_ranges, parallel_map, run_pipeline


def test_helpers():
    assert block_ranges(0, 60, 25) == [(0, 25), (25, 50), (50, 60)]
    assert parallel_map(lambda v: v * v, range(7), 3) == [v * v for v in range(7)]


def test_passthrough_is_identity(track30):
    res = run_pipeline({"synthesizer": "passthrough"}, track=track30)
    assert res.exit_code == EXIT_OK
    assert all(np.array_equal(a, b) for a, b in zip(res.output.frames, track30.frames))
    assert res.report["metrics"]["frame_psnr_mean"] == float("inf")


def test_baseline_deterministic_across_jobs(track30):
    a = run_pipeline({"jobs": 1}, track=track30)
    b = run_pipeline({"jobs": 2}, track=track30)
    assert a.exit_code == b.exit_code == EXIT_OK
    assert all(np.array_equal(x, y) for x, y in zip(a.output.frames, b.output.frames))
    assert all(entry["passed"] for entry in a.report["leak_audits"])
    refs = a.report["leak_audits"][0]
    assert not set(refs["references"]) & set(range(*refs["frames"]))


def test_eye_distance_rejection(track30):
    res = run_pipeline({"quality": {"min_eye_distance": 500.0}}, track=track30)
    assert res.exit_code == EXIT_REJECTED and res.status == "rejected"
    assert "eye" in res.report["quality"]["reason"]


def test_tiny_mask_is_leak(track30):
    res = run_pipeline({"mask": {"rect": [0.45, 0.6, 0.55, 0.7]}}, track=track30)
    assert res.exit_code == EXIT_LEAK and res.output is None
    failed = {c for e in res.report["leak_audits"] for c, v in e["channels"].items() if not v["passed"]}
    assert failed == {"2"}


def test_missing_input(tmp_path):
    res = run_pipeline({"input": str(tmp_path / "nope"), "report": str(tmp_path / "r.json")})
    assert res.exit_code == EXIT_IO and res.status == "io_error"
    assert json.loads((tmp_path / "r.json").read_text())["error"]["stage"] == "load"


def test_bundle_in_bundle_out(tmp_path, track30):
    save_track(track30, tmp_path / "in")
    res = run_pipeline({"input": str(tmp_path / "in"), "output": str(tmp_path / "out"), "synthesizer": "oracle"})
    assert res.exit_code == EXIT_OK
    assert (tmp_path / "out" / "manifest.json").exists()
    assert res.report["metrics"]["interior_psnr"] > 38


def test_short_track_keeps_references():
    from lipdub.config import make_config
    from lipdub.pipeline import request_block

    cfg = make_config()
    assert request_block(100, cfg) == 25
    assert request_block(20, cfg) == 10
    assert request_block(5, cfg) == 1


def test_short_track_runs():
    from lipdub.fixture import make_track

    res = run_pipeline({}, track=make_track(2, 18))
    assert res.exit_code == EXIT_OK
    for entry in res.report["leak_audits"]:
        assert len(entry["references"]) == 10 and not set(entry["references"]) & set(range(*entry["frames"]))
