import numpy as np
import pytest

from lipdub.core import AffineTransform, AudioClip, LandmarkSet, Utterance
from lipdub.fixture import local_landmarks, make_track


@pytest.fixture(scope="session")
def track100():
    return make_track(0, 100)


@pytest.fixture(scope="session")
def track30():
    return make_track(7, 30)


def crop_landmarks(opening=10.0, roll=0.0):
    """Fixture-face landmarks placed in crop space at the template scale."""
    pose = AffineTransform.similarity(64.0 / 90.0, roll, (128.0, 128.0))
    local = local_landmarks(opening)
    names = list(local)
    pts = pose.apply(np.array([local[k] for k in names]))
    return LandmarkSet(dict(zip(names, map(tuple, pts))), "crop")


def make_utterance(n=9, fps=25.0, seed=0):
    rng = np.random.default_rng(seed)
    frames = [rng.random((256, 256, 3)) for _ in range(n)]
    n_samples = int(round(n * 16000 / fps))
    audio = AudioClip(rng.uniform(-0.5, 0.5, n_samples), 16000)
    lms = [crop_landmarks(4.0 + i) for i in range(n)]
    ts = [AffineTransform.similarity(1.1, 0.01 * i, (3.0 + i, -2.0)) for i in range(n)]
    return Utterance(
        frames=frames,
        audio=audio,
        fps=fps,
        per_frame_landmarks=lms,
        per_frame_transform=ts,
        language="en",
        source_frame_indices=range(100, 100 + n),
        source_sample_range=(5000, 5000 + n_samples),
    )


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when == "call" and "test_acceptance.py" in rep.nodeid:
                props = dict(rep.user_properties)
                if "criterion" in props:
                    lines.append((props["criterion"], "PASS" if rep.passed else "FAIL", props.get("title", ""), rep.duration))
    if lines:
        terminalreporter.section("acceptance criteria")
        for n, verdict, title, secs in sorted(lines):
            terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {title} ({secs:.1f} s)")
