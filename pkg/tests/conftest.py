import gzip
import os
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from adagio.dataset import PointCloud, encode_idx_images, encode_idx_labels, load_idx


def _mnist_from_env() -> PointCloud | None:
    root = os.environ.get("ADAGIO_MNIST_DIR")
    if not root:
        return None
    root = Path(root)
    for suffix in ("", ".gz"):
        images = root / f"train-images-idx3-ubyte{suffix}"
        labels = root / f"train-labels-idx1-ubyte{suffix}"
        if images.exists():
            return load_idx(images, labels if labels.exists() else None)
    return None


def _mnist_from_mlxtend(tmp_dir: Path) -> PointCloud | None:
    # mlxtend ships 5000 MNIST training digits as CSV (784 pixels + label)
    try:
        source = resources.files("mlxtend").joinpath("data", "data", "mnist_5k.csv.gz")
    except ModuleNotFoundError:
        return None
    if not source.is_file():
        return None
    with source.open("rb") as raw, gzip.open(raw, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",")
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    # round-trip through the IDX codec so the data enters via the real loader
    (tmp_dir / "images.idx").write_bytes(encode_idx_images(images))
    (tmp_dir / "labels.idx").write_bytes(encode_idx_labels(labels))
    return load_idx(tmp_dir / "images.idx", tmp_dir / "labels.idx")


@pytest.fixture(scope="session")
def mnist(tmp_path_factory) -> PointCloud | None:
    """Full MNIST training set if available, else the 5000-digit mlxtend subset, else None."""
    return _mnist_from_env() or _mnist_from_mlxtend(tmp_path_factory.mktemp("mnist"))


@pytest.fixture(scope="session")
def mnist800(mnist):
    from adagio.dataset import sample_points

    if mnist is None:
        pytest.skip("no MNIST data (set ADAGIO_MNIST_DIR or install mlxtend)")
    return sample_points(mnist, 800, seed=2017)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting: one PASS/FAIL line per criterion ---------------

_CRITERIA: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    cid, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if report.skipped:
        status = "SKIP"
    elif report.passed:
        status = "PASS"
    else:
        status = "FAIL"
    _CRITERIA[cid] = [status, title, detail]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA, key=lambda c: (int("".join(ch for ch in c if ch.isdigit())), c)):
        status, title, detail = _CRITERIA[cid]
        line = f"criterion {cid:<3} {status}  {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
