import json
import shutil
import subprocess

import jsonschema
import numpy as np
import pytest

from adagio.cli import load_schema, main
from adagio.dataset import PointCloud, load_csv, save_csv
from adagio.distortion import evaluate
from adagio.embed import load_model, transform_all
from adagio.jl import jl_dimension


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def primary(text):
    payload = json.loads(text)
    payload.pop("timing", None)
    return payload


@pytest.fixture
def points(tmp_path, rng):
    path = tmp_path / "points.csv"
    data = rng.normal(size=(60, 30)) * np.linspace(4, 0.2, 30)
    save_csv(PointCloud(data, np.repeat([0, 1, 2], 20)), path)
    return path


def fit_model(capsys, tmp_path, points, *flags):
    model = tmp_path / "m.adg"
    code, out, err = run(capsys, "fit", "--input", points, "--input-label-column", -1,
                         "--model-out", model, *flags)
    assert code == 0, err
    return model, json.loads(out)


def test_fit_target_dim(capsys, tmp_path, points):
    model, out = fit_model(capsys, tmp_path, points, "--target-dim", 20)
    assert (out["s"], out["k"], out["r"]) == (10, 10, 20)
    jsonschema.validate(out, load_schema("fit"))
    assert "fit_seconds" in out["timing"]
    assert load_model(model).r == 20


def test_fit_split_pure_jl(capsys, tmp_path, points):
    _, out = fit_model(capsys, tmp_path, points, "--split", "0,26")
    assert (out["s"], out["k"]) == (0, 26)


def test_fit_epsilon(capsys, tmp_path, rng):
    path = tmp_path / "big.csv"
    save_csv(PointCloud(rng.normal(size=(800, 12)), np.zeros(800, dtype=int)), path)
    _, out = fit_model(capsys, tmp_path, path, "--epsilon", 0.3, "--gamma", 0.01, "--pca-dims", 4)
    assert out["k"] == jl_dimension(800, 0.3, 0.01)
    assert out["s"] == 4


def test_fit_flag_conflicts(capsys, tmp_path, points):
    code, _, _ = run(capsys, "fit", "--input", points, "--model-out", tmp_path / "m",
                     "--target-dim", 4, "--split", "2,2")
    assert code == 2
    code, _, _ = run(capsys, "fit", "--input", points, "--model-out", tmp_path / "m")
    assert code == 2


def test_exit_codes(capsys, tmp_path, points):
    code, _, err = run(capsys, "fit", "--input", tmp_path / "missing.csv", "--model-out",
                       tmp_path / "m", "--target-dim", 4)
    assert code == 3 and err
    bad = tmp_path / "bad.csv"
    bad.write_text("1,x\n")
    code, _, err = run(capsys, "fit", "--input", bad, "--model-out", tmp_path / "m", "--target-dim", 2)
    assert code == 3 and "row 1" in err
    code, _, _ = run(capsys, "fit", "--input", points, "--input-label-column", -1,
                     "--model-out", tmp_path / "m", "--target-dim", 500)
    assert code == 3
    garbage = tmp_path / "garbage.adg"
    garbage.write_bytes(b"XXXX0000")
    code, _, err = run(capsys, "transform", "--model", garbage, "--input", points, "--output", tmp_path / "o")
    assert code == 3 and "magic" in err
    code, _, _ = run(capsys, "nonsense")
    assert code == 2


def test_transform_matches_library(capsys, tmp_path, points):
    model, _ = fit_model(capsys, tmp_path, points, "--target-dim", 6)
    out_path = tmp_path / "emb.csv"
    code, _, err = run(capsys, "transform", "--model", model, "--input", points,
                       "--input-label-column", -1, "--output", out_path)
    assert code == 0, err
    expected = tmp_path / "expected.csv"
    save_csv(transform_all(load_model(model), load_csv(points, label_column=-1)), expected)
    assert out_path.read_bytes() == expected.read_bytes()


def test_transform_dimension_mismatch(capsys, tmp_path, points, rng):
    model, _ = fit_model(capsys, tmp_path, points, "--target-dim", 6)
    other = tmp_path / "other.csv"
    save_csv(PointCloud(rng.normal(size=(5, 7))), other)
    code, _, err = run(capsys, "transform", "--model", model, "--input", other, "--output", tmp_path / "o")
    assert code == 3 and "mismatch" in err


def test_distort(capsys, tmp_path, points):
    code, out, _ = run(capsys, "distort", "--original", points, "--original-label-column", -1,
                       "--embedded", points, "--embedded-label-column", -1)
    assert code == 0
    report = json.loads(out)
    jsonschema.validate(report, load_schema("distortion_report"))
    assert report["max"] == 0.0 and report["mean"] == 0.0

    model, _ = fit_model(capsys, tmp_path, points, "--target-dim", 6)
    code, out, _ = run(capsys, "distort", "--original", points, "--original-label-column", -1, "--model", model)
    cloud = load_csv(points, label_column=-1)
    lib = evaluate(cloud, transform_all(load_model(model), cloud))
    assert primary(out) == json.loads(lib.to_json())

    code, sampled, _ = run(capsys, "distort", "--original", points, "--original-label-column", -1,
                           "--model", model, "--mode", f"sample:{60 * 59 // 2}")
    sampled = primary(sampled)
    assert (sampled["max"], sampled["mean"]) == (lib.max, lib.mean)
    assert sampled["histogram"] == primary(out)["histogram"]

    code, text, _ = run(capsys, "distort", "--original", points, "--original-label-column", -1,
                        "--model", model, "--format", "csv", "--bins", 10)
    assert text.splitlines()[0] == "bin_left,bin_right,count" and len(text.splitlines()) == 12


def test_distort_needs_one_source(capsys, points):
    code, _, _ = run(capsys, "distort", "--original", points)
    assert code == 2


def test_sweep_csv_and_json(capsys, points):
    code, out, _ = run(capsys, "sweep", "--input", points, "--input-label-column", -1,
                       "--dims", "2:10:4", "--methods", "pca,jl,adagio_exact", "--seeds", "0,1")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "method,target_dim,seed,max_distortion,fit_seconds,eval_seconds"
    assert len(lines) == 1 + 3 * 3 * 2
    pca_full = [ln for ln in lines if ln.startswith("pca,10,")]
    assert len({ln.split(",")[3] for ln in pca_full}) == 1

    code, out, _ = run(capsys, "sweep", "--input", points, "--input-label-column", -1,
                       "--dims", "4,8", "--methods", "pca", "--format", "json")
    jsonschema.validate(json.loads(out), load_schema("sweep_rows"))

    code, out, _ = run(capsys, "sweep", "--input", points, "--input-label-column", -1,
                       "--methods", "pca,adagio_exact", "--delta", 0.3, "--format", "json")
    payload = json.loads(out)
    jsonschema.validate(payload, load_schema("sweep_mindim"))
    assert all(r["achieved"] for r in payload["results"])


def test_sweep_usage_errors(capsys, points):
    code, _, _ = run(capsys, "sweep", "--input", points, "--input-label-column", -1)
    assert code == 2
    code, _, _ = run(capsys, "sweep", "--input", points, "--dims", "4", "--methods", "external")
    assert code == 2
    code, _, _ = run(capsys, "sweep", "--input", points, "--dims", "4", "--methods", "numax")
    assert code == 3


def test_stablerank(capsys, tmp_path):
    path = tmp_path / "diag.csv"
    # centered rows whose singular values are 3, 2, 1 (scaled by sqrt(2))
    data = np.vstack([np.diag([3.0, 2.0, 1.0]), -np.diag([3.0, 2.0, 1.0])])
    save_csv(PointCloud(data), path)
    spectrum = tmp_path / "spectrum.csv"
    code, out, _ = run(capsys, "stablerank", "--input", path, "--spectrum-out", spectrum)
    assert code == 0
    payload = json.loads(out)
    jsonschema.validate(payload, load_schema("stablerank"))
    assert payload["stable_rank"] == pytest.approx(36 / 14, rel=1e-12)
    assert spectrum.read_text().splitlines()[0] == "index,singular_value"

    code, _, err = run(capsys, "stablerank", "--input", path, "--rank", 1)
    assert code == 0 and "warning" in err


def write_descriptor_sets(tmp_path, rng, n_objects=6, per_object=25, d=16, queries_per=5):
    centers = rng.normal(size=(n_objects, d)) * 3
    db = np.vstack([c + rng.normal(size=(per_object, d)) for c in centers])
    db_labels = np.repeat(np.arange(n_objects), per_object)
    save_csv(PointCloud(db, db_labels), tmp_path / "db.csv")
    rows = []
    for obj in range(n_objects):
        for g in range(2):
            group = obj * 2 + g
            desc = centers[obj] + rng.normal(size=(queries_per, d))
            rows.append(np.hstack([np.full((queries_per, 1), group), np.full((queries_per, 1), obj), desc]))
    np.savetxt(tmp_path / "q.csv", np.vstack(rows), delimiter=",", fmt="%.17g")
    return tmp_path / "db.csv", tmp_path / "q.csv"


def test_knn(capsys, tmp_path, rng):
    db, q = write_descriptor_sets(tmp_path, rng)
    code, out, err = run(capsys, "knn", "--database", db, "--queries", q, "--k", 10)
    assert code == 0, err
    payload = json.loads(out)
    jsonschema.validate(payload, load_schema("knn"))
    assert payload["accuracy"] == 1.0 and payload["n_objects"] == 12

    model = tmp_path / "m.adg"
    run(capsys, "fit", "--input", db, "--input-label-column", -1, "--model-out", model, "--target-dim", 8)
    code, out, _ = run(capsys, "knn", "--database", db, "--queries", q, "--model", model)
    assert json.loads(out)["target_dim"] == 8


def test_knn_accuracy_drops_with_dimension(capsys, tmp_path):
    rng = np.random.default_rng(5)
    # well-separated clusters spread over all 16 coordinates; shrinking r below that blurs them
    db, q = write_descriptor_sets(tmp_path, rng, n_objects=12, per_object=15, d=16, queries_per=3)
    accuracies = []
    for r in (16, 8, 4, 2):
        model = tmp_path / f"m{r}.adg"
        run(capsys, "fit", "--input", db, "--input-label-column", -1, "--model-out", model,
            "--target-dim", r, "--seed", 1)
        _, out, _ = run(capsys, "knn", "--database", db, "--queries", q, "--model", model, "--k", 5)
        accuracies.append(json.loads(out)["accuracy"])
    assert accuracies == sorted(accuracies, reverse=True)
    assert accuracies[0] > accuracies[-1]


def test_knn_ties_deterministic(capsys, tmp_path):
    db = tmp_path / "db.csv"
    db.write_text("0,0\n0,1\n")
    q = tmp_path / "q.csv"
    q.write_text("0,0,0\n")
    outs = {run(capsys, "knn", "--database", db, "--queries", q, "--k", 2, "--tie-seed", 9)[1]
            for _ in range(3)}
    assert len({json.dumps(primary(o)) for o in outs}) == 1


def test_ssl(capsys, tmp_path, rng):
    path = tmp_path / "blobs.csv"
    data = rng.normal(size=(80, 4))
    data[40:, 0] += 15
    save_csv(PointCloud(data, np.repeat([0, 1], 40)), path)
    code, out, err = run(capsys, "ssl", "--input", path, "--input-label-column", -1, "--k", 5)
    assert code == 0, err
    payload = json.loads(out)
    jsonschema.validate(payload, load_schema("ssl"))
    assert payload["error"] <= 0.05
    assert len(payload["per_fold"]) == 10
    assert set(payload["confusion"]["0"]) == {"tp", "tn", "fp", "fn"}

    code, _, _ = run(capsys, "ssl", "--input", path, "--k", 5)
    assert code == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["fit", "--target-dim", 6, "--backend", "randomized"],
        ["distort", "--mode", "sample:300"],
        ["sweep", "--dims", "4,8", "--methods", "adagio_randomized,jl", "--seeds", "1,2"],
        ["ssl", "--k", 5, "--folds", 4],
        ["stablerank"],
    ],
)
def test_determinism_across_threads(capsys, tmp_path, points, argv):
    command, *rest = argv
    flag = "--original" if command == "distort" else "--input"
    extra = ["--model-out", tmp_path / "m.adg"] if command == "fit" else []
    if command == "distort":
        model, _ = fit_model(capsys, tmp_path, points, "--target-dim", 6)
        extra = ["--model", model]
    if command == "sweep":
        extra = ["--no-timing"]
    outputs = []
    for threads in (1, 1, 3):
        code, out, err = run(capsys, command, flag, points, f"{flag}-label-column", -1,
                             "--threads", threads, "--seed", 42, *extra, *rest)
        assert code == 0, err
        outputs.append(json.dumps(primary(out), sort_keys=True) if out.startswith("{") else out)
    assert outputs[0] == outputs[1] == outputs[2]


def test_console_script(tmp_path, points):
    exe = shutil.which("adagio")
    if exe is None:
        pytest.skip("console script not installed")
    proc = subprocess.run([exe, "stablerank", "--input", str(points), "--input-label-column", "-1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["stable_rank"] >= 1
