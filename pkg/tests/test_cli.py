import json
import math

import numpy as np
import pytest

from specgraph.cli import main, read_config_file, resolve_threads
from specgraph.graph import DEFAULT_THRESHOLD, KPCG, load_kpcg, save_kpcg
from specgraph.spectral import hermitianize, naive_inverse, read_panel_csv, smoothed_periodogram
from specgraph.synth import generate_batch, reference_structure
from specgraph.tensor_core import CSDTensor, FrequencyPartition, ValidationError, load_tensor, save_tensor


def _structure_file(tmp_path, obj=None):
    obj = obj or {
        "n": 3,
        "bands": [{"start_k": 0, "end_k": 8, "edges": [{"from": 0, "to": 1, "coef": 0.8, "lag": 1}]}],
    }
    path = tmp_path / "structure.json"
    path.write_text(json.dumps(obj))
    return str(path)


def _generate(tmp_path, name="gen", seed=4, reps=3):
    out = tmp_path / name
    assert main(["generate", "--structure", _structure_file(tmp_path), "--t", "64", "--replicates", str(reps),
                 "--seed", str(seed), "--out-dir", str(out)]) == 0
    return out


def test_generate_manifest(tmp_path):
    a = _generate(tmp_path, "a")
    b = _generate(tmp_path, "b")
    ma = json.loads((a / "manifest.json").read_text())
    assert ma == json.loads((b / "manifest.json").read_text())
    assert ma["replicates"] == 3 and len(ma["files"]) == 3 and ma["seed"] == 4
    assert len(ma["structure_sha256"]) == 64
    for f in ma["files"]:
        assert (a / f).read_text() == (b / f).read_text()
    assert sorted(p.name for p in a.glob("panel_*.csv")) == ma["files"]


def test_generate_invalid_structure_exit_2(tmp_path, capsys):
    cyclic = {"n": 2, "bands": [{"start_k": 0, "end_k": 4, "edges": [
        {"from": 0, "to": 1, "coef": 0.5}, {"from": 1, "to": 0, "coef": 0.5}]}]}
    code = main(["generate", "--structure", _structure_file(tmp_path, cyclic), "--t", "32", "--seed", "1",
                 "--out-dir", str(tmp_path / "x")])
    assert code == 2
    assert "cyclic" in capsys.readouterr().err
    assert main(["generate", "--structure", str(tmp_path / "missing.json"), "--seed", "1",
                 "--out-dir", str(tmp_path / "x")]) == 2


def test_estimate_auto_and_averaging(tmp_path):
    gen = _generate(tmp_path)
    one = tmp_path / "one.json"
    assert main(["estimate", str(gen / "panel_0000.csv"), "--out", str(one)]) == 0
    panel = read_panel_csv(gen / "panel_0000.csv")
    expected = smoothed_periodogram([panel], math.isqrt(64))
    np.testing.assert_allclose(load_tensor(one).slices, expected.slices, atol=1e-12)

    twice = tmp_path / "twice.bin"
    src = str(gen / "panel_0000.csv")
    assert main(["estimate", src, src, "--half-size", "3", "--out", str(twice)]) == 0
    single = tmp_path / "single.bin"
    assert main(["estimate", src, "--half-size", "3", "--out", str(single)]) == 0
    np.testing.assert_allclose(load_tensor(twice).slices, load_tensor(single).slices, atol=1e-12)

    globbed = tmp_path / "all.json"
    assert main(["estimate", str(gen / "panel_*.csv"), "--half-size", "2", "--out", str(globbed)]) == 0
    assert load_tensor(globbed).n == 3


def test_estimate_mismatched_panels(tmp_path):
    a = _generate(tmp_path)
    other = generate_batch(reference_structure(64), 64, 0, 1)[0]
    np.savetxt(tmp_path / "six.csv", other, delimiter=",")
    assert main(["estimate", str(a / "panel_0000.csv"), str(tmp_path / "six.csv"), "--out", str(tmp_path / "o.json")]) == 2
    assert main(["estimate", str(tmp_path / "nothing_*.csv"), "--out", str(tmp_path / "o.json")]) == 2


def _smoothed_file(tmp_path, t=64):
    y = generate_batch(reference_structure(t), t, 9, 30)
    sm = smoothed_periodogram(y, 3)
    path = tmp_path / "csd.json"
    save_tensor(sm, path)
    return sm, path


def test_learn_cf_full_budget_reproduces_input(tmp_path):
    sm, path = _smoothed_file(tmp_path)
    out = tmp_path / "cf.json"
    assert main(["learn", "cf", "--tensor", str(path), "--equal-blocks", "4", "--s", "15", "--out", str(out)]) == 0
    np.testing.assert_allclose(load_tensor(out, inverse=True).slices, hermitianize(naive_inverse(sm).slices), atol=1e-9)
    meta = json.loads((tmp_path / "cf.meta.json").read_text())
    assert meta["budget"] == [15] * 4 and meta["converged"] is True and meta["blocks"] == [0, 8, 16, 24]


def test_learn_ia_identity_converges(tmp_path):
    path = tmp_path / "eye.json"
    save_tensor(CSDTensor(np.broadcast_to(np.eye(3, dtype=complex), (17, 3, 3)).copy(), 32), path)
    out = tmp_path / "ia.json"
    assert main(["learn", "ia", "--tensor", str(path), "--blocks", "0,8", "--lam", "1", "--eta", "0.01",
                 "--out", str(out)]) == 0
    meta = json.loads((tmp_path / "ia.meta.json").read_text())
    assert meta["converged"] is True
    assert meta["config"]["lam"] == 1.0 and meta["config"]["eta"] == 0.01
    p = load_tensor(out, inverse=True).slices
    assert np.abs(p[:, ~np.eye(3, dtype=bool)]).max() < 1e-3
    header = (tmp_path / "ia.trace.csv").read_text().splitlines()
    assert len(header) == meta["iterations"] + 1


def test_learn_ia_threads_and_order_agree(tmp_path, monkeypatch):
    _, path = _smoothed_file(tmp_path)
    monkeypatch.delenv("SPECGRAPH_THREADS", raising=False)

    def learn(prefix, suffix, name):
        out = tmp_path / name
        argv = [*prefix, "learn", "ia", "--tensor", str(path), "--equal-blocks", "2", "--max-iters", "15",
                "--out", str(out), *suffix]
        assert main(argv) == 0
        return load_tensor(out, inverse=True).slices

    base = learn([], [], "plain.bin")
    np.testing.assert_array_equal(learn([], ["--order", "reverse"], "rev.bin"), base)
    np.testing.assert_array_equal(learn(["--threads", "2"], [], "two.bin"), base)
    monkeypatch.setenv("SPECGRAPH_THREADS", "3")
    np.testing.assert_array_equal(learn([], [], "env.bin"), base)


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "ia.cfg"
    cfg.write_text("# settings\nlam = 0.3\neta=0.02  # trust radius\nmax_iters = 7\n")
    assert read_config_file(cfg) == {"lam": "0.3", "eta": "0.02", "max_iters": "7"}
    _, path = _smoothed_file(tmp_path)
    out = tmp_path / "ia.json"
    assert main(["learn", "ia", "--tensor", str(path), "--equal-blocks", "2", "--config", str(cfg), "--lam", "0.9",
                 "--out", str(out)]) == 0
    conf = json.loads((tmp_path / "ia.meta.json").read_text())["config"]
    assert (conf["lam"], conf["eta"], conf["max_iters"]) == (0.9, 0.02, 7)
    cfg.write_text("lambda = 1\n")
    with pytest.raises(ValidationError):
        read_config_file(cfg)


def test_usage_errors(tmp_path):
    _, path = _smoothed_file(tmp_path)
    with pytest.raises(SystemExit) as exc:
        main(["learn", "glasso", "--tensor", str(path), "--equal-blocks", "2", "--out", "x.json"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["learn", "cf", "--tensor", str(path), "--equal-blocks", "2", "--blocks", "0,4", "--out", "x.json"])
    assert exc.value.code == 2
    out = str(tmp_path / "x.json")
    assert main(["learn", "ia", "--tensor", str(path), "--equal-blocks", "2", "--lam", "-1", "--out", out]) == 2
    assert main(["learn", "cf", "--tensor", str(path), "--equal-blocks", "2", "--out", out]) == 2
    assert main(["learn", "cf", "--tensor", str(path), "--blocks", "0,99", "--s", "1", "--out", out]) == 2
    assert main(["--threads", "0", "learn", "cf", "--tensor", str(path), "--equal-blocks", "2", "--s", "1",
                 "--out", out]) == 2


def test_threads_env(monkeypatch):
    monkeypatch.delenv("SPECGRAPH_THREADS", raising=False)
    assert resolve_threads(None) == 1
    monkeypatch.setenv("SPECGRAPH_THREADS", "4")
    assert resolve_threads(None) == 4 and resolve_threads(2) == 2
    monkeypatch.setenv("SPECGRAPH_THREADS", "many")
    with pytest.raises(ValidationError):
        resolve_threads(None)


def test_runtime_failure_exit_1(tmp_path):
    s = np.broadcast_to(np.eye(2, dtype=complex), (5, 2, 2)).copy()
    s[2] = [[1, 1], [1, 1]]  # singular slice
    path = tmp_path / "sing.json"
    save_tensor(CSDTensor(s, 8), path)
    assert main(["learn", "cf", "--tensor", str(path), "--equal-blocks", "2", "--s", "1",
                 "--out", str(tmp_path / "o.json")]) == 1


def test_extract_default_threshold_and_evaluate(tmp_path, capsys):
    assert DEFAULT_THRESHOLD == 0.05
    sm, _ = _smoothed_file(tmp_path)
    inv = tmp_path / "inv.json"
    save_tensor(naive_inverse(sm), inv)
    kp = tmp_path / "g.json"
    assert main(["extract", "--inverse", str(inv), "--equal-blocks", "8", "--out", str(kp),
                 "--edges-csv", str(tmp_path / "e.csv")]) == 0
    g = load_kpcg(kp)
    for layer in g.layers:
        assert all(w > 0.05 for w in layer.values())
    loose = tmp_path / "g2.json"
    assert main(["extract", "--inverse", str(inv), "--equal-blocks", "8", "--threshold", "0.0", "--out", str(loose)]) == 0
    assert sum(load_kpcg(loose).cardinalities()) >= sum(g.cardinalities())

    cards = [0, 5, 7, 7, 7, 6, 4, 2]
    pairs = [(i, j) for i in range(6) for j in range(i)]
    truth = KPCG(6, tuple({p: 1.0 for p in pairs[:c]} for c in cards))
    save_kpcg(truth, tmp_path / "truth.json")
    save_kpcg(KPCG(6, tuple({} for _ in cards)), tmp_path / "empty.json")
    capsys.readouterr()
    assert main(["evaluate", "--estimated", str(tmp_path / "empty.json"), "--truth", str(tmp_path / "truth.json")]) == 0
    assert capsys.readouterr().out.strip() == "SHD 38"


def test_evaluate_sweep_outputs(tmp_path):
    out = tmp_path / "res"
    assert main(["evaluate", "--t", "128", "--regimes", "5", "--runs", "1", "--methods", "naive,cf-fk",
                 "--out-dir", str(out), "--quiet"]) == 0
    for name in ("results.csv", "results.json", "summary.csv", "summary.json"):
        assert (out / name).is_file()
    recs = json.loads((out / "results.json").read_text())
    assert [r["method"] for r in recs] == ["naive", "cf-fk"]
    assert main(["evaluate", "--methods", "naive,glasso", "--out-dir", str(out)]) == 2


def test_pipeline(tmp_path):
    out = tmp_path / "pipe"
    argv = ["pipeline", "--t", "128", "--replicates", "30", "--seed", "2", "--half-size", "4", "--method", "cf",
            "--out-dir", str(out)]
    assert main(argv) == 0
    run = json.loads((out / "run.json").read_text())
    assert run["s"] == 7 and isinstance(run["shd"], int)
    for name in ("csd.json", "inverse.json", "kpcg.json", "edges.csv"):
        assert (out / name).is_file()
    first = (out / "kpcg.json").read_text()
    assert main(argv) == 0
    assert (out / "kpcg.json").read_text() == first
    ia = tmp_path / "pipe_ia"
    assert main(["pipeline", "--t", "128", "--replicates", "10", "--seed", "2", "--method", "ia", "--max-iters", "5",
                 "--blocks", "0,32", "--out-dir", str(ia)]) == 0
    assert json.loads((ia / "run.json").read_text())["iterations"] == 5
    assert (ia / "trace.csv").is_file()


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "specgraph" in capsys.readouterr().out
