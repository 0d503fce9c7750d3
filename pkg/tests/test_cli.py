"""Command-line front end: exit codes, trace schema and stdout discipline."""
import json

import numpy as np
import pytest

from bbgp.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, RunConfig, main, read_params

TRACE_FIELDS = {"step", "objective", "bias_bound", "iters", "lanczos_t", "hp", "wall_ms", "config_fp"}


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def train(tmp_path, capsys, *extra, steps=20, name="runs"):
    out = tmp_path / name
    code, stdout, err = run(["train", "--synth", "256,2", "--steps", steps, "--seeds", "0", "--out", out, *extra],
                            capsys)
    assert code == EXIT_OK, err
    return out, json.loads(stdout)


def read_trace(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


class TestTrain:
    def test_synth_schema(self, tmp_path, capsys):
        out, summary = train(tmp_path, capsys, "--eval-every", 5)
        trace = read_trace(out / "trace_seed0.jsonl")
        assert len(trace) == 20
        assert [r["step"] for r in trace] == list(range(20))
        for rec in trace:
            assert TRACE_FIELDS <= set(rec)
            assert rec["config_fp"] == summary["config_fp"]
            assert rec["bias_bound"] >= 0 and rec["iters"] >= 1
        assert ["rmse" in r for r in trace] == [i % 5 == 4 or i == 19 for i in range(20)]
        assert (out / "summary.json").is_file() and (out / "params_seed0.txt").is_file()

    def test_summary_quantiles(self, tmp_path, capsys):
        _, summary = train(tmp_path, capsys, "--seeds", "0,1,2", steps=5)
        assert [s["seed"] for s in summary["seeds"]] == [0, 1, 2]
        q = summary["rmse"]
        assert q["q25"] <= q["median"] <= q["q75"]
        assert q["median"] == pytest.approx(np.median([s["rmse"] for s in summary["seeds"]]))

    def test_stdout_is_json_only(self, tmp_path, capsys):
        code, out, _ = run(["-v", "train", "--synth", "64,1", "--steps", 3, "--seeds", "0", "--out", tmp_path],
                           capsys)
        assert code == EXIT_OK
        lines = out.strip().splitlines()
        assert len(lines) == 1
        json.loads(lines[0])

    def test_missing_file(self, tmp_path, capsys):
        missing = tmp_path / "absent.csv"
        code, out, err = run(["train", "--data", missing, "--out", tmp_path], capsys)
        assert code == EXIT_DATA
        assert str(missing) in err and out == ""

    def test_epsilon_work(self, tmp_path, capsys):
        _, loose = train(tmp_path, capsys, "--epsilon", 10, name="eps10")
        _, tight = train(tmp_path, capsys, "--epsilon", 1, name="eps1")
        assert loose["seeds"][0]["total_iters"] <= tight["seeds"][0]["total_iters"]

    def test_reproducible(self, tmp_path, capsys):
        a, _ = train(tmp_path, capsys, steps=8, name="a")
        b, _ = train(tmp_path, capsys, steps=8, name="b")
        strip = lambda recs: [{k: v for k, v in r.items() if k != "wall_ms"} for r in recs]
        assert strip(read_trace(a / "trace_seed0.jsonl")) == strip(read_trace(b / "trace_seed0.jsonl"))

    @pytest.mark.parametrize("argv", [
        ["train", "--steps", "3"],
        ["train", "--synth", "64,1", "--data", "x.csv"],
        ["train", "--synth", "64,1", "--epsilon", "0"],
        ["train", "--synth", "64"],
        ["train", "--synth", "64,1", "--seeds", "a,b"],
        ["train", "--synth", "64,1", "--probes", "0"],
        ["bogus"],
        [],
    ])
    def test_config_errors(self, argv, capsys):
        code, out, err = run(argv, capsys)
        assert code == EXIT_CONFIG
        assert out == "" and "configuration error" in err


class TestEval:
    def test_matches_last_trace_rmse(self, tmp_path, capsys):
        out, _ = train(tmp_path, capsys, steps=15)
        last = read_trace(out / "trace_seed0.jsonl")[-1]
        code, stdout, err = run(["eval", "--params", out / "params_seed0.txt"], capsys)
        assert code == EXIT_OK, err
        result = json.loads(stdout)
        assert abs(result["rmse"] - last["rmse"]) <= 1e-9
        assert result["lml_kind"] == "exact"

    def test_perfect_interpolation(self, tmp_path, capsys):
        # noise-free smooth target: test error must fall well below a 0.01 noise level
        x = np.random.default_rng(0).uniform(size=256)
        data = tmp_path / "f.csv"
        np.savetxt(data, np.c_[x, np.sin(3 * x)], delimiter=",", header="x,y", comments="")
        out = tmp_path / "runs"
        assert run(["train", "--data", data, "--steps", 100, "--seeds", 0, "--out", out], capsys)[0] == EXIT_OK
        code, stdout, _ = run(["eval", "--params", out / "params_seed0.txt"], capsys)
        assert code == EXIT_OK
        assert json.loads(stdout)["rmse"] < 0.01

    def test_malformed_params(self, tmp_path, capsys):
        bad = tmp_path / "p.txt"
        bad.write_text("seed = 0\nsynth = 64,1\nlengthscale.0 = abc\n")
        assert run(["eval", "--params", bad], capsys)[0] == EXIT_CONFIG
        bad.write_text("this line has no separator\n")
        assert run(["eval", "--params", bad], capsys)[0] == EXIT_CONFIG
        assert run(["eval", "--params", tmp_path / "none.txt"], capsys)[0] == EXIT_CONFIG

    def test_dimension_mismatch(self, tmp_path, capsys):
        out, _ = train(tmp_path, capsys, steps=2)
        code, _, err = run(["eval", "--synth", "64,3", "--params", out / "params_seed0.txt"], capsys)
        assert code == EXIT_CONFIG and "lengthscales" in err

    def test_params_round_trip(self, tmp_path, capsys):
        out, _ = train(tmp_path, capsys, steps=4)
        hp, meta = read_params(out / "params_seed0.txt")
        trace_hp = read_trace(out / "trace_seed0.jsonl")[-1]["hp"]
        assert hp.as_dict() == trace_hp
        assert meta["synth"] == "256,2"


class TestValidateBounds:
    def test_default_passes(self, capsys):
        code, out, _ = run(["validate-bounds", "--scale", "0.2"], capsys)
        rows = [json.loads(line) for line in out.splitlines()]
        assert code == EXIT_OK
        assert {r["check"] for r in rows} == {"log-compression-psd", "quadrature-sandwich", "cg-bracket", "gradient-fd"}
        assert all(r["status"] == "PASS" for r in rows)

    def test_radau_fault_detected(self, capsys):
        code, out, _ = run(["validate-bounds", "--scale", "0.2", "--inject-fault", "radau-side"], capsys)
        rows = {r["check"]: r for r in map(json.loads, out.splitlines())}
        assert code == EXIT_NUMERIC
        assert rows["quadrature-sandwich"]["status"] == "FAIL"


class TestSynth:
    def test_writes_csv(self, tmp_path, capsys):
        path = tmp_path / "s.csv"
        code, out, _ = run(["synth", "--synth", "40,3", "--synth-seed", 2, "--out", path], capsys)
        assert code == EXIT_OK
        assert json.loads(out)["truth"]["noise_variance"] == 0.1
        arr = np.loadtxt(path, delimiter=",", skiprows=1)
        assert arr.shape == (40, 4)


def test_fingerprint_ignores_output_dir():
    a = RunConfig("train", synth=(64, 1), out="x")
    b = RunConfig("train", synth=(64, 1), out="y")
    c = RunConfig("train", synth=(64, 1), epsilon=2.0)
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()
