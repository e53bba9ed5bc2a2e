import csv
import io
import json
import math

import numpy as np
import pytest

from ifest import cli, synthdata
from oracles import H_F2


def run(argv, capsys=None):
    """(exit code, stdout text, stderr text) of one CLI invocation."""
    out = io.StringIO()
    try:
        rc = cli.main([str(a) for a in argv], out=out)
    except SystemExit as exc:  # argparse usage errors
        rc = exc.code
    err = capsys.readouterr().err if capsys is not None else ""
    return rc, out.getvalue(), err


def save(path, data):
    with open(path, "w") as fh:
        cli.write_samples(data, fh)
    return str(path)


def gen_file(tmp_path, name, dist, n, seed):
    return save(tmp_path / name, synthdata.sample(dist, n, seed=seed))


def parse_csv(text):
    return list(csv.reader(io.StringIO(text)))


class TestEstimate:
    def test_uniform_entropy_example(self, tmp_path):
        u = gen_file(tmp_path, "u.csv", "uniform", 2000, 5)
        rc, out, _ = run(["estimate", "--functional", "shannon_entropy", "--x", u, "--method", "loo", "--seed", 1])
        assert rc == 0
        value = float(next(line for line in out.splitlines() if line.startswith("value:")).split()[1])
        assert -0.05 <= value <= 0.05

    def test_missing_second_sample(self, tmp_path, capsys):
        a = gen_file(tmp_path, "a.csv", "f2", 50, 1)
        rc, _, err = run(["estimate", "--functional", "kl", "--x", a], capsys)
        assert rc == 3
        assert "Y is missing" in err

    def test_bad_alpha(self, tmp_path, capsys):
        a = gen_file(tmp_path, "a.csv", "f2", 50, 1)
        b = gen_file(tmp_path, "b.csv", "uniform", 50, 2)
        rc, _, err = run(["estimate", "--functional", "tsallis_div", "--alpha", 1, "--x", a, "--y", b], capsys)
        assert rc == 2
        assert "alpha must not be 0 or 1" in err

    def test_missing_file(self, tmp_path, capsys):
        rc, _, err = run(["estimate", "--functional", "shannon", "--x", tmp_path / "nope.csv"], capsys)
        assert rc == 2
        assert "cannot read" in err

    def test_unknown_flag(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f2", 50, 1)
        assert run(["estimate", "--functional", "shannon", "--x", a, "--frobnicate"])[0] == 2

    def test_unknown_functional(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f2", 50, 1)
        assert run(["estimate", "--functional", "wasserstein", "--x", a])[0] == 2

    def test_f_divergence_needs_phi(self, tmp_path, capsys):
        a = gen_file(tmp_path, "a.csv", "f2", 50, 1)
        b = gen_file(tmp_path, "b.csv", "uniform", 50, 2)
        rc, _, err = run(["estimate", "--functional", "f_divergence", "--x", a, "--y", b], capsys)
        assert rc == 2 and "--phi" in err

    def test_json_fields(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f2", 300, 1)
        b = gen_file(tmp_path, "b.csv", "uniform", 300, 2)
        argv = ["estimate", "--functional", "kl", "--x", a, "--y", b, "--bandwidth", "0.2", "--ci", 0.9, "--json"]
        rc, out, _ = run(argv)
        assert rc == 0
        rec = json.loads(out)
        assert rec["functional"] == "kl_divergence"
        assert rec["method"] == "loo" and rec["conjectural"] is True
        assert rec["n_used"] == rec["m_used"] == 300
        assert rec["bandwidths"] == [0.2, 0.2]
        assert rec["ci_level"] == 0.9
        lo, hi = rec["ci"]
        assert lo < rec["value"] < hi
        assert rec["config"]["clamps"] == [0.0, "inf"]

    def test_text_and_json_agree(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f1", 200, 3)
        base = ["estimate", "--functional", "shannon", "--x", a, "--method", "ds", "--bandwidth", "0.25"]
        text = run(base)[1]
        rec = json.loads(run(base + ["--json"])[1])
        fields = dict(line.split(": ", 1) for line in text.splitlines())
        assert float(fields["value"]) == rec["value"]
        assert float(fields["variance_f"]) == rec["variance_f"]
        assert int(fields["n_used"]) == rec["n_used"]

    def test_degenerate_interval(self, tmp_path, capsys):
        a = gen_file(tmp_path, "a.csv", "f2", 400, 1)
        rc, out, err = run(["estimate", "--functional", "hellinger", "--x", a, "--y", a, "--ci", 0.95], capsys)
        assert rc == 4
        assert "ci: DEGENERATE" in out
        assert "degenerate" in err

    def test_degenerate_without_ci_is_fine(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f2", 400, 1)
        assert run(["estimate", "--functional", "hellinger", "--x", a, "--y", a])[0] == 0

    def test_closed_form_variance(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f2", 400, 1)
        b = gen_file(tmp_path, "b.csv", "uniform", 400, 2)
        argv = ["estimate", "--functional", "tsallis_div", "--alpha", 0.75, "--x", a, "--y", b]
        rec = json.loads(run(argv + ["--variance", "closed_form", "--ci", 0.9, "--json"])[1])
        assert rec["variance_source"] == "closed_form"
        assert rec["asymptotic_variance"] > 0
        half = 0.5 * (rec["ci"][1] - rec["ci"][0])
        z = 1.6448536269514722
        assert half == pytest.approx(z * math.sqrt(rec["asymptotic_variance"] / 800), rel=1e-9)

    def test_closed_form_variance_other_kind(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f2", 100, 1)
        b = gen_file(tmp_path, "b.csv", "uniform", 100, 2)
        rc = run(["estimate", "--functional", "kl", "--x", a, "--y", b, "--variance", "closed_form"])[0]
        assert rc == 2

    def test_bad_ci_level(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f1", 100, 1)
        assert run(["estimate", "--functional", "shannon", "--x", a, "--ci", 1.5])[0] == 2

    def test_too_few_for_split(self, tmp_path):
        a = save(tmp_path / "a.csv", np.array([[0.1], [0.5], [0.9]]))
        assert run(["estimate", "--functional", "shannon", "--x", a, "--method", "ds"])[0] == 3

    def test_column_mismatch(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f2", 60, 1)
        b = gen_file(tmp_path, "b.csv", "uniform^2", 60, 2)
        assert run(["estimate", "--functional", "kl", "--x", a, "--y", b])[0] == 3

    def test_bandwidth_and_clamp_flags(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f2", 200, 1)
        b = gen_file(tmp_path, "b.csv", "uniform", 200, 2)
        argv = ["estimate", "--functional", "kl", "--x", a, "--y", b, "--bandwidth", "0.1,0.5"]
        rec = json.loads(run(argv + ["--clamp", "0.2,20", "--kernel-order", 4, "--grid", 512, "--json"])[1])
        assert rec["bandwidths"] == [0.1, 0.5]
        assert rec["kernel_order"] == 4
        assert rec["config"]["clamps"] == [0.2, 20.0]
        assert rec["config"]["grid_points"] == 512

    @pytest.mark.parametrize("clamp", ["0.5", "2,1", "-1,3", "a,b"])
    def test_bad_clamp(self, tmp_path, clamp):
        a = gen_file(tmp_path, "a.csv", "f1", 50, 1)
        assert run(["estimate", "--functional", "shannon", "--x", a, "--clamp", clamp])[0] == 2

    def test_auto_diag(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f2xuniform", 400, 1)
        rc, out, _ = run(["estimate", "--functional", "shannon", "--x", a, "--bandwidth", "auto-diag"])
        assert rc == 0
        assert "bandwidths:" in out

    def test_conditional_flags(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f2xf1", 200, 1)
        b = gen_file(tmp_path, "b.csv", "uniform^2", 200, 2)
        argv = ["estimate", "--functional", "cond_tsallis", "--alpha", 0.75, "--zdim", 1, "--x", a, "--y", b]
        rec = json.loads(run(argv + ["--bandwidth", "0.3", "--json"])[1])
        assert math.isfinite(rec["value"])


class TestSampleFiles:
    def test_round_trip(self, tmp_path):
        data = np.random.default_rng(0).random((50, 3))
        back = cli.read_samples(save(tmp_path / "r.csv", data))
        np.testing.assert_allclose(back, data, rtol=0, atol=1e-15)

    def test_header_detected(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("x,y\n0.1,0.2\n0.3,0.4\n")
        np.testing.assert_array_equal(cli.read_samples(p), [[0.1, 0.2], [0.3, 0.4]])

    def test_rescale(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("3,7\n5,7\n9,7\n")
        got = cli.read_samples(p, rescale=True)
        np.testing.assert_allclose(got[:, 0], [0.01, 0.01 + 0.98 / 3, 0.99], rtol=1e-15)
        np.testing.assert_array_equal(got[:, 1], [0.5, 0.5, 0.5])

    @pytest.mark.parametrize("text", ["0.1,0.2\n0.3\n", "0.1\nabc\n", "", "x\n", "0.1\nnan\n"])
    def test_bad_files(self, tmp_path, text):
        p = tmp_path / "bad.csv"
        p.write_text(text)
        with pytest.raises(cli.InputError):
            cli.read_samples(p)

    def test_out_of_range_without_rescale(self, tmp_path, capsys):
        p = tmp_path / "big.csv"
        p.write_text("1.5\n2.5\n0.3\n")
        rc, _, err = run(["estimate", "--functional", "shannon", "--x", p, "--bandwidth", "0.3"], capsys)
        assert rc == 2
        assert "outside" in err
        assert run(["estimate", "--functional", "shannon", "--x", p, "--bandwidth", "0.3", "--rescale"])[0] == 0


class TestGen:
    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run(["gen", "--dist", "uniform", "--n", 5, "--seed", 7, "--out", a])[0] == 0
        assert run(["gen", "--dist", "uniform", "--n", 5, "--seed", 7, "--out", b])[0] == 0
        assert a.read_bytes() == b.read_bytes()

    def test_shape(self):
        rc, out, _ = run(["gen", "--dist", "f1xuniform", "--n", 100])
        assert rc == 0
        rows = np.array(parse_csv(out), dtype=float)
        assert rows.shape == (100, 2)
        assert rows.min() >= 0.0 and rows.max() <= 1.0

    def test_bad_n(self):
        assert run(["gen", "--dist", "uniform", "--n", 0])[0] == 2

    def test_bad_dist(self):
        assert run(["gen", "--dist", "gamma", "--n", 5])[0] == 2

    def test_round_trip_through_estimate(self, tmp_path):
        path = tmp_path / "f2.csv"
        assert run(["gen", "--dist", "f2", "--n", 100000, "--seed", 1, "--out", path])[0] == 0
        rec = json.loads(run(["estimate", "--functional", "shannon_entropy", "--method", "loo", "--x", path, "--json"])[1])
        assert abs(rec["value"] - H_F2) <= 0.05


class TestBench:
    BASE = ["bench", "--functional", "kl", "--dist", "f2", "--dist2", "uniform", "--bandwidth", "0.3"]

    def test_row_count_and_header(self):
        rc, out, _ = run(self.BASE + ["--n-list", "40,60", "--trials", 2, "--methods", "ds,loo,plugin"])
        assert rc == 0
        rows = parse_csv(out)
        assert ",".join(rows[0]) == "functional,method,n,m,trial,estimate,truth,abs_error,seconds"
        assert len(rows) - 1 == 3 * 2 * 2
        assert [r[1] for r in rows[1:]] == ["ds"] * 4 + ["loo"] * 4 + ["plugin"] * 4

    def test_abs_error_as_written(self):
        rows = parse_csv(run(self.BASE + ["--n-list", "40", "--trials", 3])[1])[1:]
        for r in rows:
            assert float(r[7]) == abs(float(r[5]) - float(r[6]))
            assert r[3] == r[2] and float(r[8]) == 0.0

    def test_truth_is_oracle(self):
        rows = parse_csv(run(self.BASE + ["--n-list", "40", "--trials", 1])[1])[1:]
        assert float(rows[0][6]) == pytest.approx(0.2625533448874696, abs=1e-8)

    def test_one_sample_m_is_zero(self):
        rows = parse_csv(run(["bench", "--functional", "shannon", "--dist", "f1", "--n-list", "30", "--trials", 1])[1])
        assert rows[1][3] == "0"

    def test_deterministic_across_workers(self, monkeypatch):
        argv = self.BASE + ["--n-list", "30,50", "--trials", 2, "--seed", 4]
        monkeypatch.setenv("IFEST_THREADS", "1")
        one = run(argv)[1]
        monkeypatch.setenv("IFEST_THREADS", "2")
        two = run(argv)[1]
        assert one == two

    def test_trials_zero(self):
        assert run(self.BASE + ["--trials", 0])[0] == 2

    def test_unknown_method(self):
        assert run(self.BASE + ["--methods", "loo,magic"])[0] == 2

    def test_missing_dist2(self):
        assert run(["bench", "--functional", "kl", "--dist", "f2", "--trials", 1])[0] == 3

    def test_bad_threads(self, monkeypatch):
        monkeypatch.setenv("IFEST_THREADS", "many")
        assert run(self.BASE + ["--n-list", "30", "--trials", 1])[0] == 2

    def test_out_file(self, tmp_path):
        path = tmp_path / "bench.csv"
        rc, out, _ = run(self.BASE + ["--n-list", "30", "--trials", 1, "--out", path])
        assert rc == 0 and out == ""
        assert path.read_text().startswith("functional,method")


class TestQQ:
    def test_single_trial(self):
        argv = ["qq", "--functional", "kl", "--dist", "f2", "--dist2", "uniform", "--n", 200, "--trials", 1]
        rc, out, _ = run(argv + ["--bandwidth", "0.2"])
        assert rc == 0
        rows = parse_csv(out)
        assert rows[0] == cli.QQ_HEADER.split(",")
        assert len(rows) == 2
        rec = dict(zip(rows[0], rows[1]))
        z = (float(rec["estimate"]) - float(rec["truth"])) / float(rec["std_error"])
        assert float(rec["standardized"]) == pytest.approx(z, rel=1e-12)
        assert float(rec["normal_quantile"]) == 0.0

    def test_sorted_and_quantile_columns(self):
        argv = ["qq", "--functional", "shannon", "--dist", "f1", "--n", 200, "--trials", 4, "--bandwidth", "0.2"]
        rows = parse_csv(run(argv)[1])[1:]
        z = [float(r[4]) for r in rows]
        assert [float(r[6]) for r in rows] == sorted(z)
        q = [float(r[5]) for r in rows]
        assert q == pytest.approx([-1.1503493803760083, -0.3186393639643752, 0.3186393639643752, 1.1503493803760083])

    def test_degenerate_pair(self, capsys):
        argv = ["qq", "--functional", "tsallis_div", "--alpha", 0.75, "--dist", "f2", "--dist2", "f2", "--n", 100]
        rc, _, err = run(argv + ["--trials", 2], capsys)
        assert rc == 4
        assert "degenerate" in err

    def test_bad_trials(self):
        assert run(["qq", "--functional", "shannon", "--dist", "f1", "--n", 100, "--trials", 0])[0] == 2


class TestAffinity:
    def test_identical_files(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f2", 500, 1)
        rc, out, _ = run(["affinity", "--inputs", f"{a},{a}"])
        assert rc == 0
        A = np.array(parse_csv(out), dtype=float)
        assert A.shape == (2, 2)
        assert 0.9 <= A[0, 1] <= 1.0

    def test_different_distributions(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f2", 1000, 1)
        b = gen_file(tmp_path, "b.csv", "uniform", 1000, 2)
        A = np.array(parse_csv(run(["affinity", "--inputs", f"{a},{b}"])[1]), dtype=float)
        assert A[0, 0] == A[1, 1] == 1.0
        assert A[0, 1] < A[0, 0]

    def test_symmetric_and_scaled(self, tmp_path):
        files = [gen_file(tmp_path, f"{k}.csv", d, 300, k) for k, d in enumerate(["f1", "f2", "uniform"])]
        argv = ["affinity", "--inputs", ",".join(files), "--divergence", "tsallis_div", "--alpha", 0.75]
        A = np.array(parse_csv(run(argv + ["--bandwidth", "0.2"])[1]), dtype=float)
        np.testing.assert_array_equal(A, A.T)
        B = np.array(parse_csv(run(argv + ["--bandwidth", "0.2", "--scale", 3])[1]), dtype=float)
        np.testing.assert_allclose(B, A**3, rtol=1e-12)

    def test_matrix_formula(self, tmp_path):
        from ifest import estimators as E

        X = synthdata.sample("f2", 300, seed=1)
        Y = synthdata.sample("uniform", 300, seed=2)
        cfg = E.EstimatorConfig(bandwidth=0.2)
        A = cli.affinity_matrix([X, Y], "hellinger", cfg, scale=2.0)
        d = 0.5 * (E.estimate_loo("hellinger", X, Y, cfg).value + E.estimate_loo("hellinger", Y, X, cfg).value)
        assert A[0, 1] == pytest.approx(math.exp(-2.0 * max(d, 0.0) ** 2), rel=1e-14)

    def test_unreadable_file(self, tmp_path, capsys):
        a = gen_file(tmp_path, "a.csv", "f2", 100, 1)
        rc, _, err = run(["affinity", "--inputs", f"{a},{tmp_path / 'missing.csv'}"], capsys)
        assert rc == 2
        assert "cannot read" in err

    def test_bad_scale(self, tmp_path):
        a = gen_file(tmp_path, "a.csv", "f2", 100, 1)
        assert run(["affinity", "--inputs", f"{a},{a}", "--scale", 0])[0] == 2
