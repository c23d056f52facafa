import json

import numpy as np
import pytest

from sketchmix.cli import main
from sketchmix.freqdesign import read_freqs
from sketchmix.model import read_gmm
from sketchmix.sketch import data_file_shape, read_sketch


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def pipeline(tmp_path):
    """Small end-to-end artifact set: data, truth, freqs, sketch."""
    paths = {
        "data": tmp_path / "d.cld",
        "truth": tmp_path / "truth.gmm",
        "freqs": tmp_path / "f.clf",
        "sketch": tmp_path / "z.cls",
        "est": tmp_path / "est.gmm",
    }
    assert run("gen", "--dim", 2, "--components", 3, "--samples", 20000,
               "--seed", 1, "--out", paths["data"],
               "--model-out", paths["truth"]) == 0
    assert run("freq", "--data", paths["data"], "--m", 150, "--kind", "ar",
               "--seed", 1, "--out", paths["freqs"]) == 0
    assert run("sketch", "--data", paths["data"], "--freqs", paths["freqs"],
               "--out", paths["sketch"]) == 0
    return paths


class TestGen:
    def test_shapes(self, pipeline):
        n, d = data_file_shape(pipeline["data"])
        assert (n, d) == (20000, 2)
        truth = read_gmm(pipeline["truth"])
        assert truth.k == 3 and truth.dim == 2
        assert truth.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_byte_determinism(self, tmp_path):
        outs = []
        for tag in ("a", "b"):
            data = tmp_path / f"{tag}.cld"
            gmm = tmp_path / f"{tag}.gmm"
            assert run("gen", "--dim", 1, "--components", 2, "--samples", 100,
                       "--seed", 7, "--out", data, "--model-out", gmm) == 0
            outs.append((data.read_bytes(), gmm.read_bytes()))
        assert outs[0] == outs[1]

    def test_zero_samples_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            run("gen", "--dim", 1, "--components", 1, "--samples", 0,
                "--seed", 0, "--out", tmp_path / "x", "--model-out",
                tmp_path / "y")
        assert err.value.code == 2

    def test_manifest_written(self, pipeline):
        manifest = json.loads(
            (pipeline["data"].parent / "d.cld.manifest.json").read_text())
        assert manifest["command"] == "gen"
        assert manifest["parameters"]["seed"] == 1
        assert "versions" in manifest


class TestFreq:
    def test_kind_byte(self, tmp_path, pipeline):
        for kind, byte in [("gauss", 0), ("fgr", 1), ("ar", 2)]:
            out = tmp_path / f"{kind}.clf"
            assert run("freq", "--data", pipeline["data"], "--m", 8,
                       "--kind", kind, "--seed", 3, "--out", out) == 0
            assert out.read_bytes()[16] == byte

    def test_missing_data_flag(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            run("freq", "--m", 8, "--seed", 0, "--out", tmp_path / "f")
        assert err.value.code == 2

    def test_determinism(self, tmp_path, pipeline):
        a, b = tmp_path / "fa.clf", tmp_path / "fb.clf"
        for out in (a, b):
            assert run("freq", "--data", pipeline["data"], "--m", 32,
                       "--kind", "ar", "--seed", 5, "--out", out) == 0
        assert a.read_bytes() == b.read_bytes()


class TestSketchAndMerge:
    def test_halves_merge_to_full(self, tmp_path, pipeline):
        full = read_sketch(pipeline["sketch"])
        # Split the data file in two, sketch each, merge.
        from sketchmix.sketch import read_data, write_data
        from sketchmix.model import Dataset
        data = read_data(pipeline["data"])
        h1, h2 = tmp_path / "h1.cld", tmp_path / "h2.cld"
        write_data(h1, Dataset(data.samples[:9000]))
        write_data(h2, Dataset(data.samples[9000:]))
        s1, s2 = tmp_path / "s1.cls", tmp_path / "s2.cls"
        merged = tmp_path / "merged.cls"
        for src, dst in ((h1, s1), (h2, s2)):
            assert run("sketch", "--data", src, "--freqs", pipeline["freqs"],
                       "--out", dst) == 0
        assert run("merge", "--out", merged, s1, s2) == 0
        out = read_sketch(merged)
        assert out.count == full.count
        np.testing.assert_allclose(out.values, full.values, atol=1e-12)

    def test_merge_single_input_identity(self, tmp_path, pipeline):
        out = tmp_path / "copy.cls"
        assert run("merge", "--out", out, pipeline["sketch"]) == 0
        assert out.read_bytes() == pipeline["sketch"].read_bytes()

    def test_merge_fingerprint_mismatch_exit3(self, tmp_path, pipeline, capsys):
        other_freqs = tmp_path / "other.clf"
        other_sketch = tmp_path / "other.cls"
        assert run("freq", "--data", pipeline["data"], "--m", 150,
                   "--kind", "ar", "--seed", 99, "--out", other_freqs) == 0
        assert run("sketch", "--data", pipeline["data"], "--freqs",
                   other_freqs, "--out", other_sketch) == 0
        code = run("merge", "--out", tmp_path / "bad.cls",
                   pipeline["sketch"], other_sketch)
        assert code == 3
        assert "different frequency sets" in capsys.readouterr().err

    def test_chunked_sketch_identical(self, tmp_path, pipeline):
        chunked = tmp_path / "chunked.cls"
        assert run("sketch", "--data", pipeline["data"], "--freqs",
                   pipeline["freqs"], "--out", chunked,
                   "--chunk-size", 777) == 0
        a = read_sketch(chunked)
        b = read_sketch(pipeline["sketch"])
        np.testing.assert_allclose(a.values, b.values, atol=1e-12)


class TestEstimateAndEval:
    def test_end_to_end(self, pipeline, capsys):
        assert run("estimate", "--sketch", pipeline["sketch"], "--freqs",
                   pipeline["freqs"], "--k", 3, "--algo", "clompr",
                   "--seed", 2, "--out", pipeline["est"]) == 0
        est = read_gmm(pipeline["est"])
        assert est.k == 3
        assert est.weights.sum() == pytest.approx(1.0, abs=1e-12)

        assert run("eval", "kl", "--true", pipeline["truth"], "--est",
                   pipeline["est"], "--samples", 50000, "--seed", 3) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        name, value, stderr = lines[0].split()
        assert name == "kl_sym"
        assert float(value) < 1.0
        assert float(stderr) > 0

    def test_estimate_determinism(self, tmp_path, pipeline):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{tag}.gmm"
            assert run("estimate", "--sketch", pipeline["sketch"], "--freqs",
                       pipeline["freqs"], "--k", 2, "--algo", "clompr",
                       "--seed", 11, "--out", out) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_unknown_algo_usage_error(self, pipeline, tmp_path):
        with pytest.raises(SystemExit) as err:
            run("estimate", "--sketch", pipeline["sketch"], "--freqs",
                pipeline["freqs"], "--k", 1, "--algo", "magic",
                "--seed", 0, "--out", tmp_path / "x.gmm")
        assert err.value.code == 2

    def test_estimate_fingerprint_mismatch_exit3(self, tmp_path, pipeline):
        other = tmp_path / "other.clf"
        assert run("freq", "--data", pipeline["data"], "--m", 150,
                   "--kind", "ar", "--seed", 55, "--out", other) == 0
        assert run("estimate", "--sketch", pipeline["sketch"], "--freqs",
                   other, "--k", 1, "--seed", 0,
                   "--out", tmp_path / "x.gmm") == 3

    def test_eval_kl_self_is_noise(self, pipeline, capsys):
        assert run("eval", "kl", "--true", pipeline["truth"], "--est",
                   pipeline["truth"], "--samples", 20000, "--seed", 4) == 0
        out = capsys.readouterr().out.splitlines()
        _, value, stderr = out[0].split()
        assert abs(float(value)) <= 3 * max(float(stderr), 1e-15)

    def test_eval_mmd_identical_zero(self, pipeline, capsys):
        assert run("eval", "mmd", "--true", pipeline["truth"], "--est",
                   pipeline["truth"], "--m", 1000, "--seed", 5) == 0
        _, value, stderr = capsys.readouterr().out.split()
        assert float(value) == 0.0


class TestBoundsCommand:
    def test_gauss_output(self, capsys):
        assert run("bounds", "gauss", "--dim", 1, "--sigma2-min", 1.0,
                   "--sigma2-max", 1.0, "--mean-bound", 0.0, "--radius", 1.0,
                   "--eta", 1.0, "--rho", 0.7357588823428847,
                   "--a", 40.0) == 0
        out = dict(line.split() for line in
                   capsys.readouterr().out.strip().splitlines())
        assert out["A_branch"] == "2/eta"
        assert int(out["m_lower_bound"]) == 553
        assert float(out["log_covering_number"]) > 0
        assert "D" in out and "log_D" in out

    def test_gmm_output(self, capsys):
        assert run("bounds", "gmm", "--dim", 2, "--k", 3, "--eta", 0.5,
                   "--rho", 0.05) == 0
        out = dict(line.split() for line in
                   capsys.readouterr().out.strip().splitlines())
        assert int(out["m_lower_bound"]) > 0


class TestSweep:
    def test_grid_shape(self, tmp_path):
        out = tmp_path / "table.csv"
        assert run("sweep", "--dims", 1, 2, "--ks", 1, 2, "--m-factors",
                   2.0, 4.0, "--seeds", 0, 1, "--samples", 2000,
                   "--kl-samples", 2000, "--mmd-samples", 2000,
                   "--out", out) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "d,K,m,seed,kl,mmd,wall_ms"
        assert len(lines) == 17  # header + 2*2*2*2 rows

    def test_resume_skips_completed(self, tmp_path):
        out = tmp_path / "table.csv"
        args = ["sweep", "--dims", 1, "--ks", 1, "--m-factors", 2.0,
                "--seeds", 0, 1, "--samples", 1000, "--kl-samples", 1000,
                "--mmd-samples", 1000, "--out", out]
        assert run(*args) == 0
        first = out.read_text()
        assert run(*args) == 0  # all rows already present
        assert out.read_text() == first

    def test_mismatched_resume_rejected(self, tmp_path):
        out = tmp_path / "table.csv"
        base = ["--ks", 1, "--m-factors", 2.0, "--seeds", 0, "--samples",
                1000, "--kl-samples", 1000, "--mmd-samples", 1000,
                "--out", out]
        assert run("sweep", "--dims", 1, *base) == 0
        assert run("sweep", "--dims", 2, *base) == 2

    def test_empty_grid_header_only(self, tmp_path):
        out = tmp_path / "empty.csv"
        assert run("sweep", "--out", out) == 0
        assert out.read_text().strip() == "d,K,m,seed,kl,mmd,wall_ms"
