import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from ntf_patterns.artifacts import read_csv, read_json, read_matrix
from ntf_patterns.cli import REPORT_FILES, main
from ntf_patterns.config import OUTPUT_ENV, PipelineConfig, apply_overrides, load_config
from ntf_patterns.parafac import FitConfig
from ntf_patterns.tensor import FactorModel, relative_error
from ntf_patterns.artifacts import load_tensor

DATA = Path(__file__).parent / "data"

SMALL = [
    "--set", "n_runs=2",
    "--set", "cc_ranks=[1,2,3,4]",
    "--set", "k_range=[1,2,3,4,5,6,7]",
    "--set", "synthetic.n_users=80",
    "--set", "synthetic.n_weeks=12",
    "--set", "synthetic.mean_count=20",
    "--set", "synthetic.coupling=0.6",
]


def run(out, *args):
    return main([args[0], "--output", str(out), *SMALL, *args[1:]])


def numeric_files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run(out, "run") == 0
    return out


class TestConfig:
    def test_defaults(self, monkeypatch):
        monkeypatch.delenv(OUTPUT_ENV, raising=False)
        cfg = PipelineConfig()
        assert cfg.k == 5 and cfg.n_runs == 20 and cfg.cc_threshold == 85.0
        assert cfg.representative_fraction == 0.10 and cfg.cluster_method == "kmedoids"
        assert cfg.output_dir == "ntf_output"
        assert cfg.fit.fit_config(cfg.seed) == FitConfig()

    def test_env_output(self, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, "/tmp/somewhere")
        assert PipelineConfig().output_dir == "/tmp/somewhere"

    def test_round_trip(self, tmp_path):
        cfg = apply_overrides(PipelineConfig(), ["synthetic.n_users=10", "calendar.start=2017-04-01",
                                                 "fit.rank=4", "k=3"])
        path = tmp_path / "c.json"
        path.write_text(cfg.to_json())
        again = load_config(path)
        assert again.to_dict() == cfg.to_dict()
        assert again.synthetic.n_users == 10 and again.fit.rank == 4

    @pytest.mark.parametrize("item", ["nope=1", "fit.nope=1", "k", "cluster_method=\"ward\""])
    def test_bad_overrides(self, item):
        with pytest.raises(ValueError):
            apply_overrides(PipelineConfig(), [item])


class TestCommands:
    def test_missing_receipts(self, tmp_path, caplog):
        missing = tmp_path / "absent.csv"
        code = main(["ingest", "--output", str(tmp_path), "--set", f"receipts={missing}"])
        assert code != 0
        assert str(missing) in caplog.text

    def test_bad_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_ingest_round_trip(self, tmp_path):
        code = main(["ingest", "--output", str(tmp_path),
                     "--set", f"receipts={DATA / 'receipts_3weeks.csv'}",
                     "--set", "calendar.start=2017-04-03", "--set", "calendar.end=2017-04-23",
                     "--set", f"demographics={DATA / 'demographics_small.csv'}"])
        assert code == 0
        t, users, meta = load_tensor(tmp_path / "tensor")
        assert t.shape == (2, 7, 3) and t.sum() == 8 and users == ["a", "b"]
        assert meta["week_starts"] == ["2017-04-03", "2017-04-10", "2017-04-17"]
        report = read_json(tmp_path / "ingest_report.json")
        assert report["receipts"]["n_out_of_window"] == 2
        assert report["demographics"]["n_errors"] == 2

    def test_empty_window(self, tmp_path, caplog):
        code = main(["ingest", "--output", str(tmp_path),
                     "--set", f"receipts={DATA / 'receipts_3weeks.csv'}",
                     "--set", "calendar.start=2018-01-01", "--set", "calendar.end=2018-02-01"])
        assert code == 1
        assert "no records" in caplog.text

    def test_stage_order_enforced(self, tmp_path, caplog):
        assert main(["fit", "--output", str(tmp_path)]) == 1
        assert "not found" in caplog.text

    def test_ccscan_rank_one(self, tmp_path):
        from ntf_patterns.artifacts import save_tensor
        t = np.einsum("i,j,k->ijk", np.arange(1.0, 7.0), np.linspace(1, 2, 7), np.ones(4))
        save_tensor(tmp_path / "tensor", t, [f"u{i}" for i in range(6)])
        assert main(["cc-scan", "--output", str(tmp_path), "--set", "cc_ranks=[1]", "--set", "n_runs=2"]) == 0
        rep = read_json(tmp_path / "ccscan" / "report.json")
        assert rep["selected_rank"] == 1
        assert abs(rep["table"][0]["mean"] - 100.0) <= 1e-6

    def test_ccscan_single_run_warns(self, tmp_path, caplog):
        from ntf_patterns.artifacts import save_tensor
        t = np.einsum("i,j,k->ijk", np.arange(1.0, 5.0), np.ones(7), np.ones(3))
        save_tensor(tmp_path / "tensor", t, [f"u{i}" for i in range(4)])
        assert main(["cc-scan", "--output", str(tmp_path), "--set", "cc_ranks=[1]", "--set", "n_runs=1"]) == 0
        assert "confidence" in caplog.text
        _, rows = read_csv(tmp_path / "ccscan" / "ccscan.csv")
        header, _ = read_csv(tmp_path / "ccscan" / "ccscan.csv")
        assert rows[0][header.index("ci_low")] == ""

    def test_stats_without_demographics(self, tmp_path, pipeline, caplog):
        work = tmp_path / "w"
        shutil.copytree(pipeline, work)
        (work / "demographics.csv").unlink()
        shutil.rmtree(work / "stats")
        assert main(["stats", "--output", str(work)]) == 0
        assert "skipped" in caplog.text
        assert not (work / "stats").exists()

    def test_cluster_method_switch(self, tmp_path, pipeline):
        work = tmp_path / "w"
        shutil.copytree(pipeline, work)
        assert main(["cluster", "--output", str(work), "--set", "cluster_method=\"kmeans\"", "--set", "k=3"]) == 0
        assert read_json(work / "cluster" / "manifest.json")["method"] == "kmeans"


class TestPipeline:
    def test_selected_rank(self, pipeline):
        assert read_json(pipeline / "ccscan" / "report.json")["selected_rank"] == 3

    def test_factor_shapes_and_manifest_error(self, pipeline):
        t, _, _ = load_tensor(pipeline / "tensor")
        _, _, A = read_matrix(pipeline / "fit" / "factors_A.csv")
        _, _, B = read_matrix(pipeline / "fit" / "factors_B.csv")
        _, _, C = read_matrix(pipeline / "fit" / "factors_C.csv")
        assert A.shape == (80, 3) and B.shape == (7, 3) and C.shape == (12, 3)
        _, rows = read_csv(pipeline / "fit" / "weights.csv")
        w = np.array([float(r[1]) for r in rows])
        err = relative_error(t, FactorModel(A, B, C, w))
        assert err == pytest.approx(read_json(pipeline / "fit" / "manifest.json")["relative_error"], rel=1e-12)

    def test_cluster_defaults(self, pipeline):
        manifest = read_json(pipeline / "cluster" / "manifest.json")
        assert manifest["k"] == 5 and manifest["method"] == "kmedoids"
        _, rows = read_csv(pipeline / "cluster" / "clusters.csv")
        assert {int(r[1]) for r in rows} == {1, 2, 3, 4, 5}

    def test_table_s1_columns(self, pipeline):
        header, rows = read_csv(pipeline / "stats" / "chi2_pairwise.csv")
        assert header[:5] == ["attribute", "cluster_x", "cluster_y", "chi2", "significance"]
        assert len(rows) == 4 * 10
        assert {r[0] for r in rows} == {"Gender", "Age range", "Marital status", "Child"}

    def test_report_contents(self, pipeline):
        files = sorted(p.name for p in (pipeline / "report").iterdir())
        assert files == sorted(REPORT_FILES)
        manifest = read_json(pipeline / "report" / "manifest.json")
        assert manifest["seed"] == 0 and set(manifest["versions"]) >= {"numpy", "scipy"}

    def test_rerun_byte_identical(self, tmp_path):
        # The manifest records output_dir, so both runs use the same directory.
        assert run(tmp_path, "run") == 0
        before = numeric_files(tmp_path)
        assert run(tmp_path, "run") == 0
        assert numeric_files(tmp_path) == before

    def test_hash_tracks_inputs(self, tmp_path):
        src = tmp_path / "r.csv"
        shutil.copy(DATA / "receipts_3weeks.csv", src)
        args = ["--output", str(tmp_path / "o"), "--set", f"receipts={src}", "--set", f"demographics={DATA / 'demographics_small.csv'}"]
        from ntf_patterns.cli import _input_hashes
        from ntf_patterns.config import apply_overrides as ov
        assert main(["ingest", *args]) == 0
        cfg = ov(PipelineConfig(), [f"receipts={json.dumps(str(src))}", f"output_dir={json.dumps(str(tmp_path / 'o'))}",
                                    f"demographics={json.dumps(str(DATA / 'demographics_small.csv'))}"])
        h1 = _input_hashes(cfg)
        assert main(["ingest", *args]) == 0
        assert _input_hashes(cfg) == h1
        with open(src, "a") as fh:
            fh.write("c,2017-04-12,tea,100\n")
        assert main(["ingest", *args]) == 0
        h2 = _input_hashes(cfg)
        assert h2["receipts"] != h1["receipts"] and h2["tensor"] != h1["tensor"]
        assert h2["demographics"] == h1["demographics"]
