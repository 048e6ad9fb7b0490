"""Command line driver: argument handling, outputs, reproducibility."""

import numpy as np
import pytest

from octfuse import cli, fusion, mesh

DS_ARGS = ["--views", "6", "--image-size", "64",
           "--resolution", "32", "--voxel-size", "0.008"]
FAST = ["--iterations", "8"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    assert cli.main(["synth", "--out", str(out)] + DS_ARGS) == 0
    return out


@pytest.fixture(scope="module")
def octree_run(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("cli_oct") / "run"
    code = cli.main(["fuse", "--data", str(dataset), "--out", str(out),
                     "--mode", "octree", "--dump-tree",
                     "--join-log", str(out.parent / "joins.txt")] + FAST)
    assert code == 0
    return out


@pytest.fixture(scope="module")
def both_run(tmp_path_factory, dataset, capsys_module):
    out = tmp_path_factory.mktemp("cli_both") / "run"
    code, lines = capsys_module(
        ["fuse", "--data", str(dataset), "--out", str(out), "--mode", "both",
         "--dump-dense", str(out.parent / "u.npy")] + FAST)
    assert code == 0
    return out, lines


@pytest.fixture(scope="module")
def capsys_module():
    import contextlib
    import io

    def run(argv):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = cli.main(argv)
        return code, buf.getvalue().splitlines()

    return run


class TestSynth:
    def test_summary_line_and_files(self, dataset, capsys_module):
        # rerun into a fresh directory to capture the summary line
        out = dataset.parent / "ds2"
        code, lines = capsys_module(["synth", "--out", str(out)] + DS_ARGS)
        assert code == 0
        assert lines == [f"dataset {out} views 6 resolution 32 "
                         f"voxel_size {0.008:.17g}"]
        for name in ("intrinsics.txt", "domain.txt", "ground_truth.txt",
                     "frame_0000.pfm", "frame_0000.pose.txt",
                     "frame_0005.pfm"):
            assert (out / name).is_file()

    def test_rejects_zero_views(self, tmp_path):
        assert cli.main(["synth", "--out", str(tmp_path / "x"),
                         "--views", "0"]) == 2

    def test_rejects_tiny_images(self, tmp_path):
        assert cli.main(["synth", "--out", str(tmp_path / "x"),
                         "--image-size", "8"]) == 2

    def test_rejects_sphere_larger_than_grid(self, tmp_path):
        assert cli.main(["synth", "--out", str(tmp_path / "x"), "--views",
                         "4", "--resolution", "16",
                         "--voxel-size", "0.002"]) == 2

    def test_fine_scale_switches_defaults(self, tmp_path, capsys_module):
        out = tmp_path / "fine"
        code, lines = capsys_module(
            ["synth", "--out", str(out), "--views", "1", "--fine-scale",
             "--image-size", "64", "--radius", "0.06", "--orbit", "0.4"])
        assert code == 0
        assert "resolution 256 voxel_size 0.001" in lines[0]

    def test_fine_scale_keeps_explicit_resolution(self, tmp_path,
                                                   capsys_module):
        out = tmp_path / "fine32"
        code, lines = capsys_module(
            ["synth", "--out", str(out), "--views", "1", "--fine-scale",
             "--image-size", "64", "--resolution", "32",
             "--voxel-size", "0.008"])
        assert code == 0
        assert f"resolution 32 voxel_size {0.008:.17g}" in lines[0]


class TestFuseOutputs:
    def test_octree_artifacts(self, octree_run):
        assert (octree_run / "P_octree.ply").is_file()
        assert (octree_run / "report_octree.csv").is_file()
        assert (octree_run / "tree_octree.txt").is_file()
        assert (octree_run.parent / "joins.txt").is_file()
        assert not (octree_run / "P_dense.ply").exists()

    def test_report_header_echoes_defaults(self, octree_run):
        header, stats = fusion.read_report(octree_run / "report_octree.csv")
        assert header["mode"] == "octree"
        assert header["views"] == "6"
        assert header["resolution"] == "32"
        assert header["eps"] == "0.25"
        assert header["lambda"] == "0.3"
        assert header["iterations"] == "8"
        assert len(stats) == 8

    def test_tree_dump_parses(self, octree_run):
        lines = (octree_run / "tree_octree.txt").read_text().splitlines()
        assert len(lines) > 100
        first = lines[0].split()
        assert first[0] == "0" and len(first) == 7

    def test_join_log_lines(self, octree_run):
        text = (octree_run.parent / "joins.txt").read_text()
        for line in text.splitlines():
            assert len(line.split()) == 12

    def test_mesh_is_a_sphere(self, octree_run, dataset, capsys_module):
        code, lines = capsys_module(
            ["compare", "--mesh-a", str(octree_run / "P_octree.ply"),
             "--ground-truth", str(dataset / "ground_truth.txt")])
        assert code == 0
        mean, std, dmax = (float(t) for t in lines[0].split())
        # 8 mm voxels: the mesh should sit within a voxel of the sphere
        assert mean < 0.004 and dmax < 0.012

    def test_both_mode_summary(self, both_run):
        out, lines = both_run
        assert (out / "P_octree.ply").is_file()
        assert (out / "P_dense.ply").is_file()
        assert (out / "report_dense.csv").is_file()
        assert (out.parent / "u.npy").is_file()
        tags = [ln.split()[0] for ln in lines]
        assert tags == ["octree", "dense", "octree_vs_dense",
                        "quantization_error"]
        oct_line = lines[0].split()
        assert int(oct_line[1]) > 0 and int(oct_line[2]) > 0
        dense_line = lines[1].split()
        assert int(dense_line[1]) == 32 ** 3
        diff_line = lines[2].split()
        assert float(diff_line[1]) < 0.008

    def test_both_mode_header_carries_quantization_error(self, both_run):
        out, _ = both_run
        header, _ = fusion.read_report(out / "report_octree.csv")
        assert "quantization_error_sum" in header
        assert "quantization_error_volume_weighted" in header
        u = np.load(out.parent / "u.npy")
        assert u.shape == (32, 32, 32)

    def test_missing_dataset_is_a_runtime_error(self, tmp_path):
        assert cli.main(["fuse", "--data", str(tmp_path / "nope"),
                         "--out", str(tmp_path / "o")]) == 1

    def test_bad_flag_value_is_a_usage_error(self, dataset, tmp_path):
        assert cli.main(["fuse", "--data", str(dataset), "--out",
                         str(tmp_path / "o"), "--eps", "-1"]) == 2


class TestConfig:
    def test_flags_override_config(self, dataset, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("lambda = 0.5\niterations = 4\n# comment\n")
        out = tmp_path / "o"
        code = cli.main(["fuse", "--data", str(dataset), "--out", str(out),
                         "--config", str(cfg), "--lambda", "0.7"])
        assert code == 0
        header, stats = fusion.read_report(out / "report_octree.csv")
        assert header["lambda"] == "0.7"
        assert header["iterations"] == "4"
        assert len(stats) == 4

    def test_unknown_key_rejected(self, dataset, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("lambda_typo = 0.5\n")
        assert cli.main(["fuse", "--data", str(dataset), "--out",
                         str(tmp_path / "o"), "--config", str(cfg)]) == 2

    def test_bad_value_rejected(self, dataset, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("iterations = soon\n")
        assert cli.main(["fuse", "--data", str(dataset), "--out",
                         str(tmp_path / "o"), "--config", str(cfg)]) == 2

    def test_malformed_line_rejected(self, dataset, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("iterations 4\n")
        assert cli.main(["fuse", "--data", str(dataset), "--out",
                         str(tmp_path / "o"), "--config", str(cfg)]) == 2

    def test_missing_config_file(self, dataset, tmp_path):
        assert cli.main(["fuse", "--data", str(dataset), "--out",
                         str(tmp_path / "o"), "--config",
                         str(tmp_path / "none.cfg")]) == 2


class TestCompare:
    def test_self_comparison_is_zero(self, octree_run, capsys_module):
        ply = str(octree_run / "P_octree.ply")
        code, lines = capsys_module(
            ["compare", "--mesh-a", ply, "--mesh-b", ply])
        assert code == 0
        assert lines[0] == "0 0 0"

    def test_requires_exactly_one_reference(self, octree_run, dataset):
        ply = str(octree_run / "P_octree.ply")
        assert cli.main(["compare", "--mesh-a", ply]) == 2
        assert cli.main(["compare", "--mesh-a", ply, "--mesh-b", ply,
                         "--ground-truth",
                         str(dataset / "ground_truth.txt")]) == 2

    def test_missing_mesh_file(self, tmp_path):
        assert cli.main(["compare", "--mesh-a", str(tmp_path / "no.ply"),
                         "--mesh-b", str(tmp_path / "no.ply")]) == 1

    def test_out_ply_and_csv(self, octree_run, dataset, tmp_path,
                             capsys_module):
        ply = str(octree_run / "P_octree.ply")
        out_ply = tmp_path / "colored.ply"
        out_csv = tmp_path / "d.csv"
        code, _ = capsys_module(
            ["compare", "--mesh-a", ply, "--ground-truth",
             str(dataset / "ground_truth.txt"), "--out-ply", str(out_ply),
             "--out-csv", str(out_csv)])
        assert code == 0
        colored = mesh.read_ply(out_ply)
        assert colored.quality is not None
        assert len(colored.quality) == len(colored.vertices)
        rows = out_csv.read_text().splitlines()
        assert rows[0] == "index,distance"
        assert len(rows) == 1 + len(colored.vertices)
        i, d = rows[1].split(",")
        assert i == "0" and float(d) >= 0.0


class TestDeterminism:
    def test_repeat_runs_are_bit_identical(self, dataset, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            code = cli.main(["fuse", "--data", str(dataset), "--out",
                             str(out), "--mode", "both", "--dump-tree"]
                            + FAST)
            assert code == 0
            outs.append(out)
        a, b = outs
        assert ((a / "P_octree.ply").read_bytes()
                == (b / "P_octree.ply").read_bytes())
        assert ((a / "P_dense.ply").read_bytes()
                == (b / "P_dense.ply").read_bytes())
        assert ((a / "tree_octree.txt").read_bytes()
                == (b / "tree_octree.txt").read_bytes())
        for name in ("report_octree.csv", "report_dense.csv"):
            ra = (a / name).read_text().splitlines()
            rb = (b / name).read_text().splitlines()
            assert len(ra) == len(rb)
            wall_col = ra[ra.index([ln for ln in ra if ln.startswith("iter,")][0])].split(",").index("wall_ms")
            for la, lb in zip(ra, rb):
                if la.startswith("#") or la.startswith("iter,"):
                    assert la == lb
                    continue
                ca, cb = la.split(","), lb.split(",")
                del ca[wall_col], cb[wall_col]
                assert ca == cb


class TestParsing:
    def test_help_exits_zero(self):
        assert cli.main(["--help"]) == 0
        assert cli.main(["fuse", "--help"]) == 0

    def test_unknown_command_is_usage_error(self):
        assert cli.main(["frobnicate"]) == 2

    def test_missing_required_flag(self):
        assert cli.main(["synth"]) == 2

    def test_bool_parsing(self):
        assert cli._parse_bool("1") and cli._parse_bool("True")
        assert not cli._parse_bool("off")
        with pytest.raises(ValueError):
            cli._parse_bool("maybe")
