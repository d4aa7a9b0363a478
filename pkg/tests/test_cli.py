"""Command-line interface: recipes, runs, oracles, verify suites and exit codes."""
import json
import subprocess
import sys

import pytest

from tfrecipes.cli import main
from tfrecipes.ir import deserialize


def cli(capsys, *argv):
    try:
        code = main(list(argv))
    except SystemExit as stop:
        code = stop.code
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def dyck_file(tmp_path, capsys):
    path = tmp_path / "dyck.json"
    assert cli(capsys, "build", "program.dyck", "--k", "1", "-o", str(path))[0] == 0
    return path


class TestBuild:
    def test_add_fragment(self, tmp_path, capsys):
        path = tmp_path / "add.json"
        code, out, _ = cli(capsys, "build", "ffn.add", "-o", str(path))
        assert code == 0 and "d_in=2" in out and "d_out=1" in out
        doc = json.loads(path.read_text())
        assert doc["fragment"] == "ffn"

    def test_dyck_two_layers(self, dyck_file):
        spec = deserialize(dyck_file.read_bytes())
        assert len(spec.layers) == 2

    @pytest.mark.parametrize("name, params", [
        ("ffn.comparator", ["--kind", "gt", "--eps", "0.5"]),
        ("ffn.boolean", ["--table", "0110"]),
        ("ffn.cpwl", ["--xs=-1,0,1", "--ys", "1,0,1"]),
        ("attn.lookup", ["--encoding", "quadratic"]),
        ("attn.predecessor", ["--variant", "alternating"]),
        ("norm.amplifier", ["--delta", "0.01", "--d", "4"]),
        ("program.dyck", ["--k", "2", "--depth", "2"]),
        ("program.induction", ["--variant", "frequent", "--alphabet", "AB", "--max-len", "8"]),
    ])
    def test_recipes(self, tmp_path, capsys, name, params):
        path = tmp_path / "out.json"
        code, _, err = cli(capsys, "build", name, *params, "-o", str(path))
        assert code == 0, err
        assert json.loads(path.read_text())["version"]

    def test_lookup_length_parameter_error(self, capsys, tmp_path):
        code, _, _ = cli(capsys, "build", "attn.lookup", "--encoding", "one-hot", "--n", "200",
                         "--max-len", "100", "-o", str(tmp_path / "x.json"))
        assert code == 5

    def test_unknown_recipe(self, capsys, tmp_path):
        assert cli(capsys, "build", "ffn.teleport", "-o", str(tmp_path / "x.json"))[0] == 4

    def test_bad_recipe_param(self, capsys, tmp_path):
        assert cli(capsys, "build", "ffn.scale", "--c", "abc", "-o", str(tmp_path / "x.json"))[0] == 5

    def test_usage_error(self, capsys):
        assert cli(capsys, "frobnicate")[0] == 64


class TestRun:
    def test_dyck_accept(self, capsys, dyck_file):
        code, out, _ = cli(capsys, "run", str(dyck_file), "()(())")
        assert code == 0 and out.splitlines()[0] == "accept"

    def test_dyck_reject_json(self, capsys, dyck_file):
        code, out, _ = cli(capsys, "--format", "json", "run", str(dyck_file), "(()")
        doc = json.loads(out)
        assert code == 0 and doc["decision"] == "reject"
        assert doc["diagnostics"]["bal"] == pytest.approx(1 / 3)

    def test_induction(self, capsys, tmp_path):
        path = tmp_path / "ind.json"
        cli(capsys, "build", "program.induction", "--alphabet", "ABCD", "-o", str(path))
        code, out, _ = cli(capsys, "run", str(path), "ACABDACDCA")
        assert code == 0 and "ACCBDBAADC" in out

    def test_bad_symbol(self, capsys, dyck_file):
        assert cli(capsys, "run", str(dyck_file), "()x")[0] == 2

    def test_length_bound(self, capsys, tmp_path):
        path = tmp_path / "nu.json"
        cli(capsys, "build", "program.dyck", "--mode", "nonuniform", "--max-len", "4", "-o", str(path))
        assert cli(capsys, "run", str(path), "()()()")[0] == 3

    def test_missing_file(self, capsys, tmp_path):
        assert cli(capsys, "run", str(tmp_path / "nope.json"), "()")[0] == 6

    def test_corrupt_file(self, capsys, tmp_path, dyck_file):
        bad = tmp_path / "bad.json"
        bad.write_bytes(dyck_file.read_bytes()[:40])
        assert cli(capsys, "run", str(bad), "()")[0] == 6

    def test_trace(self, capsys, tmp_path, dyck_file):
        tr = tmp_path / "trace.json"
        assert cli(capsys, "run", "--trace", str(tr), str(dyck_file), "(())")[0] == 0
        assert len(json.loads(tr.read_text())["layers"]) == 2

    def test_precision_and_weighting(self, capsys, dyck_file):
        code, out, _ = cli(capsys, "run", "--precision", "16", "--weighting", "softmax",
                           str(dyck_file), "()")
        assert code == 0 and out.splitlines()[0] == "accept"


class TestCompose:
    def test_serial_and_parallel(self, capsys, tmp_path, dyck_file):
        s = tmp_path / "s.json"
        p = tmp_path / "p.json"
        assert cli(capsys, "compose", "--serial", str(dyck_file), str(dyck_file), "-o", str(s))[0] == 0
        assert cli(capsys, "compose", "--parallel", str(dyck_file), str(dyck_file), "-o", str(p))[0] == 0
        assert len(deserialize(s.read_bytes()).layers) == 4
        assert deserialize(p.read_bytes()).d == 8


class TestOracle:
    def test_dyck(self, capsys):
        code, out, _ = cli(capsys, "oracle", "dyck", "--input", "()(())")
        assert code == 0 and "accept" in out

    def test_induction(self, capsys):
        code, out, _ = cli(capsys, "oracle", "induction", "--input", "ACABDACDCA", "--variant", "frequent")
        assert out.strip() == "ACCBDBAAAC"


class TestVerify:
    def test_ffn(self, capsys):
        assert cli(capsys, "verify", "ffn")[0] == 0

    def test_gap_json(self, capsys):
        code, out, _ = cli(capsys, "--format", "json", "verify", "gap", "--trials", "200")
        doc = json.loads(out)
        assert code == 0 and doc["passed"] and doc["suites"][0]["details"]["max_ratio"] < 1

    def test_dyck_small(self, capsys):
        code, out, _ = cli(capsys, "--format", "json", "verify", "dyck", "--max-len", "8")
        doc = json.loads(out)
        assert code == 0 and doc["suites"][0]["checked"] == 2 * (2 ** 9 - 2)

    def test_unknown_suite(self, capsys):
        assert cli(capsys, "verify", "nope")[0] == 4


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tfrecipes", "oracle", "dyck", "--input", "(("],
                         capture_output=True, text=True, timeout=60)
    assert res.returncode == 0 and "reject" in res.stdout
