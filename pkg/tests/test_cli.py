import io
import json

from daecc.cli import main
from daecc.kernels import load
from daecc.pipeline import compile_function
from daecc.verify import kernel_inputs


def run(args, capsys=None):
    out = io.StringIO()
    code = main(args, out)
    return code, out.getvalue()


def test_poison_dot_has_case2_steering(tmp_path):
    code, out = run(["poison", "fig5.ir", "--emit", "dot", "--out", str(tmp_path)])
    assert code == 0
    dot = (tmp_path / "cu.dot").read_text()
    p = next(p for p in compile_function(load("fig5").function()).placement.placements if p.case == 2)
    steer, target = p.blocks
    assert f'"5" -> "{steer}"' in dot and f'"{steer}" -> "7"' in dot and f'"{steer}" -> "{target}"' in dot


def test_verify_exit_zero():
    code, out = run(["verify", "--seed", "7", "--count", "100"])
    assert code == 0 and "0 failed" in out


def test_simulate_json(tmp_path):
    mem, args = kernel_inputs("hist", 300, 0.5)
    (tmp_path / "hist.json").write_text(json.dumps({"arrays": mem, "args": args}))
    code, out = run(["simulate", "hist.ir", "--mem", str(tmp_path / "hist.json"), "--json"])
    data = json.loads(out)
    assert code == 0 and data["cycles"] > 0 and abs(data["misspecRate"] - 0.5) < 0.01


def test_file_input_and_stages(tmp_path):
    from daecc.kernels import SOURCES
    src = tmp_path / "k.ir"
    src.write_text(SOURCES["fig5"])
    for cmd in ("analyze", "decouple", "speculate", "poison"):
        code, out = run([cmd, str(src)])
        assert code == 0 and out
    code, out = run(["speculate", str(src), "--json"])
    assert json.loads(out)["specReqMap"]["2"][0]["id"] == "b"


def test_exit_codes(tmp_path, capsys):
    assert run(["nonsense"])[0] == 1
    assert run(["poison", str(tmp_path / "missing.ir")])[0] == 1
    bad = tmp_path / "bad.ir"
    bad.write_text("func @f() {\nE:\n  %x = add 1, 2\n  %x = add 1, 2\n  ret\n}")
    assert run(["poison", str(bad)])[0] == 3
    assert run(["simulate", "hist"])[0] == 3  # no value for %N
    assert run(["simulate", "hist", "--lsq", "4"])[0] == 1
    assert "effective:" in capsys.readouterr().err


def test_seed_env_overrides(monkeypatch):
    _, a = run(["gen", "--seed", "1"])
    monkeypatch.setenv("DAECC_SEED", "2")
    _, b = run(["gen", "--seed", "1"])
    _, c = run(["gen", "--seed", "2"])
    assert a != b and b == c


def test_sweeps():
    code, out = run(["sweep", "nesting", "3", "--n", "50", "--json"])
    rows = json.loads(out)["rows"]
    assert [(r["poisonBlocks"], r["poisonCalls"]) for r in rows] == [(1, 1), (2, 3), (3, 6)]
    code, out = run(["sweep", "misspec", "thr", "--n", "200"])
    assert code == 0 and out.startswith("rate,cycles,achieved")
