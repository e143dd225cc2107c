import io
import json
import subprocess
import sys

import numpy as np
import pytest

from helpers import ACCEPTED, CORPUS, GOLDEN, REJECTED
from safegpu.cli import main


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


def desc(name):
    return CORPUS / f"{name}.desc"


@pytest.mark.parametrize("name", ACCEPTED)
def test_check_accepts_silently(name):
    assert run("check", desc(name)) == (0, "", "")


@pytest.mark.parametrize("name", sorted(REJECTED))
def test_check_rejects(name):
    code, out, err = run("check", desc(name))
    assert code == 1 and out == ""
    assert err.startswith(f"error[{REJECTED[name][0]}]")


def test_conflict_rendering():
    _, _, err = run("check", desc("reject_rev_per_block"))
    assert err.splitlines()[:6] == [
        "error[E_CONFLICT]: conflicting memory access",
        f"  --> {desc('reject_rev_per_block')}:10:7",
        "   |",
        "10 |       arr[[thread]] = arr.rev[[thread]]",
        "   |       ^^^^^^^^^^^^^ cannot select memory because of",
        "   |                       ----------------- a conflicting prior selection here",
    ]


def test_json_diagnostics():
    code, out, err = run("check", "--format", "json", desc("reject_narrowing"))
    assert code == 1 and out == ""
    records = [json.loads(line) for line in err.splitlines()]
    assert [r["code"] for r in records] == ["E_NARROW", "E_NARROW"]
    for r in records:
        assert set(r) == {"code", "message", "spans", "notes"}
        primary = [s for s in r["spans"] if s["primary"]]
        assert len(primary) == 1
        assert set(primary[0]) == {"file", "start", "end", "line", "col", "label", "primary"}


def test_parse_error(tmp_path):
    bad = tmp_path / "bad.desc"
    bad.write_text("fn f() -> () { () }")
    code, _, err = run("check", "--format", "json", bad)
    assert code == 1
    assert json.loads(err.splitlines()[0])["code"] == "E_PARSE"


def test_missing_file(tmp_path):
    code, _, err = run("check", tmp_path / "nope.desc")
    assert code == 2 and "cannot read" in err


def test_usage_error():
    assert run("frobnicate")[0] == 2
    assert run()[0] == 2


def test_emit_golden(tmp_path):
    target = tmp_path / "transpose.cu"
    assert run("emit-cuda", desc("transpose"), "-o", target)[0] == 0
    assert target.read_text() == (GOLDEN / "transpose.cu").read_text()


def test_emit_instance_to_stdout():
    code, out, err = run("emit-cuda", desc("reduce"), "--instance", "host_reduce:nb=2")
    assert code == 0 and err == ""
    assert "__global__ void reduce_2(" in out


def test_emit_notes_skipped_generic():
    code, _, err = run("emit-cuda", desc("reduce"))
    assert code == 0 and "host_reduce" in err


def test_emit_rejected():
    code, out, _ = run("emit-cuda", desc("reject_sync_split"))
    assert code == 1 and out == ""


def test_emit_bad_instance():
    assert run("emit-cuda", desc("reduce"), "--instance", "host_reduce")[0] == 2


def test_run_reduce():
    code, out, _ = run("run", desc("reduce"), "-f", "host_reduce", "--nat", "nb=1",
                       "--input", "h_in=" + ",".join(str(i) for i in range(1, 17)))
    report = json.loads(out)
    assert code == 0
    assert report["memory"]["h_out"] == [136]
    assert report["launches"][0]["race_count"] == 0


def test_run_kernel_with_extents():
    code, out, _ = run("run", desc("matmul"), "-f", "matmul", "--blocks", "2", "--threads", "2",
                       "--input", "a=[[1,2,3,4],[0,1,0,0],[0,0,1,0],[0,0,0,1]]",
                       "--input", "b=ones", "--input", "c=zeros")
    report = json.loads(out)
    assert code == 0 and report["nats"] == {"nb": 2, "t": 2}
    assert report["memory"]["c"][0] == [10, 10, 10, 10]


def test_run_npy_input(tmp_path):
    path = tmp_path / "m.npy"
    np.save(path, np.arange(64).reshape(8, 8))
    code, out, _ = run("run", desc("transpose_bench"), "-f", "host_transpose",
                       "--nat", "nb=2,k=2,r=2", "--input", f"h_in=@{path}")
    assert code == 0
    assert json.loads(out)["memory"]["h_out"] == np.arange(64).reshape(8, 8).T.tolist()


def test_run_refuses_rejected_program():
    code, out, err = run("run", desc("reject_rev_per_block"))
    assert code == 1 and out == "" and "E_CONFLICT" in err


def test_run_unchecked_reports_races():
    code, out, _ = run("run", desc("reject_rev_per_block"), "--no-check", "--max-threads", "128")
    report = json.loads(out)
    assert code == 1 and report["launches"][0]["race_count"] > 0


def test_run_divergence():
    code, out, _ = run("run", desc("reject_sync_split"), "--no-check")
    assert code == 1 and json.loads(out)["divergence"]


def test_run_needs_sizes():
    code, _, err = run("run", desc("reduce"), "-f", "reduce")
    assert code == 2 and "nb" in err


def test_run_needs_function():
    assert run("run", desc("reduce"))[0] == 2


def test_expand_views():
    code, out, _ = run("expand-views", desc("transpose"), "x.group::<4>.transpose",
                       "--shape", "8")
    lines = out.splitlines()
    assert code == 0
    assert lines[2] == "index:  o1 * 4 + o0"
    assert lines[-1] == "8 coordinates, 0 mismatches"


def test_expand_user_view():
    code, out, _ = run("expand-views", desc("transpose"), "m.group_by_row::<8, 2>",
                       "--shape", "8,8", "--limit", "3")
    assert code == 0
    assert out.splitlines()[-1] == "64 coordinates, 0 mismatches"
    assert "... 61 more" in out


def test_expand_rejects_selects():
    assert run("expand-views", desc("transpose"), "x[[t]]", "--shape", "8")[0] == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "safegpu", "check",
                           str(desc("reject_sync_split"))], capture_output=True, text=True)
    assert proc.returncode == 1 and "E_SYNC" in proc.stderr


def test_cli_output_deterministic():
    a = run("check", "--format", "json", desc("reject_narrowing"))
    b = run("check", "--format", "json", desc("reject_narrowing"))
    assert a == b
