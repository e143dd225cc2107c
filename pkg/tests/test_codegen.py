import re

import numpy as np
import pytest

from helpers import ACCEPTED, GOLDEN, INSTANCES, REJECTED, c_accesses, check_site, load
from safegpu.codegen import CodegenError, emit_cuda, mangle, monomorphize
from safegpu.interpreter import SimConfig, run_function
from safegpu.syntax import parse

SCALE = """
fn scale_vec<n: nat>(vec: &uniq gpu.global [f64; n])
 -[grid: gpu.grid<X<1>, X<n>>]-> () {
  sched(X) block in grid {
    sched(X) thread in block {
      vec.group::<n>[[block]][[thread]] = vec.group::<n>[[block]][[thread]] * 3.0
    }
  }
}

fn host(a: &uniq cpu.mem [f64; 512], b: &uniq cpu.mem [f64; 1024]) -[t: cpu.thread]-> () {
  let da = GpuGlobal::alloc_copy(&shrd *a);
  let db = GpuGlobal::alloc_copy(&shrd *b);
  scale_vec::<<<X<1>, X<512>>>>(&uniq da);
  scale_vec::<<<X<1>, X<1024>>>>(&uniq db);
  copy_mem_to_host(&shrd da, a);
  copy_mem_to_host(&shrd db, b)
}
"""

HELPER = """
fn fill<t: nat>(part: &uniq gpu.shared [i32; t]) -[blk: gpu.Block<X<t>>]-> () {
  sched(X) th in blk { part[[th]] = 7 }
}

fn k(out: &uniq gpu.global [i32; 8]) -[grid: gpu.grid<X<2>, X<4>>]-> () {
  sched(X) block in grid {
    let part = alloc::<gpu.shared, [i32; 4]>();
    fill::<4>(&uniq part);
    sched(X) th in block { sync; out.group::<4>[[block]][[th]] = part[[th]] }
  }
}
"""


def test_mangle():
    assert mangle("scale_vec", (1024,)) == "scale_vec_1024"
    assert mangle("host", ()) == "host"


def test_two_instances_two_kernels():
    src = emit_cuda(parse(SCALE)).source
    assert "__global__ void scale_vec_512(" in src
    assert "__global__ void scale_vec_1024(" in src
    assert "scale_vec_512<<<dim3(1), dim3(512)>>>(da);" in src


def test_instance_inlines_sizes():
    prog = monomorphize(parse(SCALE))
    fn = prog.functions["scale_vec_1024"]
    assert fn.type_params == ()
    assert "1024" in repr(fn.params)


def test_block_helper_is_inlined():
    src = emit_cuda(parse(HELPER)).source
    assert "__device__" not in src
    assert "{  // fill" in src
    assert "part[threadIdx.x] = 7;" in src


def test_sync_and_shared():
    src = emit_cuda(load("reduce"), INSTANCES["reduce"]).source
    assert src.count("__syncthreads();") == 2
    assert "__shared__ int tmp[4];" in src


def test_split_guard():
    src = emit_cuda(load("reduce"), INSTANCES["reduce"]).source
    assert "if (threadIdx.x < 2) {" in src
    assert "if (threadIdx.x < 1) {" in src
    assert "else" not in src


def test_split_with_both_arms_has_else():
    prog = parse("""
fn k(a: &uniq gpu.global [i32; 8]) -[grid: gpu.grid<X<1>, X<8>>]-> () {
  sched(X) block in grid {
    split(X) block at 4 {
      lo => { sched(X) t in lo { a.group::<8>[[block]].split::<4>.fst[[t]] = 1 } },
      hi => { sched(X) t in hi { a.group::<8>[[block]].split::<4>.snd[[t]] = 2 } }
    }
  }
}""")
    src = emit_cuda(prog).source
    assert re.search(r"if \(threadIdx\.x < 4\) \{.*\} else \{", src, re.S)
    assert "a[blockIdx.x * 8 + threadIdx.x] = 1;" in src
    assert "a[blockIdx.x * 8 + threadIdx.x] = 2;" in src


def test_transpose_loop_and_barrier_structure():
    src = emit_cuda(load("transpose")).source
    assert src.count("for (int i = 0; i < 4; i++)") == 2
    assert src.count("__syncthreads();") == 1
    assert "sched" not in src and "gpu.global" not in src


@pytest.mark.parametrize("name", sorted(REJECTED))
def test_rejected_programs_do_not_compile(name):
    with pytest.raises(CodegenError):
        emit_cuda(load(name))


def test_generic_without_instance_is_skipped():
    src = emit_cuda(load("reduce")).source
    assert "__global__" not in src


def test_missing_instance_argument():
    with pytest.raises(CodegenError):
        emit_cuda(load("reduce"), {"host_reduce": {}})


@pytest.mark.parametrize("name", ACCEPTED)
def test_sites_match_oracle(name):
    result = emit_cuda(load(name), INSTANCES[name])
    assert result.sites
    assert sorted(t for _, t in c_accesses(result.source)) == sorted(s.text for s in
                                                                     result.sites)
    for site in result.sites:
        assert check_site(site, result.program.views) == 0, site.text


@pytest.mark.parametrize("name, fn, cfg", [
    ("reduce", "host_reduce", {"nb": 2}),
    ("scan", "scan", {"nb": 2}),
    ("matmul", "host_matmul", {"nb": 2, "t": 2}),
    ("transpose_bench", "host_transpose", {"nb": 2, "k": 2, "r": 2}),
])
def test_specialized_program_runs_the_same(name, fn, cfg):
    prog = load(name)
    result = emit_cuda(prog, {fn: cfg})
    mangled = fn + "_" + "_".join(str(cfg[k]) for k, _ in prog.functions[fn].type_params)
    before = run_function(prog, fn, SimConfig(nats=cfg))
    after = run_function(result.program, mangled, SimConfig())
    assert before.memory.keys() == after.memory.keys()
    for k in before.memory:
        assert np.array_equal(before.memory[k], after.memory[k])


@pytest.mark.parametrize("name", ACCEPTED)
def test_emission_deterministic(name):
    a = emit_cuda(load(name), INSTANCES[name]).source
    b = emit_cuda(load(name), INSTANCES[name]).source
    assert a == b


def test_golden_transpose():
    assert emit_cuda(load("transpose")).source == (GOLDEN / "transpose.cu").read_text()


def test_golden_indices_verified_by_oracle():
    result = emit_cuda(load("transpose"))
    golden = c_accesses((GOLDEN / "transpose.cu").read_text())
    by_text = {s.text: s for s in result.sites}
    assert len(golden) == 4
    for _, text in golden:
        assert check_site(by_text[text], result.program.views, text) == 0


def test_unparenthesized_index_is_caught():
    # the tile row must be scaled as a whole
    result = emit_cuda(load("transpose"))
    site = next(s for s in result.sites if s.root == "input")
    broken = site.text.replace("(blockIdx.y * 32 + i * 8 + threadIdx.y) * 2048",
                               "blockIdx.y * 32 + i * 8 + threadIdx.y * 2048")
    assert broken != site.text
    assert check_site(site, result.program.views, broken) > 0
