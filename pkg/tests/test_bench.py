import importlib.util
import json
from pathlib import Path

import pytest

from sltgates import kernels

BENCH = Path(__file__).resolve().parent.parent / "benchmarks" / "bench_kernels.py"


@pytest.mark.skipif(kernels.numba_impl is None, reason="numba not installed")
def test_benchmark_smoke(tmp_path, capsys):
    spec = importlib.util.spec_from_file_location("bench_kernels", BENCH)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    out = tmp_path / "bench.json"
    assert bench.main(["--repeat", "1", "--skip-steps", "--json", str(out)]) == 0
    rows = json.loads(out.read_text())
    assert {r["case"] for r in rows} == set(bench.cases(__import__("numpy").random.default_rng(0)))
    assert all(r["numpy_ms"] > 0 and r["numba_ms"] > 0 for r in rows)
    assert "speedup" in capsys.readouterr().out
