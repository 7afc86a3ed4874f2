"""Smoke test for the Python bindings.

Build the module first, then run this script:

    cargo build -p quasicopula-py --release --features extension-module
    python3 python/smoke.py

The script copies the built cdylib next to a temp directory under the name
CPython expects, imports it, and exercises the main types.
"""

import hashlib
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        ROOT / "target" / "release" / "libquasicopula_py.so",
        ROOT / "target" / "debug" / "libquasicopula_py.so",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("build the extension first: "
                 "cargo build -p quasicopula-py --release --features extension-module")
    stage = Path(tempfile.mkdtemp(prefix="quasicopula_py."))
    shutil.copy2(built, stage / "quasicopula_py.so")
    sys.path.insert(0, str(stage))
    import quasicopula_py
    return quasicopula_py


def main():
    q = load_module()

    t0 = q.Matrix2.t0()
    assert t0.order() == 3
    assert t0.is_proper()
    assert t0.self_similar()
    assert t0.entry(2, 2) == "-1/3"
    p, _ = t0.partitions()
    assert p == ["0", "1/3", "2/3", "1"]

    ev = q.Evaluator(t0)
    value, bound = ev.eval(0.5, 0.5)
    assert abs(value - 0.25) <= 1e-12 and bound <= 1e-12
    assert ev.eval_exact("1/3", "2/3") == "1/3"
    vol = ev.volume("1/3", "2/3", "1/3", "2/3")
    assert vol[2] == "-1/3"
    report = ev.axioms(samples=2000, seed=7)
    assert report["passes"]

    rows = [["0", "1/3", "0"], ["1/3", "-1/3", "1/3"], ["0", "1/3", "0"]]
    assert q.Matrix2(rows).to_text() == t0.to_text()
    try:
        q.Matrix2([["1", "1"], ["0", "0"]])
    except ValueError:
        pass
    else:
        raise AssertionError("invalid matrix was accepted")

    tr = q.Matrix2.tr("1/2")
    assert q.Matrix2.from_text(tr.to_text()).entry(1, 1) == "1/2"

    step = q.MatrixNd.step(3, "1/2")
    assert step.shape() == [4, 4, 4]
    assert step.entry([1, 1, 1]) == "1/2"
    assert step.entry([3, 3, 3]) == "-1/58"
    alpha = step.contraction_alpha()
    num, den = map(int, alpha.split("/"))
    assert num / den < 1.0
    assert abs(step.apply("pi", [1.0, 1.0, 1.0]) - 1.0) <= 1e-12
    assert '"1/2"' in step.lattice_json(1)
    assert q.MatrixNd.from_json(step.to_json()).shape() == [4, 4, 4]

    cube = q.MatrixNd.cube(2)
    assert cube.axis_partition(0) == ["0", "1/3", "2/3", "1"]
    embedded = q.MatrixNd.from_2d(t0)
    assert embedded.contraction_alpha() == "1"

    s, residual = q.moran_dimension([0.5, 0.5, 0.5, 0.5])
    assert abs(s - 2.0) <= 1e-10 and abs(residual) <= 1e-10
    s_half = q.s_of_r(0.5)
    assert abs(s_half - 1.4751146073817836) <= 1e-9
    assert abs(q.r_of_s(s_half) - 0.5) <= 1e-9
    assert abs(q.dim_nd(2, 0.5) - s_half) <= 1e-10

    pgm = q.render_pgm(t0, 4, 243)
    assert pgm.startswith(b"P5\n243 243\n255\n")
    assert pgm == q.render_pgm(t0, 4, 243), "render must be deterministic"
    digest = hashlib.sha256(pgm).hexdigest()
    assert digest == "68d058bac8c95010fc55fd0ab4b5a484d6d2b9841a60b9e8f7e92eef2903b56b"

    dim, counts = q.box_dimension(t0, 6, 729, [3.0 ** -k for k in range(1, 7)])
    assert counts[0] == 5
    assert abs(dim - 1.4649735207179269) <= 0.05

    print("smoke test passed")


if __name__ == "__main__":
    main()
