"""Quick end-to-end check of the Python bindings.

Build first, e.g. `maturin develop -m crates/py/Cargo.toml`, or copy the compiled
library next to this file as `afkan_py.so`.
"""

import math
import os
import sys
import tempfile

import afkan_py as ak


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    counts = {
        ("afkan", (784, 64, 10)): 52626,
        ("mlp", (784, 64, 10)): 52512,
        ("relukan", (784, 64, 10)): 315146,
        ("relukan", (784, 9, 10)): 52411,
    }
    for (variant, widths), want in counts.items():
        got = ak.Model(ak.ModelSpec(variant, list(widths))).param_count()
        assert got == want, (variant, widths, got)

    low, high = ak.phase_init(5, 3)
    assert all(close(h - l, 0.8) for l, h in zip(low, high))

    rows = ak.bspline_basis([0.4, 0.5, 0.6, 0.7])
    assert all(close(sum(r), 1.0) for r in rows)
    assert close(rows[2][5], 2.0 / 3.0, 1e-12)

    mids = [0.5 * (l + h) for l, h in zip(low, high)]
    bells = ak.relu_kan_r(mids, 5, 3)
    assert all(close(bells[i][i], 1.0) for i in range(len(mids)))

    a = ak.basis_a([0.0, 0.5], act="relu", ftype="quad1")
    assert len(a) == 2 and len(a[0]) == 6
    assert close(ak.activation("silu", [1.0])[0], 1.0 / (1.0 + math.exp(-1.0)))

    spec = ak.ModelSpec("afkan", [6, 4, 3], mode="spatial_attn", seed=3)
    model = ak.Model(spec)
    x = [[0.1 * (i + j) for j in range(6)] for i in range(5)]
    y = model.predict(x, batch_size=5)
    assert len(y) == 5 and len(y[0]) == 3
    name, shape = model.parameters()[0]
    model.set_param(name, [0.25] * math.prod(shape))
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ckpt")
        model.save(path)
        back = ak.Model.load(path)
        assert back.get_param(name) == [0.25] * math.prod(shape)
        assert back.predict(x, batch_size=5) == model.predict(x, batch_size=5)

    try:
        ak.ModelSpec("afkan", act="swish")
    except ValueError as e:
        assert "swish" in str(e)
    else:
        raise AssertionError("bad activation accepted")

    worst = max(r["max_rel_err"] for r in ak.gradcheck())
    assert worst < 1e-4, worst

    print(f"smoke test passed: {spec!r}, {model!r}, gradcheck worst {worst:.2e}")


if __name__ == "__main__":
    sys.exit(main())
