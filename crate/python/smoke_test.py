"""Smoke test for the pyantiflipper extension module.

Builds the extension with cargo (unless a path to a built library is given),
loads it and exercises the main entry points.

    python3 python/smoke_test.py [path/to/libpyantiflipper.so]
"""

import importlib.util
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build() -> Path:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "antiflipper-python", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release"
    for name in ("libpyantiflipper.so", "libpyantiflipper.dylib", "pyantiflipper.dll"):
        if (lib / name).exists():
            return lib / name
    sys.exit("built library not found")


def load(path: Path):
    tmp = Path(tempfile.mkdtemp())
    suffix = ".pyd" if path.suffix == ".dll" else ".so"
    target = tmp / f"pyantiflipper{suffix}"
    shutil.copy(path, target)
    spec = importlib.util.spec_from_file_location("pyantiflipper", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main() -> None:
    af = load(Path(sys.argv[1]) if len(sys.argv) > 1 else build())

    arch = af.ModelArch(2, 3)
    assert arch.param_count == 9
    assert af.ModelArch(4, 3, hidden_dim=8).param_count == 67
    params = arch.init_params(7)
    assert params.values == arch.init_params(7).values

    data = af.gen_synthetic(3, 100, 2, spread=0.3, seed=1)
    assert len(data) == 300 and data.class_histogram() == [100, 100, 100]
    zeros = af.ParamVector(arch, [0.0] * 9)
    loss, grad = zeros.loss_and_grad(data)
    assert abs(loss - math.log(3)) < 1e-12 and len(grad) == 9
    trained = params.train(data, learning_rate=0.1, local_epochs=5)
    acc, _ = trained.evaluate(data)
    assert acc > 0.9, acc

    flipped = af.Dataset([[0.0], [1.0], [2.0], [3.0]], [0, 1, 2, 0], 3).flip("0:2")
    assert flipped.labels == [2, 1, 2, 2]
    shards = af.gen_synthetic(2, 50, 1).partition(4, seed=3)
    assert sorted(i for s in shards for i in s) == list(range(100))
    assert [af.is_attacking("periodic", r, period=15) for r in (15, 16, 30)] == [True, False, True]
    assert not af.is_attacking("delayed", 49, start_round=50)

    state = af.TrustState(3)
    state = state.filter({0: 0.9, 1: 0.9, 2: 0.3}, trust_lr=0.5)
    expected = [(1 / 3 + 0.02) / 0.96, (1 / 3 + 0.02) / 0.96, (1 / 3 - 0.08) / 0.96]
    assert all(abs(a - b) < 1e-12 for a, b in zip(state.trust, expected))
    assert af.sq_deviation(0.1, 0.6) == 0.25

    one_d = af.ModelArch(1, 2)
    vec = lambda *v: af.ParamVector(one_d, list(v))
    models = [vec(1, 2, 0, 0), vec(3, 4, 0, 0), vec(5, 100, 0, 0)]
    assert af.aggregate("median", models).values == [3, 4, 0, 0]
    assert af.aggregate("fedavg", models[:2], weights=[1, 1]).values == [2, 3, 0, 0]
    cluster = [vec(x, 0, 0, 0) for x in (0.0, 0.1, 0.2, 10.0)]
    assert af.krum_select(cluster, 1, 1) == [0]
    pair = af.TrustState(2).aggregate({0: vec(2, 0, 0, 0), 1: vec(4, 0, 0, 0)}, k_factor=10)
    assert pair.values == [3, 0, 0, 0]
    assert abs(af.compute_overhead_estimate(3, 1.0) - 1 / 9) < 1e-15

    out = af.run_experiment(
        "",
        [
            "data.num_classes=4",
            "data.input_dim=6",
            "data.samples_per_class=60",
            "num_clients=6",
            "total_rounds=10",
            "attack.num_malicious=2",
            "attack.flip=rotation",
        ],
    )
    assert len(out["rounds"]) == 10
    assert out["detection"]["detected"] == out["attackers"], out["detection"]
    assert out["final_accuracy"] > 0.8

    try:
        af.run_experiment("", ["antiflipper.k_factor=1"])
    except ValueError as err:
        assert "k_factor must exceed 1" in str(err)
    else:
        raise AssertionError("invalid config accepted")

    print("pyantiflipper smoke test passed")


if __name__ == "__main__":
    main()
