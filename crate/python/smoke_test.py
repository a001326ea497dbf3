"""Smoke test for the pyspikeplace extension.

    pip install -e crates/python --no-build-isolation
    python python/smoke_test.py
"""

import os
import subprocess
import sys
import tempfile

import pyspikeplace as sp

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def check_encoder():
    pixels = [0] * 392 + [255] * 392
    events, steps = sp.encode(pixels)
    assert steps == 840, steps
    marker = [t for n, t in events if n == 79]
    assert marker[-56:] == list(range(784, 840))
    try:
        sp.encode([0] * 10)
    except ValueError:
        pass
    else:
        raise AssertionError("short image accepted")


def check_placement():
    r = sp.place_relnet(20)
    assert r["instances"] == 210 and r["neurons"] == 238604, r
    assert r["violations"] == [], r["violations"][:3]
    print(f"M=20: {r['cores']} cores on {r['chips']} chips")


def check_simulation():
    cli = os.path.join(ROOT, "target", "release", "spikeplace")
    if not os.path.exists(cli):
        print("skipping simulation: build the CLI with `cargo build --release` first")
        return
    data = os.path.join(ROOT, "data", "mnist01")
    with tempfile.TemporaryDirectory() as d:
        subprocess.run([cli, "encode", "mnist", "-i", data, "--limit", "1", "-o", d], check=True, capture_output=True)
        graph = os.path.join(d, "s.json")
        subprocess.run([cli, "build", "smnist", "--small", "-o", graph], check=True, capture_output=True)
        raster = os.path.join(d, "sample_00000.raster")
        real = sp.simulate(graph, raster)
        fixed = sp.simulate(graph, raster, mode_name="fixed", threads=1)
        assert real[0] == sp.simulate(graph, raster, threads=1)[0]
        assert set(real[1]) == set(fixed[1]) == {"readout"}
        print(f"sMNIST sample: {len(real[0])} events, readout {real[1]['readout']}")


def check_bench():
    rows = sp.compare([6])
    (m, inter, edp), = rows
    assert m == 6 and inter <= 1.0 and edp < 1.0, rows
    print(f"M=6: inter-chip x{inter:.3f}, EDP x{edp:.3f}")


if __name__ == "__main__":
    print("pyspikeplace", sp.__version__)
    check_encoder()
    check_placement()
    check_simulation()
    check_bench()
    print("ok")
    sys.exit(0)
