#!/usr/bin/env python3
"""Smoke test for the desnow Python extension.

Builds nothing itself: it finds the compiled cdylib under target/ (run
`cargo build -p desnow-py` first), exposes it as an importable module, and
walks the public surface end to end.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent


def import_desnow():
    candidates = [
        REPO / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libdesnow.so", "libdesnow.dylib", "desnow.dll")
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit("build the extension first: cargo build -p desnow-py")
    stage = Path(tempfile.mkdtemp(prefix="desnow-py-"))
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    shutil.copy2(lib, stage / f"desnow{suffix}")
    sys.path.insert(0, str(stage))
    import desnow  # noqa: E402

    return desnow


def main():
    ds = import_desnow()
    tiny = {"base_channels": 8, "num_stages": 2, "hor_depth": 1, "seed": 3}

    # model construction and the closed-form accounting agree
    model = ds.Model(tiny)
    assert model.param_count() == ds.count_params(tiny)["total"]
    report = ds.count_params(None)
    assert report["total"] == 64_578_039, report
    assert sum(v for k, v in report.items() if k != "total") == report["total"]
    print(f"params ok: default total {report['total']:,}")

    # MACs: exactly linear in pixels
    m1 = ds.count_macs(64, 64, tiny)
    m2 = ds.count_macs(128, 64, tiny)
    assert m2 == 2 * m1
    print(f"macs ok: {m1:,} at 64x64")

    # zero-initialized head means identity at init; forward matches desnow
    img = np.random.default_rng(0).random((40, 52, 3), dtype=np.float32)
    out = model.desnow(img)
    assert out.shape == img.shape
    assert np.max(np.abs(out - img)) < 1e-6, "fresh model is the identity"
    batch = img[None, :40, :48, :]  # multiple of the scale factor
    fwd = model.forward(batch)
    assert fwd.shape == batch.shape
    print("identity ok")

    # save / load round trip is bit exact
    with tempfile.TemporaryDirectory() as td:
        ckpt = Path(td) / "m.ckpt"
        model.save(ckpt)
        back = ds.Model.load(ckpt)
        assert back.param_count() == model.param_count()
        assert back.config() == model.config()
        out2 = back.desnow(img)
        assert np.array_equal(out, out2)
    print("checkpoint ok")

    # synthesis obeys the imaging model's shapes and ranges
    clean = ds.gen_clean_scene(7, 48, 64)
    assert clean.shape == (48, 64, 3) and 0.0 <= clean.min() <= clean.max() <= 1.0
    degraded, maps = ds.synthesize_pair(clean, seed=11)
    assert degraded.shape == clean.shape
    assert set(maps) == {"z", "r", "t", "c", "a"}
    assert maps["t"].min() > 0.0 and maps["t"].max() <= 1.0
    assert set(np.unique(maps["r"])) <= {0.0, 1.0}
    print("synthesis ok")

    # metrics
    assert ds.psnr(clean, clean) == math.inf
    assert abs(ds.ssim(clean, clean) - 1.0) < 1e-12
    p = ds.psnr(clean, degraded)
    assert p < 40.0, "degradation is visible"
    l = ds.charbonnier(clean[None], clean[None])
    assert abs(l - 1e-3) < 1e-15, "loss floor is epsilon"
    print(f"metrics ok: degraded psnr {p:.2f} dB")

    # schedule shape
    assert ds.cyclic_lr(0) == 4e-4
    assert abs(ds.cyclic_lr(2000) - 6e-4) < 1e-18
    assert abs(ds.cyclic_lr(1000) - 5e-4) < 1e-18
    print("schedule ok")

    # a short training run moves the weights and logs losses
    with tempfile.TemporaryDirectory() as td:
        data = Path(td) / "data"
        out_dir = Path(td) / "run"
        n = ds.make_pairs(data, 2, 32, 32, seed=5)
        assert n == 2
        summary = ds.train_model(
            data,
            out_dir,
            model_options=tiny,
            train_options={
                "batch_size": 2,
                "patch_size": 16,
                "total_steps": 4,
                "checkpoint_every": 2,
                "seed": 1,
            },
        )
        assert summary["steps"] == 4 and len(summary["losses"]) == 4
        assert all(math.isfinite(x) for x in summary["losses"])
        trained = ds.Model.load(summary["checkpoint"])
        rows = trained.evaluate_dir(data)
        assert len(rows) == 2 and all(len(r) == 3 for r in rows)
        print(f"training ok: final psnr {summary['psnr']:.2f} dB")

    # invalid input surfaces as ValueError, not a crash
    try:
        ds.Model({"base_channels": 0})
    except ValueError:
        pass
    else:
        raise AssertionError("invalid config must raise ValueError")
    print("error mapping ok")

    print("ALL SMOKE CHECKS PASSED")


if __name__ == "__main__":
    main()
