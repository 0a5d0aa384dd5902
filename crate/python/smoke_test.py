"""Builds the Python extension and exercises it end to end.

Usage: python3 python/smoke_test.py
"""

import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build(dest: Path) -> None:
    subprocess.run(["cargo", "build", "-p", "avatarforge-py", "--features", "extension-module"], cwd=ROOT, check=True)
    shutil.copy(ROOT / "target/debug/libavatarforge.so", dest / "avatarforge.so")


def main() -> None:
    tmp = Path(tempfile.mkdtemp())
    build(tmp)
    sys.path.insert(0, str(tmp))
    import avatarforge as af

    assert af.density_from_distance(0.0) == 500.0
    assert af.density_from_distance(0.1) == 0.0
    assert abs(af.density_from_distance(-0.001) - 731.05857863000487925) < 1e-6

    ab = af.alpha_bar(500)
    assert 0.0 < ab < 1.0
    noisy = af.add_noise([1.0, 0.0], [0.0, 1.0], 0.64)
    assert all(abs(a - b) < 1e-12 for a, b in zip(noisy, [0.8, 0.6]))

    body = af.BodyModel.capsule()
    nj, ns = body.num_joints, body.num_shape
    rest = body.pose([0.0] * ns, [[0.0, 0.0, 0.0]] * nj)
    assert len(rest) == body.num_vertices and len(body.a_pose) == nj
    shifted = body.pose([0.0] * ns, [[0.0, 0.0, 0.0]] * nj, [0.0, 0.0, 1.0])
    assert all(abs(b[2] - a[2] - 1.0) < 1e-12 for a, b in zip(rest, shifted))

    cfg = {"iterations": 2, "seed": 3, "render_resolution": 16, "samples_per_ray": 64}
    s = af.Session(json.dumps(cfg))
    report = s.step()
    assert s.step_count == 1
    assert all(math.isfinite(report[k]) for k in ("sds_canonical", "sds_observation", "normal_loss", "total"))

    feats, alpha = s.render(space="canonical", resolution=16)
    assert len(feats) == 16 * 16 * 4 and len(alpha) == 16 * 16
    iou = s.silhouette_iou(space="observation", resolution=32)
    assert 0.8 < iou <= 1.0

    p = s.probe([0.0, 0.0, 0.0])
    assert p["sigma"] >= 0.0 and len(p["density_gradient"]) == 3

    ckpt = tmp / "s.avck"
    s.save(ckpt)
    again = af.Session.load(ckpt)
    assert again.step_count == 1
    assert again.probe([0.0, 0.0, 0.0]) == p

    nv, nf = s.export_mesh(tmp / "body.obj", resolution=48)
    assert nv > 0 and nf > 0

    try:
        af.Session(json.dumps({"lr": 0.0}))
    except ValueError:
        pass
    else:
        raise AssertionError("invalid config accepted")

    print(f"smoke test ok: iou {iou:.3f}, mesh {nv} vertices / {nf} faces")


if __name__ == "__main__":
    main()
