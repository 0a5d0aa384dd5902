"""Writes golden bridge-protocol bodies to crates/core/tests/fixtures/wire."""

import base64
import json
import math
import struct
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/wire"
W, H, C = 3, 2, 4


def latent_hwc():
    # value at (row y, col x, channel c)
    return [[[round(0.25 * c - 0.5 + 0.125 * x + 0.0625 * y, 6) for c in range(C)] for x in range(W)] for y in range(H)]


def tensor(hwc):
    chw = [hwc[y][x][c] for c in range(C) for y in range(H) for x in range(W)]
    raw = b"".join(struct.pack("<f", v) for v in chw)
    return {"shape": [C, H, W], "dtype": "f32le", "data": base64.b64encode(raw).decode()}


def dump(name, obj):
    (OUT / name).write_text(json.dumps(obj, separators=(",", ":")))


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    x = latent_hwc()
    eps = [[[math.sin(1 + y * W * C + xx * C + c) for c in range(C)] for xx in range(W)] for y in range(H)]
    dump("latent_hwc.json", x)
    dump("eps_hwc.json", [[[struct.unpack("<f", struct.pack("<f", v))[0] for v in px] for px in row] for row in eps])
    dump("health_response.json", {"model": "stub-echo"})
    dump("embed_request.json", {"prompt": "a person, front view"})
    dump("embed_response.json", {"prompt_id": "p0"})
    dump(
        "denoise_request.json",
        {"prompt_id": "p0", "view_tag": "front", "t": 500, "guidance_scale": 100.0, "latent": tensor(x)},
    )
    dump("denoise_response.json", {"eps": tensor(eps)})
    dump("decode_request.json", {"latent": tensor(x)})
    dump("decode_response.json", {"png": base64.b64encode(b"\x89PNG\r\n\x1a\n").decode()})


if __name__ == "__main__":
    main()
