"""Acceptance: the wire protocol served from a real socket, and dump/serve
agreement. Prints one PASS/FAIL line per criterion; run with -v -s."""

import base64
import json
import socket
import threading
import time

import numpy as np
import pytest
import requests
import uvicorn
from PIL import Image

from encoder_service import emb1
from encoder_service.app import create_app
from encoder_service.backends import ToyBackend
from encoder_service.dump import dump_store


def report(name, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def live_service():
    backend = ToyBackend(dim=16, seed=4)
    app = create_app(backend, max_batch=32)
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{port}"
    for _ in range(100):
        try:
            requests.get(base + "/v1/descriptor", timeout=1)
            break
        except requests.RequestException:
            time.sleep(0.05)
    yield base, backend
    server.should_exit = True
    thread.join(timeout=5)


def test_protocol_conformance_over_a_real_socket(live_service):
    base, backend = live_service
    ok = True
    details = []

    d = requests.get(base + "/v1/descriptor").json()
    ok &= d == backend.descriptor()
    details.append("descriptor")

    body = {"texts": ["a red cube", "a blue sphere"], "mode": "global"}
    r1 = requests.post(base + "/v1/encode/text", json=body).json()
    r2 = requests.post(base + "/v1/encode/text", json=body).json()
    ok &= r1 == r2 and r1["rows_per_item"] == [1, 1]
    ok &= all(len(row) == 16 for row in r1["embeddings"])
    details.append("text global+determinism")

    tok = requests.post(base + "/v1/encode/text",
                        json={"texts": ["one two three"], "mode": "tokens"}).json()
    ok &= tok["rows_per_item"] == [5]
    details.append("tokens")

    img = Image.fromarray(np.random.default_rng(0).integers(
        0, 256, size=(40, 40, 3), dtype=np.uint8))
    import io

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    b64 = base64.b64encode(buf.getvalue()).decode()
    gi = requests.post(base + "/v1/encode/image",
                       json={"images_b64": [b64], "mode": "global"}).json()
    pi = requests.post(base + "/v1/encode/image",
                       json={"images_b64": [b64], "mode": "patches"}).json()
    ok &= gi["rows_per_item"] == [1] and pi["rows_per_item"] == [16]
    details.append("image global+patches")

    bad = requests.post(base + "/v1/encode/text", json={"texts": []})
    ok &= bad.status_code == 400 and "error" in bad.json()
    bad_img = requests.post(base + "/v1/encode/image",
                            json={"images_b64": ["@@@"]})
    ok &= bad_img.status_code == 400
    details.append("400s")

    checksum_before = backend.param_checksum()
    for i in range(3):
        requests.post(base + "/v1/encode/text", json={"texts": [f"x{i}"]})
    ok &= backend.param_checksum() == checksum_before
    details.append("frozen")

    report("protocol conformance (live)", ok, ", ".join(details))


def test_dump_and_serve_agree(tmp_path, live_service):
    base, backend = live_service
    texts = ["first caption", "second caption", "third caption"]
    manifest = tmp_path / "m.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for t in texts:
            fh.write(json.dumps({"type": "text", "content": t}) + "\n")
    out = tmp_path / "dump.emb1"
    count, skipped = dump_store(backend, manifest, out)
    store = emb1.read_store(out)

    served = requests.post(base + "/v1/encode/text", json={"texts": texts}).json()
    max_delta = 0.0
    for t, row in zip(texts, served["embeddings"]):
        delta = np.abs(store[emb1.text_key(t)][0] - np.asarray(row, dtype=np.float32)).max()
        max_delta = max(max_delta, float(delta))
    report(
        "dump/serve agreement",
        count == 3 and not skipped and max_delta <= 1e-6,
        f"{count} records, max |dump - serve| = {max_delta:.2e}",
    )
