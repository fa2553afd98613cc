import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from compose_probe.embeddings import RecordKind, text_key
from compose_probe.errors import ConfigurationError, ProtocolError, TransportError
from compose_probe.remote import RemoteEncoder, encode_remote

from conftest import random_raster, seeded_unit_vector

DIM = 8


class MockEncoderHandler(BaseHTTPRequestHandler):
    fail_next = 0
    wrong_dim = False
    served_descriptor = {
        "model_name": "mock/encoder",
        "embedding_dim": DIM,
        "layer": "last",
        "input_side": 32,
    }

    def log_message(self, *args):
        pass

    def _json(self, code, payload):
        body = json.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/v1/descriptor":
            self._json(200, self.served_descriptor)
        else:
            self._json(400, {"error": "unknown path"})

    def do_POST(self):
        cls = type(self)
        if cls.fail_next > 0:
            cls.fail_next -= 1
            self._json(503, {"error": "model not loaded"})
            return
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        dim = DIM + 1 if cls.wrong_dim else DIM
        if self.path == "/v1/encode/text":
            texts = body.get("texts")
            if not texts:
                self._json(400, {"error": "texts missing or empty"})
                return
            rows, counts = [], []
            per_text = 3 if body.get("mode") == "tokens" else 1
            for t in texts:
                for r in range(per_text):
                    rows.append(seeded_unit_vector(f"{t}#{r}".encode(), dim).tolist())
                counts.append(per_text)
            self._json(200, {"embeddings": rows, "rows_per_item": counts})
        elif self.path == "/v1/encode/image":
            images = body.get("images_b64")
            if not images:
                self._json(400, {"error": "images_b64 missing or empty"})
                return
            rows, counts = [], []
            for b64 in images:
                rows.append(seeded_unit_vector(base64.b64decode(b64), dim).tolist())
                counts.append(1)
            self._json(200, {"embeddings": rows, "rows_per_item": counts})
        else:
            self._json(400, {"error": "unknown path"})


@pytest.fixture
def mock_service():
    server = ThreadingHTTPServer(("127.0.0.1", 0), MockEncoderHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    MockEncoderHandler.fail_next = 0
    MockEncoderHandler.wrong_dim = False
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()
    thread.join()


def test_descriptor_round_trip(mock_service):
    enc = RemoteEncoder(mock_service)
    d = enc.descriptor()
    assert (d.model_name, d.embedding_dim, d.layer, d.input_side) == (
        "mock/encoder", DIM, "last", 32,
    )


def test_text_encode_order_preserved(mock_service):
    enc = RemoteEncoder(mock_service, batch_limit=2)
    texts = [f"caption {i}" for i in range(7)]
    mats = enc.encode_text_batch(texts, mode="global")
    assert len(mats) == 7
    for t, m in zip(texts, mats):
        assert np.allclose(m.data[0], seeded_unit_vector(f"{t}#0".encode(), DIM), atol=1e-6)


def test_token_mode_returns_multiple_rows(mock_service):
    enc = RemoteEncoder(mock_service)
    mats = enc.encode_text_batch(["a caption"], mode="tokens")
    assert mats[0].rows == 3


def test_image_encode_uses_png_payload(mock_service):
    enc = RemoteEncoder(mock_service)
    imgs = [random_raster(8, 8, seed=i) for i in range(3)]
    mats = enc.encode_image_batch(imgs, mode="global")
    assert len(mats) == 3 and all(m.dim == DIM for m in mats)
    again = enc.encode_image_batch(imgs, mode="global")
    for a, b in zip(mats, again):
        assert np.array_equal(a.data, b.data)


def test_empty_batch_rejected(mock_service):
    with pytest.raises(ConfigurationError):
        RemoteEncoder(mock_service).encode_text_batch([])


def test_retry_recovers_from_transient_503(mock_service):
    MockEncoderHandler.fail_next = 1
    enc = RemoteEncoder(mock_service, retries=2, backoff=0.0)
    mats = enc.encode_text_batch(["x"])
    assert mats[0].dim == DIM


def test_exhausted_retries_raise_transport_error(mock_service):
    MockEncoderHandler.fail_next = 10
    enc = RemoteEncoder(mock_service, retries=1, backoff=0.0)
    with pytest.raises(TransportError):
        enc.encode_text_batch(["x"])


def test_unreachable_endpoint_is_transport_error():
    enc = RemoteEncoder("http://127.0.0.1:1", retries=0, backoff=0.0, timeout=0.5)
    with pytest.raises(TransportError):
        enc.descriptor()


def test_wrong_dim_is_a_protocol_error(mock_service):
    MockEncoderHandler.wrong_dim = True
    enc = RemoteEncoder(mock_service)
    with pytest.raises(ProtocolError):
        enc.encode_text_batch(["x"])


def test_malformed_request_surfaces_server_message(mock_service):
    enc = RemoteEncoder(mock_service)
    with pytest.raises(ProtocolError, match="missing or empty"):
        enc._request("POST", "/v1/encode/text", {"texts": []})


def test_encode_remote_builds_keyed_records(mock_service):
    enc = RemoteEncoder(mock_service)
    records = encode_remote(enc, ["alpha", "beta"], RecordKind.GLOBAL_TEXT)
    assert [r.key for r in records] == [text_key("alpha"), text_key("beta")]
    assert all(r.matrix.rows == 1 for r in records)
    imgs = [("im0", random_raster(8, 8, seed=1))]
    recs = encode_remote(enc, imgs, RecordKind.GLOBAL_IMAGE)
    assert recs[0].key == "img:im0"
