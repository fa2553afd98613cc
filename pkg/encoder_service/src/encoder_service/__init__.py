"""Encoder sidecar: frozen vision/text encoders behind a JSON wire protocol.

Endpoints:
    GET  /v1/descriptor
    POST /v1/encode/text   {"texts": [...], "mode": "global"|"tokens"}
    POST /v1/encode/image  {"images_b64": [...], "mode": "global"|"patches"}

Responses carry {"embeddings": [row, ...], "rows_per_item": [...]}. Malformed
input yields 400 with {"error": ...}; 503 means no model is loaded.
"""

__version__ = "0.1.0"
