"""The inference service in one file: save a model, stand the app up
in-process, and hit every endpoint the browser UI uses."""

import numpy as np
from fastapi.testclient import TestClient

from riceleaf.data import encode_ppm
from riceleaf.modelio import save_model
from riceleaf.serve import create_app
from riceleaf.tensor import Tensor
from riceleaf.zoo import build_classifier

model_path = "/tmp/demo-serve.rdn1"
model = build_classifier((3, 32, 32), ("leaf_blast", "brown_spot", "hispa"),
                         conv_channels=(8, 16), seed=4)
save_model(model, model_path)

# In production: `riceleaf serve --model /tmp/demo-serve.rdn1 --port 8000`.
# Here the ASGI app is driven in-process.
client = TestClient(create_app(model_path))

print("GET /api/health ->", client.get("/api/health").json())

rng = np.random.default_rng(0)
leaf = Tensor(rng.uniform(0, 1, (3, 40, 40)).astype(np.float32))
response = client.post(
    "/api/predict",
    content=encode_ppm(leaf),
    headers={"content-type": "image/x-portable-pixmap"},
)
body = response.json()
print("POST /api/predict ->")
for entry in body["classes"]:
    print(f"  {entry['label']:<12} {entry['probability']:.6f}")
print(f"  top: {body['top']}  ({body['latency_ms']:.1f} ms)")

info = client.get(f"/api/diseases/{body['top']}").json()
print(f"GET /api/diseases/{body['top']} -> {info['display_name']}")
print("  ", info["management_advice"][:70], "...")

print("error contract:")
print("  empty body ->", client.post(
    "/api/predict", content=b"", headers={"content-type": "image/png"}).json())
print("  unknown disease ->", client.get("/api/diseases/nope").json())
