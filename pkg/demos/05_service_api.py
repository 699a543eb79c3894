"""Walking the HTTP surface in-process (no port binding needed).

The service is a thin adapter over the engine: sessions are created and
closed explicitly, messages run full turns, and closing a session
returns the consolidation report.
"""

import json

from fastapi.testclient import TestClient

from remem.config import RuntimeConfig
from remem.service import make_app

client = TestClient(make_app(RuntimeConfig(owner="alice", seed=3)))

print("GET /healthz ->", client.get("/healthz").json())

sid = client.post("/v1/sessions", json={}).json()["session_id"]
print("POST /v1/sessions ->", sid)

for text in ("#topic I am allergic to penicillin and avoid it strictly",
             "#topic My dog Biscuit is a beagle who loves fetch"):
    body = client.post(f"/v1/sessions/{sid}/messages",
                       json={"text": text}).json()
    print(f"POST message -> turn {body['turn_index']}: "
          f"{body['response'][:50]!r}")

report = client.delete(f"/v1/sessions/{sid}").json()
print("DELETE session ->", json.dumps(report))

sid = client.post("/v1/sessions", json={}).json()["session_id"]
body = client.post(f"/v1/sessions/{sid}/messages",
                   json={"text": "what am I allergic to, penicillin?"}).json()
print("follow-up answer:", body["response"])
print("rewards for the selected memories:", body["rewards"])

search = client.get("/v1/memory/search",
                    params={"q": "dog Biscuit", "k": 2}).json()
print("GET /v1/memory/search ->",
      [(r["entry_id"], round(r["score"], 3)) for r in search["results"]])

print("GET /v1/metrics ->",
      json.dumps(client.get("/v1/metrics").json()["owners"]["alice"]))
