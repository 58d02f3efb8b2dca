#!/usr/bin/env python3
"""
Smoke-check a running server (python run_server.py) end to end over HTTP.
Set DRF_API_URL to point elsewhere (default http://localhost:4000).
"""

import io
import json
import os
import sys

import requests

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.simulate import DEFAULT_CATE_PROBE, DgpSpec, simulate

API_BASE_URL = os.getenv("DRF_API_URL", "http://localhost:4000").rstrip("/")
ROLES = "x1:x,x2:x,x3:x,x4:x,x5:x,y:y,w:w"
FOREST = json.dumps({"num_trees": 100, "num_groups": 50})


def print_section(title):
    print("\n" + "=" * 70)
    print(f"  {title}")
    print("=" * 70)


def print_result(success, message):
    print(f"{'[OK]' if success else '[FAIL]'} {message}")


def _csv(n):
    buf = io.StringIO()
    simulate(DgpSpec(kind="cate_hetero", n=n, seed=0)).to_frame().to_csv(buf, index=False)
    return buf.getvalue().encode("utf-8")


def check_health():
    print_section("1. Health")
    resp = requests.get(f"{API_BASE_URL}/health", timeout=10)
    print_result(resp.status_code == 200, f"GET /health -> {resp.status_code} {resp.text[:200]}")
    return resp.status_code == 200


def check_forest():
    print_section("2. Fit, weights and inference")
    resp = requests.post(f"{API_BASE_URL}/api/forests", data={"roles": ROLES, "config": FOREST},
                         files={"data": ("train.csv", _csv(1000), "text/csv")}, timeout=300)
    if resp.status_code != 200:
        print_result(False, f"POST /api/forests -> {resp.status_code} {resp.text[:500]}")
        return False
    forest_id = resp.json()["id"]
    print_result(True, f"forest {forest_id}")
    resp = requests.post(f"{API_BASE_URL}/api/forests/{forest_id}/infer",
                         json={"x": list(DEFAULT_CATE_PROBE), "target": "cate:y|w", "tau": [0.0]}, timeout=60)
    print_result(resp.status_code == 200, f"infer -> {resp.status_code}")
    if resp.status_code == 200:
        print(json.dumps(resp.json()["estimates"], indent=2))
    return resp.status_code == 200


def check_codite():
    print_section("3. CoDiTE")
    resp = requests.post(f"{API_BASE_URL}/api/codite",
                         data={"roles": ROLES, "x": ",".join(map(str, DEFAULT_CATE_PROBE)), "config": FOREST},
                         files={"data": ("arms.csv", _csv(1000), "text/csv")}, timeout=300)
    print_result(resp.status_code == 200, f"codite -> {resp.status_code}")
    if resp.status_code == 200:
        print(json.dumps(resp.json()["test"], indent=2))
    return resp.status_code == 200


def main():
    print(f"Checking: {API_BASE_URL}")
    results = []
    for name, check in (("Health", check_health), ("Forest", check_forest), ("CoDiTE", check_codite)):
        try:
            results.append((name, check()))
        except requests.exceptions.ConnectionError:
            print_result(False, f"cannot reach {API_BASE_URL}; is the server running?")
            results.append((name, False))
            break
    print_section("SUMMARY")
    for name, ok in results:
        print_result(ok, name)
    return 0 if results and all(ok for _, ok in results) else 1


if __name__ == "__main__":
    sys.exit(main())
