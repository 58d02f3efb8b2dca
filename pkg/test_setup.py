#!/usr/bin/env python3
"""
Test script to check if the setup is working correctly.
This script verifies:
1. All required dependencies are installed
2. Environment settings parse
3. App modules import
4. Basic functionality (a tiny forest fit)
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

REQUIRED_MODULES = [
    ('fastapi', 'FastAPI'),
    ('uvicorn', 'uvicorn'),
    ('pydantic', 'Pydantic'),
    ('multipart', 'python-multipart'),
    ('requests', 'requests'),
    ('dotenv', 'python-dotenv'),
    ('numpy', 'numpy'),
    ('scipy', 'scipy'),
    ('pandas', 'pandas'),
    ('joblib', 'joblib'),
]

OPTIONAL_MODULES = [
    ('httpx', 'httpx (fastapi.testclient)'),
    ('pytest', 'pytest'),
]


def test_imports():
    """All required modules can be imported."""
    missing = []
    for module_name, display_name in REQUIRED_MODULES:
        try:
            __import__(module_name)
            print(f"  [OK] {display_name}")
        except ImportError as e:
            print(f"  [FAIL] {display_name} - MISSING ({e})")
            missing.append(display_name)
    for module_name, display_name in OPTIONAL_MODULES:
        try:
            __import__(module_name)
            print(f"  [OK] {display_name}")
        except ImportError:
            print(f"  [WARN] {display_name} - Not installed (optional)")
    assert not missing, f"missing modules: {missing}"


def test_environment():
    """Settings read from the environment / .env are usable."""
    from app import settings

    print(f"  DRF_SEED={settings.DRF_SEED} DRF_THREADS={settings.DRF_THREADS} "
          f"DRF_FOREST_DIR={settings.DRF_FOREST_DIR} LOG_LEVEL={settings.LOG_LEVEL}")
    assert settings.DRF_SEED >= 0
    assert settings.DRF_THREADS >= 1
    if settings.DRF_CONFIG:
        assert os.path.exists(settings.DRF_CONFIG), f"DRF_CONFIG points to a missing file: {settings.DRF_CONFIG}"


def test_app_imports():
    """App modules import, including the HTTP service."""
    from app import cli, codite, forest, inference, kernel, main, serialization, studies, uncertainty  # noqa: F401

    assert main.app.title == "drf-uq-backend"


def test_basic_functionality():
    """A tiny forest fits and yields weights that sum to one."""
    from app.forest import build_forest, make_config, weights
    from app.simulate import DgpSpec, simulate

    data = simulate(DgpSpec(kind="quantile_shift", n=80, seed=0))
    forest = build_forest(data, make_config(num_trees=4, num_groups=2))
    total = weights(forest, [0.5, 0, 0, 0, 0]).w.sum()
    assert abs(total - 1.0) < 1e-12


def main():
    """Run all tests."""
    print("\n" + "=" * 60)
    print("Setup Test Script")
    print("=" * 60)

    results = {}
    for name, fn in (('imports', test_imports), ('environment', test_environment),
                     ('app_imports', test_app_imports), ('functionality', test_basic_functionality)):
        print(f"\nTesting {name}...")
        try:
            fn()
            results[name] = True
        except Exception as e:
            print(f"  [FAIL] {e!r}")
            results[name] = False

    print("\n" + "=" * 60)
    print("Test Results Summary")
    print("=" * 60)
    for test_name, passed in results.items():
        status = "[PASS]" if passed else "[FAIL]"
        print(f"  {test_name.upper()}: {status}")

    print("\n" + "=" * 60)
    if all(results.values()):
        print("[SUCCESS] All tests passed!")
        print("\nTo run the server:")
        print("  python run_server.py")
        print("  OR")
        print("  python -m uvicorn app.main:app --reload")
        return 0
    print("[ERROR] Some tests failed. Please fix the issues above.")
    print("\nTo install dependencies:")
    print("  python -m pip install -r requirements.txt")
    return 1


if __name__ == '__main__':
    sys.exit(main())
