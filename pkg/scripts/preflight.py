import os, sys, importlib
from pathlib import Path
from dotenv import load_dotenv

ROOT = Path(__file__).resolve().parents[1]
fail = False

def ok(label, cond, extra=""):
    global fail
    print(f"[OK] {label}" + (f"  {extra}" if extra else "")) if cond else print(f"[FAIL] {label}" + (f"  {extra}" if extra else ""))
    if not cond:
        fail = True
    return bool(cond)

def require(label, cond, hint=""):
    # like ok, but the hint is printed when a mandatory check fails
    msg = f"{label}" + (f" | hint: {hint}" if (not cond and hint) else "")
    return ok(msg, cond)

def info(label):
    print(f"[INFO] {label}")

def load_env():
    # .env is optional; offline commands run on defaults
    if load_dotenv():
        print("[OK] .env loaded")
    else:
        info(".env not found (reading environment only)")

def valid_http_url(u: str) -> bool:
    return isinstance(u, str) and u.startswith(("http://", "https://")) and "://" in u

def main():
    # 0) .env
    load_env()

    # 1) Python
    require("Python >= 3.10", sys.version_info >= (3, 10), hint="Use Python 3.10+ environment")

    # 2) packages
    def can_import(mod):
        try:
            importlib.import_module(mod)
            return True
        except Exception:
            return False

    pkg_hint = {
        "dotenv": "python-dotenv",
        "requests": "requests",
        "pydantic": "pydantic",
        "numpy": "numpy",
        "torch": "torch",
        "pytest": "pytest",
    }
    for mod, pkg in pkg_hint.items():
        require(f"python package import: {mod}", can_import(mod), hint=f"pip install {pkg}")

    # 3) the package itself and its offline test fixtures
    require("qgnn importable", can_import("qgnn.main"), hint="Run from the repository root")
    fixtures = ROOT / "tests" / "fixtures" / "dblp" / "llm"
    require("replay fixtures present", fixtures.is_dir(), hint=f"Expected {fixtures}")

    # 4) live LLM settings (only gen-template without --mock-llm needs them)
    endpoint = os.getenv("QGNN_LLM_ENDPOINT")
    if endpoint:
        ok("QGNN_LLM_ENDPOINT looks like URL", valid_http_url(endpoint), endpoint)
    else:
        info("QGNN_LLM_ENDPOINT not set; the default local endpoint will be used")
    ok("QGNN_LOG_LEVEL valid",
       (os.getenv("QGNN_LOG_LEVEL") or "INFO").upper() in ("DEBUG", "INFO", "WARNING", "ERROR"))

    # 5) endpoint reachable (informational; never fails the preflight)
    if can_import("qgnn.main"):
        from qgnn.core.config import settings
        from qgnn.services.llm_client import ChatCompletionsTransport
        llm = ChatCompletionsTransport(timeout=5)
        reachable = llm.ping()
        info(f"LLM endpoint {settings.llm_endpoint} " + ("reachable" if reachable else "not reachable (use --mock-llm)"))

    print("\nPreflight done.")
    sys.exit(1 if fail else 0)

if __name__ == "__main__":
    main()
