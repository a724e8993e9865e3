"""Numerical tolerances, defaults and paths for boxcbf.

Values come from the process environment, then an optional `.env` at the
project root, then the defaults below. Import constants from here rather than
reading the environment elsewhere.
"""
from __future__ import annotations
import os
from pathlib import Path
from typing import Optional

from dotenv import dotenv_values  # type: ignore

PROJECT_ROOT = Path(__file__).resolve().parent.parent

_env = {}
if (PROJECT_ROOT / ".env").exists():
    _env = dotenv_values(PROJECT_ROOT / ".env")  # type: ignore
    # variables already set in the process win over .env
    for k, v in _env.items():
        if v is None:
            continue
        cleaned = str(v).strip().strip('"')
        if k not in os.environ and cleaned:
            os.environ[k] = cleaned


def _get(name: str, required: bool = False, default: Optional[str] = None) -> Optional[str]:
    val = os.getenv(name) or _env.get(name) or default
    if required and not val:
        raise RuntimeError(f"Missing required environment variable: {name}")
    return val


def _get_float(name: str, default: float) -> float:
    return float(_get(name, default=str(default)))  # type: ignore[arg-type]


def seed_override() -> Optional[int]:
    """Seed from BOXCBF_SEED, read at call time so tests can monkeypatch it."""
    raw = os.getenv("BOXCBF_SEED") or _env.get("BOXCBF_SEED")
    if raw is None or str(raw).strip() == "":
        return None
    return int(str(raw).strip())


SCENARIO_DIR = PROJECT_ROOT / "scenarios"
OUTPUT_DIR = Path(_get("BOXCBF_OUTPUT_DIR", default=str(PROJECT_ROOT / "runs")))  # type: ignore[arg-type]


DEFAULT_SEED = 0

# Decoupling matrix / filter tolerances
SINGULAR_TOL = _get_float("SINGULAR_TOL", 1e-9)
FEAS_TOL = _get_float("FEAS_TOL", 1e-9)
COMPL_TOL = _get_float("COMPL_TOL", 1e-9)

# Oracle
ORACLE_LAMBDA_TOL = _get_float("ORACLE_LAMBDA_TOL", 1e-12)
ORACLE_SLACK_TOL = _get_float("ORACLE_SLACK_TOL", 1e-10)
KKT_COND_LIMIT = _get_float("KKT_COND_LIMIT", 1e12)

# Relative-degree verification
FD_STEP = _get_float("FD_STEP", 1e-5)
RELDEG_TOL = _get_float("RELDEG_TOL", 1e-6)

# Compatibility certificate
IDENTITY_TOL = _get_float("IDENTITY_TOL", 1e-10)

# Simulation / audit
DEFAULT_DT = _get_float("DEFAULT_DT", 1e-3)
DEFAULT_INTEGRATOR = _get("DEFAULT_INTEGRATOR", default="rk4")
INVARIANCE_TOL_FLOOR = _get_float("INVARIANCE_TOL_FLOOR", 1e-6)
INVARIANCE_TOL_PER_DT = _get_float("INVARIANCE_TOL_PER_DT", 1e-3)
ISS_DERATE = _get_float("ISS_DERATE", 0.9)
ISS_TOL = _get_float("ISS_TOL", 1e-6)

# Output
CSV_FLOAT_FORMAT = _get("CSV_FLOAT_FORMAT", default="%.17g")

VERSION = "0.1.0"

__all__ = [
    "PROJECT_ROOT",
    "SCENARIO_DIR",
    "OUTPUT_DIR",
    "seed_override",
    "DEFAULT_SEED",
    "SINGULAR_TOL",
    "FEAS_TOL",
    "COMPL_TOL",
    "ORACLE_LAMBDA_TOL",
    "ORACLE_SLACK_TOL",
    "KKT_COND_LIMIT",
    "FD_STEP",
    "RELDEG_TOL",
    "IDENTITY_TOL",
    "DEFAULT_DT",
    "DEFAULT_INTEGRATOR",
    "INVARIANCE_TOL_FLOOR",
    "INVARIANCE_TOL_PER_DT",
    "ISS_DERATE",
    "ISS_TOL",
    "CSV_FLOAT_FORMAT",
    "VERSION",
]
