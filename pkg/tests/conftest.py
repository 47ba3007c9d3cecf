import os
from pathlib import Path

import pytest

LDW_FILES = ("nsw_dw.csv", "cps_controls.csv", "psid_controls.csv")


def ldw_directory() -> Path | None:
    """Directory holding the LaLonde CSVs, or None when unavailable."""
    candidates = []
    env = os.environ.get("WGANSIM_LDW_DIR")
    if env:
        candidates.append(Path(env))
    candidates.append(Path(__file__).resolve().parent.parent / "data")
    for d in candidates:
        if all((d / f).is_file() for f in LDW_FILES):
            return d
    return None


@pytest.fixture(scope="session")
def ldw_dir() -> Path:
    d = ldw_directory()
    if d is None:
        pytest.skip(
            "LaLonde CSVs not found; place nsw_dw.csv, cps_controls.csv, "
            "psid_controls.csv under data/ or set WGANSIM_LDW_DIR"
        )
    return d
