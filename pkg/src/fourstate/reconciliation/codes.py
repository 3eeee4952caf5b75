"""Parity-check matrices shipped with the package, addressable by name."""
from __future__ import annotations

import functools
from importlib import resources
from pathlib import Path

from .ldpc import LdpcCode

BUILTIN = {
    # (3,6)-regular, rate 1/2, PEG construction with seed 1
    "peg-3-6-n4096": "peg-3-6-n4096.txt.gz",
    # irregular rate-0.166 PEG code for the repetition scheme at low SNR
    "lowrate-n65536": "lowrate-n65536.txt.gz",
}


@functools.lru_cache(maxsize=8)
def load_code(name_or_path: str) -> LdpcCode:
    """Load a builtin code by name, or any parity-check file by path."""
    if name_or_path in BUILTIN:
        res = resources.files("fourstate") / "codes" / BUILTIN[name_or_path]
        with resources.as_file(res) as path:
            code = LdpcCode.load(path)
        return LdpcCode(code.n, code.m_checks, code.rows, name_or_path)
    path = Path(name_or_path)
    if not path.exists():
        raise FileNotFoundError(f"no builtin code or file named {name_or_path!r} (builtin: {', '.join(BUILTIN)})")
    return LdpcCode.load(path)
