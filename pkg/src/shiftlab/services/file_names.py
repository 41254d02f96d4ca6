from __future__ import annotations
import re

_UNSAFE = re.compile(r"[^A-Za-z0-9._-]+")

def safe_name(name: str) -> str:
    # keep domain names usable as file stems
    cleaned = _UNSAFE.sub("_", str(name)).strip("._")
    return cleaned or "unnamed"

def domain_file_name(domain: str) -> str:
    return f"generated_{safe_name(domain)}.csv"

def interpolation_file_name(index: int, count: int) -> str:
    return f"interp_{index:03d}_of_{count:03d}.csv"

def recombination_file_name(assignment: dict[str, str]) -> str:
    parts = "_".join(f"{safe_name(k)}-{safe_name(v)}" for k, v in sorted(assignment.items()))
    return f"recombined_{parts}.csv"
