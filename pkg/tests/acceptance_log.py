"""Per-criterion outcomes of the acceptance suite, printed at the end of the run."""

TITLES = {
    1: "gradient correctness",
    2: "oracle equivalence",
    3: "permutation invariance",
    4: "geometric canonicalization",
    5: "critical-point bound",
    6: "end-to-end synthetic discrimination",
    7: "hourglass analog",
    8: "tissue-sensitivity analog",
    9: "determinism",
    10: "subject exclusivity",
}

RESULTS: dict[int, tuple[bool, str]] = {}


def line(n: int) -> str:
    if n not in RESULTS:
        return f"criterion {n:2d} ({TITLES[n]}): FAIL (not run, or errored before reporting)"
    ok, detail = RESULTS[n]
    return f"criterion {n:2d} ({TITLES[n]}): {'PASS' if ok else 'FAIL'} {detail}"


def record(n: int, ok: bool, detail: str) -> bool:
    RESULTS[n] = (bool(ok), detail)
    print("\n" + line(n))
    return bool(ok)
