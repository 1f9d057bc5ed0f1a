"""
Pass/fail verdicts for the study artifacts written by scripts/studies.

Each study reads the CSVs its script produced under one artifact directory:

    exchange    ablation_exchange.csv
    refinement  eval/metrics.csv, eval/timing.csv
    group-size  seed_*/bench/strategy_bench.csv
    floor       eval/metrics.csv
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Sequence

import pandas as pd

from .errors import FormatError, IoError

logger = logging.getLogger(__name__)

# One Jaccard point on the [0, 1] scale.
MIN_GAP = 0.01
JACCARD_FLOOR = 0.70
MAX_TIME_RATIO = 2.0
EARLY_STEP = 2

# (lower, higher, strict): strict pairs must differ by at least MIN_GAP.
EXCHANGE_ORDER = (
    ("none", "M_cat", True),
    ("M_cat", "M_mul", False),
    ("M_mul", "RCM", True),
    ("RCM", "RCM+CRM", True),
)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


# ============================================================================
# Checks on loaded tables
# ============================================================================
def _require_columns(table: pd.DataFrame, columns: Sequence[str], what: str) -> None:
    missing = [c for c in columns if c not in table.columns]
    if missing:
        raise FormatError(f"{what} lacks columns {missing}")


def exchange_ordering(table: pd.DataFrame, min_gap: float = MIN_GAP) -> List[Check]:
    """Mean test Jaccard per variant must rise along EXCHANGE_ORDER."""
    _require_columns(table, ["variant", "jaccard"], "ablation table")
    means = table.groupby("variant")["jaccard"].mean()
    absent = sorted({v for pair in EXCHANGE_ORDER for v in pair[:2]} - set(means.index))
    if absent:
        raise FormatError(f"ablation table lacks variants {absent}")

    checks = []
    for low, high, strict in EXCHANGE_ORDER:
        gap = means[high] - means[low]
        passed = gap >= min_gap if strict else gap >= 0.0
        relation = "<" if strict else "<="
        checks.append(Check(
            f"{low}{relation}{high}", bool(passed),
            f"J {means[low]:.4f} -> {means[high]:.4f} (gap {gap:+.4f})",
        ))
    return checks


def refinement_trend(metrics: pd.DataFrame, timing: pd.DataFrame, min_gap: float = MIN_GAP,
                     max_ratio: float = MAX_TIME_RATIO) -> List[Check]:
    """Last step beats step 2 by min_gap; its inference time stays under max_ratio x step 2."""
    _require_columns(metrics, ["step", "jaccard"], "metrics table")
    _require_columns(timing, ["step", "wallclock_s"], "timing table")
    jaccard = metrics.set_index("step")["jaccard"]
    seconds = timing.set_index("step")["wallclock_s"]
    last = int(jaccard.index.max())
    if EARLY_STEP not in jaccard.index or last <= EARLY_STEP or last not in seconds.index \
            or EARLY_STEP not in seconds.index:
        raise FormatError(f"per-step tables need steps {EARLY_STEP} and a later step, got {list(jaccard.index)}")

    gain = jaccard[last] - jaccard[EARLY_STEP]
    ratio = seconds[last] / seconds[EARLY_STEP]
    return [
        Check(f"jaccard_step{last}>step{EARLY_STEP}", bool(gain >= min_gap),
              f"J {jaccard[EARLY_STEP]:.4f} -> {jaccard[last]:.4f} (gain {gain:+.4f})"),
        Check(f"time_step{last}<{max_ratio:g}x_step{EARLY_STEP}", bool(ratio < max_ratio),
              f"{seconds[EARLY_STEP]:.4f}s -> {seconds[last]:.4f}s (ratio {ratio:.2f})"),
    ]


def group_size_trend(tables: Sequence[pd.DataFrame], strategies: Sequence[str] = ("c", "d"),
                     small: int = 2, large: int = 4) -> List[Check]:
    """Per strategy, mean Jaccard over seeds and classes at k=large is at least k=small."""
    if not tables:
        raise FormatError("no strategy-bench tables to judge")
    bench = pd.concat(tables, ignore_index=True)
    _require_columns(bench, ["strategy", "k", "jaccard"], "strategy-bench table")
    bench = bench.assign(jaccard=pd.to_numeric(bench["jaccard"], errors="coerce")).dropna(subset=["jaccard"])

    checks = []
    for strategy in strategies:
        rows = bench[bench["strategy"] == strategy]
        means = rows.groupby("k")["jaccard"].mean()
        if small not in means.index or large not in means.index:
            raise FormatError(f"strategy {strategy} lacks k={small} or k={large} rows")
        checks.append(Check(
            f"{strategy}:k{large}>=k{small}", bool(means[large] >= means[small]),
            f"J {means[small]:.4f} -> {means[large]:.4f}",
        ))
    return checks


def trained_floor(metrics: pd.DataFrame, floor: float = JACCARD_FLOOR) -> List[Check]:
    """Final-step mean test Jaccard reaches the floor."""
    _require_columns(metrics, ["step", "jaccard"], "metrics table")
    final = metrics.sort_values("step")["jaccard"].iloc[-1]
    return [Check(f"jaccard>={floor:.2f}", bool(final >= floor), f"J {final:.4f}")]


# ============================================================================
# Artifact directories
# ============================================================================
def _read(path: Path) -> pd.DataFrame:
    if not path.exists():
        raise IoError(f"Study output not found: {path}")
    try:
        return pd.read_csv(path, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FormatError(f"Malformed study output {path}: {e}") from e


def _exchange(root: Path) -> List[Check]:
    return exchange_ordering(_read(root / "ablation_exchange.csv"))


def _refinement(root: Path) -> List[Check]:
    return refinement_trend(_read(root / "eval" / "metrics.csv"), _read(root / "eval" / "timing.csv"))


def _group_size(root: Path) -> List[Check]:
    paths = sorted(root.glob("seed_*/bench/strategy_bench.csv"))
    return group_size_trend([_read(p) for p in paths])


def _floor(root: Path) -> List[Check]:
    return trained_floor(_read(root / "eval" / "metrics.csv"))


STUDIES: Dict[str, Callable[[Path], List[Check]]] = {
    "exchange": _exchange,
    "refinement": _refinement,
    "group-size": _group_size,
    "floor": _floor,
}


def judge(study: str, artifact_dir) -> List[Check]:
    """Run the checks of one study against its artifact directory.

    Raises:
        ValueError: On an unknown study
        IoError: If an expected CSV is missing
        FormatError: If a CSV lacks the rows or columns a check needs
    """
    if study not in STUDIES:
        raise ValueError(f"Unknown study {study!r}; expected one of {sorted(STUDIES)}")
    checks = STUDIES[study](Path(artifact_dir))
    for check in checks:
        level = logging.INFO if check.passed else logging.WARNING
        logger.log(level, f"[Verdict] {study}/{check.name}: {'PASS' if check.passed else 'FAIL'} {check.detail}")
    return checks


def write_summary(study: str, checks: Sequence[Check], path) -> bool:
    """Write `result=PASS|FAIL`, the study and one line per check; returns the result."""
    passed = all(c.passed for c in checks)
    lines = [f"result={'PASS' if passed else 'FAIL'}", f"study={study}"]
    lines += [f"{c.name}={'PASS' if c.passed else 'FAIL'} {c.detail}" for c in checks]
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise IoError(f"Could not write {path}: {e}") from e
    return passed
