"""File-based adapter for external simulators.

The command template receives ``{in}``, a one-row design CSV (header
``x1,...,xd``), and ``{out}``, the path where it must write a ``.fld`` map.
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .designs import write_design_csv
from .field import read_field

logger = logging.getLogger(__name__)


class ExternalModelError(RuntimeError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class ExternalModelAdapter:
    template: str
    timeout: float | None = None
    retries: int = 0
    jobs: int = 1

    def __post_init__(self):
        if "{in}" not in self.template or "{out}" not in self.template:
            raise ValueError("command template needs {in} and {out} placeholders")

    @classmethod
    def from_spec(cls, spec: str, **kw) -> "ExternalModelAdapter":
        """Parse ``exec:CMD {in} {out}`` (surrounding quotes optional)."""
        if not spec.startswith("exec:"):
            raise ValueError(f"not an exec model spec: {spec!r}")
        return cls(spec[5:].strip().strip("\"'"), **kw)

    def run_row(self, row: int, x: np.ndarray, workdir: Path):
        src = workdir / f"row_{row + 1:04d}.csv"
        dst = workdir / f"row_{row + 1:04d}.fld"
        write_design_csv(src, x[None, :])
        argv = [a.replace("{in}", str(src)).replace("{out}", str(dst)) for a in shlex.split(self.template)]
        last = ""
        for attempt in range(self.retries + 1):
            dst.unlink(missing_ok=True)
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
            except (subprocess.TimeoutExpired, OSError) as exc:
                last = str(exc)
                continue
            if proc.returncode == 0 and dst.exists():
                try:
                    return read_field(dst)
                except ValueError as exc:
                    last = f"unreadable output: {exc}"
                    continue
            last = f"exit {proc.returncode}: {proc.stderr.strip()[-500:]}"
            logger.warning("row %d attempt %d failed: %s", row + 1, attempt + 1, last)
        raise ExternalModelError(f"simulator failed for design row {row + 1} (x={x.tolist()}): {last}", row)

    def run(self, X: np.ndarray) -> list:
        """One subprocess per row; results are returned in row order."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        with tempfile.TemporaryDirectory(prefix="sobolmap_exec_") as tmp:
            work = Path(tmp)
            if self.jobs > 1:
                with ThreadPoolExecutor(self.jobs) as pool:
                    return list(pool.map(lambda i: self.run_row(i, X[i], work), range(X.shape[0])))
            return [self.run_row(i, X[i], work) for i in range(X.shape[0])]


class ExternalEvaluator:
    """Evaluator protocol wrapper around an adapter (grid learned from the first run)."""

    def __init__(self, adapter: ExternalModelAdapter, d: int, probe: np.ndarray):
        self.adapter = adapter
        self.d = d
        first = adapter.run(np.atleast_2d(probe))[0]
        self.shape = first.shape
        self.z1_range = first.z1_range
        self.z2_range = first.z2_range

    def __call__(self, X):
        fields = self.adapter.run(X)
        return np.stack([f.values for f in fields])
