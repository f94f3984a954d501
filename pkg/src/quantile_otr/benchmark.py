"""Replicated simulation runs and their summary tables."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .simulation import CaseId, ReplicationResult, run_replication

TABLE_COLUMNS = ("case", "tau", "method", "n", "reps", "value_mean", "value_sd", "mr_mean", "mr_sd")
MSE_COLUMNS = ("case", "tau", "method", "n", "reps", "optimum", "mse", "mse_se")
REPLICATION_COLUMNS = ("case", "tau", "method", "n", "index", "seed", "value", "mr", "q_hat", "terminated_by")


@dataclass(frozen=True)
class BenchmarkSpec:
    case: str
    tau: float
    n: int
    reps: int
    kernel: str = "linear"
    seed: int = 0
    n_test: int = 10_000
    propensity: str = "logistic"
    survival: str = "auto"
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "case", CaseId.parse(self.case).value)
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.kernel not in ("linear", "gaussian"):
            raise ConfigError(f"kernel must be linear or gaussian, got {self.kernel!r}")

    @property
    def method(self) -> str:
        name = f"scl-{self.kernel}"
        extras = []
        if self.propensity != "logistic":
            extras.append(f"propensity={self.propensity}")
        if self.survival != "auto":
            extras.append(f"survival={self.survival}")
        return name + (f"[{';'.join(extras)}]" if extras else "")


def _one(args) -> ReplicationResult:
    spec, i = args
    return run_replication(spec.case, spec.tau, spec.n, spec.seed + i, kernel=spec.kernel, n_test=spec.n_test,
                           propensity=spec.propensity, survival=spec.survival, index=i)


def run_benchmark(spec: BenchmarkSpec) -> list[ReplicationResult]:
    """Replication ``i`` uses seed ``spec.seed + i``; results come back in index order."""
    tasks = [(spec, i) for i in range(spec.reps)]
    if spec.jobs == 1:
        return [_one(t) for t in tasks]
    workers = min(spec.jobs, spec.reps, os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=max(workers, 1)) as pool:
        return list(pool.map(_one, tasks))


def summary_row(spec: BenchmarkSpec, results) -> dict:
    v = np.array([r.value for r in results])
    m = np.array([r.mr for r in results])
    sd = (lambda a: float(a.std(ddof=1)) if a.size > 1 else 0.0)
    return {"case": spec.case, "tau": spec.tau, "method": spec.method, "n": spec.n, "reps": len(results),
            "value_mean": float(v.mean()), "value_sd": sd(v), "mr_mean": float(m.mean()), "mr_sd": sd(m)}


def mse_row(spec: BenchmarkSpec, results, optimum: float) -> dict:
    err2 = (np.array([r.value for r in results]) - optimum) ** 2
    se = float(err2.std(ddof=1) / np.sqrt(err2.size)) if err2.size > 1 else 0.0
    return {"case": spec.case, "tau": spec.tau, "method": spec.method, "n": spec.n, "reps": len(results),
            "optimum": optimum, "mse": float(err2.mean()), "mse_se": se}


def replication_rows(spec: BenchmarkSpec, results) -> list[dict]:
    base = {"case": spec.case, "tau": spec.tau, "method": spec.method, "n": spec.n}
    return [{**base, **r.to_dict()} for r in results]


def write_table(rows, path, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def spec_dict(spec: BenchmarkSpec) -> dict:
    return asdict(spec)
