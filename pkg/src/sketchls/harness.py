"""Benchmark driver: synthetic instances, CSV ingestion, experiment loops,
performance profiles, and timing breakdowns.

Experiments are deterministic: every cell of the (sketch kind, m, trial)
grid derives its own seed from the config seed, and all methods in a cell
share the same realized compression operator.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import (
    LSProblem,
    eps_optimality,
    relative_residual_profile,
    solve_ols,
)
from .exceptions import CsvFormatError, DimensionError
from .rpc import RpcParams, solve_rpc_sketched
from .sketch import KINDS, SketchSpec, make_sketch
from .solvers import (
    GramSolver,
    SketchedProblem,
    blendenpik_preconditioner,
    default_mu,
    preconditioned_lsqr,
    solve_robust_cls,
)

COHERENCE_CLASSES = ("incoherent", "semi-coherent", "coherent")
METHODS = (
    "ols",
    "ols-normal",
    "cls",
    "ridge-cls",
    "robust-cls",
    "pcls",
    "ridge-pcls",
    "rpc",
    "blendenpik",
)
UNSKETCHED = ("ols", "ols-normal")

_PROBLEM_STREAM = 101  # spawn key for the synthetic-problem generator


def _haar_columns(rng, rows, cols):
    """Orthonormal columns with Haar-like distribution (QR of a Gaussian)."""
    Q, R = np.linalg.qr(rng.standard_normal((rows, cols)))
    return Q * np.sign(np.diag(R))


def _geometric_sigma(n, condition):
    if n == 1:
        return np.array([1.0])
    return np.geomspace(1.0, 1.0 / condition, n)


def _incoherent_matrix(rng, M, N, condition):
    U = _haar_columns(rng, M, N)
    V = _haar_columns(rng, N, N)
    return (U * _geometric_sigma(N, condition)) @ V.T


def generate_synthetic(M, N, condition, coherence, seed, residual_fraction=0.5) -> LSProblem:
    """Random instance of a given coherence class with planted structure.

    The returned matrix has the requested condition number; the right-hand
    side is ``A x_star + z`` with ``z`` orthogonal to range(A) and
    ``||z|| = residual_fraction * ||A x_star||``.
    """
    if M < N:
        raise DimensionError(f"need M >= N, got {M} < {N}")
    if condition < 1:
        raise ValueError("condition number must be at least 1")
    if coherence not in COHERENCE_CLASSES:
        raise ValueError(f"unknown coherence class {coherence!r}")
    if residual_fraction < 0:
        raise ValueError("residual fraction must be nonnegative")
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(_PROBLEM_STREAM,))
    )

    if coherence == "incoherent" or N < 2:
        A = _incoherent_matrix(rng, M, N, condition)
    elif coherence == "semi-coherent":
        # leverage split: a dense incoherent block stacked with identity rows
        k = N // 2
        G = _incoherent_matrix(rng, M - k, N - k, condition)
        A = np.zeros((M, N))
        A[: M - k, : N - k] = G
        A[M - k :, N - k :] = np.eye(k)
    else:
        # nearly all leverage on the first N rows
        A = np.zeros((M, N))
        A[:N, :N] = np.diag(_geometric_sigma(N, condition))
        if M > N:
            A[N:] = 1e-8 * rng.standard_normal((M - N, N))

    x_star = rng.standard_normal(N)
    scale = float(np.linalg.norm(A @ x_star))
    if scale == 0.0:  # pragma: no cover - A is full rank, x_star nonzero a.s.
        x_star = np.ones(N)
        scale = float(np.linalg.norm(A @ x_star))
    b = A @ x_star
    if residual_fraction > 0:
        raw = rng.standard_normal(M)
        coef, *_ = np.linalg.lstsq(A, raw, rcond=None)
        z = raw - A @ coef
        z_norm = float(np.linalg.norm(z))
        if z_norm > 0:
            b = b + z * (residual_fraction * scale / z_norm)
    return LSProblem(A=A, b=b)


def load_csv(path, b_policy: str = "last", b_path=None) -> LSProblem:
    """Parse a header-less numeric CSV into a least-squares instance.

    ``b_policy="last"`` takes the right-hand side from the last column;
    ``b_policy="file"`` reads it from the single-column file ``b_path``.
    Ragged rows and non-numeric fields are rejected with line numbers.
    """
    rows = _parse_numeric_csv(path)
    if b_policy == "last":
        if rows.shape[1] < 2:
            raise CsvFormatError(f"{path}: need at least 2 columns to split off b")
        A, b = rows[:, :-1], rows[:, -1]
    elif b_policy == "file":
        if b_path is None:
            raise ValueError("b_policy='file' requires b_path")
        b_rows = _parse_numeric_csv(b_path)
        if b_rows.shape[1] != 1:
            raise CsvFormatError(f"{b_path}: expected a single column, got {b_rows.shape[1]}")
        if b_rows.shape[0] != rows.shape[0]:
            raise CsvFormatError(
                f"{b_path}: {b_rows.shape[0]} rows do not match {rows.shape[0]} data rows"
            )
        A, b = rows, b_rows[:, 0]
    else:
        raise ValueError(f"unknown b_policy {b_policy!r}")
    if A.shape[0] <= A.shape[1]:
        raise CsvFormatError(
            f"{path}: {A.shape[0]} rows x {A.shape[1]} feature columns is not overdetermined"
        )
    return LSProblem(A=A, b=b)


def _parse_numeric_csv(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise CsvFormatError(
                    f"{path}: line {lineno} has {len(fields)} fields, expected {width}"
                )
            try:
                rows.append([float(f) for f in fields])
            except ValueError:
                bad = next(f for f in fields if not _is_number(f))
                raise CsvFormatError(
                    f"{path}: line {lineno} has non-numeric field {bad!r}"
                ) from None
    if not rows:
        raise CsvFormatError(f"{path}: file is empty")
    return np.asarray(rows, dtype=float)


def _is_number(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


def split_rows(problem: LSProblem, n_train: int, n_test: int, seed: int):
    """Disjoint train/test row subsets sampled without replacement."""
    if n_train + n_test > problem.M:
        raise ValueError(
            f"cannot draw {n_train}+{n_test} rows from {problem.M} without replacement"
        )
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(7,)))
    picked = rng.choice(problem.M, size=n_train + n_test, replace=False)
    train, test = picked[:n_train], picked[n_train:]
    return (
        LSProblem(A=problem.A[train], b=problem.b[train]),
        LSProblem(A=problem.A[test], b=problem.b[test]),
    )


# ---------------------------------------------------------------------------
# experiment configuration and records
# ---------------------------------------------------------------------------


@dataclass
class ProblemSource:
    kind: str = "synthetic"  # "synthetic" | "csv"
    rows: int = 500
    cols: int = 20
    condition: float = 100.0
    coherence: str = "incoherent"
    residual_fraction: float = 0.5
    path: str | None = None
    b_policy: str = "last"
    b_path: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSource":
        return cls(**data)


@dataclass
class ExperimentConfig:
    source: ProblemSource = field(default_factory=ProblemSource)
    sketch_kinds: tuple = ("gaussian",)
    m_values: tuple = (100,)
    methods: tuple = ("pcls",)
    trials: int = 1
    seed: int = 0
    rho: float = 1.0
    mu: float | str = "auto"  # a number, or "auto" for the data-driven default
    lsqr_tol: float = 1e-6
    timing_repeats: int = 3  # best-of-k timings after one discarded warm-up

    def __post_init__(self):
        self.sketch_kinds = tuple(self.sketch_kinds)
        self.m_values = tuple(int(m) for m in self.m_values)
        self.methods = tuple(self.methods)
        for kind in self.sketch_kinds:
            if kind not in KINDS:
                raise ValueError(f"unknown sketch kind {kind!r}")
        for method in self.methods:
            if method not in METHODS:
                raise ValueError(f"unknown method {method!r}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.timing_repeats < 1:
            raise ValueError("timing_repeats must be at least 1")
        if self.mu != "auto" and float(self.mu) < 0:
            raise ValueError("mu must be nonnegative or 'auto'")

    def validate_grid(self, problem: LSProblem):
        for m in self.m_values:
            if not (problem.N <= m <= problem.M):
                raise ValueError(f"sketch size m={m} outside [N={problem.N}, M={problem.M}]")

    def to_dict(self) -> dict:
        data = {k: v for k, v in self.__dict__.items()}
        data["source"] = self.source.to_dict()
        data["sketch_kinds"] = list(self.sketch_kinds)
        data["m_values"] = list(self.m_values)
        data["methods"] = list(self.methods)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        data["source"] = ProblemSource.from_dict(data.get("source", {}))
        return cls(**data)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


@dataclass
class TrialRecord:
    config_hash: str
    method: str
    sketch: str  # kind, or "none" for unsketched methods
    m: int
    trial: int
    seed: int
    relative_accuracy: float | None
    eps_optimality: float | None
    timings: dict
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(self.__dict__)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        return cls(**json.loads(line))

    @property
    def failed(self) -> bool:
        return self.error is not None


def load_records(path):
    with open(path, "r", encoding="utf-8") as handle:
        return [TrialRecord.from_json(line) for line in handle if line.strip()]


# ---------------------------------------------------------------------------
# experiment runner
# ---------------------------------------------------------------------------


def _build_problem(config: ExperimentConfig) -> LSProblem:
    src = config.source
    if src.kind == "synthetic":
        return generate_synthetic(
            src.rows,
            src.cols,
            src.condition,
            src.coherence,
            seed=config.seed,
            residual_fraction=src.residual_fraction,
        )
    if src.kind == "csv":
        return load_csv(src.path, b_policy=src.b_policy, b_path=src.b_path)
    raise ValueError(f"unknown problem source {src.kind!r}")


def _cell_seed(root_seed, kind, m, trial) -> int:
    seq = np.random.SeedSequence(
        entropy=int(root_seed), spawn_key=(KINDS.index(kind) + 1, int(m), int(trial))
    )
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _resolve_mu(config, sp):
    if config.mu == "auto":
        return default_mu(sp)
    return float(config.mu)


def _run_pipeline(problem, config, method, kind, m, sketch_seed):
    """One (method, sketch, m, trial) cell; returns (x, phase timings)."""
    A, b = problem.A, problem.b
    timings = {"sketch": 0.0, "factor": 0.0, "solve": 0.0}

    def phase(name, fn):
        start = time.perf_counter()
        out = fn()
        timings[name] += time.perf_counter() - start
        return out

    if method == "ols":
        x = phase("solve", lambda: solve_ols(problem, "factorized"))
        return x, timings
    if method == "ols-normal":
        factor = phase("factor", lambda: cho_factor(A.T @ A))
        x = phase("solve", lambda: cho_solve(factor, A.T @ b))
        return x, timings

    spec = SketchSpec(kind=kind, m=m, M=problem.M, seed=sketch_seed)

    def make_sketched():
        op = make_sketch(spec)
        return op, op.apply(A), op.apply(b)

    op, P, q = phase("sketch", make_sketched)

    def sketched_problem():
        return SketchedProblem(P=P, q=q, c=A.T @ b)

    if method in ("cls", "pcls"):
        solver = phase("factor", lambda: GramSolver(P))
        rhs = phase("solve", lambda: P.T @ q if method == "cls" else A.T @ b)
        x = phase("solve", lambda: solver.solve(rhs))
        return x, timings

    if method in ("ridge-cls", "ridge-pcls"):
        sp = sketched_problem()
        if config.mu == "auto":
            phase("factor", lambda: sp.spectral)  # eigenvalue data for the default weight
        mu = _resolve_mu(config, sp)
        solver = phase("factor", lambda: GramSolver(P, mu))
        rhs = P.T @ q if method == "ridge-cls" else sp.c
        x = phase("solve", lambda: solver.solve(rhs))
        return x, timings

    if method == "robust-cls":
        sp = sketched_problem()
        phase("factor", lambda: sp.spectral)
        x = phase("solve", lambda: solve_robust_cls(sp, rho=config.rho))
        return x, timings

    if method == "rpc":
        sp = sketched_problem()
        phase("factor", lambda: sp.spectral)
        params = RpcParams(rho=config.rho)
        x = phase("solve", lambda: solve_rpc_sketched(sp, float(np.linalg.norm(b)), params).x)
        return x, timings

    if method == "blendenpik":
        R = phase("factor", lambda: blendenpik_preconditioner(P))
        def run_lsqr():
            x, _, converged = preconditioned_lsqr(A, b, R=R, tol=config.lsqr_tol)
            if not converged:
                raise RuntimeError("preconditioned LSQR did not converge")
            return x
        x = phase("solve", run_lsqr)
        return x, timings

    raise ValueError(f"unknown method {method!r}")


def run_experiment(config: ExperimentConfig, out_path=None):
    """Execute every (method, sketch kind, m, trial) cell of the grid.

    Records are appended to ``out_path`` (JSON lines) as they complete, so
    a crashed run keeps everything finished so far. Individual cell
    failures become failed records instead of aborting the run.
    """
    problem = _build_problem(config)
    config.validate_grid(problem)
    x_ls = solve_ols(problem, "factorized")
    residual_ls = float(np.linalg.norm(problem.A @ x_ls - problem.b))
    chash = config.config_hash()

    sink = open(out_path, "a", encoding="utf-8") if out_path else None
    records = []
    try:
        for method in config.methods:
            kinds = ("none",) if method in UNSKETCHED else config.sketch_kinds
            ms = (0,) if method in UNSKETCHED else config.m_values
            for kind in kinds:
                for m in ms:
                    for trial in range(config.trials):
                        seed = 0 if kind == "none" else _cell_seed(config.seed, kind, m, trial)
                        record = _run_cell(
                            problem, config, x_ls, residual_ls, chash,
                            method, kind, m, trial, seed,
                        )
                        records.append(record)
                        if sink is not None:
                            sink.write(record.to_json() + "\n")
                            sink.flush()
    finally:
        if sink is not None:
            sink.close()
    return records


def _run_cell(problem, config, x_ls, residual_ls, chash, method, kind, m, trial, seed):
    try:
        x = None
        best = None
        runs = config.timing_repeats + 1  # first run warms caches and is discarded
        for rep in range(runs):
            x, timings = _run_pipeline(problem, config, method, kind, m, seed)
            if rep == 0 and runs > 1:
                continue
            if best is None:
                best = timings
            else:
                best = {k: min(best[k], timings[k]) for k in best}
        residual = float(np.linalg.norm(problem.A @ x - problem.b))
        rel_acc = residual / residual_ls - 1.0 if residual_ls > 0 else 0.0
        return TrialRecord(
            config_hash=chash, method=method, sketch=kind, m=m, trial=trial, seed=seed,
            relative_accuracy=rel_acc,
            eps_optimality=eps_optimality(x, problem, x_ls),
            timings=best,
        )
    except Exception as exc:  # noqa: BLE001 - failed cells become failed records
        return TrialRecord(
            config_hash=chash, method=method, sketch=kind, m=m, trial=trial, seed=seed,
            relative_accuracy=None, eps_optimality=None, timings={},
            error=f"{type(exc).__name__}: {exc}",
        )


# ---------------------------------------------------------------------------
# report emitters
# ---------------------------------------------------------------------------


def _group_label(record, keys):
    return "|".join(f"{k}={getattr(record, k)}" for k in keys)


def emit_profile(records, group_keys=("method", "sketch", "m"), out_path=None):
    """Per-group CDF rows of the relative residual factor.

    Returns ``[(group, fraction, value)]`` sorted by group then fraction and
    optionally writes them as CSV with a ``group,fraction,value`` header.
    """
    groups = {}
    for rec in records:
        if rec.failed:
            warnings.warn(f"skipping failed record {rec.method}/{rec.sketch}/m={rec.m}",
                          stacklevel=2)
            continue
        groups.setdefault(_group_label(rec, group_keys), []).append(
            1.0 + rec.relative_accuracy
        )
    rows = []
    for label in sorted(groups):
        values = groups[label]
        if not values:  # pragma: no cover - empty groups never get created
            warnings.warn(f"group {label} is empty; omitted", stacklevel=2)
            continue
        for fraction, value in relative_residual_profile(values):
            rows.append((label, fraction, value))
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as handle:
            handle.write("group,fraction,value\n")
            for label, fraction, value in rows:
                handle.write(f"{label},{fraction:.12g},{value:.12g}\n")
    return rows


def emit_timing_breakdown(records, out_path=None):
    """Mean per-phase seconds per method; total is the exact sum of phases.

    Returns ``[(method, sketch_time, factor_time, solve_time, total)]``.
    """
    groups = {}
    for rec in records:
        if rec.failed:
            continue
        groups.setdefault(rec.method, []).append(rec.timings)
    rows = []
    for method in sorted(groups):
        timing_list = groups[method]
        means = {
            phase: float(np.mean([t.get(phase, 0.0) for t in timing_list]))
            for phase in ("sketch", "factor", "solve")
        }
        total = means["sketch"] + means["factor"] + means["solve"]
        rows.append((method, means["sketch"], means["factor"], means["solve"], total))
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as handle:
            handle.write("method,sketch_time,factor_time,solve_time,total\n")
            for method, s, f, so, total in rows:
                handle.write(f"{method},{s:.9f},{f:.9f},{so:.9f},{total:.9f}\n")
    return rows
