"""Command-line entry point: matrix ingestion, mechanisms, verification.

Commands
--------
lra       single-pass private low-rank approximation of a CSV/binary matrix
multiply  private transposed product A.T @ B of two column streams
regress   private least squares against a sketched design matrix
verify    run the harness verification suite
bench     coarse wall-time measurements

Matrix files are either headerless CSV (one row per line) or the "DPMT"
binary format (magic, version u16, rows u32, cols u32, little-endian
float64 row-major). Streaming commands consume rows through a one-pass
iterator and never materialize the private matrix unless --oracle is given.

Exit codes: 0 success, 1 mechanism error, 2 usage error, 3 verification
failure.
"""
from __future__ import annotations

import argparse
import json
import math
import struct
import sys
import time
from dataclasses import dataclass, asdict
from typing import Iterator, Optional, Tuple

import numpy as np

from . import guard, harness, numerics
from .errors import DPSketchError, FormatError, ParameterDomainError
from .lra import LraConfig, new_lra, reconstruct
from .matprod import lifted_matrix, new_matprod
from .regress import new_regress
from .sketch import GaussianSketcher

MATRIX_MAGIC = b"DPMT"
MATRIX_VERSION = 1
_MATRIX_HEADER = struct.Struct("<4sHII")


@dataclass
class RunConfig:
    command: str
    eps: Optional[float] = None
    delta: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    rank: Optional[int] = None
    oversample: Optional[int] = None
    seed: int = 0
    input: Optional[str] = None
    input_b: Optional[str] = None
    fmt: str = "csv"
    oracle: bool = False
    report: Optional[str] = None
    halve_budget: bool = True
    constant_c: float = guard.LRA_LIFT_CONSTANT

    def budget(self) -> guard.PrivacyBudget:
        return guard.PrivacyBudget(self.eps, self.delta)

    def accuracy(self) -> guard.AccuracySpec:
        return guard.AccuracySpec(self.alpha, self.beta)


def save_matrix(path: str, m: np.ndarray) -> None:
    a = numerics.as_matrix(m)
    with open(path, "wb") as fh:
        fh.write(_MATRIX_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, a.shape[0], a.shape[1]))
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _parse_csv_line(line: str, lineno: int, expected: Optional[int]) -> np.ndarray:
    parts = line.rstrip("\n").rstrip("\r").split(",")
    try:
        row = np.array([float(p) for p in parts])
    except ValueError as exc:
        raise FormatError(f"unparseable entry at line {lineno}: {exc}") from exc
    if expected is not None and row.size != expected:
        raise FormatError(
            f"ragged row at line {lineno}: {row.size} entries, expected {expected}"
        )
    if not np.isfinite(row).all():
        raise FormatError(f"non-finite entry at line {lineno}")
    return row


def matrix_shape(path: str, fmt: str) -> Tuple[int, int]:
    """Probe (rows, cols) without parsing entries (CSV) or payload (binary)."""
    if fmt == "dpbin":
        with open(path, "rb") as fh:
            header = fh.read(_MATRIX_HEADER.size)
        if len(header) < _MATRIX_HEADER.size:
            raise FormatError(f"matrix header truncated at offset {len(header)}")
        magic, version, rows, cols = _MATRIX_HEADER.unpack(header)
        if magic != MATRIX_MAGIC:
            raise FormatError(f"bad matrix magic {magic!r}")
        if version != MATRIX_VERSION:
            raise FormatError(f"unsupported matrix format version {version}")
        return rows, cols
    with open(path, "r") as fh:
        first = fh.readline()
        if not first.strip():
            raise FormatError("empty CSV matrix")
        cols = first.count(",") + 1
        rows = 1
        for line in fh:
            if line.strip():
                rows += 1
    return rows, cols


def iter_matrix_rows(path: str, fmt: str) -> Iterator[Tuple[int, np.ndarray]]:
    """One-pass row iterator; entries are parsed exactly once."""
    if fmt == "dpbin":
        rows, cols = matrix_shape(path, fmt)
        with open(path, "rb") as fh:
            fh.seek(_MATRIX_HEADER.size)
            for i in range(rows):
                buf = fh.read(8 * cols)
                if len(buf) != 8 * cols:
                    raise FormatError(
                        f"matrix payload truncated at offset {_MATRIX_HEADER.size + 8 * cols * i + len(buf)}"
                    )
                row = np.frombuffer(buf, dtype="<f8")
                if not np.isfinite(row).all():
                    raise FormatError(f"non-finite entry in binary row {i}")
                yield i, row
        return
    expected = None
    i = 0
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = _parse_csv_line(line, lineno, expected)
            expected = row.size
            yield i, row
            i += 1


def load_matrix(path: str, fmt: str) -> np.ndarray:
    rows = [row for _, row in iter_matrix_rows(path, fmt)]
    if not rows:
        raise FormatError("empty matrix")
    return np.vstack(rows)


def parse_args(argv) -> RunConfig:
    parser = argparse.ArgumentParser(
        prog="dpsketch", description="Differentially private streaming linear algebra."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, need_budget, need_accuracy):
        p.add_argument("--eps", type=float, required=need_budget)
        p.add_argument("--delta", type=float, required=need_budget)
        p.add_argument("--alpha", type=float, required=need_accuracy)
        p.add_argument("--beta", type=float, required=need_accuracy)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--format", dest="fmt", choices=("csv", "dpbin"), default="csv")
        p.add_argument("--oracle", action="store_true")
        p.add_argument("--report", default=None)
        p.add_argument("--halve-budget", dest="halve_budget",
                       action=argparse.BooleanOptionalAction, default=True)
        p.add_argument("--constant-c", dest="constant_c", type=float,
                       default=guard.LRA_LIFT_CONSTANT)

    p_lra = sub.add_parser("lra")
    p_lra.add_argument("--input", required=True)
    p_lra.add_argument("--rank", type=int, required=True)
    p_lra.add_argument("--oversample", type=int, default=None)
    add_common(p_lra, need_budget=True, need_accuracy=False)

    p_mul = sub.add_parser("multiply")
    p_mul.add_argument("--input", required=True)
    p_mul.add_argument("--input-b", dest="input_b", required=True)
    add_common(p_mul, need_budget=True, need_accuracy=True)

    p_reg = sub.add_parser("regress")
    p_reg.add_argument("--input", required=True)
    p_reg.add_argument("--input-b", dest="input_b", required=True)
    add_common(p_reg, need_budget=True, need_accuracy=True)

    p_ver = sub.add_parser("verify")
    add_common(p_ver, need_budget=False, need_accuracy=False)

    p_ben = sub.add_parser("bench")
    add_common(p_ben, need_budget=False, need_accuracy=False)

    ns = parser.parse_args(argv)
    cfg = RunConfig(**{k: v for k, v in vars(ns).items()})
    # Re-validate every parameter domain up front so bad values die with a
    # usage error instead of failing deep inside a mechanism.
    if (cfg.eps is None) != (cfg.delta is None):
        raise ParameterDomainError("--eps and --delta must be given together")
    if (cfg.alpha is None) != (cfg.beta is None):
        raise ParameterDomainError("--alpha and --beta must be given together")
    if cfg.eps is not None:
        cfg.budget()
    if cfg.alpha is not None:
        cfg.accuracy()
    if cfg.rank is not None and cfg.rank < 1:
        raise ParameterDomainError(f"rank must be >= 1, got {cfg.rank}")
    return cfg


def _emit(cfg: RunConfig, report: dict) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if cfg.report:
        with open(cfg.report, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _base_report(cfg: RunConfig) -> dict:
    params = asdict(cfg)
    return {
        "params": params,
        "guard_report": None,
        "error_vs_oracle": None,
        "space_entries": 0,
        "wall_time_ms": 0.0,
    }


def _run_lra(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    n, d = matrix_shape(cfg.input, cfg.fmt)
    lcfg = LraConfig(
        n=n, d=d, k=cfg.rank, p=cfg.oversample,
        budget=cfg.budget(), seed=cfg.seed,
        halve_budget=cfg.halve_budget, lift_constant=cfg.constant_c,
    )
    state = new_lra(lcfg)
    for i, row in iter_matrix_rows(cfg.input, cfg.fmt):
        state.ingest_row(i, row)
    factor = state.finalize()
    report = _base_report(cfg)
    report["space_entries"] = state.space_entries()
    eff = lcfg.effective_budget
    required = guard.sigma_min_psg2(eff, lcfg.k + lcfg.oversample)
    if cfg.oracle:
        a = load_matrix(cfg.input, cfg.fmt)
        lifted = np.hstack([state.w * np.eye(n), a])
        greport = guard.verify_spectral_guard(lifted, required)
        approx = reconstruct(factor, lcfg)
        err = float(np.linalg.norm(a - approx))
        tail_sq = float(np.sum(numerics.svd(a).sigma[lcfg.k:] ** 2))
        report["error_vs_oracle"] = {
            "frobenius_error": err,
            "eckart_young_optimum": math.sqrt(tail_sq),
            "error_bound": harness.lra_frobenius_rhs(lcfg, tail_sq),
        }
        report["guard_report"] = dict(greport.to_json_dict(), mode="exact")
    else:
        # Structural bound: the lifted stream satisfies sigma_min >= w.
        report["guard_report"] = {
            "required_sigma_min": required,
            "observed_sigma_min": state.w,
            "passed": state.w >= required,
            "mode": "structural",
        }
    if cfg.report:
        stem = cfg.report.rsplit(".", 1)[0]
        uhat_path, lam_path = stem + ".uhat.dpmt", stem + ".lam.dpmt"
        save_matrix(uhat_path, factor.u_hat)
        save_matrix(lam_path, factor.lam.reshape(1, -1))
        report["factor_files"] = [uhat_path, lam_path]
    report["wall_time_ms"] = (time.perf_counter() - t0) * 1e3
    return report


def _run_multiply(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    n, d1 = matrix_shape(cfg.input, cfg.fmt)
    nb, d2 = matrix_shape(cfg.input_b, cfg.fmt)
    if n != nb:
        raise DPSketchError(f"row counts differ: A has {n}, B has {nb}")
    state = new_matprod(n, d1, d2, cfg.budget(), cfg.accuracy(), cfg.seed)
    for i, row in iter_matrix_rows(cfg.input, cfg.fmt):
        state.ingest_a_row(i, row)
    for i, row in iter_matrix_rows(cfg.input_b, cfg.fmt):
        state.ingest_b_row(i, row)
    estimate = state.product_query()
    report = _base_report(cfg)
    report["space_entries"] = state.space_entries()
    required = guard.sigma_min_psg1(cfg.budget(), state.r)
    if cfg.oracle:
        a = load_matrix(cfg.input, cfg.fmt)
        b = load_matrix(cfg.input_b, cfg.fmt)
        greport = guard.verify_spectral_guard(
            lifted_matrix(a, state.s, state.d), required
        )
        err = float(np.linalg.norm(harness.exact_product(a, b) - estimate))
        report["error_vs_oracle"] = {
            "frobenius_error": err,
            "error_bound": cfg.alpha * float(np.linalg.norm(a)) * float(np.linalg.norm(b))
            + state.s**2 * math.sqrt(n) * cfg.alpha,
        }
        report["guard_report"] = dict(greport.to_json_dict(), mode="exact")
    else:
        report["guard_report"] = {
            "required_sigma_min": required,
            "observed_sigma_min": state.s,
            "passed": state.s >= required,
            "mode": "structural",
        }
    report["wall_time_ms"] = (time.perf_counter() - t0) * 1e3
    return report


def _run_regress(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    n, d = matrix_shape(cfg.input, cfg.fmt)
    nb, n_queries = matrix_shape(cfg.input_b, cfg.fmt)
    if n != nb:
        raise DPSketchError(f"row counts differ: A has {n}, queries have {nb}")
    state = new_regress(n, d, cfg.budget(), cfg.accuracy(), cfg.seed)
    for i, row in iter_matrix_rows(cfg.input, cfg.fmt):
        state.ingest_row(i, row)
    queries = load_matrix(cfg.input_b, cfg.fmt)
    solutions = np.column_stack([state.query(queries[:, j]) for j in range(n_queries)])
    report = _base_report(cfg)
    report["space_entries"] = state.space_entries()
    required = guard.sigma_min_psg1(cfg.budget(), state.r)
    if cfg.oracle:
        a = load_matrix(cfg.input, cfg.fmt)
        greport = guard.verify_spectral_guard(
            lifted_matrix(a, state.s, state.d), required
        )
        residuals = [
            float(np.linalg.norm(a @ solutions[:, j] - queries[:, j]))
            for j in range(n_queries)
        ]
        optima = [
            float(np.linalg.norm(a @ harness.exact_lsq(a, queries[:, j]) - queries[:, j]))
            for j in range(n_queries)
        ]
        report["error_vs_oracle"] = {
            "residuals": residuals,
            "optima": optima,
            "error_bound": [
                (1.0 + cfg.alpha) * opt + state.s**2 * math.sqrt(n) * cfg.alpha
                for opt in optima
            ],
        }
        report["guard_report"] = dict(greport.to_json_dict(), mode="exact")
    else:
        report["guard_report"] = {
            "required_sigma_min": required,
            "observed_sigma_min": state.s,
            "passed": state.s >= required,
            "mode": "structural",
        }
    report["wall_time_ms"] = (time.perf_counter() - t0) * 1e3
    return report


def _run_verify(cfg: RunConfig) -> Tuple[dict, bool]:
    t0 = time.perf_counter()
    budget = guard.PrivacyBudget(cfg.eps, cfg.delta) if cfg.eps else guard.PrivacyBudget(1.0, 0.01)
    acc = guard.AccuracySpec(cfg.alpha, cfg.beta) if cfg.alpha else guard.AccuracySpec(0.5, 0.2)
    checks = [
        harness.mc_pseudoinverse_frobenius(10, 11, trials=2000, seed=cfg.seed),
        harness.mc_pseudoinverse_spectral(5, 6, trials=2000, seed=cfg.seed),
        harness.mc_jl(16, 800, 0.2, trials=200, seed=cfg.seed),
        harness.dp_density_ratio_check(6, 4, budget, samples=20000, seed=cfg.seed),
        harness.bound_check_lra(
            LraConfig(n=60, d=60, k=3, budget=budget, seed=cfg.seed), trials=10
        ),
        harness.bound_check_matprod(60, 8, 8, budget, acc, trials=10),
        harness.bound_check_regress(60, 5, budget, acc, trials=10),
    ]
    report = _base_report(cfg)
    report["checks"] = [c.to_json_dict() for c in checks]
    report["wall_time_ms"] = (time.perf_counter() - t0) * 1e3
    return report, all(c.passed for c in checks)


def _run_bench(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    timings = {}
    sk = GaussianSketcher(cfg.seed, r=64, m=256)
    v = np.linspace(-1.0, 1.0, 256)
    t = time.perf_counter()
    for _ in range(2000):
        sk.psg1(v)
    timings["psg1_2000_calls_ms"] = (time.perf_counter() - t) * 1e3
    rng = np.random.default_rng(cfg.seed)
    a = rng.standard_normal((100, 100))
    budget = guard.PrivacyBudget(1.0, 0.01)
    t = time.perf_counter()
    lcfg = LraConfig(n=100, d=100, k=4, budget=budget, seed=cfg.seed)
    st = new_lra(lcfg)
    for i in range(100):
        st.ingest_row(i, a[i])
    reconstruct(st.finalize(), lcfg)
    timings["lra_100x100_ms"] = (time.perf_counter() - t) * 1e3
    report = _base_report(cfg)
    report["timings"] = timings
    report["wall_time_ms"] = (time.perf_counter() - t0) * 1e3
    return report


def run(cfg: RunConfig) -> int:
    try:
        if cfg.command == "lra":
            report = _run_lra(cfg)
        elif cfg.command == "multiply":
            report = _run_multiply(cfg)
        elif cfg.command == "regress":
            report = _run_regress(cfg)
        elif cfg.command == "verify":
            report, ok = _run_verify(cfg)
            _emit(cfg, report)
            return 0 if ok else 3
        elif cfg.command == "bench":
            report = _run_bench(cfg)
        else:
            print(f"unknown command {cfg.command!r}", file=sys.stderr)
            return 2
    except DPSketchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _emit(cfg, report)
    return 0


def main(argv=None) -> int:
    try:
        cfg = parse_args(sys.argv[1:] if argv is None else argv)
    except ParameterDomainError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
