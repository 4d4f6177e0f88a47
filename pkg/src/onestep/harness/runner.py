"""Single runs, alpha sweeps, equivalence checks and theory comparison."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from typing import Iterable, Optional

import numpy as np

from .. import __version__
from ..model import (BOUNDARY_WARN_WIDTH, ExperimentConfig, gaussian_equivalent_features, make_streams,
                     regime_boundaries, spiked_approximation, spiked_features, train)
from ..ridge import DEFAULT_TEST_SAMPLES, feature_predictor, ridge_fit, test_errors_mc
from ..rmt_theory import TheoryInputs, delta_ell_general, evaluate
from ..spectra import BoundaryError, alignment_from_vectors, bulk_edge, detect_spikes, predicted_ell
from .config import config_from_dict, config_to_dict

OUTPUTS = frozenset({"spectrum", "train_gap", "test_gap", "alignment", "ge_check"})


@dataclass(frozen=True)
class Metric:
    value: float
    std_err: float
    estimator: str
    n_samples: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _exact(value, n_samples: int, estimator: str = "direct") -> dict:
    return Metric(float(value), 0.0, estimator, int(n_samples)).to_dict()


def config_hash(config: ExperimentConfig) -> str:
    """Stable digest of every field except the seed."""
    values = config_to_dict(config)
    values.pop("seed")
    return hashlib.sha256(json.dumps(values, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    seed: int
    measured: dict = field(default_factory=dict)
    theory: Optional[dict] = None
    started: str = ""
    finished: str = ""
    code_version: str = __version__
    alpha_index: int = 0
    replicate: int = 0
    error: Optional[str] = None
    spectrum: Optional[list] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def alpha(self) -> float:
        return self.config["alpha"]

    def value(self, metric: str) -> float:
        return self.measured[metric]["value"]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@lru_cache(maxsize=128)
def _theory_snapshot(config_no_seed: ExperimentConfig) -> Optional[dict]:
    try:
        point = evaluate(TheoryInputs.from_config(config_no_seed), audit=True)
    except (ValueError, RuntimeError):
        return None
    snap = dict(point.row())
    snap["lambda_1_rescaled"] = point.lambda_gap_rescaled[1]
    snap["lambda_2_rescaled"] = point.lambda_gap_rescaled[2]
    return snap


def theory_snapshot(config: ExperimentConfig) -> Optional[dict]:
    """TheoryPoint row for ``config``, or None when the theory does not apply."""
    return _theory_snapshot(dataclasses.replace(config, seed=0))


def _predicted_ell_or_none(alpha: float) -> Optional[int]:
    try:
        return predicted_ell(alpha)
    except BoundaryError:
        return None


def _spectrum_metrics(F, F0, X_tilde, beta_hat, alpha) -> tuple[dict, np.ndarray]:
    U, s, _ = np.linalg.svd(F, full_matrices=False)
    svals = s / math.sqrt(F.shape[0])
    edge = bulk_edge(F0)
    count, _ = detect_spikes(svals, edge)
    n = F.shape[0]
    out = {
        "spike_count": _exact(count, 1, "singular values above (1 + margin) x bulk edge of F0"),
        "bulk_edge": _exact(edge, 1, "top scaled singular value of F0"),
        "top_singular_value": _exact(svals[0], 1, "top scaled singular value of F"),
    }
    ell = _predicted_ell_or_none(alpha)
    k = ell if ell is not None else count
    if k >= 1:
        proj = X_tilde @ beta_hat
        targets = np.column_stack([proj ** p for p in range(1, k + 1)])
        align = alignment_from_vectors(U[:, :k], targets)
        out["subspace_distance"] = _exact(align.distance, n, f"principal-angle distance, top-{k} space")
        for j, c in enumerate(align.cosines, start=1):
            out[f"spike_cosine_{j}"] = _exact(c, n, f"|cos| of singular vector {j} with power {j} of X beta_hat")
    return out, svals


def run_single(config: ExperimentConfig, n_test: int = DEFAULT_TEST_SAMPLES, outputs: Iterable[str] = OUTPUTS,
               with_theory: bool = True, keep_spectrum: bool = False) -> RunRecord:
    """Train once, fit ridge on F0 and F and record the requested diagnostics."""
    outputs = frozenset(outputs)
    unknown = outputs - OUTPUTS
    if unknown:
        raise ValueError(f"unknown outputs {sorted(unknown)}")
    started = _now()
    streams = make_streams(config.seed)
    data, model = train(config, streams)
    n = config.n
    fit0 = ridge_fit(model.F0, data.y_tilde, config.lam)
    fit = ridge_fit(model.F, data.y_tilde, config.lam)
    measured = {
        "train_loss_F0": _exact(fit0.train_loss, n, "ridge objective on X_tilde"),
        "train_loss_F": _exact(fit.train_loss, n, "ridge objective on X_tilde"),
        "train_gap": _exact(fit0.train_loss - fit.train_loss, n, "difference of ridge objectives"),
    }
    if "test_gap" in outputs:
        student = config.student_activation
        (e0, e), diff_se = test_errors_mc(
            [feature_predictor(model.W0, fit0.a_hat, student), feature_predictor(model.W, fit.a_hat, student)],
            config.teacher_activation, data.beta_star, config.sigma_eps, streams["aux"], n_test)
        mc = "Monte Carlo on fresh shared draws"
        measured["test_error_F0"] = Metric(e0.value, e0.std_err, mc, n_test).to_dict()
        measured["test_error_F"] = Metric(e.value, e.std_err, mc, n_test).to_dict()
        measured["test_gap"] = Metric(e0.value - e.value, float(diff_se[0, 1]), mc, n_test).to_dict()
    if "alignment" in outputs:
        b, bs = model.beta_hat, data.beta_star
        cos = abs(float(b @ bs)) / (np.linalg.norm(b) * np.linalg.norm(bs))
        measured["beta_alignment"] = _exact(cos, n, "|cos(beta_hat, beta_star)|")
    spectrum = None
    if "spectrum" in outputs:
        spec, svals = _spectrum_metrics(model.F, model.F0, data.X_tilde, model.beta_hat, config.alpha)
        measured.update(spec)
        if keep_spectrum:
            spectrum = [float(v) for v in svals]
    if "ge_check" in outputs:
        report = _ge_from_trained(config, data, model, streams, n_test, fit=fit)
        for key in ("gap_ge_linear", "gap_spiked_train", "gap_spiked_test"):
            if key in report:
                measured[key] = report[key]
    return RunRecord(config=config_to_dict(config), config_hash=config_hash(config), seed=int(config.seed),
                     measured=measured, theory=theory_snapshot(config) if with_theory else None,
                     started=started, finished=_now(), spectrum=spectrum)


# ------------------------------------------------------------------ equivalence


def ge_ell(config: ExperimentConfig) -> int:
    """Number of spike terms kept in the surrogate: zero without a step."""
    if config.eta == 0:
        return 0
    return predicted_ell(config.alpha)


def _ge_from_trained(config, data, model, streams, n_test, fit=None, with_test=True) -> dict:
    student = config.student_activation
    lam, n = config.lam, config.n
    ell = ge_ell(config)
    y = data.y_tilde
    F0_lin = gaussian_equivalent_features(data.X_tilde, model.W0, student.c1, student.c_gt1, streams["surrogate"])
    F_ell = spiked_approximation(model.F0, data.X_tilde, model.beta_hat, model.a, config.eta, ell, student)
    fit0 = ridge_fit(model.F0, y, lam)
    fit_lin = ridge_fit(F0_lin, y, lam)
    fit = ridge_fit(model.F, y, lam) if fit is None else fit
    fit_ell = ridge_fit(F_ell, y, lam)
    est = "difference of ridge objectives"
    out = {
        "ell": ell,
        "train_loss_F0": fit0.train_loss, "train_loss_F0_lin": fit_lin.train_loss,
        "train_loss_F": fit.train_loss, "train_loss_F_ell": fit_ell.train_loss,
        "gap_ge_linear": _exact(abs(fit0.train_loss - fit_lin.train_loss), n, est),
        "gap_spiked_train": _exact(abs(fit.train_loss - fit_ell.train_loss), n, est),
    }
    if with_test:
        W0, a, b, eta = model.W0, model.a, model.beta_hat, config.eta
        noise_rng = streams["surrogate"]

        def linear(x, a_hat=fit_lin.a_hat):
            z = noise_rng.standard_normal((x.shape[0], W0.shape[0]))
            return (student.c1 * x @ W0.T + student.c_gt1 * z) @ a_hat

        predictors = [
            feature_predictor(model.W, fit.a_hat, student),
            lambda x: spiked_features(x, W0, b, a, eta, ell, student) @ fit_ell.a_hat,
            feature_predictor(W0, fit0.a_hat, student),
            linear,
        ]
        errs, diff_se = test_errors_mc(predictors, config.teacher_activation, data.beta_star, config.sigma_eps,
                                       streams["aux"], n_test)
        mc = "Monte Carlo on fresh shared draws"
        out.update({
            "test_error_F": errs[0].value, "test_error_F_ell": errs[1].value,
            "test_error_F0": errs[2].value, "test_error_F0_lin": errs[3].value,
            "gap_spiked_test": Metric(abs(errs[0].value - errs[1].value), float(diff_se[0, 1]), mc, n_test).to_dict(),
            "gap_ge_linear_test": Metric(abs(errs[2].value - errs[3].value), float(diff_se[2, 3]), mc,
                                         n_test).to_dict(),
        })
    return out


def ge_check(config: ExperimentConfig, n_test: int = DEFAULT_TEST_SAMPLES, with_test: bool = True) -> dict:
    """Three matched-seed comparisons.

    (i) F0 against its Gaussian-equivalent linearization, (ii) training loss
    of F against the spiked surrogate F_ell, (iii) the same for test errors.
    Gaps are absolute; Monte Carlo gaps carry the standard error of the paired
    difference.
    """
    streams = make_streams(config.seed)
    data, model = train(config, streams)
    report = _ge_from_trained(config, data, model, streams, n_test, with_test=with_test)
    report["config"] = config_to_dict(config)
    report["seed"] = int(config.seed)
    return report


# ------------------------------------------------------------------ sweeps


def derive_seed(master: int, alpha_index: int, replicate: int) -> int:
    """Seed of replicate k at alpha index j: first 64-bit word of SeedSequence([master, j, k])."""
    state = np.random.SeedSequence([int(master), int(alpha_index), int(replicate)]).generate_state(1, np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    alpha_grid: tuple = ()
    replicates: int = 1
    outputs: frozenset = OUTPUTS
    n_test: int = DEFAULT_TEST_SAMPLES

    def __post_init__(self):
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))
        object.__setattr__(self, "outputs", frozenset(self.outputs))
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        bad = [a for a in self.alpha_grid if not 0 < a < 0.5]
        if bad:
            raise ValueError(f"alpha_grid values must lie in (0, 0.5): {bad}")
        if self.outputs - OUTPUTS:
            raise ValueError(f"unknown outputs {sorted(self.outputs - OUTPUTS)}")

    def cells(self, master_seed: int) -> list[tuple[int, int, ExperimentConfig]]:
        return [(j, k, dataclasses.replace(self.base, alpha=alpha, seed=derive_seed(master_seed, j, k)))
                for j, alpha in enumerate(self.alpha_grid) for k in range(self.replicates)]


def _run_cell(args) -> RunRecord:
    j, k, cfg_dict, outputs, n_test, keep_spectrum = args
    cfg = config_from_dict(cfg_dict)
    try:
        rec = run_single(cfg, n_test=n_test, outputs=outputs, keep_spectrum=keep_spectrum)
    except Exception as exc:  # one bad cell must not abort the sweep
        rec = RunRecord(config=cfg_dict, config_hash=config_hash(cfg), seed=int(cfg.seed), started=_now(),
                        finished=_now(), error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}")
    rec.alpha_index, rec.replicate = j, k
    return rec


def run_sweep(spec: SweepSpec, master_seed: int = 0, workers: int = 1, keep_spectrum: bool = False) -> list[RunRecord]:
    """Run every (alpha, replicate) cell; records come back ordered by (j, k)."""
    tasks = [(j, k, config_to_dict(cfg), spec.outputs, spec.n_test, keep_spectrum)
             for j, k, cfg in spec.cells(master_seed)]
    if not tasks:
        return []
    if workers <= 1:
        records = [_run_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell, tasks))
    return sorted(records, key=lambda r: (r.alpha_index, r.replicate))


def near_boundary(alpha: float) -> bool:
    return any(abs(alpha - b) < BOUNDARY_WARN_WIDTH for b in regime_boundaries())


def aggregate(records: list[RunRecord], metrics: Optional[Iterable[str]] = None) -> list[dict]:
    """Mean and standard error of each metric per alpha, with regime annotations.

    ``regime_change`` is set on the first alpha past a boundary (ell - 1)/(2 ell).
    """
    by_alpha: dict[float, list[RunRecord]] = {}
    for rec in records:
        by_alpha.setdefault(rec.alpha, []).append(rec)
    rows = []
    prev_ell = None
    for alpha in sorted(by_alpha):
        group = by_alpha[alpha]
        ok = [r for r in group if r.ok]
        names = sorted({m for r in ok for m in r.measured}) if metrics is None else list(metrics)
        ell = _predicted_ell_or_none(alpha)
        row = {"alpha": alpha, "ell": ell, "near_boundary": near_boundary(alpha),
               "regime_change": prev_ell is not None and ell != prev_ell,
               "n_ok": len(ok), "n_failed": len(group) - len(ok)}
        prev_ell = ell
        for name in names:
            vals = np.array([r.value(name) for r in ok if name in r.measured], dtype=float)
            if vals.size:
                row[f"{name}_mean"] = float(vals.mean())
                row[f"{name}_se"] = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan
            else:
                row[f"{name}_mean"] = row[f"{name}_se"] = math.nan
        rows.append(row)
    return rows


# ------------------------------------------------------------------ theory vs simulation


def compare(config: ExperimentConfig, replicates: int = 5, master_seed: int = 0, workers: int = 1,
            n_test: int = DEFAULT_TEST_SAMPLES) -> tuple[list[dict], list[RunRecord]]:
    """Replicate one config and line measured means up against the closed forms."""
    spec = SweepSpec(base=config, alpha_grid=(config.alpha,), replicates=replicates,
                     outputs={"train_gap", "test_gap", "alignment"}, n_test=n_test)
    records = run_sweep(spec, master_seed, workers)
    agg = aggregate(records)[0]
    theory = theory_snapshot(config) or {}
    ell = agg["ell"]
    delta = math.nan
    if ell is not None and theory:
        if ell <= 2:
            delta = theory[f"delta_{ell}"]
        else:
            try:
                delta = delta_ell_general(TheoryInputs.from_config(config), ell)
            except (ValueError, RuntimeError):
                pass

    def row(metric, predicted, label):
        mean, se = agg.get(f"{metric}_mean", math.nan), agg.get(f"{metric}_se", math.nan)
        rel = (mean - predicted) / predicted if predicted and math.isfinite(predicted) else math.nan
        return {"metric": metric, "prediction": label, "measured_mean": mean, "measured_se": se,
                "theory": predicted, "relative_error": rel, "replicates": agg["n_ok"]}

    rows = [row("train_gap", delta, f"delta_{ell}"),
            row("beta_alignment", theory.get("alignment", math.nan), "alignment")]
    if ell in (1, 2):
        rows.append(row("test_gap", theory.get(f"lambda_{ell}", math.nan), f"lambda_{ell}"))
        rows.append(row("test_gap", theory.get(f"lambda_{ell}_rescaled", math.nan), f"lambda_{ell}_rescaled"))
    return rows, records
