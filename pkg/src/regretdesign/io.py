"""Problem documents and CSV output.

Problem files are JSON documents with a versioned schema tag::

    {
      "schema": "regretdesign/problem-v1",
      "omega": [1.5, 1.98, -2.02],
      "theta_obs": [5.42e-5, 1.93e-3, -1.85e-3],          # optional
      "sigma_obs": [[...], [...], [...]],                  # nested or flat row-major
      "arms": [{"name": "UCT", "v2": 4.31e-6, "cost": 1.0}, ...],
      "budget": 1000,
      "feasibility": {"mode": "at_most_k", "k": 2},        # or "all", or
                                                           # {"mode": "explicit", "list": [[1,0,0], ...]}
      "norm": {"kind": "linf"},                            # l1, l2, or weighted with "weights"
      "gamma_policy": "free"                               # or "experiment_only"
    }

Moment-model files (``regretdesign/moment-model-v1``) carry ``lambda``,
``omega_mat`` or an ``envelope`` (``omega_lower``, ``omega_upper``, ``eta``),
``experimental_idx``, ``norm``, ``candidates`` (each with ``label``, ``W`` and
``sigma``) and optionally ``theta_hat``.

Unknown keys are errors. CSV files use ``.`` decimals and 17 significant
digits, and are written atomically.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ProblemValidationError
from .model import DesignProblem, ExperimentArm, FeasibilitySet, GammaPolicy, NormSpec, validate_problem
from .regret_core import Binding, RegretBreakdown
from .solver import DesignSolution

PROBLEM_SCHEMA = "regretdesign/problem-v1"
MOMENT_SCHEMA = "regretdesign/moment-model-v1"

_PROBLEM_KEYS = {"schema", "omega", "theta_obs", "sigma_obs", "arms", "budget", "feasibility", "norm", "gamma_policy", "description"}
_ARM_KEYS = {"name", "v2", "cost"}
_FEAS_KEYS = {"mode", "k", "list"}
_NORM_KEYS = {"kind", "weights"}
_MOMENT_KEYS = {"schema", "lambda", "omega_mat", "envelope", "experimental_idx", "norm", "candidates", "theta_hat", "description"}
_ENVELOPE_KEYS = {"omega_lower", "omega_upper", "eta"}
_CANDIDATE_KEYS = {"label", "W", "sigma"}


def _reject_unknown(obj: Mapping, allowed: set, where: str) -> None:
    if not isinstance(obj, Mapping):
        raise ProblemValidationError(f"{where} must be an object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ProblemValidationError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _require(obj: Mapping, key: str, where: str):
    if key not in obj:
        raise ProblemValidationError(f"missing required key {where}.{key}")
    return obj[key]


def _square(values, p: int, where: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        if arr.size != p * p:
            raise ProblemValidationError(f"{where} has {arr.size} entries, expected {p * p} (row-major)")
        arr = arr.reshape(p, p)
    if arr.shape != (p, p):
        raise ProblemValidationError(f"{where} must be {p}x{p}, got {arr.shape}")
    return arr


def norm_from_dict(doc: Mapping, where: str = "norm") -> NormSpec:
    _reject_unknown(doc, _NORM_KEYS, where)
    kind = str(_require(doc, "kind", where)).lower()
    weights = doc.get("weights")
    return NormSpec(kind, tuple(float(w) for w in weights) if weights is not None else None)


def norm_to_dict(norm: NormSpec) -> dict:
    out: dict[str, Any] = {"kind": norm.kind}
    if norm.weights is not None:
        out["weights"] = list(norm.weights)
    return out


def problem_from_dict(doc: Mapping) -> DesignProblem:
    """Parse and validate a problem document."""
    _reject_unknown(doc, _PROBLEM_KEYS, "problem")
    if doc.get("schema") != PROBLEM_SCHEMA:
        raise ProblemValidationError(f"schema must be {PROBLEM_SCHEMA!r}, got {doc.get('schema')!r}")
    try:
        omega = np.asarray(_require(doc, "omega", "problem"), dtype=float).ravel()
        p = omega.size
        sigma = _square(_require(doc, "sigma_obs", "problem"), p, "sigma_obs")
        arms = []
        for i, a in enumerate(_require(doc, "arms", "problem")):
            _reject_unknown(a, _ARM_KEYS, f"arms[{i}]")
            arms.append(ExperimentArm(str(a.get("name", f"arm{i + 1}")), float(_require(a, "v2", f"arms[{i}]")), float(a.get("cost", 1.0))))
        feas_doc = doc.get("feasibility", {"mode": "all"})
        _reject_unknown(feas_doc, _FEAS_KEYS, "feasibility")
        mode = str(_require(feas_doc, "mode", "feasibility")).lower()
        if mode == "at_most_k":
            feas = FeasibilitySet.at_most_k(int(_require(feas_doc, "k", "feasibility")))
        elif mode == "explicit":
            feas = FeasibilitySet.explicit(_require(feas_doc, "list", "feasibility"))
        elif mode == "all":
            feas = FeasibilitySet.all()
        else:
            raise ProblemValidationError(f"feasibility.mode must be all, at_most_k or explicit, got {mode!r}")
        norm = norm_from_dict(doc.get("norm", {"kind": "linf"}))
        policy = GammaPolicy(doc.get("gamma_policy", "free"))
        theta = doc.get("theta_obs")
        return validate_problem(
            DesignProblem(
                omega=omega,
                sigma_obs=sigma,
                arms=tuple(arms),
                budget=float(_require(doc, "budget", "problem")),
                feasibility=feas,
                norm=norm,
                gamma_policy=policy,
                theta_obs=None if theta is None else np.asarray(theta, dtype=float),
            )
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ProblemValidationError):
            raise
        raise ProblemValidationError(f"malformed problem document: {exc}") from exc


def problem_to_dict(problem: DesignProblem) -> dict:
    feas = problem.feasibility
    feas_doc: dict[str, Any] = {"mode": feas.mode}
    if feas.mode == "at_most_k":
        feas_doc["k"] = feas.k
    elif feas.mode == "explicit":
        feas_doc["list"] = [list(d) for d in feas.designs]
    return {
        "schema": PROBLEM_SCHEMA,
        "omega": problem.omega.tolist(),
        "theta_obs": problem.theta_obs.tolist(),
        "sigma_obs": problem.sigma_obs.tolist(),
        "arms": [{"name": a.name, "v2": a.v2, "cost": a.cost} for a in problem.arms],
        "budget": problem.budget,
        "feasibility": feas_doc,
        "norm": norm_to_dict(problem.norm),
        "gamma_policy": problem.gamma_policy.value,
    }


def read_json(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ProblemValidationError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ProblemValidationError(f"{path} is not valid JSON: {exc}") from exc


def load_problem(path: str | Path) -> DesignProblem:
    return problem_from_dict(read_json(path))


def save_problem(problem: DesignProblem, path: str | Path) -> None:
    atomic_write_text(path, json.dumps(problem_to_dict(problem), indent=2) + "\n")


def moment_model_from_dict(doc: Mapping):
    """Parse a moment-model document.

    Returns
    -------
    model : MomentModel
    envelope : Envelope or None
    theta_hat : ndarray or None
    """
    from .ci_regret import Envelope
    from .gmm import Candidate, make_moment_model

    _reject_unknown(doc, _MOMENT_KEYS, "moment model")
    if doc.get("schema") != MOMENT_SCHEMA:
        raise ProblemValidationError(f"schema must be {MOMENT_SCHEMA!r}, got {doc.get('schema')!r}")
    lam = np.atleast_2d(np.asarray(_require(doc, "lambda", "moment model"), dtype=float))
    pg, d = lam.shape
    envelope = None
    if "envelope" in doc:
        env = doc["envelope"]
        _reject_unknown(env, _ENVELOPE_KEYS, "envelope")
        envelope = Envelope(
            np.asarray(_require(env, "omega_lower", "envelope"), dtype=float),
            np.asarray(_require(env, "omega_upper", "envelope"), dtype=float),
            float(env.get("eta", 0.05)),
        )
    if "omega_mat" in doc:
        omega_mat = np.atleast_2d(np.asarray(doc["omega_mat"], dtype=float))
    elif envelope is not None:
        omega_mat = envelope.omega_upper[None, :]
    else:
        raise ProblemValidationError("moment model needs omega_mat or an envelope")
    cands = []
    for i, c in enumerate(_require(doc, "candidates", "moment model")):
        _reject_unknown(c, _CANDIDATE_KEYS, f"candidates[{i}]")
        cands.append(
            Candidate(
                _square(_require(c, "W", f"candidates[{i}]"), pg, f"candidates[{i}].W"),
                _square(_require(c, "sigma", f"candidates[{i}]"), pg, f"candidates[{i}].sigma"),
                str(c.get("label", f"c{i}")),
            )
        )
    norm = norm_from_dict(doc.get("norm", {"kind": "linf"}))
    model = make_moment_model(lam, omega_mat, doc.get("experimental_idx", []), cands, norm)
    theta_hat = doc.get("theta_hat")
    if theta_hat is not None:
        theta_hat = np.asarray(theta_hat, dtype=float)
        if theta_hat.shape != (d,):
            raise ProblemValidationError(f"theta_hat must have length {d}")
    return model, envelope, theta_hat


# ---------------------------------------------------------------------- CSV


def fmt(value) -> str:
    """Locale-free text for a CSV cell; floats with 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(value)


def rows_to_csv(rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([fmt(r[c]) for c in columns])
    return buf.getvalue()


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str | Path, rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> None:
    atomic_write_text(path, rows_to_csv(rows, columns))


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- solutions


def solution_columns(arm_names: Iterable[str]) -> list[str]:
    names = list(arm_names)
    cols = ["t_star", "alpha", "alpha_star", "beta", "beta_star", "binding", "bias_bound"]
    cols += [f"x_{n}" for n in names] + [f"gamma_{n}" for n in names] + [f"n_{n}" for n in names]
    return cols


def solution_to_row(solution: DesignSolution, arm_names: Sequence[str]) -> dict:
    bd = solution.breakdown
    row: dict[str, Any] = {
        "t_star": solution.t_star,
        "alpha": bd.alpha,
        "alpha_star": bd.alpha_star,
        "beta": bd.beta,
        "beta_star": bd.beta_star,
        "binding": bd.binding.value,
        "bias_bound": "" if solution.bias_bound is None else solution.bias_bound,
    }
    for j, n in enumerate(arm_names):
        row[f"x_{n}"] = int(solution.x_star[j])
        row[f"gamma_{n}"] = float(solution.gamma_star[j])
        row[f"n_{n}"] = float(solution.n_star[j])
    return row


def solution_from_row(row: Mapping[str, str], arm_names: Sequence[str]) -> DesignSolution:
    """Inverse of :func:`solution_to_row` for rows read back from CSV."""
    f = lambda k: float(row[k])  # noqa: E731
    bd = RegretBreakdown(f("alpha"), f("alpha_star"), f("beta"), f("beta_star"), f("t_star"), Binding(row["binding"]))
    bias_bound = None if row.get("bias_bound", "") == "" else f("bias_bound")
    return DesignSolution(
        x_star=tuple(int(row[f"x_{n}"]) for n in arm_names),
        gamma_star=np.array([f(f"gamma_{n}") for n in arm_names]),
        n_star=np.array([f(f"n_{n}") for n in arm_names]),
        t_star=f("t_star"),
        breakdown=bd,
        bias_bound=bias_bound,
    )


def solution_report(solution: DesignSolution, arm_names: Sequence[str]) -> str:
    """Human-readable summary of a design."""
    bd = solution.breakdown
    chosen = [arm_names[j] for j in solution.selected] or ["(none: observational data only)"]
    lines = [
        f"selected arms : {', '.join(chosen)}",
        f"regret t*     : {solution.t_star:.6g}",
        f"binding side  : {bd.binding.value}",
        f"variance      : alpha = {bd.alpha:.6g}  (alpha* = {bd.alpha_star:.6g}, ratio {_safe_ratio(bd.alpha, bd.alpha_star)})",
        f"bias          : beta  = {bd.beta:.6g}  (beta*  = {bd.beta_star:.6g}, ratio {_safe_ratio(bd.beta, bd.beta_star)})",
    ]
    if solution.bias_bound is not None:
        lines.append(f"bias bound    : {solution.bias_bound:.6g}")
    lines.append("")
    width = max(len(n) for n in arm_names)
    lines.append(f"{'arm'.ljust(width)}  selected  gamma      n")
    for j, name in enumerate(arm_names):
        lines.append(
            f"{name.ljust(width)}  {solution.x_star[j]:>8d}  {solution.gamma_star[j]:.4f}  {solution.n_star[j]:10.4f}"
        )
    return "\n".join(lines) + "\n"


def _safe_ratio(a: float, b: float) -> str:
    from .regret_core import ratio

    return f"{ratio(a, b):.6g}"
