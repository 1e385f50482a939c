"""Bayesian-regularized Levenberg-Marquardt training.

The objective is ``F(w) = mu * E_w + nu * E_D`` with ``E_D`` the sum of
squared errors and ``E_w`` the sum of squared parameters.  Each epoch takes
one accepted damped Gauss-Newton step on ``F`` and then re-estimates
``mu``, ``nu`` and the effective parameter count ``gamma`` with the
evidence-framework fixed-point formulas::

    H     = nu J^T J + mu I
    gamma = K - mu * tr(H^-1)
    mu    = gamma / (2 E_w)
    nu    = (Q - gamma) / (2 E_D)
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from brbpnn.linalg import SingularMatrixError, as_matrix, as_vector, inverse_spd, logdet_spd, solve_spd
from brbpnn.network import (
    NetworkParams,
    NetworkSpec,
    _residuals_and_jacobian,
    flatten,
    init_params,
    unflatten,
)

STOP_REASONS = ("max_epochs", "gradient", "gamma_stall", "lambda_max", "mse_goal")


class HyperparameterError(ArithmeticError):
    """gamma reached Q, so the noise precision would be non-positive."""


class TrainingDiverged(ArithmeticError):
    """The objective became non-finite; ``state`` is the last finite state."""

    def __init__(self, message: str, state: "TrainState | None" = None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 2000
    lambda_init: float = 0.005
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    lambda_max: float = 1e10
    min_gradient: float = 1e-7
    mse_goal: float = 0.0
    gamma_stall_epochs: int = 10
    gamma_stall_tol: float = 1e-4
    max_inflations: int = 40
    init_scale: float = 0.5
    seed: int = 0
    # False freezes mu=0, nu=1: plain Levenberg-Marquardt on E_D
    bayesian: bool = True

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.lambda_up > 1:
            raise ValueError("lambda_up must be > 1")
        if not 0 < self.lambda_down < 1:
            raise ValueError("lambda_down must be in (0, 1)")
        if not self.lambda_init > 0:
            raise ValueError("lambda_init must be > 0")
        if self.gamma_stall_epochs < 1 or self.max_inflations < 1:
            raise ValueError("gamma_stall_epochs and max_inflations must be >= 1")


@dataclass(frozen=True)
class TrainState:
    epoch: int
    sse: float
    ssw: float
    mu: float
    nu: float
    gamma: float
    lam: float
    grad_norm: float
    n_samples: int
    Q: int
    K: int

    @property
    def mse(self) -> float:
        return self.sse / self.n_samples

    @property
    def objective(self) -> float:
        return objective(self.mu, self.nu, self.ssw, self.sse)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mse"] = self.mse
        return d


@dataclass
class TrainReport:
    config: TrainConfig
    final: TrainState
    stop_reason: str
    history: list[dict] = field(default_factory=list)
    log_evidence: float | None = None

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "final": self.final.to_dict(),
            "stop_reason": self.stop_reason,
            "log_evidence": self.log_evidence,
            "history": self.history,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def objective(mu: float, nu: float, ssw: float, sse: float) -> float:
    return mu * ssw + nu * sse


def sse(errors) -> float:
    e = np.asarray(errors, dtype=np.float64).ravel()
    return float(e @ e)


def ssw(w) -> float:
    w = np.asarray(w, dtype=np.float64).ravel()
    return float(w @ w)


def effective_parameters(hessian, mu: float, K: int) -> float:
    """``K - mu * tr(H^-1)`` clamped to ``[0, K]``."""
    if mu == 0.0:
        return float(K)
    g = K - mu * float(np.trace(inverse_spd(hessian)))
    return min(max(g, 0.0), float(K))


def update_hyperparameters(ew: float, ed: float, hessian, mu_prev: float, K: int, Q: int):
    """One evidence-framework update; returns ``(mu, nu, gamma)``."""
    if not (ew > 0 and ed > 0):
        raise HyperparameterError(f"need E_w > 0 and E_D > 0 (got {ew}, {ed})")
    gamma = effective_parameters(hessian, mu_prev, K)
    if Q <= gamma:
        raise HyperparameterError(f"gamma={gamma:.6g} >= Q={Q}: noise precision would be non-positive")
    return gamma / (2.0 * ew), (Q - gamma) / (2.0 * ed), gamma


def gauss_newton_spectrum(J) -> np.ndarray:
    """Eigenvalues of ``J^T J`` as squared singular values of ``J``.

    Small eigenvalues come out accurate to ``(sigma_max * eps)**2`` rather
    than ``sigma_max**2 * eps``, which matters once ``nu`` is huge.
    """
    s = np.linalg.svd(as_matrix(J), compute_uv=False)
    return s * s


def effective_parameters_spectral(spectrum, mu: float, nu: float, K: int) -> float:
    """``K - mu tr((nu J^T J + mu I)^-1)`` written as ``sum nu s / (nu s + mu)``.

    Needs no inverse, so it stays finite when the Hessian is too
    ill-conditioned to factor.
    """
    if mu == 0.0:
        return float(K)
    d = nu * np.asarray(spectrum, dtype=np.float64)
    return min(float(np.sum(d / (d + mu))), float(K))


def _hyperparameters(ew, ed, gamma, Q):
    return gamma / (2.0 * ew), (Q - gamma) / (2.0 * ed)


def initial_hyperparameters(ew: float, ed: float, spectrum, K: int, Q: int, tol: float = 1e-10, max_iter: int = 200):
    """Self-consistent ``(mu, nu, gamma)`` for the first update.

    With ``mu = 0`` the trace formula returns ``gamma = K`` whatever the
    data, so a single update would set the regularization from a
    placeholder.  Here the re-estimation is iterated at fixed weights until
    gamma settles.  Every iterate has ``gamma < rank(J^T J) <= Q``, so this
    is also well defined when ``K >= Q``.  ``spectrum`` is the output of
    :func:`gauss_newton_spectrum`.
    """
    if not (ew > 0 and ed > 0):
        raise HyperparameterError(f"need E_w > 0 and E_D > 0 (got {ew}, {ed})")
    gamma = min(float(K), 0.5 * Q)  # the fixed point does not depend on this start
    for _ in range(max_iter):
        mu, nu = _hyperparameters(ew, ed, gamma, Q)
        new = effective_parameters_spectral(spectrum, mu, nu, K)
        done = abs(new - gamma) < tol
        gamma = new
        if done:
            break
    if gamma <= 0.0:
        raise HyperparameterError("effective parameter count collapsed to zero")
    return (*_hyperparameters(ew, ed, gamma, Q), gamma)


def _step(w, jtj, jte, lam, mu, nu):
    a = nu * jtj
    a[np.diag_indices_from(a)] += mu + lam
    return w - solve_spd(a, nu * jte + mu * w)


def lm_step(params, J, e, lam: float, mu: float = 0.0, nu: float = 1.0):
    """Regularized damped Gauss-Newton step on ``mu E_w + nu E_D``.

    With ``mu = 0, nu = 1`` this is ``w - (J^T J + lam I)^-1 J^T e``.
    ``params`` may be NetworkParams (returned as such) or a flat vector.
    """
    J, e = as_matrix(J), as_vector(e)
    w = flatten(params) if isinstance(params, NetworkParams) else as_vector(params)
    if J.shape != (e.shape[0], w.shape[0]):
        raise ValueError(f"Jacobian shape {J.shape} does not match e ({e.shape[0]}) and K ({w.shape[0]})")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    w_new = _step(w, J.T @ J, J.T @ e, lam, mu, nu)
    return unflatten(params.spec, w_new) if isinstance(params, NetworkParams) else w_new


def log_evidence(state: TrainState, hessian) -> float | None:
    """Laplace log-normalizer ``K/2 log 2pi - 1/2 log det H - F``; None if H is not SPD."""
    try:
        ld = logdet_spd(hessian)
    except SingularMatrixError:
        return None
    return 0.5 * state.K * math.log(2.0 * math.pi) - 0.5 * ld - state.objective


def _log_evidence_spectral(state: TrainState, spectrum) -> float | None:
    """:func:`log_evidence` with ``log det H`` summed over the J^T J spectrum."""
    d = state.nu * np.asarray(spectrum) + state.mu
    if state.mu <= 0.0 and (len(d) < state.K or np.any(d <= 0)):
        return None
    ld = float(np.sum(np.log(d))) + (state.K - len(d)) * math.log(state.mu) if state.mu > 0 else float(np.sum(np.log(d)))
    return 0.5 * state.K * math.log(2.0 * math.pi) - 0.5 * ld - state.objective


def train(
    spec: NetworkSpec,
    inputs,
    targets,
    config: TrainConfig = TrainConfig(),
    init: NetworkParams | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[NetworkParams, TrainReport]:
    """Train ``spec`` on (inputs, targets) and return final params and report.

    ``init`` overrides the random initialization; otherwise weights are drawn
    from ``rng`` (default: ``np.random.default_rng(config.seed)``).
    """
    u = np.asarray(inputs, dtype=np.float64).reshape(-1, spec.input_dim)
    t = np.asarray(targets, dtype=np.float64).reshape(u.shape[0], spec.output_dim)
    if u.shape[0] < 1:
        raise ValueError("training data is empty")
    if init is None:
        init = init_params(spec, rng or np.random.default_rng(config.seed), config.init_scale)
    elif init.spec != spec:
        raise ValueError("init params do not match spec")

    n_t, K = u.shape[0], spec.param_count
    Q = n_t * spec.output_dim
    w = flatten(init).copy()
    _, e, J = _residuals_and_jacobian(spec, w, u, t)
    ed, ew = float(e @ e), float(w @ w)
    jte = J.T @ e
    mu, nu, gamma, lam = 0.0, 1.0, float(K), config.lambda_init

    def snapshot(epoch):
        return TrainState(epoch, ed, ew, mu, nu, gamma, lam, float(np.max(np.abs(jte))), n_t, Q, K)

    state = snapshot(0)
    if not math.isfinite(state.objective):
        raise TrainingDiverged("initial objective is not finite", None)
    history = [_record(state)]
    stop = None
    stall = 0

    for epoch in range(1, config.max_epochs + 1):
        if ed / n_t <= config.mse_goal:
            stop = "mse_goal"
            break
        if state.grad_norm < config.min_gradient:
            stop = "gradient"
            break

        jtj = J.T @ J
        f_cur = objective(mu, nu, ew, ed)
        accepted = None
        for _ in range(config.max_inflations):
            try:
                w_new = _step(w, jtj, jte, lam, mu, nu)
            except SingularMatrixError:
                w_new = None
            if w_new is not None and np.all(np.isfinite(w_new)):
                _, e_new, J_new = _residuals_and_jacobian(spec, w_new, u, t)
                ed_new, ew_new = float(e_new @ e_new), float(w_new @ w_new)
                if objective(mu, nu, ew_new, ed_new) < f_cur:
                    accepted = (w_new, e_new, J_new, ed_new, ew_new)
                    lam *= config.lambda_down
                    break
            lam *= config.lambda_up
            if lam > config.lambda_max:
                break
        if accepted is None:
            stop = "lambda_max"
            state = replace(state, lam=lam)
            break

        w, e, J, ed, ew = accepted
        jte = J.T @ e
        if config.bayesian:
            if ed == 0.0:
                # exact fit: nu is unbounded, nothing left to estimate
                state = snapshot(epoch)
                history.append(_record(state))
                stop = "mse_goal"
                break
            spectrum = gauss_newton_spectrum(J)
            gamma_prev = gamma
            if mu == 0.0:
                mu, nu, gamma = initial_hyperparameters(ew, ed, spectrum, K, Q)
            else:
                if not (ew > 0 and ed > 0):
                    raise HyperparameterError(f"epoch {epoch}: need E_w > 0 and E_D > 0 (got {ew}, {ed})")
                gamma = effective_parameters_spectral(spectrum, mu, nu, K)
                if Q <= gamma:
                    raise HyperparameterError(f"epoch {epoch}: gamma={gamma:.6g} >= Q={Q}")
                mu, nu = _hyperparameters(ew, ed, gamma, Q)
            if not (math.isfinite(mu) and math.isfinite(nu)):
                raise TrainingDiverged(f"epoch {epoch}: non-finite regularization parameters", state)
            stall = stall + 1 if abs(gamma - gamma_prev) < config.gamma_stall_tol else 0

        state = snapshot(epoch)
        if not math.isfinite(state.objective):
            raise TrainingDiverged(f"epoch {epoch}: objective is not finite", history and _state_from(history[-1], n_t, Q, K))
        history.append(_record(state))
        if config.bayesian and stall >= config.gamma_stall_epochs:
            stop = "gamma_stall"
            break
    else:
        stop = "max_epochs"

    params = unflatten(spec, w)
    report = TrainReport(config, state, stop, history, _log_evidence_spectral(state, gauss_newton_spectrum(J)))
    return params, report


def _record(s: TrainState) -> dict:
    return {
        "epoch": s.epoch,
        "mse": s.mse,
        "sse": s.sse,
        "ssw": s.ssw,
        "gamma": s.gamma,
        "mu": s.mu,
        "nu": s.nu,
        "lam": s.lam,
        "grad_norm": s.grad_norm,
    }


def _state_from(rec: dict, n_t: int, Q: int, K: int) -> TrainState:
    return TrainState(
        rec["epoch"], rec["sse"], rec["ssw"], rec["mu"], rec["nu"], rec["gamma"], rec["lam"], rec["grad_norm"], n_t, Q, K
    )
