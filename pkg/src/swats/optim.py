"""Stochastic first-order update rules with a uniform stepping interface.

Covers plain/momentum SGD, Adagrad, RMSProp, Adam, Adam-Clip and SWATS,
the hybrid optimizer that starts in an Adam phase, estimates an SGD
learning rate by projecting the negative gradient onto the Adam step,
and switches to SGDM once the bias-corrected running estimate settles.

Each update rule exists twice: a pure function operating on explicit
state (the form used by oracle tests) and a stateful stepper class with
the shared ``step(w, g, lr_scale) -> (w, StepReport)`` interface that the
training harness consumes. The classes delegate to the functions, so the
two forms are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .numkit import NonFiniteError, _check_same_len

PHASE_ADAM = "adam"
PHASE_SGD = "sgd"
PHASE_NA = "n/a"


class ConfigError(ValueError):
    """A hyperparameter or config field is outside its valid range."""


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SgdConfig:
    """SGD with optional momentum; beta=0 is plain SGD."""

    alpha: float
    beta: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"beta must be in [0, 1), got {self.beta}")


@dataclass(frozen=True)
class AdamConfig:
    """Adam hyperparameters; epsilon doubles as the SWATS switch threshold."""

    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-9

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.beta1 < 1.0:
            raise ConfigError(f"beta1 must be in [0, 1), got {self.beta1}")
        if not 0.0 <= self.beta2 < 1.0:
            raise ConfigError(f"beta2 must be in [0, 1), got {self.beta2}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class AdamClipConfig:
    """Adam with the per-coordinate rate vector clipped to [p, q] * alpha_sgd."""

    adam: AdamConfig
    p: float
    q: float
    alpha_sgd: float

    def __post_init__(self):
        if self.p < 0:
            raise ConfigError(f"p must be nonnegative, got {self.p}")
        if not self.q > 0:
            raise ConfigError(f"q must be positive, got {self.q}")
        if not self.p < self.q:
            raise ConfigError(f"clip bounds require p < q, got p={self.p}, q={self.q}")
        if not self.alpha_sgd > 0:
            raise ConfigError(f"alpha_sgd must be positive, got {self.alpha_sgd}")


@dataclass
class SwatsState:
    """Accumulators of the phase machine; all buffers start at zero."""

    k: int = 0
    m: Optional[np.ndarray] = None
    a: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    lam: float = 0.0
    phase: str = PHASE_ADAM
    Lambda: Optional[float] = None  # locked at the switch, write-once


@dataclass
class StepReport:
    """Per-step diagnostics so callers never reach into optimizer state."""

    step_taken: np.ndarray
    gamma: Optional[float] = None
    lambda_corrected: Optional[float] = None
    switched: bool = False
    phase_after: str = PHASE_NA
    effective_lr: Optional[float] = None  # scalar rate actually applied


# ---------------------------------------------------------------------------
# update rules as pure functions
# ---------------------------------------------------------------------------


def sgd_step(
    w: np.ndarray,
    g: np.ndarray,
    cfg: SgdConfig,
    v: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One (momentum) SGD step: v' = beta*v + g, w' = w - alpha*v'."""
    return _sgd_core(w, g, cfg.alpha, cfg.beta, v)


def _sgd_core(w, g, alpha, beta, v):
    _check_same_len(w, g)
    _check_same_len(w, v)
    v_new = beta * v + g
    w_new = w - alpha * v_new
    return w_new, v_new


def adagrad_step(
    w: np.ndarray,
    g: np.ndarray,
    alpha: float,
    epsilon: float,
    v: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One Adagrad step; v accumulates squared gradients monotonically."""
    _check_same_len(w, g)
    _check_same_len(w, v)
    v_new = v + g * g
    w_new = w - alpha * g / (np.sqrt(v_new) + epsilon)
    return w_new, v_new


def rmsprop_step(
    w: np.ndarray,
    g: np.ndarray,
    alpha: float,
    beta: float,
    epsilon: float,
    v: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One RMSProp step; v is an exponential average of squared gradients."""
    _check_same_len(w, g)
    _check_same_len(w, v)
    v_new = beta * v + (1.0 - beta) * (g * g)
    w_new = w - alpha * g / (np.sqrt(v_new) + epsilon)
    return w_new, v_new


def _adam_rate(alpha, beta1, beta2, epsilon, k, a_new):
    # Per-coordinate step-size vector. Adam-Clip clips exactly this
    # quantity, so Adam itself is computed rate-first to keep
    # Adam-Clip(0, inf) bit-identical to Adam.
    bias = math.sqrt(1.0 - beta2**k) / (1.0 - beta1**k)
    return (alpha * bias) / (np.sqrt(a_new) + epsilon)


def adam_step(
    w: np.ndarray,
    g: np.ndarray,
    cfg: AdamConfig,
    k: int,
    m: np.ndarray,
    a: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One Adam step at (already incremented) step count k >= 1.

    Returns (w', m', a', p) where p is the signed update added to w.
    """
    return _adam_core(w, g, cfg.alpha, cfg.beta1, cfg.beta2, cfg.epsilon, k, m, a)


def _adam_core(w, g, alpha, beta1, beta2, epsilon, k, m, a):
    _check_same_len(w, g)
    if k < 1:
        raise ValueError(f"step count must be >= 1 at evaluation, got {k}")
    m_new = beta1 * m + (1.0 - beta1) * g
    a_new = beta2 * a + (1.0 - beta2) * (g * g)
    p = -_adam_rate(alpha, beta1, beta2, epsilon, k, a_new) * m_new
    return w + p, m_new, a_new, p


def adamclip_step(
    w: np.ndarray,
    g: np.ndarray,
    cfg: AdamClipConfig,
    k: int,
    m: np.ndarray,
    a: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One Adam-Clip(p, q) step: the rate vector is clipped to
    [p*alpha_sgd, q*alpha_sgd] before multiplying the first moment."""
    return _adamclip_core(w, g, cfg, cfg.adam.alpha, k, m, a)


def _adamclip_core(w, g, cfg, alpha, k, m, a):
    _check_same_len(w, g)
    if k < 1:
        raise ValueError(f"step count must be >= 1 at evaluation, got {k}")
    ac = cfg.adam
    m_new = ac.beta1 * m + (1.0 - ac.beta1) * g
    a_new = ac.beta2 * a + (1.0 - ac.beta2) * (g * g)
    rate = _adam_rate(alpha, ac.beta1, ac.beta2, ac.epsilon, k, a_new)
    rate = np.clip(rate, cfg.p * cfg.alpha_sgd, cfg.q * cfg.alpha_sgd)
    w_new = w - rate * m_new
    return w_new, m_new, a_new


def estimate_sgd_lr(p: np.ndarray, g: np.ndarray) -> Optional[float]:
    """Scaling gamma such that -gamma*g projects onto the step p as p itself.

    Closed form: gamma = (p.p) / (-p.g). Returns None when p.g is exactly
    zero (no estimate; the caller keeps its running average unchanged).
    The guard is exact because it only exists to avoid dividing by zero.
    """
    _check_same_len(p, g)
    pg = float(np.dot(p, g))
    if pg == 0.0:
        return None
    return float(np.dot(p, p)) / (-pg)


def swats_step(
    w: np.ndarray,
    g: np.ndarray,
    cfg: AdamConfig,
    state: SwatsState,
    lr_scale: float = 1.0,
) -> tuple[np.ndarray, SwatsState, StepReport]:
    """One step of the switching optimizer.

    Adam phase: take an Adam step, estimate gamma, fold it into the
    exponential average lam, and flip to the SGD phase once the
    bias-corrected average agrees with the current estimate to within
    epsilon (only after the first step, so the zero initialization
    cannot trigger the switch). The bias-corrected average at the flip
    is locked as Lambda.

    SGD phase: momentum SGD with learning rate (1-beta1)*Lambda and
    momentum beta1, the usual momentum correction of the step scale.

    lr_scale is the external schedule multiplier; it scales alpha in
    the Adam phase and Lambda in the SGD phase.
    """
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("gradient contains NaN or Inf")

    k = state.k + 1
    if state.phase == PHASE_SGD:
        alpha = (1.0 - cfg.beta1) * state.Lambda * lr_scale
        w_new, v_new = _sgd_core(w, g, alpha, cfg.beta1, state.v)
        new_state = replace(state, k=k, v=v_new)
        report = StepReport(
            step_taken=w_new - w, phase_after=PHASE_SGD, effective_lr=alpha
        )
        return w_new, new_state, report

    alpha = cfg.alpha * lr_scale
    w_new, m_new, a_new, p = _adam_core(
        w, g, alpha, cfg.beta1, cfg.beta2, cfg.epsilon, k, state.m, state.a
    )

    gamma = estimate_sgd_lr(p, g)
    lam = state.lam
    lam_hat = None
    phase = PHASE_ADAM
    v_new = state.v
    Lambda = state.Lambda
    switched = False
    if gamma is not None:
        lam = cfg.beta2 * lam + (1.0 - cfg.beta2) * gamma
        lam_hat = lam / (1.0 - cfg.beta2**k)
        if k > 1 and abs(lam_hat - gamma) < cfg.epsilon:
            phase = PHASE_SGD
            v_new = np.zeros_like(w)
            Lambda = lam_hat
            switched = True

    new_state = SwatsState(
        k=k, m=m_new, a=a_new, v=v_new, lam=lam, phase=phase, Lambda=Lambda
    )
    report = StepReport(
        step_taken=p,
        gamma=gamma,
        lambda_corrected=lam_hat,
        switched=switched,
        phase_after=phase,
        effective_lr=alpha,
    )
    return w_new, new_state, report


# ---------------------------------------------------------------------------
# stateful steppers with the uniform interface
# ---------------------------------------------------------------------------


class Sgd:
    """Stateful (momentum) SGD stepper."""

    kind = "sgd"

    def __init__(self, cfg: SgdConfig):
        self.cfg = cfg
        self._v: Optional[np.ndarray] = None

    def step(self, w, g, lr_scale: float = 1.0):
        if self._v is None:
            self._v = np.zeros_like(w)
        alpha = self.cfg.alpha * lr_scale
        w_new, self._v = _sgd_core(w, g, alpha, self.cfg.beta, self._v)
        return w_new, StepReport(step_taken=w_new - w, effective_lr=alpha)


class Adagrad:
    """Stateful Adagrad stepper."""

    kind = "adagrad"

    def __init__(self, alpha: float, epsilon: float = 1e-9):
        if not alpha > 0:
            raise ConfigError(f"alpha must be positive, got {alpha}")
        if not epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {epsilon}")
        self.alpha = alpha
        self.epsilon = epsilon
        self._v: Optional[np.ndarray] = None

    def step(self, w, g, lr_scale: float = 1.0):
        if self._v is None:
            self._v = np.zeros_like(w)
        alpha = self.alpha * lr_scale
        w_new, self._v = adagrad_step(w, g, alpha, self.epsilon, self._v)
        return w_new, StepReport(step_taken=w_new - w, effective_lr=alpha)


class RmsProp:
    """Stateful RMSProp stepper."""

    kind = "rmsprop"

    def __init__(self, alpha: float, beta: float = 0.9, epsilon: float = 1e-9):
        if not alpha > 0:
            raise ConfigError(f"alpha must be positive, got {alpha}")
        if not 0.0 <= beta < 1.0:
            raise ConfigError(f"beta must be in [0, 1), got {beta}")
        if not epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {epsilon}")
        self.alpha = alpha
        self.beta = beta
        self.epsilon = epsilon
        self._v: Optional[np.ndarray] = None

    def step(self, w, g, lr_scale: float = 1.0):
        if self._v is None:
            self._v = np.zeros_like(w)
        alpha = self.alpha * lr_scale
        w_new, self._v = rmsprop_step(w, g, alpha, self.beta, self.epsilon, self._v)
        return w_new, StepReport(step_taken=w_new - w, effective_lr=alpha)


class Adam:
    """Stateful Adam stepper."""

    kind = "adam"

    def __init__(self, cfg: AdamConfig):
        self.cfg = cfg
        self.k = 0
        self._m: Optional[np.ndarray] = None
        self._a: Optional[np.ndarray] = None

    def step(self, w, g, lr_scale: float = 1.0):
        if self._m is None:
            self._m = np.zeros_like(w)
            self._a = np.zeros_like(w)
        self.k += 1
        alpha = self.cfg.alpha * lr_scale
        w_new, self._m, self._a, p = _adam_core(
            w, g, alpha, self.cfg.beta1, self.cfg.beta2, self.cfg.epsilon,
            self.k, self._m, self._a,
        )
        return w_new, StepReport(step_taken=p, effective_lr=alpha)


class AdamClip:
    """Stateful Adam-Clip(p, q) stepper."""

    kind = "adamclip"

    def __init__(self, cfg: AdamClipConfig):
        self.cfg = cfg
        self.k = 0
        self._m: Optional[np.ndarray] = None
        self._a: Optional[np.ndarray] = None

    def step(self, w, g, lr_scale: float = 1.0):
        if self._m is None:
            self._m = np.zeros_like(w)
            self._a = np.zeros_like(w)
        self.k += 1
        alpha = self.cfg.adam.alpha * lr_scale
        w_new, self._m, self._a = _adamclip_core(
            w, g, self.cfg, alpha, self.k, self._m, self._a
        )
        return w_new, StepReport(step_taken=w_new - w, effective_lr=alpha)


class Swats:
    """Stateful switching stepper; exposes its phase machine state."""

    kind = "swats"

    def __init__(self, cfg: AdamConfig):
        self.cfg = cfg
        self.state = SwatsState()
        self.negative_gamma_count = 0  # diagnostic: non-descent Adam steps

    def step(self, w, g, lr_scale: float = 1.0):
        if self.state.m is None:
            self.state.m = np.zeros_like(w)
            self.state.a = np.zeros_like(w)
            self.state.v = np.zeros_like(w)
        w_new, self.state, report = swats_step(w, g, self.cfg, self.state, lr_scale)
        if report.gamma is not None and report.gamma < 0:
            self.negative_gamma_count += 1
        return w_new, report

    @property
    def phase(self) -> str:
        return self.state.phase

    @property
    def Lambda(self) -> Optional[float]:
        return self.state.Lambda


_FLOAT_FIELDS = {
    "sgd": ("alpha", "beta"),
    "adagrad": ("alpha", "epsilon"),
    "rmsprop": ("alpha", "beta", "epsilon"),
    "adam": ("alpha", "beta1", "beta2", "epsilon"),
    "swats": ("alpha", "beta1", "beta2", "epsilon"),
    "adamclip": ("alpha", "beta1", "beta2", "epsilon", "p", "q", "alpha_sgd"),
}


def make_optimizer(spec: dict):
    """Build a stepper from a tagged config dict (the JSON wire format).

    ``spec["kind"]`` selects the rule; remaining keys are that rule's
    hyperparameters, all optional where the rule has defaults. "inf" is
    accepted for adamclip's q.
    """
    if not isinstance(spec, dict):
        raise ConfigError(f"optimizer spec must be a mapping, got {type(spec).__name__}")
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in _FLOAT_FIELDS:
        raise ConfigError(
            f"unknown optimizer kind {kind!r}; expected one of {sorted(_FLOAT_FIELDS)}"
        )
    unknown = set(spec) - set(_FLOAT_FIELDS[kind])
    if unknown:
        raise ConfigError(f"unknown field(s) for {kind}: {sorted(unknown)}")
    for name in _FLOAT_FIELDS[kind]:
        if name in spec:
            try:
                spec[name] = float(spec[name])
            except (TypeError, ValueError):
                raise ConfigError(f"{kind}.{name} must be a number, got {spec[name]!r}")

    if kind == "sgd":
        return Sgd(SgdConfig(**spec))
    if kind == "adagrad":
        if "alpha" not in spec:
            raise ConfigError("adagrad requires alpha")
        return Adagrad(**spec)
    if kind == "rmsprop":
        if "alpha" not in spec:
            raise ConfigError("rmsprop requires alpha")
        return RmsProp(**spec)
    if kind == "adam":
        return Adam(AdamConfig(**spec))
    if kind == "swats":
        return Swats(AdamConfig(**spec))
    # adamclip
    for name in ("p", "q", "alpha_sgd"):
        if name not in spec:
            raise ConfigError(f"adamclip requires {name}")
    adam_kwargs = {
        n: spec[n] for n in ("alpha", "beta1", "beta2", "epsilon") if n in spec
    }
    return AdamClip(
        AdamClipConfig(
            adam=AdamConfig(**adam_kwargs),
            p=spec["p"],
            q=spec["q"],
            alpha_sgd=spec["alpha_sgd"],
        )
    )
