"""Posterior decision making at the control tick.

Combines the first decoded action mixture with the observed user command:
mode weights are reweighted by the evidence each component assigns to the
command, and each component is pulled toward the command by a Kalman
update under the interface noise model.  Later steps of the rollout keep
the prior actor head, conditioned on the (re-weighted) maneuver class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .gmmlab import Gaussian2, GmmAction, gmm_entropy_bounds, kalman_fuse, reweight_modes
from .intentnet import IntentModel


class FusionError(Exception):
    pass


# keyboard interface noise: 8-direction quantization at fixed magnitude
DEFAULT_SYS_COV = np.diag([0.25, 0.25])

# commands below this speed are "no measurement", not an intent to stop
ZERO_CMD_EPS = 1e-6


@dataclass(frozen=True)
class UserCommand:
    action: np.ndarray          # desired velocity, m/s
    source: str = "keyboard"    # {keyboard, scripted, replay}
    timestamp: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.action, dtype=np.float64).reshape(2)
        if not np.all(np.isfinite(a)):
            raise FusionError("non-finite user command")
        object.__setattr__(self, "action", a)

    @property
    def is_zero(self) -> bool:
        return bool(np.linalg.norm(self.action) < ZERO_CMD_EPS)


@dataclass(frozen=True)
class PosteriorIntent:
    mode_weights: np.ndarray            # posterior simplex over maneuver classes
    fused_first: tuple[Gaussian2, ...]  # per-class first-step action posterior
    fused: bool                         # False when the command was empty
    fell_back: bool                     # evidence underflow -> prior weights

    def first_step_mixture(self) -> GmmAction:
        return GmmAction(self.fused_first, self.mode_weights)


def posterior_intent(
    g0: GmmAction,
    cmd: UserCommand,
    sys_cov=DEFAULT_SYS_COV,
    marginalized: bool = True,
) -> PosteriorIntent:
    """Bayes update of the first-step mixture given one user command.

    Mode weights use the evidence N(cmd | mu_z, Sigma_z + Sigma_sys); the
    ``marginalized=False`` variant drops the measurement-noise term from
    the evidence (the means/covariances are fused identically either way).
    An empty command skips the update entirely.
    """
    if cmd.is_zero:
        return PosteriorIntent(g0.weights.copy(), tuple(g0.components), False, False)
    sys_cov = np.asarray(sys_cov, dtype=np.float64)
    extra = sys_cov if marginalized else None
    weights, fell_back = reweight_modes(g0, cmd.action, extra_cov=extra)
    fused = tuple(kalman_fuse(comp, cmd.action, sys_cov) for comp in g0.components)
    return PosteriorIntent(weights, fused, True, fell_back)


def posterior_rollout(model: IntentModel, h0: tc.Tensor, intent: PosteriorIntent, mode="per-z"):
    """H-step action sequences consistent with the fused intent.

    One sequence per maneuver class: the first action is the fused mean
    for that class, subsequent actions come from the prior actor head
    after advancing the latent dynamics with the fused action.  With
    ``mode="marginal"`` the per-class sequences are averaged under the
    posterior mode weights.
    """
    if mode not in ("per-z", "marginal"):
        raise FusionError(f"unknown rollout mode {mode!r}")
    cfg = model.config
    sequences = np.zeros((cfg.n_modes, cfg.horizon, 2))
    traces = []
    for z in range(cfg.n_modes):
        first = intent.fused_first[z].mean if intent.fused else None
        actions, comp_params = model.decode_actions(h0, z, mode="argmax", first_action=first)
        sequences[z] = actions[0]
        traces.append(comp_params)
    if mode == "marginal":
        return np.einsum("z,zhe->he", intent.mode_weights, sequences), traces
    return sequences, traces


def assistance_entropy(mixture: GmmAction):
    """(lower, upper) entropy bounds of a first-step mixture, for logging."""
    return gmm_entropy_bounds(mixture)
