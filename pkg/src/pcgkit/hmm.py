"""Left-to-right hidden Markov models with diagonal Gaussian-mixture emissions.

One model is trained per class (Baum-Welch); test sequences go to the model
with the higher forward log-likelihood, ties resolving to ABNORMAL. The
classifier configuration is 4 states x 16 mixture components over 12-dim
MFCC frames, but all routines accept arbitrary sizes so that small models
can be checked against exhaustive path enumeration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .core import Label
from .errors import ValidationError
from .features import FeatureMap

log = logging.getLogger(__name__)

N_STATES = 4
N_COMPONENTS = 16
VAR_FLOOR = 1e-4
_LOG_2PI = float(np.log(2.0 * np.pi))
_STOCHASTIC_ATOL = 1e-5


@dataclass(frozen=True)
class HmmModel:
    """Transition/initial distributions plus per-state mixture parameters.

    ``transition`` is upper-bidiagonal (self loops and single forward steps
    only); the final state self-loops until the sequence ends.
    """

    transition: np.ndarray  # (S, S)
    initial: np.ndarray  # (S,)
    weights: np.ndarray  # (S, K)
    means: np.ndarray  # (S, K, D)
    variances: np.ndarray  # (S, K, D)
    class_label: Label | None = None

    def __post_init__(self):
        for name in ("transition", "initial", "weights", "means", "variances"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        s = self.transition.shape[0]
        if self.transition.shape != (s, s) or self.initial.shape != (s,):
            raise ValidationError("transition must be square and initial must match it")
        if self.weights.shape[0] != s or self.means.shape[:2] != self.weights.shape:
            raise ValidationError("mixture arrays must agree with the state count")
        if self.variances.shape != self.means.shape:
            raise ValidationError("variances must match means in shape")
        if not np.allclose(self.transition.sum(axis=1), 1.0, atol=_STOCHASTIC_ATOL):
            raise ValidationError("transition rows must sum to 1")
        if not np.allclose(self.weights.sum(axis=1), 1.0, atol=_STOCHASTIC_ATOL):
            raise ValidationError("mixture weights must sum to 1 per state")
        off = self.transition.copy()
        for i in range(s):
            off[i, i] = 0.0
            if i + 1 < s:
                off[i, i + 1] = 0.0
        if np.any(off != 0.0):
            raise ValidationError("transition matrix must be upper-bidiagonal (left-to-right)")
        if np.any(self.variances < VAR_FLOOR * (1.0 - 1e-6)):
            raise ValidationError(f"variances must respect the {VAR_FLOOR} floor")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_components(self) -> int:
        return self.weights.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    def quantized(self) -> "HmmModel":
        """Round every parameter through float32 (the container precision)."""
        def q(a):
            return a.astype(np.float32).astype(np.float64)

        return replace(
            self,
            transition=q(self.transition),
            initial=q(self.initial),
            weights=q(self.weights),
            means=q(self.means),
            variances=np.maximum(q(self.variances), VAR_FLOOR),
        )


def _as_obs(seq) -> np.ndarray:
    values = seq.values if isinstance(seq, FeatureMap) else np.asarray(seq, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.ndim != 2 or values.shape[0] == 0:
        raise ValidationError(f"observation sequence must be (T, D), got shape {values.shape}")
    return values


def _check_dim(model: HmmModel, obs: np.ndarray) -> None:
    if obs.shape[1] != model.dim:
        raise ValidationError(
            f"observation dimension {obs.shape[1]} does not match model dimension {model.dim}"
        )


def _component_logprobs(model: HmmModel, obs: np.ndarray) -> np.ndarray:
    """log(w_k N(o_t; mu_sk, var_sk)) for every frame/state/component: (T, S, K)."""
    diff = obs[:, None, None, :] - model.means[None, :, :, :]
    quad = np.sum(diff * diff / model.variances[None], axis=3)
    logdet = np.sum(np.log(model.variances), axis=2)  # (S, K)
    const = -0.5 * (model.dim * _LOG_2PI + logdet)
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    return logw[None] + const[None] - 0.5 * quad


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    peak = a.max(axis=axis, keepdims=True)
    peak_safe = np.where(np.isfinite(peak), peak, 0.0)
    out = np.log(np.sum(np.exp(a - peak_safe), axis=axis)) + np.squeeze(peak_safe, axis=axis)
    return np.where(np.isfinite(np.squeeze(peak, axis=axis)), out, -np.inf)


def _emission_logprobs(model: HmmModel, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    log_comp = _component_logprobs(model, obs)
    return _logsumexp(log_comp, axis=2), log_comp


def _forward_pass(model: HmmModel, log_b: np.ndarray):
    """Scaled forward recursion with per-frame emission shifting.

    Returns (alpha_hat, scale_log, loglik) where the per-frame alpha rows sum
    to one and loglik already includes the emission shifts.
    """
    n_frames, n_states = log_b.shape
    shift = log_b.max(axis=1)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    b = np.exp(log_b - shift[:, None])
    alpha = np.zeros((n_frames, n_states))
    scale_log = np.zeros(n_frames)
    cur = model.initial * b[0]
    for t in range(n_frames):
        if t > 0:
            cur = (alpha[t - 1] @ model.transition) * b[t]
        total = cur.sum()
        if total <= 0.0 or not np.isfinite(total):
            return alpha, scale_log, -np.inf
        alpha[t] = cur / total
        scale_log[t] = np.log(total) + shift[t]
    return alpha, scale_log, float(scale_log.sum())


def forward_loglik(model: HmmModel, seq) -> float:
    """log p(sequence | model) via the scaled forward recursion."""
    obs = _as_obs(seq)
    _check_dim(model, obs)
    log_b, _ = _emission_logprobs(model, obs)
    _, _, loglik = _forward_pass(model, log_b)
    return loglik


def forward_loglik_logspace(model: HmmModel, seq) -> float:
    """Same quantity computed in pure log space (cross-check path)."""
    obs = _as_obs(seq)
    _check_dim(model, obs)
    log_b, _ = _emission_logprobs(model, obs)
    with np.errstate(divide="ignore"):
        log_a = np.log(model.transition)
        log_alpha = np.log(model.initial) + log_b[0]
    for t in range(1, obs.shape[0]):
        log_alpha = _logsumexp(log_alpha[:, None] + log_a, axis=0) + log_b[t]
    return float(_logsumexp(log_alpha[None], axis=1)[0])


def viterbi(model: HmmModel, seq) -> tuple[np.ndarray, float]:
    """Most likely state path and its log joint probability."""
    obs = _as_obs(seq)
    _check_dim(model, obs)
    log_b, _ = _emission_logprobs(model, obs)
    n_frames, n_states = log_b.shape
    with np.errstate(divide="ignore"):
        log_a = np.log(model.transition)
        delta = np.log(model.initial) + log_b[0]
    back = np.zeros((n_frames, n_states), dtype=np.int64)
    for t in range(1, n_frames):
        candidates = delta[:, None] + log_a
        back[t] = candidates.argmax(axis=0)
        delta = candidates.max(axis=0) + log_b[t]
    path = np.zeros(n_frames, dtype=np.int64)
    path[-1] = int(delta.argmax())
    for t in range(n_frames - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(delta.max())


def _forward_backward(model: HmmModel, log_b: np.ndarray):
    """Posterior state occupancies and expected transition counts.

    Returns (gamma (T, S), xi_sum (S, S), loglik); gamma rows sum to one.
    """
    n_frames, n_states = log_b.shape
    alpha, _, loglik = _forward_pass(model, log_b)
    if not np.isfinite(loglik):
        raise ValidationError("sequence has zero likelihood under the model")
    shift = log_b.max(axis=1)
    b = np.exp(log_b - shift[:, None])
    beta = np.zeros((n_frames, n_states))
    beta[-1] = 1.0
    xi_sum = np.zeros((n_states, n_states))
    gamma = np.zeros((n_frames, n_states))
    gamma[-1] = alpha[-1]
    for t in range(n_frames - 2, -1, -1):
        weighted = b[t + 1] * beta[t + 1]
        xi = (alpha[t][:, None] * model.transition) * weighted[None, :]
        total = xi.sum()
        if total > 0:
            xi_sum += xi / total
        beta_t = model.transition @ weighted
        norm = beta_t.max()
        beta[t] = beta_t / norm if norm > 0 else beta_t
        g = alpha[t] * beta[t]
        gamma[t] = g / g.sum()
    return gamma, xi_sum, loglik


def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator, n_iters: int = 25):
    """Plain seeded Lloyd iteration; empty clusters grab the farthest point."""
    n = x.shape[0]
    centers = x[rng.choice(n, size=k, replace=n < k)].copy()
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(n_iters):
        dists = np.sum((x[:, None, :] - centers[None]) ** 2, axis=2)
        new_labels = dists.argmin(axis=1)
        for cluster in range(k):
            members = new_labels == cluster
            if not members.any():
                worst = int(np.take_along_axis(dists, new_labels[:, None], 1).argmax())
                new_labels[worst] = cluster
                members = new_labels == cluster
            centers[cluster] = x[members].mean(axis=0)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centers


def init_hmm(
    sequences,
    label: Label | None = None,
    n_states: int = N_STATES,
    n_components: int = N_COMPONENTS,
    seed: int = 0,
) -> HmmModel:
    """Uniform-segmentation initialization.

    Frames of every sequence are split into ``n_states`` contiguous blocks;
    each state's mixture comes from seeded k-means over its pooled frames.
    """
    obs_list = [_as_obs(s) for s in sequences]
    if not obs_list:
        raise ValidationError("need at least one sequence")
    for o in obs_list:
        if o.shape[0] < n_states:
            raise ValidationError(
                f"sequence with {o.shape[0]} frames is shorter than {n_states} states"
            )
    dim = obs_list[0].shape[1]
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x4B)))

    pools: list[list[np.ndarray]] = [[] for _ in range(n_states)]
    for o in obs_list:
        t = o.shape[0]
        bounds = [(j * t) // n_states for j in range(n_states + 1)]
        for j in range(n_states):
            pools[j].append(o[bounds[j] : bounds[j + 1]])

    weights = np.zeros((n_states, n_components))
    means = np.zeros((n_states, n_components, dim))
    variances = np.zeros((n_states, n_components, dim))
    for j in range(n_states):
        pooled = np.concatenate(pools[j], axis=0)
        labels, centers = _kmeans(pooled, n_components, rng)
        means[j] = centers
        for k in range(n_components):
            members = pooled[labels == k]
            weights[j, k] = max(len(members), 1)
            variances[j, k] = members.var(axis=0) if len(members) else 1.0
        weights[j] /= weights[j].sum()
    variances = np.maximum(variances, VAR_FLOOR)

    mean_frames = float(np.mean([o.shape[0] for o in obs_list]))
    p_next = min(n_states / mean_frames, 0.5)
    transition = np.zeros((n_states, n_states))
    for j in range(n_states - 1):
        transition[j, j] = 1.0 - p_next
        transition[j, j + 1] = p_next
    transition[-1, -1] = 1.0
    initial = np.zeros(n_states)
    initial[0] = 1.0
    return HmmModel(transition, initial, weights, means, variances, class_label=label)


def baum_welch(
    model: HmmModel,
    sequences,
    max_iters: int = 50,
    tol: float = 1e-5,
) -> tuple[HmmModel, list[float]]:
    """Expectation-maximization over a set of sequences.

    Stops after ``max_iters`` iterations or when the relative improvement of
    the total log-likelihood drops below ``tol``. Returns the refined model
    and the per-iteration log-likelihood history (evaluated under the
    parameters entering each iteration).
    """
    obs_list = [_as_obs(s) for s in sequences]
    if not obs_list:
        raise ValidationError("need at least one sequence")
    for o in obs_list:
        _check_dim(model, o)

    s, k, d = model.n_states, model.n_components, model.dim
    history: list[float] = []
    for iteration in range(max_iters):
        trans_num = np.zeros((s, s))
        resp_sum = np.zeros((s, k))
        resp_obs = np.zeros((s, k, d))
        resp_obs2 = np.zeros((s, k, d))
        total_ll = 0.0
        for o in obs_list:
            log_b, log_comp = _emission_logprobs(model, o)
            gamma, xi_sum, ll = _forward_backward(model, log_b)
            total_ll += ll
            comp_post = np.exp(log_comp - log_b[:, :, None])  # within-state mixture posterior
            r = gamma[:, :, None] * comp_post  # (T, S, K)
            trans_num += xi_sum
            resp_sum += r.sum(axis=0)
            resp_obs += np.einsum("tsk,td->skd", r, o)
            resp_obs2 += np.einsum("tsk,td->skd", r, o * o)
        history.append(total_ll)

        transition = model.transition.copy()
        row_totals = trans_num.sum(axis=1)
        for j in range(s):
            if row_totals[j] > 0:
                transition[j] = trans_num[j] / row_totals[j]
        transition[-1, :] = 0.0
        transition[-1, -1] = 1.0

        state_totals = resp_sum.sum(axis=1, keepdims=True)
        weights = np.where(state_totals > 0, resp_sum / np.maximum(state_totals, 1e-300), model.weights)
        means = model.means.copy()
        variances = model.variances.copy()
        occupied = resp_sum > 1e-8
        means[occupied] = resp_obs[occupied] / resp_sum[occupied][:, None]
        variances[occupied] = np.maximum(
            resp_obs2[occupied] / resp_sum[occupied][:, None] - means[occupied] ** 2, VAR_FLOOR
        )

        # starving components: reseed next to the heaviest one of the state
        for j in range(s):
            for c in np.flatnonzero(~occupied[j]):
                donor = int(weights[j].argmax())
                if donor == c:
                    continue
                log.info("reseeding empty component %d of state %d from component %d", c, j, donor)
                share = weights[j, donor] / 2.0
                weights[j, donor] = share
                weights[j, c] = share
                means[j, c] = means[j, donor] + 0.1 * np.sqrt(variances[j, donor])
                variances[j, c] = variances[j, donor]
        weights /= weights.sum(axis=1, keepdims=True)

        model = HmmModel(
            transition, model.initial, weights, means, variances, class_label=model.class_label
        )
        if iteration > 0:
            prev = history[-2]
            if abs(prev) > 0 and (history[-1] - prev) / abs(prev) < tol:
                break
    return model, history


def classify_hmm(models, seq) -> tuple[Label, float, float]:
    """Maximum-likelihood decision between the per-class models.

    ``models`` is (normal_model, abnormal_model); ties go to ABNORMAL.
    """
    normal_model, abnormal_model = models
    ll_normal = forward_loglik(normal_model, seq)
    ll_abnormal = forward_loglik(abnormal_model, seq)
    label = Label.ABNORMAL if ll_abnormal >= ll_normal else Label.NORMAL
    return label, ll_normal, ll_abnormal


def sample_sequences(
    model: HmmModel, n_sequences: int, n_frames: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Draw observation sequences from the model (test fixture helper)."""
    out = []
    for _ in range(n_sequences):
        obs = np.zeros((n_frames, model.dim))
        state = int(rng.choice(model.n_states, p=model.initial))
        for t in range(n_frames):
            comp = int(rng.choice(model.n_components, p=model.weights[state]))
            obs[t] = model.means[state, comp] + np.sqrt(model.variances[state, comp]) * rng.standard_normal(model.dim)
            state = int(rng.choice(model.n_states, p=model.transition[state]))
        out.append(obs)
    return out
