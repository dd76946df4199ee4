"""Per-class Gaussian-emission hidden Markov models trained with Baum-Welch.

Classification picks the class whose model assigns the window the highest
forward log-likelihood. Emissions use diagonal covariance: 5-step sequences
cannot support a full 4x4 covariance per state. All computations run in
log space; a per-step scaled variant of the forward pass exists purely as a
cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, StateError
from .rng import HMM_INIT, seeded_rng

VARIANCE_FLOOR = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GaussianHMM:
    initial: np.ndarray          # (K,)
    transitions: np.ndarray      # (K, K), row-stochastic
    means: np.ndarray            # (K, D)
    variances: np.ndarray        # (K, D), >= VARIANCE_FLOOR
    fit_loglik: list = field(default_factory=list, compare=False)

    @property
    def n_states(self):
        return self.initial.shape[0]


@dataclass
class HMMClassifier:
    models: list                 # one GaussianHMM per class
    class_names: list

    kind = "hmm"


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(a - safe).sum(axis=axis)) + np.squeeze(safe, axis=axis)
    return out


def _log_emissions(model, obs):
    """log N(obs | state) for every state; obs (..., D) -> (..., K)."""
    diff = obs[..., None, :] - model.means          # (..., K, D)
    quad = (diff * diff / model.variances).sum(axis=-1)
    norm = (LOG_2PI + np.log(model.variances)).sum(axis=-1)
    return -0.5 * (norm + quad)


def _forward_batch(model, seqs):
    """Log-space forward pass over a batch of equal-length sequences.

    seqs: (N, T, D). Returns (log_alpha (N, T, K), loglik (N,)).
    """
    logb = _log_emissions(model, seqs)
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.initial)
        log_a = np.log(model.transitions)
    n, t_len, k = logb.shape
    log_alpha = np.empty((n, t_len, k))
    log_alpha[:, 0] = log_pi + logb[:, 0]
    for t in range(1, t_len):
        log_alpha[:, t] = (
            _logsumexp(log_alpha[:, t - 1][:, :, None] + log_a[None], axis=1)
            + logb[:, t]
        )
    return log_alpha, _logsumexp(log_alpha[:, -1], axis=1)


def _backward_batch(model, logb):
    with np.errstate(divide="ignore"):
        log_a = np.log(model.transitions)
    n, t_len, k = logb.shape
    log_beta = np.zeros((n, t_len, k))
    for t in range(t_len - 2, -1, -1):
        log_beta[:, t] = _logsumexp(
            log_a[None] + (logb[:, t + 1] + log_beta[:, t + 1])[:, None, :], axis=2
        )
    return log_beta


def _check_sequences(seqs):
    seqs = np.asarray(seqs, dtype=np.float64)
    if seqs.ndim == 2:
        seqs = seqs[None]
    if seqs.ndim != 3:
        raise ConfigError(f"expected (N, T, D) observations, got shape {seqs.shape}")
    if not np.isfinite(seqs).all():
        raise DataError("non-finite observation values")
    return seqs


def forward_loglik(model, seq):
    """Exact log-likelihood of one observation sequence (T, D)."""
    seqs = _check_sequences(seq)
    _, ll = _forward_batch(model, seqs)
    return float(ll[0])


def forward_loglik_batch(model, seqs):
    seqs = _check_sequences(seqs)
    _, ll = _forward_batch(model, seqs)
    return ll


def forward_loglik_scaled(model, seq):
    """Per-step-scaled forward pass; cross-check for the log-space variant."""
    seqs = _check_sequences(seq)
    b = np.exp(_log_emissions(model, seqs[0]))      # (T, K)
    alpha = model.initial * b[0]
    ll = 0.0
    scale = alpha.sum()
    alpha = alpha / scale
    ll += np.log(scale)
    for t in range(1, b.shape[0]):
        alpha = (alpha @ model.transitions) * b[t]
        scale = alpha.sum()
        alpha = alpha / scale
        ll += np.log(scale)
    return float(ll)


def _init_model(seqs, n_states, seed):
    """Seeded k-means-style means over pooled observations; near-uniform
    initial/transition rows with jitter to break symmetry."""
    rng = seeded_rng(seed, HMM_INIT)
    pooled = seqs.reshape(-1, seqs.shape[-1])
    n_obs = pooled.shape[0]
    idx = rng.choice(n_obs, size=n_states, replace=n_obs < n_states)
    centers = pooled[idx].copy()
    for _ in range(10):
        dist = ((pooled[:, None, :] - centers[None]) ** 2).sum(axis=2)
        assign = dist.argmin(axis=1)
        for k in range(n_states):
            members = pooled[assign == k]
            if len(members):
                centers[k] = members.mean(axis=0)
    variances = np.maximum(pooled.var(axis=0), VARIANCE_FLOOR)
    variances = np.tile(variances, (n_states, 1))
    initial = 1.0 + rng.uniform(0.0, 0.05, size=n_states)
    initial /= initial.sum()
    transitions = 1.0 + rng.uniform(0.0, 0.05, size=(n_states, n_states))
    transitions /= transitions.sum(axis=1, keepdims=True)
    return GaussianHMM(initial, transitions, centers, variances)


def baum_welch_fit(sequences, n_states=7, max_iters=100, tol=1e-4, seed=0):
    """EM fit of a Gaussian-emission HMM on equal-length sequences.

    The training log-likelihood trace (one entry per iteration, evaluated
    before that iteration's M-step) is stored on the returned model as
    `fit_loglik`; EM guarantees it is non-decreasing up to the variance
    floor.
    """
    seqs = _check_sequences(sequences)
    if seqs.shape[0] < 1:
        raise ConfigError("baum_welch_fit requires at least one sequence")
    model = _init_model(seqs, n_states, seed)
    trace = []
    prev_ll = -np.inf
    for _ in range(max_iters):
        logb = _log_emissions(model, seqs)
        log_alpha, ll = _forward_batch(model, seqs)
        log_beta = _backward_batch(model, logb)
        total_ll = float(ll.sum())
        trace.append(total_ll)
        if total_ll - prev_ll < tol:
            break
        prev_ll = total_ll

        log_gamma = log_alpha + log_beta - ll[:, None, None]
        gamma = np.exp(log_gamma)                    # (N, T, K)
        with np.errstate(divide="ignore"):
            log_a = np.log(model.transitions)
        t_len = seqs.shape[1]
        xi_sum = np.zeros((n_states, n_states))
        for t in range(t_len - 1):
            log_xi = (
                log_alpha[:, t][:, :, None]
                + log_a[None]
                + (logb[:, t + 1] + log_beta[:, t + 1])[:, None, :]
                - ll[:, None, None]
            )
            xi_sum += np.exp(log_xi).sum(axis=0)

        initial = gamma[:, 0].sum(axis=0)
        initial /= initial.sum()

        trans_den = gamma[:, :-1].sum(axis=(0, 1))
        transitions = model.transitions.copy()
        active = trans_den > 0
        transitions[active] = xi_sum[active] / trans_den[active, None]
        transitions /= transitions.sum(axis=1, keepdims=True)

        gsum = gamma.sum(axis=(0, 1))
        means = model.means.copy()
        variances = model.variances.copy()
        occupied = gsum > 0
        new_means = np.einsum("ntk,ntd->kd", gamma, seqs)
        means[occupied] = new_means[occupied] / gsum[occupied, None]
        diff = seqs[:, :, None, :] - means[None, None]
        new_vars = np.einsum("ntk,ntkd->kd", gamma, diff * diff)
        variances[occupied] = new_vars[occupied] / gsum[occupied, None]
        variances = np.maximum(variances, VARIANCE_FLOOR)

        model = GaussianHMM(initial, transitions, means, variances)

    model.fit_loglik = trace
    return model


def fit_classifier(states, labels, class_names, n_states=7, max_iters=100,
                   tol=1e-4, seed=0):
    """One Baum-Welch fit per class over that class's window sequences."""
    labels = np.asarray(labels)
    models = []
    for idx, name in enumerate(class_names):
        class_seqs = states[labels == idx]
        if class_seqs.shape[0] == 0:
            raise ConfigError(f"no training sequences for class {name!r}")
        models.append(
            baum_welch_fit(
                class_seqs, n_states=n_states, max_iters=max_iters, tol=tol,
                seed=seed + idx,
            )
        )
    return HMMClassifier(models=models, class_names=list(class_names))


def hmm_classify(classifier, seq):
    """Class with the highest sequence log-likelihood; ties to lowest index."""
    return int(hmm_predict_batch(classifier, np.asarray(seq)[None])[0])


def hmm_predict_batch(classifier, seqs):
    if any(m is None for m in classifier.models):
        raise StateError("classifier has untrained class models")
    seqs = _check_sequences(seqs)
    scores = np.stack(
        [forward_loglik_batch(m, seqs) for m in classifier.models], axis=1
    )
    return np.argmax(scores, axis=1)
