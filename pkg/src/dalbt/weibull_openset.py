"""Per-class Weibull tail models over latent distances, and outlier scores.

For each class, the latents of correctly classified labeled samples form a
cluster; the largest distances to the cluster mean are fitted with a
three-parameter Weibull (location, scale, shape). An unlabeled sample's
outlier score is the Weibull CDF of its distance to the nearest-fitting
class mean.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFitError, NumericError, StrategyUnavailableError
from .network import NetworkParams, predict_latents

log = logging.getLogger(__name__)

KAPPA_BRACKET = (0.01, 100.0)


@dataclass(frozen=True)
class WeibullFitConfig:
    eta: int = 20  # tail size; classes with fewer distances use all of them
    min_class_samples: int = 5
    max_iter: int = 200
    tol: float = 1e-10

    def __post_init__(self):
        if self.eta < 2:
            raise ValueError("eta must be >= 2")
        if self.min_class_samples < 2:
            raise ValueError("min_class_samples must be >= 2")


@dataclass(frozen=True)
class WeibullModel:
    tau: float
    lambda_scale: float
    kappa: float
    eta: int = 0  # number of tail values used in the fit
    n_samples: int = 0  # cluster size the tail was taken from

    def cdf(self, d):
        return weibull_cdf(self, d)

    def to_record(self, class_id) -> str:
        return (f"{class_id}\t{self.tau!r}\t{self.lambda_scale!r}\t{self.kappa!r}"
                f"\t{self.eta}\t{self.n_samples}")

    @classmethod
    def from_record(cls, line: str):
        cid, tau, lam, kappa, eta, n = line.strip().split("\t")
        return int(cid), cls(float(tau), float(lam), float(kappa), int(eta), int(n))


@dataclass(frozen=True)
class ClassCluster:
    class_id: int
    mean: np.ndarray
    distances: np.ndarray  # ascending


def weibull_cdf(model: WeibullModel, d):
    """``1 - exp(-(max(d - tau, 0) / lambda) ** kappa)``."""
    shifted = np.maximum(np.asarray(d, dtype=np.float64) - model.tau, 0.0)
    out = -np.expm1(-((shifted / model.lambda_scale) ** model.kappa))
    return float(out) if np.ndim(out) == 0 else out


def weibull_loglik(x, kappa, lam, tau=0.0):
    """Log-likelihood of a three-parameter Weibull at samples ``x`` (> tau)."""
    y = (np.asarray(x, dtype=np.float64) - tau) / lam
    return float(np.sum(np.log(kappa / lam) + (kappa - 1) * np.log(y) - y**kappa))


def shape_equation(x, kappa):
    """Profile MLE equation for the shape; its root is the shape estimate.

    Invariant to rescaling ``x``, so callers may normalise first.
    """
    lx = np.log(x)
    xk = x**kappa
    return float(np.sum(xk * lx) / np.sum(xk) - 1.0 / kappa - lx.mean())


def _shape_equation_with_slope(lx, kappa):
    xk = np.exp(kappa * lx)
    s0 = xk.sum()
    s1 = (xk * lx).sum()
    s2 = (xk * lx * lx).sum()
    g = s1 / s0 - 1.0 / kappa - lx.mean()
    dg = s2 / s0 - (s1 / s0) ** 2 + 1.0 / kappa**2
    return g, dg


def fit_weibull_mle(x, max_iter=200, tol=1e-10):
    """Two-parameter Weibull MLE ``(kappa, lambda)`` for positive samples.

    The shape equation is increasing in kappa; Newton steps are taken inside
    a bisection bracket so every iterate stays within ``KAPPA_BRACKET``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2 or np.any(x <= 0):
        raise DegenerateFitError("need at least two strictly positive values")
    scale = x.max()
    lx = np.log(x / scale)
    if np.ptp(lx) == 0:
        raise DegenerateFitError("all tail values are equal")
    lo, hi = KAPPA_BRACKET
    g_lo, _ = _shape_equation_with_slope(lx, lo)
    g_hi, _ = _shape_equation_with_slope(lx, hi)
    if g_lo > 0 or g_hi < 0:
        raise DegenerateFitError(f"shape root outside [{lo}, {hi}]")
    k = 1.0
    for _ in range(max_iter):
        g, dg = _shape_equation_with_slope(lx, k)
        if abs(g) < tol:
            break
        if g > 0:
            hi = k
        else:
            lo = k
        step = k - g / dg if dg > 0 else None
        k = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
        if hi - lo < 1e-15 * max(1.0, k):
            break
    else:
        raise NumericError(f"Weibull shape did not converge in {max_iter} iterations (residual {g:.3e})")
    lam = scale * np.mean(np.exp(k * lx)) ** (1.0 / k)
    return float(k), float(lam)


def fit_weibull(distances, fit_cfg: WeibullFitConfig = WeibullFitConfig(), eta=None, tau=None):
    """Fit a tail model to a multiset of distances.

    Takes the ``eta`` largest distances (all of them when fewer), places the
    location just below the smallest tail value (``0.99 * min``) unless
    ``tau`` is given, and solves the MLE for shape and scale of the shifted
    values.
    """
    d = np.sort(np.asarray(distances, dtype=np.float64))
    eta = fit_cfg.eta if eta is None else eta
    tail = d[-eta:] if eta < d.size else d
    if tail.size < 2:
        raise DegenerateFitError("need at least two distances")
    if np.ptp(tail) == 0:
        raise DegenerateFitError("all tail values are equal")
    if tau is None:
        tau = 0.99 * tail[0]
    shifted = tail - tau
    if np.any(shifted <= 0):
        raise DegenerateFitError("location must lie strictly below every tail value")
    kappa, lam = fit_weibull_mle(shifted, fit_cfg.max_iter, fit_cfg.tol)
    return WeibullModel(float(tau), lam, kappa, int(tail.size), int(d.size))


def collect_correct_latents(params: NetworkParams, x, labels, batch_size=512):
    """Latents of correctly classified samples, grouped by true class."""
    z, probs = predict_latents(params, x, batch_size)
    labels = np.asarray(labels)
    correct = probs.argmax(axis=1) == labels
    return {int(c): z[correct & (labels == c)] for c in np.unique(labels[correct])}


def build_cluster(class_id, class_latents) -> ClassCluster:
    z = np.asarray(class_latents, dtype=np.float64)
    if z.ndim != 2 or len(z) == 0:
        raise DegenerateFitError(f"class {class_id} has no latents")
    mean = z.mean(axis=0)
    dist = np.sort(np.linalg.norm(z - mean, axis=1))
    return ClassCluster(int(class_id), mean, dist)


@dataclass
class OpenSetModel:
    """Fitted per-class models plus the class means they are measured from.

    ``models[c]`` may be the shared fallback model for classes that were
    too small or degenerate to fit on their own.
    """

    means: dict
    models: dict
    fallback_classes: tuple = ()

    def scores(self, z):
        return outlier_score(self.models, self.means, z)

    def to_records(self) -> list:
        return [self.models[c].to_record(c) for c in sorted(self.models)]


def fit_open_set(per_class_latents: dict, fit_cfg: WeibullFitConfig = WeibullFitConfig()) -> OpenSetModel:
    """Fit every class; small or degenerate classes share a pooled model.

    The pooled model uses the distances of all correct latents to their own
    class means. Raises :class:`StrategyUnavailableError` if nothing fits.
    """
    clusters = {c: build_cluster(c, z) for c, z in per_class_latents.items() if len(z)}
    models, pending = {}, []
    for c, cl in sorted(clusters.items()):
        if cl.distances.size < fit_cfg.min_class_samples:
            pending.append(c)
            continue
        try:
            models[c] = fit_weibull(cl.distances, fit_cfg)
        except (DegenerateFitError, NumericError) as exc:
            log.info("class %d Weibull fit failed (%s); using pooled model", c, exc)
            pending.append(c)
    if pending:
        pooled = np.concatenate([cl.distances for cl in clusters.values()]) if clusters else np.zeros(0)
        try:
            shared = fit_weibull(pooled, fit_cfg)
        except (DegenerateFitError, NumericError) as exc:
            log.info("pooled Weibull fit failed (%s)", exc)
            shared = None
        if shared is not None:
            for c in pending:
                models[c] = shared
        else:
            pending = []
    if not models:
        raise StrategyUnavailableError("no class produced a usable Weibull model")
    means = {c: clusters[c].mean for c in models}
    return OpenSetModel(means, models, tuple(sorted(pending)))


def outlier_score(per_class_models: dict, per_class_means: dict, z):
    """Minimum over classes of the Weibull CDF of the distance to each class mean.

    ``z`` may be one latent vector or a batch; the result matches.
    """
    if not per_class_models:
        raise StrategyUnavailableError("no fitted class models")
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None] if single else z
    best = np.full(len(zb), np.inf)
    for c in sorted(per_class_models):
        d = np.linalg.norm(zb - per_class_means[c], axis=1)
        best = np.minimum(best, weibull_cdf(per_class_models[c], d))
    return float(best[0]) if single else best
