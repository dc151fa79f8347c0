"""Joint learning of per-element linear transforms under stationarity priors.

The negative log posterior over all transforms A_t^(i), noise scales, and AR
coefficients (constants dropped) is

    J = sum_t [ (d*K_t/2) ln(gamma_t^2) + (1/gamma_t^2) sum_i ||f_{t+1} - A f_t||^2 ]
        + C_S ln(sigma_S^2) + C_T ln(sigma_T^2)
        + (1/sigma_S^2) * S + (1/sigma_T^2) * T

where S accumulates, for every transform slot, the weighted squared Frobenius
distances to its within-frame Voronoi neighbors (each unordered pair is seen
from both of its endpoint neighborhoods), and T accumulates every slot's
residual against its AR prediction over available lags (an empty lag window
leaves the bare ||A||^2, which keeps each subproblem strictly convex).

Restricted to one slot X, J is the convex quadratic

    g(X) = e_R(X)/gamma_t^2 + 2*e_S(X)/sigma_S^2 + e_T(X)/sigma_T^2

with gradient X*(beta*I + b b^T) - D; the coefficients assembled here are
pinned against finite differences of the full J by the test suite.
Transform updates run as sequential (Gauss-Seidel) sweeps inside ICM: each
slot is re-solved against the latest estimates of all other slots, so every
sub-update is a conditional minimizer and J never increases. A buffered
simultaneous sweep was tried first and diverges on this objective (the
block iteration has spectral radius above one once the stationarity priors
tighten), so it is not offered.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import IcmDiagnostics, ModelParams, SwarmLayout, SwarmModel
from .errors import FaultError
from .neighborhood import NeighborhoodSystem, build_neighborhoods

logger = logging.getLogger(__name__)

FeatureMap = dict[tuple[int, int], np.ndarray]
TransformMap = dict[tuple[int, int], np.ndarray]

VARIANCE_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# slot structure: which terms of J touch which transform


def _slot_lags(transforms: TransformMap, nbhd: NeighborhoodSystem, t: int, i: int) -> int:
    """Number of consecutive previous transforms available to slot (t, i)."""
    rho = 0
    for (s, j) in nbhd.gamma_t.get((t, i), ()):
        if (s, j) in transforms:
            rho += 1
        else:
            break
    return rho


def _slot_neighbors(
    transforms: TransformMap, nbhd: NeighborhoodSystem, t: int, i: int
) -> list[tuple[int, float]]:
    """(j, w) spatial neighbors of (t, i) that hold transforms themselves."""
    out = []
    for (a, b), w in nbhd.weights.get(t, {}).items():
        if a == i and (t, b) in transforms:
            out.append((b, w))
        elif b == i and (t, a) in transforms:
            out.append((a, w))
    out.sort()
    return out


def _ar_prediction(
    transforms: TransformMap, alpha: np.ndarray, t: int, i: int, rho: int, d: int
) -> np.ndarray:
    pred = np.zeros((d, d))
    for j in range(1, rho + 1):
        pred += alpha[j - 1] * transforms[(t - j, i)]
    return pred


def _future_terms(
    transforms: TransformMap, nbhd: NeighborhoodSystem, t: int, i: int
) -> list[int]:
    """Lags k for which slot (t+k, i) exists and reaches back to frame t."""
    ks = []
    for k in range(1, nbhd.window + 1):
        if (t + k, i) in transforms and k <= _slot_lags(transforms, nbhd, t + k, i):
            ks.append(k)
    return ks


# ---------------------------------------------------------------------------
# objective


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """J split into its terms, plus the raw residual sums behind them."""

    reconstruction: float
    spatial: float
    temporal: float
    log_terms: float
    c_s: float
    c_t: float
    recon_raw: dict[int, float]
    spatial_raw: float
    temporal_raw: float
    k_t: dict[int, int]

    @property
    def total(self) -> float:
        return self.reconstruction + self.spatial + self.temporal + self.log_terms


def objective(
    transforms: TransformMap,
    features: FeatureMap,
    neighborhoods: NeighborhoodSystem,
    params: ModelParams,
) -> ObjectiveBreakdown:
    if (params.gamma <= 0).any() or params.sigma_s <= 0 or params.sigma_t <= 0:
        raise FaultError("noise scales must be positive")
    slots = sorted(transforms)
    if not slots:
        raise FaultError("objective needs at least one transform slot")
    d = features[slots[0]].shape[0]
    alpha = params.alpha

    recon_raw: dict[int, float] = {}
    k_t: dict[int, int] = {}
    for (t, i) in slots:
        r = features[(t + 1, i)] - transforms[(t, i)] @ features[(t, i)]
        recon_raw[t] = recon_raw.get(t, 0.0) + float(r @ r)
        k_t[t] = k_t.get(t, 0) + 1

    spatial_raw = 0.0
    c_s = 0.0
    frames_seen = {t for (t, _) in slots}
    for t in sorted(frames_seen):
        for (i, j), w in sorted(neighborhoods.weights.get(t, {}).items()):
            if (t, i) in transforms and (t, j) in transforms:
                diff = transforms[(t, i)] - transforms[(t, j)]
                # the pair appears in both endpoints' neighborhoods
                spatial_raw += 2.0 * w * float(np.sum(diff * diff))
    temporal_raw = 0.0
    c_t = 0.0
    for (t, i) in slots:
        ns = len(_slot_neighbors(transforms, neighborhoods, t, i))
        c_s += (d * d / 2.0) * ns * ns
        rho = _slot_lags(transforms, neighborhoods, t, i)
        c_t += (d * d / 2.0) * rho * rho
        res = transforms[(t, i)] - _ar_prediction(transforms, alpha, t, i, rho, d)
        temporal_raw += float(np.sum(res * res))

    gamma2 = params.gamma**2
    recon_term = sum(recon_raw[t] / gamma2[t - 1] for t in recon_raw)
    log_terms = sum(d * k_t[t] / 2.0 * math.log(gamma2[t - 1]) for t in k_t)
    log_terms += c_s * math.log(params.sigma_s**2) + c_t * math.log(params.sigma_t**2)
    return ObjectiveBreakdown(
        reconstruction=recon_term,
        spatial=spatial_raw / params.sigma_s**2,
        temporal=temporal_raw / params.sigma_t**2,
        log_terms=log_terms,
        c_s=c_s,
        c_t=c_t,
        recon_raw=recon_raw,
        spatial_raw=spatial_raw,
        temporal_raw=temporal_raw,
        k_t=k_t,
    )


def subproblem_residuals(
    t: int,
    i: int,
    transforms: TransformMap,
    features: FeatureMap,
    neighborhoods: NeighborhoodSystem,
    alpha: np.ndarray,
) -> tuple[float, float, float]:
    """(e_R, e_S, e_T) of slot (t, i) evaluated at its current transform."""
    x = transforms[(t, i)]
    d = x.shape[0]
    r = features[(t + 1, i)] - x @ features[(t, i)]
    e_r = float(r @ r)
    e_s = 0.0
    for j, w in _slot_neighbors(transforms, neighborhoods, t, i):
        diff = x - transforms[(t, j)]
        e_s += w * float(np.sum(diff * diff))
    rho = _slot_lags(transforms, neighborhoods, t, i)
    res = x - _ar_prediction(transforms, alpha, t, i, rho, d)
    e_t = float(np.sum(res * res))
    for k in _future_terms(transforms, neighborhoods, t, i):
        q = _future_target(transforms, neighborhoods, alpha, t, i, k, d)
        res = alpha[k - 1] * x - q
        e_t += float(np.sum(res * res))
    return e_r, e_s, e_t


# ---------------------------------------------------------------------------
# conditional-minimizer updates


def update_variances(
    transforms: TransformMap,
    features: FeatureMap,
    neighborhoods: NeighborhoodSystem,
    params: ModelParams,
    floor: float = VARIANCE_FLOOR,
) -> tuple[float, float, np.ndarray]:
    """ML noise scales holding everything else fixed.

    gamma_t^2 = 2 R_t / (d K_t), sigma_S^2 = S / C_S, sigma_T^2 = T / C_T;
    variances are floored, and a scale whose normalizer is zero (nothing to
    estimate) keeps its previous value.
    """
    br = objective(transforms, features, neighborhoods, params)
    d = features[next(iter(transforms))].shape[0]
    gamma = params.gamma.copy()
    for t, r_t in br.recon_raw.items():
        var = max(2.0 * r_t / (d * br.k_t[t]), floor)
        gamma[t - 1] = math.sqrt(var)
    if br.c_s > 0:
        sigma_s = math.sqrt(max(br.spatial_raw / br.c_s, floor))
    else:
        sigma_s = params.sigma_s
    if br.c_t > 0:
        sigma_t = math.sqrt(max(br.temporal_raw / br.c_t, floor))
    else:
        sigma_t = params.sigma_t
    return sigma_s, sigma_t, gamma


def update_ar_coefficients(
    transforms: TransformMap,
    neighborhoods: NeighborhoodSystem,
    window: int,
    current_alpha: np.ndarray | None = None,
) -> np.ndarray:
    """Stationarity solve M alpha = m over all slots with at least one lag.

    M_{kj} sums <A_{t-j}, A_{t-k}> over slots where both lags exist and m_k
    sums <A_t, A_{t-k}>; a singular system falls back to the minimum-norm
    least-squares solution. With no temporal structure at all the current
    coefficients are returned unchanged.
    """
    m_mat = np.zeros((window, window))
    m_vec = np.zeros(window)
    any_lag = False
    for (t, i) in sorted(transforms):
        rho = _slot_lags(transforms, neighborhoods, t, i)
        if rho < 1:
            continue
        any_lag = True
        head = transforms[(t, i)]
        for k in range(1, rho + 1):
            a_k = transforms[(t - k, i)]
            m_vec[k - 1] += float(np.sum(head * a_k))
            for j in range(1, rho + 1):
                m_mat[k - 1, j - 1] += float(np.sum(transforms[(t - j, i)] * a_k))
    if not any_lag:
        logger.warning("no temporal neighborhoods; AR coefficients left unchanged")
        if current_alpha is not None:
            return np.asarray(current_alpha, dtype=np.float64).copy()
        return np.zeros(window)
    # near-constant transform sequences make M nearly rank one; truncating
    # small singular values keeps the minimum-norm solution bounded
    return np.linalg.lstsq(m_mat, m_vec, rcond=1e-8)[0]


# ---------------------------------------------------------------------------
# per-transform quadratic subproblem


@dataclass(frozen=True)
class QuadraticForm:
    """Data of grad g = X (beta I + b b^T) - D for one transform subproblem."""

    beta: float
    b: np.ndarray
    d_mat: np.ndarray

    def __post_init__(self):
        if self.beta <= 0:
            raise FaultError("quadratic form must have beta > 0")
        if not (
            np.isfinite(self.beta)
            and np.isfinite(self.b).all()
            and np.isfinite(self.d_mat).all()
        ):
            raise FaultError("quadratic form has non-finite entries")

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.beta * x + np.outer(x @ self.b, self.b) - self.d_mat

    def value(self, x: np.ndarray) -> float:
        """g(X) up to the X-independent constant."""
        xb = x @ self.b
        return 0.5 * (self.beta * float(np.sum(x * x)) + float(xb @ xb)) - float(
            np.sum(self.d_mat * x)
        )


def _future_target(
    transforms: TransformMap,
    nbhd: NeighborhoodSystem,
    alpha: np.ndarray,
    t: int,
    i: int,
    k: int,
    d: int,
) -> np.ndarray:
    """Constant Q_k of the future residual ||alpha_k X - Q_k|| at slot (t+k, i)."""
    rho = _slot_lags(transforms, nbhd, t + k, i)
    q = transforms[(t + k, i)].copy()
    for j in range(1, rho + 1):
        if j != k:
            q -= alpha[j - 1] * transforms[(t + k - j, i)]
    return q


def assemble_quadratic(
    t: int,
    i: int,
    transforms: TransformMap,
    features: FeatureMap,
    neighborhoods: NeighborhoodSystem,
    params: ModelParams,
) -> QuadraticForm:
    """Coefficients of the X = A_t^(i) subproblem, all other slots fixed."""
    if (t, i) not in transforms:
        raise FaultError(f"no transform slot at {(t, i)}")
    d = features[(t, i)].shape[0]
    alpha = params.alpha
    gamma2 = float(params.gamma[t - 1] ** 2)
    sig_s2 = params.sigma_s**2
    sig_t2 = params.sigma_t**2

    b = math.sqrt(2.0 / gamma2) * features[(t, i)]
    d_mat = (2.0 / gamma2) * np.outer(features[(t + 1, i)], features[(t, i)])

    w_sum = 0.0
    for j, w in _slot_neighbors(transforms, neighborhoods, t, i):
        w_sum += w
        d_mat += (4.0 / sig_s2) * w * transforms[(t, j)]

    rho = _slot_lags(transforms, neighborhoods, t, i)
    pred = _ar_prediction(transforms, alpha, t, i, rho, d)
    alpha_sq = 0.0
    temporal_d = pred
    for k in _future_terms(transforms, neighborhoods, t, i):
        a_k = alpha[k - 1]
        alpha_sq += a_k * a_k
        temporal_d = temporal_d + a_k * _future_target(
            transforms, neighborhoods, alpha, t, i, k, d
        )
    d_mat += (2.0 / sig_t2) * temporal_d

    beta = 4.0 * w_sum / sig_s2 + (2.0 / sig_t2) * (1.0 + alpha_sq)
    return QuadraticForm(beta=beta, b=b, d_mat=d_mat)


def line_search_eta(x: np.ndarray, g_dir: np.ndarray, q: QuadraticForm) -> float:
    """Exact minimizer of g(X - eta * G) over eta >= 0, in closed form."""
    num = float(np.sum(q.gradient(x) * g_dir))
    gb = g_dir @ q.b
    den = q.beta * float(np.sum(g_dir * g_dir)) + float(gb @ gb)
    if den <= 0.0 or not np.isfinite(den):
        return 0.0
    return max(num / den, 0.0)


def project(x: np.ndarray, constraint: str) -> np.ndarray:
    """Nearest point of the feasible set in Frobenius norm."""
    if constraint == "unconstrained":
        return x
    if constraint == "symmetric":
        return (x + x.T) / 2.0
    if constraint == "orthogonal":
        u, s, vt = np.linalg.svd(x)
        if s[-1] <= 1e-12 * max(s[0], 1e-300):
            raise FaultError("degenerate projection: matrix is rank deficient")
        return u @ vt
    raise ValueError(f"unknown constraint tag {constraint!r}")


def unconstrained_solution(q: QuadraticForm) -> np.ndarray:
    """Global minimizer X* = (D/beta) [I - b b^T / (beta + ||b||^2)]."""
    db = q.d_mat @ q.b
    denom = q.beta + float(q.b @ q.b)
    return (q.d_mat - np.outer(db, q.b) / denom) / q.beta


@dataclass(frozen=True)
class GdResult:
    x: np.ndarray
    converged: bool
    iterations: int


def gd_solve(
    x0: np.ndarray,
    q: QuadraticForm,
    constraint: str = "unconstrained",
    eps: float = 1e-3,
    max_iter: int = 10_000,
) -> GdResult:
    """Projected gradient descent with exact line search.

    Stops when the relative iterate change drops below eps (absolute change
    for a zero iterate) or at the iteration cap, returning the best iterate
    seen. Unconstrained steps never increase g.
    """
    x = np.asarray(x0, dtype=np.float64)
    track_best = constraint != "unconstrained"
    best_x, best_val = x, q.value(x) if track_best else 0.0
    for it in range(1, max_iter + 1):
        grad = q.gradient(x)
        if not grad.any():
            return GdResult(x=x, converged=True, iterations=it - 1)
        eta = line_search_eta(x, grad, q)
        if eta == 0.0:
            return GdResult(x=x, converged=True, iterations=it - 1)
        x_new = project(x - eta * grad, constraint)
        step = float(np.linalg.norm(x_new - x))
        base = float(np.linalg.norm(x))
        delta = step / base if base > 0 else step
        if track_best:
            val = q.value(x_new)
            if val < best_val:
                best_x, best_val = x_new, val
        x = x_new
        if delta < eps:
            return GdResult(x=x, converged=True, iterations=it)
    logger.warning("gradient descent hit the %d iteration cap", max_iter)
    return GdResult(x=best_x if track_best else x, converged=False, iterations=max_iter)


# ---------------------------------------------------------------------------
# ICM


@dataclass(frozen=True)
class IcmConfig:
    window: int = 3
    eps: float = 1e-3
    k_max: int = 50
    constraint: str = "unconstrained"
    init_scheme: str = "prev"  # or "projected"
    gd_max_iter: int = 10_000
    initial_transforms: TransformMap | None = None

    def __post_init__(self):
        if self.init_scheme not in ("prev", "projected"):
            raise ValueError("init_scheme must be 'prev' or 'projected'")


@dataclass(frozen=True)
class IcmResult:
    transforms: TransformMap
    params: ModelParams
    diagnostics: tuple[IcmDiagnostics, ...]
    converged: bool
    iterations: int


def _initial_point(prev: np.ndarray, constraint: str) -> np.ndarray:
    """Previous iterate coerced onto the feasible set (identity backstop)."""
    if constraint == "unconstrained":
        return prev
    try:
        return project(prev, constraint)
    except FaultError:
        return np.eye(prev.shape[0])


def icm_learn(
    features: FeatureMap,
    layout: SwarmLayout,
    neighborhoods: NeighborhoodSystem,
    config: IcmConfig,
) -> IcmResult:
    """Iterated conditional modes over noise scales, AR coefficients, transforms.

    Transforms start at zero (noise scales pinned to one on the first
    iteration); each iteration re-solves every slot by projected gradient
    descent against the latest estimates of the other slots, until the
    largest relative transform change drops below eps.
    """
    links = layout.link_starts()
    if not links:
        raise FaultError("layout has no correspondence links to learn from")
    for (t, i) in links:
        if (t, i) not in features or (t + 1, i) not in features:
            raise FaultError(f"missing features for link ({t},{i})")
    d = features[links[0]].shape[0]

    if config.initial_transforms is not None:
        transforms = {key: np.asarray(config.initial_transforms[key], dtype=np.float64) for key in links}
    else:
        transforms = {key: np.zeros((d, d)) for key in links}

    n_gamma = layout.frames - 1
    params = ModelParams(
        alpha=np.zeros(config.window),
        sigma_s=1.0,
        sigma_t=1.0,
        gamma=np.ones(n_gamma),
        window=config.window,
    )

    diagnostics: list[IcmDiagnostics] = []
    converged = False
    iterations = 0
    for k in range(config.k_max):
        if k == 0:
            # unit noise scales guard the all-zero initialization
            sigma_s, sigma_t, gamma = 1.0, 1.0, np.ones(n_gamma)
        else:
            sigma_s, sigma_t, gamma = update_variances(
                transforms, features, neighborhoods, params
            )
        alpha = update_ar_coefficients(
            transforms, neighborhoods, config.window, current_alpha=params.alpha
        )
        params = ModelParams(
            alpha=alpha, sigma_s=sigma_s, sigma_t=sigma_t, gamma=gamma, window=config.window
        )

        delta = 0.0
        for (t, i) in links:
            previous = transforms[(t, i)]
            q = assemble_quadratic(t, i, transforms, features, neighborhoods, params)
            if config.init_scheme == "projected" and config.constraint != "unconstrained":
                x0 = _initial_point(unconstrained_solution(q), config.constraint)
            else:
                x0 = _initial_point(previous, config.constraint)
            result = gd_solve(
                x0, q, constraint=config.constraint, eps=config.eps, max_iter=config.gd_max_iter
            )
            transforms[(t, i)] = result.x
            base = float(np.linalg.norm(previous))
            step = float(np.linalg.norm(result.x - previous))
            rel = step / base if base > 0 else (0.0 if step == 0.0 else math.inf)
            delta = max(delta, rel)

        j_val = objective(transforms, features, neighborhoods, params).total
        diagnostics.append(
            IcmDiagnostics(
                iteration=k, objective=j_val, delta=delta, sigma_s=sigma_s, sigma_t=sigma_t
            )
        )
        iterations = k + 1
        if delta < config.eps:
            converged = True
            break

    return IcmResult(
        transforms=transforms,
        params=params,
        diagnostics=tuple(diagnostics),
        converged=converged,
        iterations=iterations,
    )


# ---------------------------------------------------------------------------
# outer loop: layout updates interleaved with dynamics


@dataclass(frozen=True)
class LearnConfig:
    bins: int = 40
    window: int = 3
    eps: float = 1e-3
    k_max: int = 50
    j_max: int = 0
    constraint: str = "unconstrained"
    init_scheme: str = "prev"
    gd_max_iter: int = 10_000
    tau: float = 0.5
    lam: float = 0.5
    motion_threshold: float = 0.5

    def icm(self) -> IcmConfig:
        return IcmConfig(
            window=self.window,
            eps=self.eps,
            k_max=self.k_max,
            constraint=self.constraint,
            init_scheme=self.init_scheme,
            gd_max_iter=self.gd_max_iter,
        )


def learn(
    frames,
    config: LearnConfig,
    layout: SwarmLayout | None = None,
    segment_input=None,
    features_map: FeatureMap | None = None,
) -> SwarmModel:
    """End-to-end learner.

    With a known layout (synthetic mode) the layout stays fixed and only the
    dynamics are estimated. With segment input, the swarm layout is
    initialized from moving segments and re-estimated before each dynamics
    round, j_max + 1 rounds in total. Worst-case cost is dominated by the
    per-slot descent solves, O(F * d^3) overall.
    """
    from .features import BinSpec, extract_layout_features
    from . import layout as layout_mod

    if (layout is None) == (segment_input is None):
        raise FaultError("exactly one of layout or segment_input is required")
    spec = BinSpec(bins=config.bins)
    shape = (frames[0].height, frames[0].width)

    if layout is not None:
        if features_map is None:
            features_map = extract_layout_features(frames, layout, spec)
        nbhd = build_neighborhoods(layout, config.window, shape=shape)
        result = icm_learn(features_map, layout, nbhd, config.icm())
        return SwarmModel(
            layout=layout,
            transforms=result.transforms,
            params=result.params,
            constraint=config.constraint,
            diagnostics=result.diagnostics,
        )

    current = layout_mod.init_layout(segment_input, motion_threshold=config.motion_threshold)
    transforms: TransformMap = {}
    result = None
    for _ in range(config.j_max + 1):
        current = layout_mod.update_layout(
            current,
            segment_input,
            transforms,
            frames,
            spec,
            tau=config.tau,
            lam=config.lam,
            motion_threshold=config.motion_threshold,
        )
        feats = extract_layout_features(frames, current, spec)
        nbhd = build_neighborhoods(current, config.window, shape=shape)
        result = icm_learn(feats, current, nbhd, config.icm())
        transforms = result.transforms
    return SwarmModel(
        layout=current,
        transforms=result.transforms,
        params=result.params,
        constraint=config.constraint,
        diagnostics=result.diagnostics,
    )
