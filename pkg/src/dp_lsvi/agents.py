"""Optimistic least-squares value iteration learners for linear MDPs.

Three modes share one training loop:

``dp_lsvi_ucb_pp``
    variance-weighted ridge regression on privatised statistics, rare
    switching, optimistic and pessimistic tables.
``lsvi_ucb_pp``
    the same recursions with every noise term removed.
``lsvi_ucb``
    unweighted ridge regression with a Hoeffding bonus, replanning every
    episode (see :func:`run_lsvi_ucb_baseline`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import dp_mechanisms as dpm
from ._validation import check_positive, check_spec, check_unit_interval
from .linear_mdp import LinearMdpSpec, greedy_policy, per_episode_regret, sample_episode

MODES = ("dp_lsvi_ucb_pp", "lsvi_ucb_pp", "lsvi_ucb")
MODE_ALIASES = {"dp": "dp_lsvi_ucb_pp", "pp": "lsvi_ucb_pp", "ucb": "lsvi_ucb"}


class StateCorruptionError(RuntimeError):
    """A Gram matrix lost positive definiteness."""


class UtilityEventFailure(StateCorruptionError):
    """Injected noise exceeded the regulariser and broke positive definiteness."""


@dataclass(frozen=True)
class Radii:
    beta_hat: float
    beta_check: float
    beta_bar: float
    beta_bern: float


@dataclass(frozen=True)
class WeightTriple:
    w_hat: np.ndarray
    w_check: np.ndarray
    w_bar: np.ndarray


@dataclass(frozen=True)
class VarianceRecord:
    v_bar: float
    E: float
    D: float
    sigma: float
    sigma_bar: float


@dataclass(frozen=True)
class AgentConfig:
    """Everything a training run needs besides the environment and seed.

    ``variance_scale`` multiplies the three cubic-in-``d`` constants of the
    variance correction (the ``sigma_bar`` floor term and both parts of
    ``D``); 1.0 reproduces the algorithm as written.
    ``gram_noise`` selects how the Gram perturbation enters: ``"release"``
    adds fresh noise to the exact regularised Gram matrix at every episode,
    ``"accumulate"`` sums a new perturbation into the running matrix.
    ``value_clip="remaining"`` caps stage-``h`` values at the remaining
    horizon ``H - h`` instead of ``H``; both keep every table in ``[0, H]``.
    """

    mode: str
    radii: Radii
    lambda_tilde: float
    delta: float = 0.05
    radius_multiplier: float = 1.0
    variance_scale: float = 1.0
    noise: dpm.NoiseCalibration | None = None
    noise_scale: float = 1.0
    noise_reuse: str = "fresh"
    gram_noise: str = "release"
    value_clip: str = "remaining"
    delta_prime: float | None = None
    check_invariants: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        for name in ("beta_hat", "beta_check", "beta_bar", "beta_bern"):
            check_positive(name, getattr(self.radii, name))
        check_positive("lambda_tilde", self.lambda_tilde)
        check_positive("variance_scale", self.variance_scale)
        if self.mode == "dp_lsvi_ucb_pp" and self.noise is None:
            raise ValueError("dp mode requires a NoiseCalibration")
        if self.mode != "dp_lsvi_ucb_pp" and self.noise is not None:
            raise ValueError(f"{self.mode} is non-private and takes no NoiseCalibration")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.noise_reuse not in ("fresh", "once"):
            raise ValueError(f"noise_reuse must be 'fresh' or 'once', got {self.noise_reuse!r}")
        if self.gram_noise not in ("release", "accumulate"):
            raise ValueError(f"gram_noise must be 'release' or 'accumulate', got {self.gram_noise!r}")
        if self.value_clip not in ("remaining", "H"):
            raise ValueError(f"value_clip must be 'remaining' or 'H', got {self.value_clip!r}")

    def cap(self, h, H) -> float:
        """Upper clip for stage ``h`` (zero-based): remaining horizon or ``H``."""
        return float(H - h) if self.value_clip == "remaining" else float(H)

    @property
    def private(self) -> bool:
        return self.noise is not None and self.noise_scale > 0


@dataclass
class StageState:
    """Learner state for all stages at the start of an episode."""

    gram: np.ndarray            # (H, d, d) exact regularised weighted Gram
    Lambda: np.ndarray          # (H, d, d) matrix the learner uses
    Lambda_at_last_switch: np.ndarray
    targets: np.ndarray         # (H, d, S): sum of sigma_bar^-2 phi, split by next state
    q_hat_table: np.ndarray     # (H, S, A)
    q_check_table: np.ndarray
    k_last: int = 0
    switch_count: int = 0

    @classmethod
    def initial(cls, spec: LinearMdpSpec, lambda_tilde: float, optimistic_init: float | None = None):
        H, d, S, A = spec.H, spec.d, spec.num_states, spec.num_actions
        gram = np.broadcast_to(2.0 * lambda_tilde * np.eye(d), (H, d, d)).copy()
        hi = float(H) if optimistic_init is None else optimistic_init
        return cls(gram=gram, Lambda=gram.copy(), Lambda_at_last_switch=gram.copy(),
                   targets=np.zeros((H, d, S)),
                   q_hat_table=np.full((H, S, A), hi), q_check_table=np.zeros((H, S, A)))

    def values(self, h):
        """Optimistic and pessimistic state values at stage ``h`` (zero past the horizon)."""
        if h >= self.q_hat_table.shape[0]:
            S = self.q_hat_table.shape[1]
            return np.zeros(S), np.zeros(S)
        return self.q_hat_table[h].max(axis=1), self.q_check_table[h].max(axis=1)

    def regression_sums(self, h):
        """``(b_hat, b_check, b_bar)`` for stage ``h`` under the current value tables."""
        v_hat, v_check = self.values(h + 1)
        M = self.targets[h]
        return M @ v_hat, M @ v_check, M @ (v_hat * v_hat)


@dataclass
class RunResult:
    algorithm: str
    seed: int
    K: int
    epsilon: float | None
    delta_prime: float | None
    instant_regret: np.ndarray
    switch_count_so_far: np.ndarray
    variance: dict = field(default_factory=dict)
    q_snapshots: list = field(default_factory=list)
    policies: np.ndarray | None = None
    invariant_violations: dict = field(default_factory=dict)
    aborted: bool = False
    abort_reason: str = ""
    config: AgentConfig | None = None
    final_state: StageState | None = None

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.instant_regret)

    @property
    def switch_count(self) -> int:
        return int(self.switch_count_so_far[-1]) if len(self.switch_count_so_far) else 0

    @property
    def total_violations(self) -> int:
        return sum(self.invariant_violations.values())


# -- building blocks ----------------------------------------------------------

def compute_confidence_radii(d, H, K, L, lambda_tilde, delta, multiplier=1.0) -> Radii:
    """Explicit forms of the four confidence radii, scaled by ``multiplier``."""
    for name, v in (("d", d), ("H", H), ("K", K), ("L", L), ("lambda_tilde", lambda_tilde),
                    ("multiplier", multiplier)):
        check_positive(name, v)
    check_unit_interval("delta", delta)
    ratio = H * K ** 4 * L ** 2 * d / (delta * lambda_tilde)
    log_term = abs(math.log(ratio))
    ridge = math.sqrt(d * lambda_tilde)
    beta_hat = H * L * ridge + math.sqrt(d ** 3 * H ** 2) * log_term
    beta_bar = H ** 2 * L ** 2 * ridge + math.sqrt(d ** 3 * H ** 4) * log_term
    beta_bern = H * L * ridge + math.sqrt(d) * math.log1p(ratio)
    m = multiplier
    return Radii(m * beta_hat, m * beta_hat, m * beta_bar, m * beta_bern)


def hoeffding_radius(d, H, K, delta, multiplier=1.0) -> float:
    """``d H sqrt(log(2 d K H / delta))`` bonus scale of the unweighted baseline."""
    check_positive("multiplier", multiplier)
    return multiplier * d * H * math.sqrt(math.log(2.0 * d * K * H / delta))


def _cholesky(Lambda, what="Lambda"):
    try:
        return np.linalg.cholesky(Lambda)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(Lambda)
        raise StateCorruptionError(
            f"{what} is not positive definite (smallest eigenvalue {eig[0]:.6g})") from None


def _chol_solve(chol, b):
    y = solve_triangular(chol, b, lower=True, check_finite=False)
    return solve_triangular(chol.T, y, lower=False, check_finite=False)


def _inv_norms(chol, phis):
    """``sqrt(phi^T Lambda^-1 phi)`` for each row of ``phis``."""
    X = solve_triangular(chol, np.atleast_2d(phis).T, lower=True, check_finite=False)
    return np.sqrt(np.einsum("ij,ij->j", X, X))


def inverse_norm(phi, Lambda) -> float:
    return float(_inv_norms(_cholesky(Lambda), phi)[0])


def compute_weights(Lambda, b_hat, b_check, b_bar, noise=None, chol=None) -> WeightTriple:
    """Solve ``Lambda x = b + noise`` for the three regression targets."""
    if chol is None:
        chol = _cholesky(Lambda)
    rhs = np.column_stack([b_hat, b_check, b_bar]).astype(float)
    if noise is not None:
        rhs = rhs + np.column_stack(noise)
    x = _chol_solve(chol, rhs)
    resid = np.abs(Lambda @ x - rhs).max()
    if resid > 1e-8 * max(1.0, np.abs(rhs).max()) or not np.isfinite(x).all():
        raise StateCorruptionError(f"ill-conditioned solve (residual {resid:.3g})")
    return WeightTriple(x[:, 0], x[:, 1], x[:, 2])


def estimate_variance(w_hat, w_bar, phi, H) -> float:
    """Clipped second moment minus clipped squared mean."""
    second = min(max(float(w_bar @ phi), 0.0), float(H * H))
    first = min(max(float(w_hat @ phi), 0.0), float(H))
    return second - first * first


def _e_term(beta_bar, beta_hat, nrm, H):
    return min(beta_bar * nrm, H * H) + min(2.0 * H * beta_hat * nrm, H * H)


def _d_term(gap, beta_hat, nrm, d, H, scale=1.0):
    cube = scale * d ** 3
    inner = 4.0 * cube * H * H * (gap + 2.0 * beta_hat * nrm)
    return min(max(inner, 0.0), cube * H ** 3)


def _sigmas(v_bar, E, D, H, d, nrm, scale=1.0):
    sigma = math.sqrt(max(v_bar + E + D + H, 0.0))
    return sigma, max(sigma, float(H), 2.0 * scale * d ** 3 * H * H * math.sqrt(nrm))


def compute_E(beta_bar, beta_hat, phi, Lambda, H) -> float:
    return _e_term(beta_bar, beta_hat, inverse_norm(phi, Lambda), H)


def compute_D(w_hat, w_check, beta_hat, phi, Lambda, d, H, scale=1.0) -> float:
    gap = float(w_hat @ phi) - float(w_check @ phi)
    return _d_term(gap, beta_hat, inverse_norm(phi, Lambda), d, H, scale)


def sigma_and_bar(v_bar, E, D, H, d, phi, Lambda, scale=1.0) -> tuple[float, float]:
    return _sigmas(v_bar, E, D, H, d, inverse_norm(phi, Lambda), scale)


def _logdet(chol):
    return 2.0 * float(np.log(np.diag(chol)).sum())


def switch_condition(Lambdas, Lambdas_last) -> bool:
    """True iff some stage's determinant at least doubled since the last switch."""
    for cur, last in zip(Lambdas, Lambdas_last):
        a = _logdet(_cholesky(cur))
        b = _logdet(_cholesky(last))
        # ">=" on a doubling ratio that may be exact; absorb log rounding
        if a >= math.log(2.0) + b - 1e-12 * max(1.0, abs(a)):
            return True
    return False


def update_q_tables(q_hat, q_check, weights: WeightTriple, radii: Radii, rewards, features, Lambda,
                    H, chol=None, cap=None):
    """Clipped monotone refresh of one stage's tables over all ``(s, a)``.

    ``q_hat`` only moves down and stays in ``[0, cap]``; ``q_check`` only moves
    up and stays in ``[0, cap]`` (its new estimate subtracts the bonus).
    ``cap`` defaults to ``H``.
    """
    if chol is None:
        chol = _cholesky(Lambda)
    S, A, d = features.shape
    phis = features.reshape(S * A, d)
    bonus = _inv_norms(chol, phis).reshape(S, A)
    est_hat = rewards + (phis @ weights.w_hat).reshape(S, A) + radii.beta_hat * bonus
    est_check = rewards + (phis @ weights.w_check).reshape(S, A) - radii.beta_check * bonus
    cap = float(H) if cap is None else cap
    new_hat = np.maximum(np.minimum(np.minimum(est_hat, q_hat), cap), 0.0)
    new_check = np.minimum(np.maximum(np.maximum(est_check, q_check), 0.0), cap)
    return new_hat, new_check


def act(q_hat_table, h, s) -> int:
    return int(np.argmax(q_hat_table[h, s]))


def gram_update(Lambda, sigma_bar, phi, K1_noise=None):
    """``Lambda + sigma_bar^-2 phi phi^T (+ K1)``; the result must stay positive definite."""
    new = Lambda + np.outer(phi, phi) / (sigma_bar * sigma_bar)
    if K1_noise is not None:
        new = new + K1_noise
    try:
        np.linalg.cholesky(new)
    except np.linalg.LinAlgError:
        raise UtilityEventFailure(
            f"Gram update lost positive definiteness (smallest eigenvalue "
            f"{np.linalg.eigvalsh(new)[0]:.6g})") from None
    return new


# -- configuration ------------------------------------------------------------

def make_config(mode, spec: LinearMdpSpec, K, *, epsilon=None, rho=None, delta_prime=1e-3,
                delta=0.05, radius_multiplier=1.0, lambda_tilde=None, radii=None, c1=1.0, c2=1.0,
                variance_scale=1.0, noise_scale=1.0, noise_reuse="fresh", gram_noise="release",
                value_clip="remaining", check_invariants=True) -> AgentConfig:
    """Assemble an :class:`AgentConfig`, computing radii and noise constants.

    Non-private modes use ``lambda_tilde`` (default 1.0) as the plain ridge
    parameter and evaluate the radius formulas with a unit noise bound.
    ``dp`` mode takes ``epsilon`` (converted with ``delta_prime``) or ``rho``.
    """
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    noise = None
    if mode == "dp_lsvi_ucb_pp":
        if rho is None:
            if epsilon is None:
                raise ValueError("dp mode needs epsilon or rho")
            rho = dpm.dp_to_zcdp(epsilon, delta_prime)
        noise = dpm.NoiseCalibration(rho, spec.H, K, spec.d, delta, c1, c2)
        lam = noise.lambda_tilde if lambda_tilde is None else lambda_tilde
        L = noise.L
    else:
        lam = 1.0 if lambda_tilde is None else lambda_tilde
        L = 1.0
    if radii is None:
        if mode == "lsvi_ucb":
            beta = hoeffding_radius(spec.d, spec.H, K, delta, radius_multiplier)
            radii = Radii(beta, beta, beta, beta)
        else:
            radii = compute_confidence_radii(spec.d, spec.H, max(K, 1), L, lam, delta, radius_multiplier)
    return AgentConfig(mode=mode, radii=radii, lambda_tilde=lam, delta=delta,
                       radius_multiplier=radius_multiplier, variance_scale=variance_scale,
                       noise=noise, noise_scale=noise_scale, noise_reuse=noise_reuse,
                       gram_noise=gram_noise, value_clip=value_clip,
                       delta_prime=delta_prime if noise else None,
                       check_invariants=check_invariants)


# -- training -----------------------------------------------------------------

class _NoiseSource:
    """Per-(statistic, k, h) noise; identical draws for ``noise_reuse='once'``."""

    def __init__(self, config: AgentConfig, seed: int, d: int):
        self.cal = config.noise
        self.scale = config.noise_scale if config.noise is not None else 0.0
        self.once = config.noise_reuse == "once"
        self.seed = seed
        self.d = d
        self._cache = {}

    def __call__(self, stat, k, h):
        if self.scale == 0:
            return None
        key = (stat, 0, 0) if self.once else (stat, k, h)
        if key in self._cache:
            return self._cache[key]
        rng = dpm.noise_stream(self.seed, *key)
        if stat == dpm.Statistic.GRAM:
            val = self.scale * dpm.sample_goe(self.d, self.cal.rho0, rng)
        else:
            val = self.scale * dpm.sample_gaussian_vector(self.d, self.cal.sigma2(stat), rng)
        if self.once:
            self._cache[key] = val
        return val


def _seed_int(rng):
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    if isinstance(rng, np.random.SeedSequence):
        return int(rng.generate_state(1)[0])
    if rng is None:
        return 0
    raise TypeError("rng must be an integer seed or SeedSequence")


def run_training(spec: LinearMdpSpec, config: AgentConfig, K: int, rng=0) -> RunResult:
    """Train for ``K`` episodes and record exact per-episode regret.

    ``rng`` is an integer master seed: environment transitions and every noise
    release draw from independent counter-based streams derived from it.
    """
    check_spec(spec)
    if config.mode == "lsvi_ucb":
        return run_lsvi_ucb_baseline(spec, K, config.lambda_tilde, config.radii.beta_hat, rng,
                                     config=config, value_clip=config.value_clip)
    seed = _seed_int(rng)
    H, d, S = spec.H, spec.d, spec.num_states
    lam = config.lambda_tilde
    radii = config.radii
    vscale = config.variance_scale
    noise = _NoiseSource(config, seed, d)
    private = noise.scale > 0
    env = dpm.env_stream(seed)
    feats, R = spec.features, spec.rewards
    st = StageState.initial(spec, lam)
    L_noise = config.noise.L if config.noise is not None else 1.0

    viol = {k: 0 for k in ("q_hat_monotone", "q_check_monotone", "q_range", "sigma_bar_floor",
                           "E_range", "D_range", "lambda_floor", "det_ceiling", "weight_norm")}
    regret = np.zeros(K)
    switches = np.zeros(K, dtype=np.int64)
    var = {k: np.full((K, H), np.nan) for k in ("v_bar", "E", "D", "sigma", "sigma_bar")}
    policies = np.zeros((K, H, S), dtype=np.int64)
    snapshots = [(0, st.q_hat_table.copy(), st.q_check_table.copy())]
    w_bound = H * K * L_noise * math.sqrt(2 * d / lam)
    result = RunResult(config.mode, seed, K, None, config.delta_prime, regret, switches,
                       var, snapshots, policies, viol, config=config)
    if config.noise is not None:
        result.epsilon = dpm.zcdp_to_dp(config.noise.rho, config.delta_prime).epsilon

    try:
        for k in range(1, K + 1):
            # Gram matrices used in this episode
            if config.gram_noise == "release" and private:
                for h in range(H):
                    st.Lambda[h] = st.gram[h] + noise(dpm.Statistic.GRAM, k, h)
            elif not private:
                st.Lambda[:] = st.gram
            chols = []
            for h in range(H):
                try:
                    chols.append(_cholesky(st.Lambda[h], f"Lambda[k={k}, h={h}]"))
                except StateCorruptionError as exc:
                    raise UtilityEventFailure(str(exc)) from None
            if config.check_invariants and not private:
                for h in range(H):
                    if np.linalg.eigvalsh(st.Lambda[h])[0] < 2 * lam * (1 - 1e-9):
                        viol["lambda_floor"] += 1
                    if _logdet(chols[h]) > d * math.log(3 * lam + (k - 1) / d) + 1e-9:
                        viol["det_ceiling"] += 1

            switch = switch_condition(st.Lambda, st.Lambda_at_last_switch)

            weights = [None] * H
            for h in reversed(range(H)):
                b_hat, b_check, b_bar = st.regression_sums(h)
                nz = None
                if private:
                    nz = (noise(dpm.Statistic.VALUE_SUM, k, h),
                          noise(dpm.Statistic.PESSIMISTIC_SUM, k, h),
                          noise(dpm.Statistic.SQUARED_VALUE_SUM, k, h))
                w = compute_weights(st.Lambda[h], b_hat, b_check, b_bar, nz, chol=chols[h])
                weights[h] = w
                if config.check_invariants and (not private or _noise_ok(nz, L_noise, H)):
                    if (np.linalg.norm(w.w_hat) > w_bound
                            or np.linalg.norm(w.w_bar) > H * w_bound):
                        viol["weight_norm"] += 1
                if switch:
                    old_hat, old_check = st.q_hat_table[h], st.q_check_table[h]
                    new_hat, new_check = update_q_tables(old_hat, old_check, w, radii, R[h], feats,
                                                         st.Lambda[h], H, chol=chols[h],
                                                         cap=config.cap(h, H))
                    if config.check_invariants:
                        viol["q_hat_monotone"] += int((new_hat > old_hat).sum())
                        viol["q_check_monotone"] += int((new_check < old_check).sum())
                        viol["q_range"] += int(((new_hat < 0) | (new_hat > H)).sum()
                                               + ((new_check < 0) | (new_check > H)).sum())
                    st.q_hat_table[h], st.q_check_table[h] = new_hat, new_check
            if switch:
                st.k_last = k
                st.switch_count += 1
                st.Lambda_at_last_switch = st.Lambda.copy()
                snapshots.append((k, st.q_hat_table.copy(), st.q_check_table.copy()))

            policy = greedy_policy(st.q_hat_table)
            policies[k - 1] = policy
            regret[k - 1] = per_episode_regret(spec, policy)
            switches[k - 1] = st.switch_count

            traj = sample_episode(spec, policy, env)
            for h, (s, a, _r, s_next) in enumerate(traj):
                phi = feats[s, a]
                w = weights[h]
                nrm = float(_inv_norms(chols[h], phi)[0])
                v_bar = estimate_variance(w.w_hat, w.w_bar, phi, H)
                E = _e_term(radii.beta_bar, radii.beta_hat, nrm, H)
                D = _d_term(float(w.w_hat @ phi) - float(w.w_check @ phi), radii.beta_hat, nrm,
                            d, H, vscale)
                sigma, sigma_bar = _sigmas(v_bar, E, D, H, d, nrm, vscale)
                for key, val in zip(("v_bar", "E", "D", "sigma", "sigma_bar"),
                                    (v_bar, E, D, sigma, sigma_bar)):
                    var[key][k - 1, h] = val
                if config.check_invariants:
                    viol["sigma_bar_floor"] += int(sigma_bar < H or sigma_bar < sigma)
                    viol["E_range"] += int(not 0 <= E <= 2 * H * H)
                    viol["D_range"] += int(not 0 <= D <= vscale * d ** 3 * H ** 3)
                st.gram[h] = gram_update(st.gram[h], sigma_bar, phi)
                if private and config.gram_noise == "accumulate":
                    st.Lambda[h] = gram_update(st.Lambda[h], sigma_bar, phi,
                                               noise(dpm.Statistic.GRAM, k, h))
                st.targets[h][:, s_next] += phi / (sigma_bar * sigma_bar)
    except UtilityEventFailure as exc:
        result.aborted = True
        result.abort_reason = f"utility event failure at episode {k}: {exc}"
        done = k - 1
        result.instant_regret = regret[:done]
        result.switch_count_so_far = switches[:done]
        result.policies = policies[:done]
        result.variance = {key: v[:done] for key, v in var.items()}
        result.K = done
    result.final_state = st
    return result


def _noise_ok(nz, L, H):
    if nz is None:
        return True
    return (np.linalg.norm(nz[0]) <= L and np.linalg.norm(nz[1]) <= L
            and np.linalg.norm(nz[2]) <= H * L)


def run_lsvi_ucb_baseline(spec: LinearMdpSpec, K: int, lambda_: float = 1.0, beta: float | None = None,
                          rng=0, config: AgentConfig | None = None, delta: float = 0.05,
                          value_clip: str = "remaining") -> RunResult:
    """Unweighted ridge regression with a Hoeffding bonus, replanning every episode."""
    check_spec(spec)
    check_positive("lambda_", lambda_)
    H, d, S = spec.H, spec.d, spec.num_states
    if beta is None:
        beta = hoeffding_radius(d, H, max(K, 1), delta)
    check_positive("beta", beta)
    if config is None:
        config = AgentConfig("lsvi_ucb", Radii(beta, beta, beta, beta), lambda_, delta=delta,
                             value_clip=value_clip)
    seed = _seed_int(rng)
    env = dpm.env_stream(seed)
    feats, R = spec.features, spec.rewards
    phis = feats.reshape(-1, d)
    gram = np.broadcast_to(lambda_ * np.eye(d), (H, d, d)).copy()
    targets = np.zeros((H, d, S))
    q = np.full((H, S, spec.num_actions), float(H))
    regret = np.zeros(K)
    switches = np.arange(1, K + 1, dtype=np.int64)
    policies = np.zeros((K, H, S), dtype=np.int64)
    for k in range(1, K + 1):
        v_next = np.zeros(S)
        for h in reversed(range(H)):
            chol = _cholesky(gram[h])
            w = _chol_solve(chol, targets[h] @ v_next)
            bonus = _inv_norms(chol, phis).reshape(S, spec.num_actions)
            q[h] = np.minimum(R[h] + (phis @ w).reshape(S, -1) + beta * bonus, config.cap(h, H))
            v_next = q[h].max(axis=1)
        policy = greedy_policy(q)
        policies[k - 1] = policy
        regret[k - 1] = per_episode_regret(spec, policy)
        for h, (s, a, _r, s_next) in enumerate(sample_episode(spec, policy, env)):
            phi = feats[s, a]
            gram[h] += np.outer(phi, phi)
            targets[h][:, s_next] += phi
    return RunResult("lsvi_ucb", seed, K, None, None, regret, switches, {}, [], policies,
                     {}, config=config)


# -- estimator front-end -------------------------------------------------------

class _LsviEstimator(BaseEstimator):
    _mode = None

    def _config(self, spec):
        raise NotImplementedError

    def fit(self, spec, y=None):
        """Train on ``spec`` for ``n_episodes`` episodes."""
        check_spec(spec)
        if self.n_episodes < 0:
            raise ValueError("n_episodes must be >= 0")
        self.config_ = self._config(spec)
        self.result_ = run_training(spec, self.config_, self.n_episodes, self.random_state)
        self.policy_ = (self.result_.policies[-1] if len(self.result_.policies)
                        else np.zeros((spec.H, spec.num_states), dtype=np.int64))
        state = getattr(self.result_, "final_state", None)
        if state is not None:
            self.q_hat_ = state.q_hat_table
            self.q_check_ = state.q_check_table
        self.regret_ = self.result_.cumulative_regret
        return self

    def predict(self, X):
        """Greedy actions for rows ``(stage, state)`` of ``X``."""
        check_is_fitted(self, "policy_")
        X = np.asarray(X, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError("X must have shape (n, 2) with columns (stage, state)")
        return self.policy_[X[:, 0], X[:, 1]]

    def score(self, spec, y=None):
        """Negative mean per-episode regret of the training run."""
        check_is_fitted(self, "result_")
        r = self.result_.instant_regret
        return -float(r.mean()) if len(r) else 0.0


class LSVIUCBPlusPlus(_LsviEstimator):
    """Non-private variance-weighted LSVI-UCB++."""

    def __init__(self, n_episodes=1000, lambda_tilde=1.0, radius_multiplier=1.0, variance_scale=1.0,
                 delta=0.05, random_state=0):
        self.n_episodes = n_episodes
        self.lambda_tilde = lambda_tilde
        self.radius_multiplier = radius_multiplier
        self.variance_scale = variance_scale
        self.delta = delta
        self.random_state = random_state

    def _config(self, spec):
        return make_config("lsvi_ucb_pp", spec, max(self.n_episodes, 1), delta=self.delta,
                           radius_multiplier=self.radius_multiplier, lambda_tilde=self.lambda_tilde,
                           variance_scale=self.variance_scale)


class DPLSVIUCBPlusPlus(_LsviEstimator):
    """Jointly differentially private LSVI-UCB++.

    Give either ``epsilon`` (with ``delta_prime``) or ``rho``.  Leaving
    ``lambda_tilde`` as ``None`` uses the noise-derived regulariser.
    """

    def __init__(self, n_episodes=1000, epsilon=1.0, delta_prime=1e-3, rho=None, delta=0.05,
                 radius_multiplier=1.0, variance_scale=1.0, lambda_tilde=None, c1=1.0, c2=1.0,
                 noise_scale=1.0, noise_reuse="fresh", gram_noise="release", random_state=0):
        self.n_episodes = n_episodes
        self.epsilon = epsilon
        self.delta_prime = delta_prime
        self.rho = rho
        self.delta = delta
        self.radius_multiplier = radius_multiplier
        self.variance_scale = variance_scale
        self.lambda_tilde = lambda_tilde
        self.c1 = c1
        self.c2 = c2
        self.noise_scale = noise_scale
        self.noise_reuse = noise_reuse
        self.gram_noise = gram_noise
        self.random_state = random_state

    def _config(self, spec):
        return make_config("dp", spec, max(self.n_episodes, 1), epsilon=self.epsilon, rho=self.rho,
                           delta_prime=self.delta_prime, delta=self.delta,
                           radius_multiplier=self.radius_multiplier, lambda_tilde=self.lambda_tilde,
                           c1=self.c1, c2=self.c2, variance_scale=self.variance_scale,
                           noise_scale=self.noise_scale, noise_reuse=self.noise_reuse,
                           gram_noise=self.gram_noise)


class LSVIUCB(_LsviEstimator):
    """Hoeffding-bonus LSVI-UCB baseline."""

    def __init__(self, n_episodes=1000, lambda_tilde=1.0, beta=None, radius_multiplier=1.0, delta=0.05,
                 random_state=0):
        self.n_episodes = n_episodes
        self.lambda_tilde = lambda_tilde
        self.beta = beta
        self.radius_multiplier = radius_multiplier
        self.delta = delta
        self.random_state = random_state

    def _config(self, spec):
        cfg = make_config("ucb", spec, max(self.n_episodes, 1), delta=self.delta,
                          radius_multiplier=self.radius_multiplier, lambda_tilde=self.lambda_tilde)
        if self.beta is not None:
            cfg = replace(cfg, radii=Radii(self.beta, self.beta, self.beta, self.beta))
        return cfg
