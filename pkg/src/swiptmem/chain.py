"""Random walk of the harvester state and the likelihood-ratio gradient estimator.

The load voltage at symbol boundaries is a continuous-state Markov chain whose
transitions are driven by the drawn symbols; each transition pays the power
harvested over the interval. The estimator below follows the classic
score-function recursion: a direction accumulator ``f``, a discounted
likelihood-ratio vector ``z`` and a running average-reward estimate.

Backends answer one question: given the current voltage, what are the next
state and the reward for *every* candidate symbol. Both the circuit and the
surrogate backend can precompute those answers on a uniform voltage grid and
interpolate linearly, which turns a chain step into a few array lookups; the
grid is dense enough (sub-millivolt spacing by default) that the
interpolation error is far below the stochastic noise of the estimator.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import circuit as circ
from . import surrogate as surr
from .constellation import sample_symbol, validate_pmf
from .errors import LogicError

# Likelihood ratios for nearly-extinct symbols are clipped to keep the
# estimator variance bounded near the simplex boundary.
LR_PROB_FLOOR = 1e-6


@dataclass(frozen=True)
class ChainState:
    """Load voltage (volts) at a symbol boundary."""

    xi: float


@dataclass(frozen=True)
class EstimatorState:
    """Gradient-direction accumulator, likelihood-ratio vector and reward estimate."""

    f: np.ndarray
    z: np.ndarray
    p_avg: float
    gamma: float
    alpha: float
    steps: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must be in [0, 1)")

    @classmethod
    def fresh(cls, size: int, gamma: float, alpha: float):
        return cls(f=np.zeros(size), z=np.zeros(size), p_avg=0.0,
                   gamma=gamma, alpha=alpha, steps=0)

    def reset_direction(self):
        return replace(self, f=np.zeros_like(self.f), steps=0)


class _InterpolatedTable:
    """Linear interpolation of per-symbol columns over a uniform voltage grid."""

    def __init__(self, grid, next_table, reward_table):
        self.grid = grid
        self.dx = grid[1] - grid[0]
        self.next_table = next_table
        self.reward_table = reward_table

    def lookup(self, xi):
        pos = np.clip(xi, self.grid[0], self.grid[-1])
        t = (pos - self.grid[0]) / self.dx
        i = min(int(t), self.grid.size - 2)
        w = t - i
        nxt = (1 - w) * self.next_table[i] + w * self.next_table[i + 1]
        rwd = (1 - w) * self.reward_table[i] + w * self.reward_table[i + 1]
        return nxt, rwd


class CircuitBackend:
    """Direct circuit simulation for a fixed set of received symbol envelopes.

    ``tabulated=True`` (the default) integrates every (grid voltage, symbol
    magnitude) pair once up front; exact mode integrates on demand and is kept
    for accuracy cross-checks.
    """

    name = "circuit"

    def __init__(self, params: circ.CircuitParams, received_amps, v_ceiling: float,
                 tabulated: bool = True, grid_points: int = 512, substeps=None):
        self.params = params
        self.received_amps = np.asarray(received_amps, dtype=float)
        self.v_ceiling = float(v_ceiling)
        self.substeps = substeps
        self._table = None
        if tabulated:
            self._table = self._build_table(grid_points)

    def _build_table(self, grid_points):
        grid = np.linspace(0.0, self.v_ceiling, grid_points)
        mags = np.abs(self.received_amps)
        uniq, inverse = np.unique(mags, return_inverse=True)
        vv = np.repeat(grid, uniq.size)
        aa = np.tile(uniq, grid.size)
        v_next, reward = circ.simulate_interval_batch(self.params, vv, aa, self.substeps)
        nxt = v_next.reshape(grid.size, uniq.size)[:, inverse]
        rwd = reward.reshape(grid.size, uniq.size)[:, inverse]
        return _InterpolatedTable(grid, nxt, rwd)

    def transitions(self, xi: float):
        if self._table is not None:
            return self._table.lookup(xi)
        v0 = np.full(self.received_amps.size, xi)
        return circ.simulate_interval_batch(
            self.params, v0, np.abs(self.received_amps), self.substeps
        )


class SurrogateBackend:
    """Trained network pair evaluated over the same fixed envelope set.

    Envelopes beyond the training range ``amp_max`` are clipped to the domain
    edge rather than extrapolated. Outputs are clamped to the physical state
    and power ranges.
    """

    name = "surrogate"

    def __init__(self, model_next: surr.MlpParams, model_reward: surr.MlpParams,
                 received_amps, v_ceiling: float, r_load: float, amp_max=None,
                 tabulated: bool = True, grid_points: int = 512):
        amps = np.asarray(received_amps, dtype=float)
        if amp_max is not None:
            amps = np.clip(amps, -amp_max, amp_max)
        self.received_amps = amps
        self.v_ceiling = float(v_ceiling)
        self.power_ceiling = v_ceiling**2 / r_load
        self.model_next = model_next
        self.model_reward = model_reward
        self._table = None
        if tabulated:
            self._table = self._build_table(grid_points)

    def _eval(self, v0, amps):
        nxt = surr.predict_next_state(self.model_next, v0, amps, self.v_ceiling)
        rwd = surr.predict_reward(self.model_reward, v0, amps, self.power_ceiling)
        return nxt, rwd

    def _build_table(self, grid_points):
        grid = np.linspace(0.0, self.v_ceiling, grid_points)
        vv = np.repeat(grid, self.received_amps.size)
        aa = np.tile(self.received_amps, grid.size)
        nxt, rwd = self._eval(vv, aa)
        return _InterpolatedTable(
            grid,
            nxt.reshape(grid.size, -1),
            rwd.reshape(grid.size, -1),
        )

    def transitions(self, xi: float):
        if self._table is not None:
            return self._table.lookup(xi)
        v0 = np.full(self.received_amps.size, xi)
        return self._eval(v0, self.received_amps)


@dataclass(frozen=True)
class EhModel:
    """A backend bound to one EH channel gain; exactly one backend is active."""

    backend: object
    h_gain: float
    variant: str

    @property
    def v_ceiling(self):
        return self.backend.v_ceiling


def make_circuit_model(params, constellation, h_gain, amp_max=None, **kw) -> EhModel:
    amps = h_gain * constellation.amplitudes
    cap = amp_max if amp_max is not None else float(np.max(np.abs(amps)))
    v_ceiling = circ.voltage_ceiling(params, cap)
    backend = CircuitBackend(params, amps, v_ceiling, **kw)
    return EhModel(backend=backend, h_gain=h_gain, variant="circuit")


def make_surrogate_model(model_next, model_reward, params, constellation, h_gain,
                         amp_max, **kw) -> EhModel:
    v_ceiling = circ.voltage_ceiling(params, amp_max)
    backend = SurrogateBackend(model_next, model_reward, h_gain * constellation.amplitudes,
                               v_ceiling, params.r_load, amp_max=amp_max, **kw)
    return EhModel(backend=backend, h_gain=h_gain, variant="surrogate")


def step(model: EhModel, state: ChainState, symbol_index: int):
    """Advance the chain by one symbol.

    Returns the next state, the reward collected for the drawn symbol, and the
    full reward vector (one entry per candidate symbol at the current state).
    """
    nxt, rewards = model.backend.transitions(state.xi)
    if symbol_index < 0 or symbol_index >= rewards.size:
        raise ValueError(f"symbol index {symbol_index} out of range")
    new_state = ChainState(xi=float(np.clip(nxt[symbol_index], 0.0, model.v_ceiling)))
    return new_state, float(rewards[symbol_index]), rewards


def likelihood_ratio_vector(theta, symbol_index: int) -> np.ndarray:
    """Score vector of the transition density: 1/theta_i at the drawn index.

    A drawn symbol cannot have zero probability; ratios for probabilities
    below 1e-6 are clipped at 1e6.
    """
    theta = np.asarray(theta, dtype=float)
    prob = theta[symbol_index]
    if prob == 0.0:
        raise LogicError(f"drawn symbol {symbol_index} has zero probability")
    out = np.zeros_like(theta)
    out[symbol_index] = 1.0 / max(prob, LR_PROB_FLOOR)
    return out


def update_estimator(est: EstimatorState, theta, reward_vector, lr_vector) -> EstimatorState:
    """One estimator update in the canonical order.

    The direction uses the previous likelihood-ratio vector and the previous
    reward estimate; then the reward estimate relaxes toward the expected
    reward of the current state; then the likelihood-ratio vector decays and
    absorbs the new score.
    """
    theta = np.asarray(theta, dtype=float)
    reward_vector = np.asarray(reward_vector, dtype=float)
    expected = float(theta @ reward_vector)
    f_new = est.f + reward_vector + (expected - est.p_avg) * est.z
    p_new = est.p_avg + est.gamma * (expected - est.p_avg)
    z_new = est.alpha * est.z + np.asarray(lr_vector, dtype=float)
    return replace(est, f=f_new, z=z_new, p_avg=p_new, steps=est.steps + 1)


@dataclass
class GradientEstimate:
    p_avg: float
    direction: np.ndarray
    estimator: EstimatorState
    state: ChainState


def estimate_gradient(model: EhModel, theta, n_steps: int, est: EstimatorState,
                      state: ChainState, rng: np.random.Generator) -> GradientEstimate:
    """Run ``n_steps`` of draw / step / update and return the direction estimate.

    The direction is the accumulator divided by the number of steps it has
    absorbed (which can exceed ``n_steps`` when the accumulator persists
    across calls).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not validate_pmf(theta):
        raise ValueError("not a valid pmf")
    theta = np.asarray(theta, dtype=float)
    cdf = np.cumsum(theta)
    cdf[-1] = 1.0
    draws = rng.random(n_steps)
    for u in draws:
        nxt, rewards = model.backend.transitions(state.xi)
        idx = int(np.searchsorted(cdf, u, side="right"))
        while theta[idx] == 0.0:
            idx -= 1
        lr_vec = likelihood_ratio_vector(theta, idx)
        est = update_estimator(est, theta, rewards, lr_vec)
        state = ChainState(xi=float(np.clip(nxt[idx], 0.0, model.v_ceiling)))
    direction = est.f / max(est.steps, 1)
    return GradientEstimate(p_avg=est.p_avg, direction=direction, estimator=est, state=state)


def evaluate_average_reward(model: EhModel, theta, n_steps: int,
                            rng: np.random.Generator,
                            state: ChainState | None = None,
                            burn_in: int = 0) -> float:
    """Empirical average reward under a fixed pmf.

    Averages the state-conditional expected reward (the pmf-weighted reward
    vector) along the walk, which converges to the same limit as the realized
    rewards with lower variance.
    """
    if not validate_pmf(theta):
        raise ValueError("not a valid pmf")
    theta = np.asarray(theta, dtype=float)
    state = state or ChainState(xi=0.0)
    cdf = np.cumsum(theta)
    cdf[-1] = 1.0
    total = 0.0
    draws = rng.random(n_steps + burn_in)
    for k, u in enumerate(draws):
        nxt, rewards = model.backend.transitions(state.xi)
        if k >= burn_in:
            total += float(theta @ rewards)
        idx = int(np.searchsorted(cdf, u, side="right"))
        while theta[idx] == 0.0:
            idx -= 1
        state = ChainState(xi=float(np.clip(nxt[idx], 0.0, model.v_ceiling)))
    return total / n_steps
