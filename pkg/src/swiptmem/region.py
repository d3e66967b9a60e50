"""Rate-power-region sweeps over fading realizations, symbol durations and rate targets.

A sweep samples one channel pair per realization, solves the input-distribution
problem for every (symbol duration, required rate) cell, and re-evaluates each
solution on the direct circuit backend so the reported power never inherits
surrogate bias. The memoryless baseline replaces the chain objective with the
steady-state power of each symbol (the infinite-symbol-duration limit); its
distribution does not depend on the symbol duration, but its re-evaluation does.
"""

import multiprocessing
from dataclasses import dataclass, field, replace

import numpy as np

from . import chain as chn
from . import circuit as circ
from . import sqp
from .awgn import IrChannel
from .constellation import Constellation
from .utils import substream


@dataclass(frozen=True)
class Geometry:
    """Link distances and fading parameters for one power regime."""

    regime: str  # "SP" (small input power) or "LP" (large input power)
    d_ir: float = 30.0
    d_eh: float = 10.0
    pathloss_ir: float = 3.0
    pathloss_eh: float = 2.0
    rician_k: float = 1.0

    def __post_init__(self):
        if self.d_ir <= 0 or self.d_eh <= 0:
            raise ValueError("distances must be > 0")
        if self.rician_k < 0:
            raise ValueError("rician_k must be >= 0")

    @classmethod
    def for_regime(cls, regime: str, **kw):
        regime = regime.upper()
        if regime == "SP":
            return cls(regime="SP", d_eh=kw.pop("d_eh", 20.0), **kw)
        if regime == "LP":
            return cls(regime="LP", d_eh=kw.pop("d_eh", 10.0), **kw)
        raise ValueError(f"unknown regime {regime!r}")


def sample_channels(geo: Geometry, rng: np.random.Generator):
    """Draw one (h_I, h_E) pair of real amplitude gains.

    The IR gain is Rayleigh with ``E[h^2]`` equal to the pathloss; the EH gain
    is a real Rician construction (line-of-sight term plus half-variance
    scatter), clamped nonnegative.
    """
    g1, g2 = rng.standard_normal(2)
    h_i = np.sqrt(geo.d_ir ** (-geo.pathloss_ir)) * np.sqrt(0.5 * (g1**2 + g2**2))
    k = geo.rician_k
    los = np.sqrt(k / (k + 1.0))
    scatter = np.sqrt(1.0 / (2.0 * (k + 1.0))) * rng.standard_normal()
    h_e = np.sqrt(geo.d_eh ** (-geo.pathloss_eh)) * max(0.0, los + scatter)
    return float(h_i), float(h_e)


@dataclass
class RegionPoint:
    """One solved sweep cell plus its circuit-verified average power."""

    regime: str
    t_symbol: float
    i_req: float
    mutual_info: float
    bit_rate: float
    avg_power: float
    realization: int
    scheme: str  # "proposed" or "baseline"
    feasible: bool
    theta: np.ndarray


@dataclass
class SweepAssets:
    """Everything a sweep worker needs besides the realization index."""

    constellation: Constellation
    circuit_params: circ.CircuitParams
    geometry: Geometry
    noise_var: float
    power_budget: float
    amp_max: float  # surrogate training envelope range; also the state ceiling anchor
    surrogates: dict = field(default_factory=dict)  # T -> (next-state net, reward net)
    backend: str = "surrogate"


@dataclass
class SweepGrid:
    t_list: list
    i_req_list: list
    n_realizations: int = 100
    eval_steps: int = 10000
    eval_burn_in: int = 500
    state_grid_points: int = 512
    eval_substeps: int = 256
    include_baseline: bool = False
    include_proposed: bool = True
    solver: sqp.SolverConfig = field(default_factory=sqp.SolverConfig)


def _steady_state_rewards(params, received_amps):
    """Per-symbol steady-state power, deduplicated over envelope magnitudes."""
    mags = np.abs(np.asarray(received_amps, dtype=float))
    uniq, inverse = np.unique(mags, return_inverse=True)
    powers = np.array([circ.steady_state_response(params, a).avg_power for a in uniq])
    return powers[inverse]


def _run_realization(args):
    assets, grid, master_seed, realization = args
    c = assets.constellation
    geo = assets.geometry
    rng_ch = substream(master_seed, "region", geo.regime, "channel", realization)
    h_i, h_e = sample_channels(geo, rng_ch)
    channel = IrChannel(gain=h_i, noise_var=assets.noise_var)

    points = []
    baseline_thetas = {}
    if grid.include_baseline:
        # The baseline objective ignores the symbol duration, so solve it once
        # per required rate and re-evaluate under every duration below.
        q = _steady_state_rewards(assets.circuit_params, h_e * c.amplitudes)
        for i_req in grid.i_req_list:
            spec = sqp.ProblemSpec(
                constellation=c,
                channel=channel,
                i_req=i_req,
                power_budget=assets.power_budget,
                model=sqp.ExactObjective.linear(q),
            )
            rng_b = substream(master_seed, "region", geo.regime, "baseline", realization, i_req)
            baseline_thetas[i_req] = sqp.solve(spec, replace(grid.solver, n_max=min(grid.solver.n_max, 200)), rng_b)

    for t_symbol in grid.t_list:
        params_t = assets.circuit_params.with_duration(t_symbol)
        eval_model = chn.make_circuit_model(
            params_t,
            c,
            h_e,
            amp_max=assets.amp_max,
            grid_points=grid.state_grid_points,
            substeps=grid.eval_substeps,
        )
        model = None
        if grid.include_proposed:
            if assets.backend == "surrogate":
                m_next, m_reward = assets.surrogates[t_symbol]
                model = chn.make_surrogate_model(
                    m_next, m_reward, params_t, c, h_e, assets.amp_max,
                    grid_points=grid.state_grid_points,
                )
            else:
                model = eval_model

        for i_req in grid.i_req_list:
            if grid.include_proposed:
                spec = sqp.ProblemSpec(
                    constellation=c,
                    channel=channel,
                    i_req=i_req,
                    power_budget=assets.power_budget,
                    model=model,
                )
                rng_s = substream(master_seed, "region", geo.regime, "solve",
                                  realization, t_symbol, i_req)
                sol = sqp.solve(spec, grid.solver, rng_s)
                rng_e = substream(master_seed, "region", geo.regime, "eval",
                                  realization, t_symbol, i_req)
                p_eval = chn.evaluate_average_reward(
                    eval_model, sol.theta, grid.eval_steps, rng_e, burn_in=grid.eval_burn_in
                )
                points.append(
                    RegionPoint(
                        regime=geo.regime,
                        t_symbol=t_symbol,
                        i_req=i_req,
                        mutual_info=sol.mutual_info,
                        bit_rate=sol.mutual_info / t_symbol,
                        avg_power=p_eval,
                        realization=realization,
                        scheme="proposed",
                        feasible=sol.mutual_info >= i_req - 1e-3,
                        theta=sol.theta,
                    )
                )
            if grid.include_baseline:
                bsol = baseline_thetas[i_req]
                rng_e = substream(master_seed, "region", geo.regime, "eval-baseline",
                                  realization, t_symbol, i_req)
                p_base = chn.evaluate_average_reward(
                    eval_model, bsol.theta, grid.eval_steps, rng_e, burn_in=grid.eval_burn_in
                )
                points.append(
                    RegionPoint(
                        regime=geo.regime,
                        t_symbol=t_symbol,
                        i_req=i_req,
                        mutual_info=bsol.mutual_info,
                        bit_rate=bsol.mutual_info / t_symbol,
                        avg_power=p_base,
                        realization=realization,
                        scheme="baseline",
                        feasible=bsol.mutual_info >= i_req - 1e-3,
                        theta=bsol.theta,
                    )
                )
    return points


def trace_region(assets: SweepAssets, grid: SweepGrid, master_seed: int,
                 workers: int = 1) -> list:
    """Run the sweep; results are merged deterministically by point key."""
    if not grid.t_list or not grid.i_req_list:
        raise ValueError("the sweep grid must not be empty")
    jobs = [(assets, grid, master_seed, r) for r in range(grid.n_realizations)]
    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers) as pool:
            chunks = pool.map(_run_realization, jobs)
    else:
        chunks = [_run_realization(j) for j in jobs]
    points = [p for chunk in chunks for p in chunk]
    points.sort(key=lambda p: (p.scheme, p.realization, p.t_symbol, p.i_req))
    return points


def baseline_memoryless(assets: SweepAssets, grid: SweepGrid, master_seed: int,
                        workers: int = 1) -> list:
    """Sweep only the memoryless baseline scheme."""
    grid = replace(grid, include_baseline=True, include_proposed=False)
    return trace_region(assets, grid, master_seed, workers)


def average_frontier(points, scheme="proposed"):
    """Mean power/rate per (T, I_req) cell over the realizations present in all cells."""
    cells = {}
    by_real = {}
    for p in points:
        if p.scheme != scheme or not p.feasible:
            continue
        cells.setdefault((p.t_symbol, p.i_req), []).append(p)
        by_real.setdefault(p.realization, set()).add((p.t_symbol, p.i_req))
    all_cells = set(cells)
    common = {r for r, seen in by_real.items() if seen == all_cells}
    out = {}
    for key, plist in cells.items():
        rows = [p for p in plist if p.realization in common]
        if rows:
            out[key] = {
                "avg_power": float(np.mean([p.avg_power for p in rows])),
                "mutual_info": float(np.mean([p.mutual_info for p in rows])),
                "bit_rate": float(np.mean([p.bit_rate for p in rows])),
                "count": len(rows),
            }
    return out


REGION_CSV_HEADER = "regime,T_s,I_req_bits,I_bits,rate_bps,avg_power_W,realization"


def write_region_csv(points, fh):
    fh.write(REGION_CSV_HEADER + "\n")
    for p in points:
        fh.write(
            "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n"
            % (p.regime, p.t_symbol, p.i_req, p.mutual_info, p.bit_rate,
               p.avg_power, p.realization)
        )


def write_distribution_csv(constellation, theta, fh):
    fh.write("symbol_index,amplitude_V,probability\n")
    for i, (a, t) in enumerate(zip(constellation.amplitudes, theta)):
        fh.write("%d,%.17g,%.17g\n" % (i, a, t))
