"""Declarative run configuration.

One YAML document drives every pipeline. Keys for physical quantities carry
an explicit unit suffix (``_dbm``, ``_s``, ``_m``, ``_ohm``, ``_f``, ``_a``,
``_v``, ``_sie``, ``_bits``); dimensionless knobs (counts, exponents,
factors, flags) carry none. Unknown keys are rejected, so a key with a
missing or wrong unit suffix fails validation rather than being silently
ignored. dBm values are converted to SI exactly once, here.
"""

import copy
from dataclasses import dataclass

import numpy as np
import yaml

from . import circuit as circ
from .awgn import QuadratureConfig
from .constellation import build_uniform_pam
from .region import Geometry
from .sqp import SolverConfig
from .surrogate import TrainConfig
from .utils import dbm_to_amplitude, dbm_to_watts


class ConfigError(ValueError):
    """Invalid configuration document; ``path`` names the offending key."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


# Schema leaves: (type check, human-readable type name)
_NUM = (_is_number, "number")
_INT = (lambda x: isinstance(x, int) and not isinstance(x, bool), "integer")
_BOOL = (lambda x: isinstance(x, bool), "boolean")
_STR = (lambda x: isinstance(x, str), "string")
_NUMLIST = (
    lambda x: isinstance(x, list) and len(x) > 0 and all(_is_number(v) for v in x),
    "non-empty list of numbers",
)

SCHEMA = {
    "master_seed": _INT,
    "output_dir": _STR,
    "constellation": {
        "size": _INT,
        "peak_power_dbm": _NUM,
    },
    "transmitter": {
        "avg_power_dbm": _NUM,
    },
    "ir_channel": {
        "noise_power_dbm": _NUM,
        "distance_m": _NUM,
        "pathloss_exponent": _NUM,
    },
    "eh_channel": {
        "distance_sp_m": _NUM,
        "distance_lp_m": _NUM,
        "pathloss_exponent": _NUM,
        "rician_k_factor": _NUM,
    },
    "circuit": {
        "antenna_resistance_ohm": _NUM,
        "load_capacitance_f": _NUM,
        "load_resistance_ohm": _NUM,
        "diode_saturation_current_a": _NUM,
        "diode_ideality": _NUM,
        "thermal_voltage_v": _NUM,
        "breakdown_voltage_v": _NUM,
        "breakdown_conductance_sie": _NUM,
        "matching_mode": _STR,
        "matched_power_dbm": _NUM,
        "symbol_duration_s": _NUM,
        "integration_substeps": _INT,
    },
    "surrogate": {
        "hidden_layers": _INT,
        "hidden_units": _INT,
        "learning_rate": _NUM,
        "batch_size": _INT,
        "max_epochs": _INT,
        "patience_epochs": _INT,
        "train_rows": _INT,
        "val_rows": _INT,
        "test_rows": _INT,
        "amp_max_v": _NUM,
    },
    "solver": {
        "max_iterations": _INT,
        "reward_step_size": _NUM,
        "forgetting_factor": _NUM,
        "chain_steps": _INT,
        "i_req_bits": _NUM,
        "trust_cap": _NUM,
        "paper_faithful_steps": _BOOL,
        "reset_direction": _BOOL,
        "step_tol": _NUM,
        "kkt_tol": _NUM,
        "backend": _STR,
    },
    "region": {
        "regime": _STR,
        "symbol_durations_s": _NUMLIST,
        "i_req_list_bits": _NUMLIST,
        "realizations": _INT,
        "eval_steps": _INT,
        "eval_burn_in": _INT,
        "state_grid_points": _INT,
        "eval_substeps": _INT,
        "include_baseline": _BOOL,
    },
    "simulate": {
        "v0_v": _NUM,
        "amplitude_v": _NUM,
        "steady_state": _BOOL,
    },
}

DEFAULTS = {
    "master_seed": 20240601,
    "output_dir": "runs/out",
    "constellation": {"size": 64, "peak_power_dbm": 49.0},
    "transmitter": {"avg_power_dbm": 30.0},
    "ir_channel": {"noise_power_dbm": -80.0, "distance_m": 30.0, "pathloss_exponent": 3.0},
    "eh_channel": {
        "distance_sp_m": 20.0,
        "distance_lp_m": 10.0,
        "pathloss_exponent": 2.0,
        "rician_k_factor": 1.0,
    },
    "circuit": {
        "antenna_resistance_ohm": 50.0,
        "load_capacitance_f": 1.0e-9,
        "load_resistance_ohm": 1.0e4,
        "diode_saturation_current_a": 5.0e-6,
        "diode_ideality": 1.05,
        "thermal_voltage_v": 0.02585,
        "breakdown_voltage_v": 2.0,
        "breakdown_conductance_sie": 1.0e-2,
        "matching_mode": "power-dependent",
        "matched_power_dbm": 4.0,
        "symbol_duration_s": 1.0e-5,
        "integration_substeps": 400,
    },
    "surrogate": {
        "hidden_layers": 5,
        "hidden_units": 7,
        "learning_rate": 5.0e-3,
        "batch_size": 128,
        "max_epochs": 300,
        "patience_epochs": 60,
        "train_rows": 11000,
        "val_rows": 3000,
        "test_rows": 750,
        "amp_max_v": 2.5,
    },
    "solver": {
        "max_iterations": 4000,
        "reward_step_size": 0.1,
        "forgetting_factor": 0.1,
        "chain_steps": 2000,
        "i_req_bits": 3.0,
        "trust_cap": 0.2,
        "paper_faithful_steps": False,
        "reset_direction": False,
        "step_tol": 1.0e-6,
        "kkt_tol": 1.0e-4,
        "backend": "surrogate",
    },
    "region": {
        "regime": "LP",
        "symbol_durations_s": [1.0e-6, 1.0e-5, 1.0e-4],
        "i_req_list_bits": [2.0, 3.0, 3.5],
        "realizations": 100,
        "eval_steps": 10000,
        "eval_burn_in": 500,
        "state_grid_points": 512,
        "eval_substeps": 256,
        "include_baseline": False,
    },
    "simulate": {"v0_v": 0.0, "amplitude_v": 0.0, "steady_state": False},
}


def _validate_node(node, schema, path):
    if not isinstance(node, dict):
        raise ConfigError("expected a mapping", path or "<root>")
    for key in node:
        if key not in schema:
            raise ConfigError(
                "unknown key (check spelling and the unit suffix)",
                f"{path}.{key}" if path else key,
            )
    for key, sub in schema.items():
        here = f"{path}.{key}" if path else key
        if key not in node:
            raise ConfigError("missing required key", here)
        if isinstance(sub, dict):
            _validate_node(node[key], sub, here)
        else:
            check, name = sub
            if not check(node[key]):
                raise ConfigError(f"expected {name}, got {node[key]!r}", here)


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError("unknown key (check spelling and the unit suffix)", here)
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError("expected a mapping", here)
            out[key] = _merge(base[key], val, here)
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    """Validated configuration with SI-converted derived objects."""

    doc: dict

    @property
    def master_seed(self):
        return self.doc["master_seed"]

    @property
    def output_dir(self):
        return self.doc["output_dir"]

    def constellation(self):
        c = self.doc["constellation"]
        return build_uniform_pam(c["size"], dbm_to_amplitude(c["peak_power_dbm"]))

    @property
    def power_budget(self):
        return dbm_to_watts(self.doc["transmitter"]["avg_power_dbm"])

    @property
    def noise_var(self):
        return dbm_to_watts(self.doc["ir_channel"]["noise_power_dbm"])

    def geometry(self, regime=None):
        eh = self.doc["eh_channel"]
        ir = self.doc["ir_channel"]
        regime = (regime or self.doc["region"]["regime"]).upper()
        d_eh = eh["distance_sp_m"] if regime == "SP" else eh["distance_lp_m"]
        return Geometry(
            regime=regime,
            d_ir=ir["distance_m"],
            d_eh=d_eh,
            pathloss_ir=ir["pathloss_exponent"],
            pathloss_eh=eh["pathloss_exponent"],
            rician_k=eh["rician_k_factor"],
        )

    def circuit_params(self):
        c = self.doc["circuit"]
        return circ.CircuitParams(
            r_antenna=c["antenna_resistance_ohm"],
            c_load=c["load_capacitance_f"],
            r_load=c["load_resistance_ohm"],
            i_sat=c["diode_saturation_current_a"],
            ideality=c["diode_ideality"],
            v_thermal=c["thermal_voltage_v"],
            v_breakdown=c["breakdown_voltage_v"],
            g_breakdown=c["breakdown_conductance_sie"],
            matching=c["matching_mode"],
            matched_power=dbm_to_watts(c["matched_power_dbm"]),
            symbol_duration=c["symbol_duration_s"],
            substeps=c["integration_substeps"],
        )

    def train_config(self, seed_offset=0):
        s = self.doc["surrogate"]
        return TrainConfig(
            hidden_layers=s["hidden_layers"],
            hidden_units=s["hidden_units"],
            learning_rate=s["learning_rate"],
            batch_size=s["batch_size"],
            epochs=s["max_epochs"],
            patience=s["patience_epochs"],
            n_train=s["train_rows"],
            n_val=s["val_rows"],
            n_test=s["test_rows"],
            seed=(self.master_seed + seed_offset) % 2**32,
        )

    @property
    def amp_max(self):
        return self.doc["surrogate"]["amp_max_v"]

    @property
    def dataset_rows(self):
        s = self.doc["surrogate"]
        return s["train_rows"] + s["val_rows"] + s["test_rows"]

    def solver_config(self):
        s = self.doc["solver"]
        return SolverConfig(
            n_max=s["max_iterations"],
            gamma=s["reward_step_size"],
            alpha=s["forgetting_factor"],
            chain_steps=s["chain_steps"],
            step_tol=s["step_tol"],
            kkt_tol=s["kkt_tol"],
            trust_cap=s["trust_cap"],
            paper_faithful_steps=s["paper_faithful_steps"],
            reset_direction=s["reset_direction"],
            quadrature=QuadratureConfig(),
        )


def physics_report(cfg: RunConfig):
    """Sanity findings beyond schema checks: (errors, warnings)."""
    errors = []
    warnings_ = []
    doc = cfg.doc
    c = cfg.constellation()
    s = doc["constellation"]["size"]
    log2s = float(np.log2(s))
    i_req = doc["solver"]["i_req_bits"]
    if i_req > log2s:
        errors.append(
            f"solver.i_req_bits = {i_req} exceeds log2(S) = {log2s:.3f} bits"
        )
    for v in doc["region"]["i_req_list_bits"]:
        if v > log2s:
            errors.append(f"region.i_req_list_bits entry {v} exceeds log2(S) = {log2s:.3f}")
    min_power = float((c.amplitudes**2).min())
    if cfg.power_budget < min_power:
        errors.append(
            "transmitter.avg_power_dbm (%.6g W) is below the smallest symbol power "
            "(%.6g W); the average-power constraint is infeasible for this "
            "constellation" % (cfg.power_budget, min_power)
        )
    params = cfg.circuit_params()
    tau = params.r_load * params.c_load
    ratio = params.symbol_duration / tau
    if ratio > 50 or ratio < 0.02:
        warnings_.append(
            "circuit.symbol_duration_s / (R_L*C_L) = %.3g; the harvester memory is "
            "negligible at this ratio" % ratio
        )
    if doc["solver"]["backend"] not in ("surrogate", "circuit"):
        errors.append("solver.backend must be 'surrogate' or 'circuit'")
    if doc["region"]["regime"].upper() not in ("SP", "LP"):
        errors.append("region.regime must be 'SP' or 'LP'")
    if doc["region"]["realizations"] < 1:
        errors.append("region.realizations must be >= 1")
    return errors, warnings_


def load_config(path=None, overrides=None) -> RunConfig:
    """Load, merge and validate a config document.

    ``overrides`` are (dotted.key, value) pairs applied after the file; values
    are parsed as YAML scalars.
    """
    doc = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            try:
                user = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                mark = getattr(exc, "problem_mark", None)
                where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
                raise ConfigError(f"YAML parse failure{where}: {exc}")
        if user is None:
            user = {}
        if not isinstance(user, dict):
            raise ConfigError("the config document must be a mapping")
        doc = _merge(doc, user)
    for key, raw in overrides or []:
        value = yaml.safe_load(raw)
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError("unknown key (check spelling and the unit suffix)", key)
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError("unknown key (check spelling and the unit suffix)", key)
        node[parts[-1]] = value
    _validate_node(doc, SCHEMA, "")
    cfg = RunConfig(doc=doc)
    errors, _ = physics_report(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg
