"""Shared desk-scale factories for microgrid model tests."""

import numpy as np
import pytest

from mgmpc.forecast import AUTOREGRESSIVE, ProcessSpec, ScenarioFan, generate_fan
from mgmpc.mgopt import MgCostWeights, MgSpec, NetworkSpec


def default_weights(**overrides) -> MgCostWeights:
    """Cost weights of the reference four-microgrid study."""
    values = dict(
        res_deviation=[1.0],
        storage_use=[0.2236],
        soft_energy=[1000.0],
        conv_fixed=[0.1178],
        conv_linear=[0.751],
        conv_quadratic=[0.0693],
        switching=[0.1],
        sharing=0.05,
        trade_price=0.5,
        trade_fee=0.1,
    )
    values.update(overrides)
    return MgCostWeights(**values)


def default_spec(**overrides) -> MgSpec:
    """Unit bounds of the reference study (one unit of each kind)."""
    values = dict(
        n_conventional=1,
        n_storage=1,
        n_res=1,
        n_loads=1,
        p_t_min=[0.4],
        p_t_max=[1.0],
        p_s_min=[-1.0],
        p_s_max=[1.0],
        p_r_min=[0.0],
        p_r_max=[2.0],
        x_min=[0.2],
        x_max=[6.0],
        p_g_min=-1.0,
        p_g_max=1.0,
        droop_conventional=[1.0],
        droop_storage=[1.0],
        cost=default_weights(),
        gamma=0.95,
        ts=0.5,
    )
    values.update(overrides)
    return MgSpec(**values)


def two_mg_network(susceptance=20.0) -> NetworkSpec:
    return NetworkSpec(
        n_mgs=2,
        lines=((0, 1),),
        susceptances=[susceptance],
        p_e_min=[-1.0],
        p_e_max=[1.0],
        transmission_cost=[0.1],
    )


def ring_network(n=4, susceptance=20.0) -> NetworkSpec:
    lines = tuple((i, (i + 1) % n) for i in range(n))
    return NetworkSpec(
        n_mgs=n,
        lines=lines,
        susceptances=[susceptance] * n,
        p_e_min=[-1.0] * n,
        p_e_max=[1.0] * n,
        transmission_cost=[0.1, 0.2, 0.3, 0.6][:n],
    )


def desk_fan(n, horizon, seed, res_level=0.8, load_level=-0.5, stddev=0.15):
    """Two-signal fan (renewable availability, load) for desk instances."""
    res = ProcessSpec(
        kind=AUTOREGRESSIVE,
        mean_profile=(res_level,),
        ar_coefficients=(0.7,),
        residual_stddev=stddev,
        clamp_range=(0.0, 2.0),
    )
    load = ProcessSpec(
        kind=AUTOREGRESSIVE,
        mean_profile=(load_level,),
        ar_coefficients=(0.7,),
        residual_stddev=stddev,
        clamp_range=(-2.0, 0.0),
    )
    fr = generate_fan(res, res_level, n, horizon, seed)
    fl = generate_fan(load, load_level, n, horizon, seed + 7919)
    return ScenarioFan(np.concatenate([fr.values, fl.values], axis=2))
