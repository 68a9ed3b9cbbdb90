"""Shared builders: desk-scale BS sites and parameter-level synthetic targets."""

import math

import numpy as np
import pytest

from uavsense.scene import C0, BsSite, PairTruth


def make_bs(p=8, q=8, r=16, m=64, n=7, scs=30e3, ts=35.677e-6,
            fc=4.9e9, tx_power=1.0, position=(0.0, 0.0, 30.0), panel_azimuth=0.0):
    return BsSite(
        position=np.array(position), panel_azimuth=panel_azimuth,
        carrier_frequency=fc, p=p, q=q, r=r, m=m, n=n,
        scs=scs, symbol_period=ts, tx_power=tx_power,
    )


def param_pair(bs, vartheta, psi, range_m, radial_velocity, alpha=1.0 + 0.0j):
    """PairTruth assembled straight from sensing parameters (no geometry)."""
    theta = math.acos(psi)
    phi = math.acos(vartheta / math.sin(theta))
    return PairTruth(
        elevation=theta, azimuth=phi, vartheta=vartheta, psi=psi,
        range_m=range_m, delay_s=2.0 * range_m / C0,
        radial_velocity=radial_velocity,
        doppler_hz=2.0 * radial_velocity / bs.wavelength,
        alpha=alpha,
    )


@pytest.fixture
def desk_bs():
    return make_bs()


@pytest.fixture
def rng():
    return np.random.default_rng(20250809)
