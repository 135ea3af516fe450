"""Scenarios: material data, flow rule and a body-force program ``b(x, t) = s(t) shape(x)``."""
from dataclasses import dataclass, field

import numpy as np

from .elasticity import ElasticTensor, HardeningMap
from .flow_rules import NortonHoff
from .grid import Grid


def _ramp(t, t_end):
    return np.asarray(t, dtype=float) / t_end


def _load_unload(t, t_end):
    return 1.0 - np.abs(2.0 * np.asarray(t, dtype=float) / t_end - 1.0)


def _hold(t, t_end):
    return np.ones_like(np.asarray(t, dtype=float))


def _zero(t, t_end):
    return np.zeros_like(np.asarray(t, dtype=float))


def _shape_uniaxial(grid):
    b = np.zeros((grid.n_nodes, 3))
    b[:, 0] = 1.0
    return b


def _shape_shear(grid):
    y = grid.coords[:, 1] - grid.origin[1]
    b = np.zeros((grid.n_nodes, 3))
    b[:, 0] = np.sin(2.0 * np.pi * y / grid.lengths[1])
    return b


# name -> (spatial shape, time profile, breakpoints as fractions of T_e)
PRESETS = {
    "zero": (_shape_uniaxial, _zero, ()),
    "uniaxial_ramp": (_shape_uniaxial, _ramp, ()),
    "shear_ramp": (_shape_shear, _ramp, ()),
    "load_unload": (_shape_uniaxial, _load_unload, (0.5,)),
    "hold": (_shape_uniaxial, _hold, ()),
}


@dataclass
class Scenario:
    grid: Grid
    tensor: ElasticTensor
    hardening: HardeningMap
    rule: object = field(default_factory=NortonHoff)
    c1: float = 0.1
    preset: str = "uniaxial_ramp"
    amplitude: float = 1.0
    t_end: float = 1.0

    def __post_init__(self):
        if self.c1 < 0:
            raise ValueError("c1 must be non-negative")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown load preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if self.tensor.grid != self.grid:
            raise ValueError("elastic tensor lives on a different grid")

    @property
    def load_shape(self):
        return self.amplitude * PRESETS[self.preset][0](self.grid)

    def load_factor(self, t):
        return PRESETS[self.preset][1](t, self.t_end)

    @property
    def breakpoints(self):
        return tuple(f * self.t_end for f in PRESETS[self.preset][2])

    def body_force(self, t):
        return float(self.load_factor(t)) * self.load_shape

    def slab_factor(self, t0, t1):
        """Slab average of the time profile by 2-point Gauss quadrature."""
        mid, half = 0.5 * (t0 + t1), 0.5 * (t1 - t0)
        x = half / np.sqrt(3.0)
        return float(0.5 * (self.load_factor(mid - x) + self.load_factor(mid + x)))

    def with_rule(self, rule):
        return Scenario(self.grid, self.tensor, self.hardening, rule, self.c1,
                        self.preset, self.amplitude, self.t_end)


def default_scenario(n=8, preset="uniaxial_ramp", amplitude=1.0, c1=0.1, k_iso=0.1,
                     rule=None, lam=1.0, mu=1.0, t_end=1.0):
    grid = Grid.box(n)
    return Scenario(grid, ElasticTensor(grid, lam, mu), HardeningMap.isotropic(k_iso),
                    NortonHoff() if rule is None else rule, c1, preset, amplitude, t_end)
