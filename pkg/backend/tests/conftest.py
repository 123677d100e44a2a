"""
测试公共夹具
"""

import os
import sys

# 将 backend 目录放到 sys.path 首位，确保优先使用本地 services 包
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from models.field import PeriodicGrid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid_1d():
    return PeriodicGrid(d=1, N=64, L=np.pi)


@pytest.fixture
def grid_2d():
    return PeriodicGrid(d=2, N=32, L=np.pi)


@pytest.fixture
def two_species_config_text():
    return """
[model]
n = 2
d = 1
alpha = 0.5
beta = 0.5
sigma = 1.0, 1.0
A = 2, 1; 1, 2
m = 0.4

[scheme]
dt = 0.001
T = 0.02
N = 128
L = 8.0
snapshot_every = 5

[initial]
profile = gaussian-bumps
centers = -1.0; 1.0
widths = 0.6, 0.6
masses = 1.0, 1.0

[output]
directory = runs/test
"""
