"""
测试配置解析、快照编解码与诊断 CSV
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pandas as pd
import pytest

from core.errors import ParseError, SnapshotFormatError, ValidationError
from models.field import PeriodicGrid, ScalarField
from models.particle import LevyConvention
from models.run_config import InitialProfile
from models.simulation import PositivityPolicy, State
from services.config_parser import parse_config
from services.model_service import model_service
from services.snapshot_io import (
    SnapshotObserver, decode_snapshot, encode_snapshot, list_snapshots, read_snapshot,
    snapshot_name, write_manifest, write_snapshot
)
from services.solver_service import solver_service


MINIMAL = """
[model]
n = 1
d = 1
alpha = 0.5
beta = 0.5
sigma = 1.0
A = 1.0
m = 0.4

[scheme]
dt = 0.01
T = 0.1
"""


# ---------- 配置 ----------

def test_minimal_config_uses_defaults():
    config = parse_config(MINIMAL)
    assert config.system.pi == [1.0]
    assert config.scheme.grid_points == 128
    assert config.scheme.positivity_policy == PositivityPolicy.MONITOR
    assert config.initial.profile == InitialProfile.GAUSSIAN_BUMPS
    assert config.particles.convention == LevyConvention.GENERATOR


def test_full_config(two_species_config_text):
    config = parse_config(two_species_config_text)
    assert config.system.A == [[2.0, 1.0], [1.0, 2.0]]
    assert config.scheme.grid_points == 128 and config.scheme.half_length == 8.0
    assert config.initial.centers == [[-1.0], [1.0]]
    assert config.output.directory == "runs/test"
    assert config.source["scheme"]["N"] == "128"


def test_invariant_measure_is_filled_in(two_species_config_text):
    config = parse_config(two_species_config_text, ["model.A=1, 2; 1, 1"])
    np.testing.assert_allclose(config.system.pi, [1.0, 2.0])


def test_alpha_out_of_range_is_rejected(two_species_config_text):
    with pytest.raises(ValidationError) as info:
        parse_config(two_species_config_text, ["model.alpha=1.5"])
    assert info.value.exit_code == 1
    assert any(issue.code == "alpha_out_of_range" and issue.reference == "coefficients" for issue in info.value.issues)


def test_unknown_key_reports_line():
    text = MINIMAL.replace("m = 0.4", "m = 0.4\ngamma = 2")
    with pytest.raises(ParseError) as info:
        parse_config(text)
    assert info.value.line == 10
    assert info.value.exit_code == 1


def test_unknown_section_and_duplicates():
    with pytest.raises(ParseError):
        parse_config(MINIMAL + "\n[solver]\nx = 1\n")
    with pytest.raises(ParseError):
        parse_config(MINIMAL.replace("dt = 0.01", "dt = 0.01\ndt = 0.02"))


def test_missing_required_section():
    with pytest.raises(ParseError):
        parse_config(MINIMAL.split("[scheme]")[0])


def test_bad_enum_value():
    with pytest.raises(ParseError):
        parse_config(MINIMAL + "positivity_policy = ignore\n")


def test_overrides_take_precedence(two_species_config_text):
    config = parse_config(two_species_config_text, ["scheme.dt=0.002", "scheme.positivity_policy=clamp"])
    assert config.scheme.dt == 0.002
    assert config.scheme.positivity_policy == PositivityPolicy.CLAMP
    with pytest.raises(ParseError):
        parse_config(two_species_config_text, ["scheme.unknown=1"])
    with pytest.raises(ParseError):
        parse_config(two_species_config_text, ["dt=0.1"])


def test_scheme_field_errors_become_validation_errors():
    with pytest.raises(ValidationError) as info:
        parse_config(MINIMAL.replace("dt = 0.01", "dt = -0.01"))
    assert info.value.issues[0].code == "scheme_invalid"


def test_constant_initial_profile(two_species_config_text):
    config = parse_config(two_species_config_text, ["initial.profile=constant", "initial.values=0.5, 2"])
    from services.config_parser import config_parser

    state = config_parser.build_initial_state(config)
    assert state.u[0].values.min() == state.u[0].values.max() == 0.5
    assert state.u[1].values.min() == 2.0


def test_gaussian_bumps_carry_requested_mass(two_species_config_text):
    from services.config_parser import config_parser

    state = config_parser.build_initial_state(parse_config(two_species_config_text))
    for field in state.u:
        assert field.integral() == pytest.approx(1.0, rel=1e-13)


def test_initial_from_snapshot(tmp_path, two_species_config_text):
    from services.config_parser import config_parser

    grid = PeriodicGrid(d=1, N=128, L=8.0)
    path = write_snapshot(str(tmp_path / "seed.fxd"), State(3.0, (ScalarField.constant(grid, 1.0),) * 2))
    config = parse_config(two_species_config_text, ["initial.profile=from-snapshot", f"initial.path={path}"])
    state = config_parser.build_initial_state(config)
    assert state.t == 0.0
    assert np.all(state.u[1].values == 1.0)


# ---------- 快照 ----------

def test_snapshot_round_trip_is_bit_exact(rng, grid_2d):
    state = State(0.123456789, tuple(ScalarField(grid_2d, rng.standard_normal(grid_2d.shape)) for _ in range(3)))
    decoded = decode_snapshot(encode_snapshot(state))
    assert decoded.t == state.t
    assert decoded.grid == state.grid
    for a, b in zip(state.u, decoded.u):
        assert np.array_equal(a.values, b.values)


def test_snapshot_header_layout(grid_1d):
    data = encode_snapshot(State(0.5, (ScalarField.zeros(grid_1d),)))
    assert data[:4] == b"FXD1"
    assert np.frombuffer(data, dtype="<u4", count=4, offset=4).tolist() == [1, 1, 1, 64]
    assert len(data) == 4 + 4 * 4 + 2 * 8 + 64 * 8


def test_snapshot_rejects_corruption(grid_1d):
    data = encode_snapshot(State(0.0, (ScalarField.zeros(grid_1d),)))
    with pytest.raises(SnapshotFormatError):
        decode_snapshot(b"XXXX" + data[4:])
    with pytest.raises(SnapshotFormatError):
        decode_snapshot(data[:-8])


def test_snapshot_files_sort_by_step(tmp_path, grid_1d):
    for step in (100, 5, 20):
        write_snapshot(str(tmp_path / snapshot_name(step)), State(float(step), (ScalarField.zeros(grid_1d),)))
    names = [os.path.basename(p) for p in list_snapshots(str(tmp_path))]
    assert names == ["state_00000005.fxd", "state_00000020.fxd", "state_00000100.fxd"]
    assert read_snapshot(str(tmp_path / names[-1])).t == 100.0


# ---------- 诊断 CSV 与清单 ----------

def test_observer_writes_diagnostics_and_snapshots(tmp_path, two_species_config_text):
    config = parse_config(two_species_config_text, ["scheme.adaptive_dt=false"])
    from services.config_parser import config_parser

    observer = SnapshotObserver(str(tmp_path))
    solver_service.run_simulation(
        config_parser.build_initial_state(config), config.system, config.scheme,
        model_service.entropy_structure(config.system), observer,
    )
    observer.close()

    frame = pd.read_csv(tmp_path / "diagnostics.csv")
    assert list(frame.columns) == [
        "step", "t", "mass_1", "mass_2", "min_1", "min_2", "entropy", "D_frac", "D_cross",
        "residual", "moment_1", "moment_2", "dt",
    ]
    assert frame["step"].tolist() == list(range(21))
    assert np.isnan(frame["residual"].iloc[0])
    assert [os.path.basename(p) for p in observer.written] == [snapshot_name(s) for s in (0, 5, 10, 15, 20)]


def test_manifest_records_selections(tmp_path, two_species_config_text):
    import json

    config = parse_config(two_species_config_text)
    path = write_manifest(str(tmp_path), config, "simulate", {"riesz_cutoff": "exact multiplier"})
    with open(path, encoding="utf-8") as f:
        manifest = json.load(f)
    assert manifest["command"] == "simulate"
    assert manifest["selections"]["riesz_cutoff"] == "exact multiplier"
    assert manifest["config"]["system"]["n"] == 2
    assert "tolerances" in manifest
