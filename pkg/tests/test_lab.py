"""
Tests for the experiment driver: configuration, registry, field cache and studies.
"""

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from glvortex_lab.errors import ConfigurationError, PreconditionError
from glvortex_lab.geometry import DomainSpec
from glvortex_lab.lab import (
    DEFAULT_CONFIG,
    RunManifest,
    VortexLab,
    parse_n_rule,
    random_config,
    resolve_N,
    validate_config,
)
from glvortex_lab.renorm import rho


@pytest.fixture
def small_config(tmp_path):
    """A coarse disk run writing into a temporary directory."""
    return {"resolution": 24, "hex": [10.0], "output_dir": str(tmp_path / "out"), "seed": 3}


@pytest.fixture
def lab(small_config, cache_dir):
    return VortexLab(small_config)


class TestConfig:
    def test_defaults(self):
        config = validate_config({})
        assert config == DEFAULT_CONFIG
        assert config["t0"] == 0.01

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError):
            validate_config({"resolutoin": 32})

    def test_bad_values(self):
        with pytest.raises(ConfigurationError):
            validate_config({"hex": ["strong"]})
        with pytest.raises(ConfigurationError):
            validate_config({"jobs": 0})
        with pytest.raises(ConfigurationError):
            validate_config({"domain": {"kind": "square", "semi_axes": [1, 1]}})

    def test_coercion(self):
        config = validate_config({"resolution": [24, "32"], "hex": 50, "eps": "0.02"})
        assert config["resolution"] == [24, 32]
        assert config["hex"] == [50.0]
        assert config["eps"] == [0.02]

    @pytest.mark.parametrize("rule,expected", [("max", ("max", 0.0)), ("fixed:3", ("fixed", 3.0)),
                                               ("fraction:0.5", ("fraction", 0.5))])
    def test_n_rules(self, rule, expected):
        assert parse_n_rule(rule) == expected

    @pytest.mark.parametrize("rule", ["", "max:2", "fixed", "fraction:half", "all"])
    def test_invalid_n_rules(self, rule):
        with pytest.raises(ConfigurationError):
            parse_n_rule(rule)

    def test_resolve_N(self):
        assert resolve_N("max", 25.0, math.pi) == 10
        assert resolve_N("fixed:2", 25.0, math.pi) == 2
        assert resolve_N("fraction:0.5", 25.0, math.pi) == 5
        assert resolve_N("fraction:0.01", 25.0, math.pi) == 1

    def test_random_config(self):
        spec = DomainSpec.disk()
        config = random_config(spec, 3, 0.08, np.random.default_rng(0))
        assert config.N == 3
        assert rho(config, spec) >= 0.08

    def test_impossible_random_config(self):
        with pytest.raises(ConfigurationError):
            random_config(DomainSpec.disk(), 3, 0.5, np.random.default_rng(0))


class TestManifest:
    def test_round_trip(self):
        manifest = RunManifest("fields", validate_config({"resolution": 32}), ["a.csv"], wall_clock_s=1.5)
        again = RunManifest.from_dict(json.loads(json.dumps(manifest.to_dict())))
        assert again.to_dict() == manifest.to_dict()
        assert again.run_id == manifest.run_id

    def test_run_id_depends_on_config(self):
        a = RunManifest("fields", validate_config({"resolution": 32}))
        b = RunManifest("fields", validate_config({"resolution": 48}))
        assert a.run_id != b.run_id


class TestVortexLab:
    def test_cache_dir_from_environment(self, lab, cache_dir):
        assert lab.cache_dir == cache_dir
        assert cache_dir.is_dir()

    def test_explicit_cache_dir(self, small_config, tmp_path):
        lab = VortexLab(small_config, cache_dir=tmp_path / "elsewhere")
        assert lab.cache_dir == tmp_path / "elsewhere"

    def test_from_file_with_overrides(self, tmp_path, cache_dir):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"resolution": 40, "hex": [25, 50]}))
        lab = VortexLab.from_file(path, {"resolution": [24, 32]})
        assert lab.resolutions == [24, 32]
        assert lab.resolution == 24
        assert lab.config["hex"] == [25.0, 50.0]

    def test_from_file_errors(self, tmp_path, cache_dir):
        broken = tmp_path / "broken.json"
        broken.write_text("{not json")
        with pytest.raises(ConfigurationError):
            VortexLab.from_file(broken)
        with pytest.raises(ConfigurationError):
            VortexLab.from_file(tmp_path / "missing.json")
        listing = tmp_path / "list.json"
        listing.write_text("[1, 2]")
        with pytest.raises(ConfigurationError):
            VortexLab.from_file(listing)

    async def test_sweep_in_worker_processes(self, small_config, cache_dir):
        lab = VortexLab({**small_config, "jobs": 2})
        assert await lab.run_sweep(pow, [(2, 3), (3, 2), (5, 1)]) == [8, 9, 5]

    async def test_sequential_sweep(self, lab):
        assert await lab.run_sweep(pow, [(2, 10)]) == [1024]


class TestStudies:
    async def test_fields(self, lab):
        manifest = await lab.fields()
        out = Path(lab.output_dir)
        assert {Path(p).name for p in manifest.outputs} == {
            "fields.csv", "fields_summary.csv", "xi0.svg", "fields_manifest.json"
        }
        frame = pd.read_csv(out / "fields.csv")
        assert {"xi0", "s_diag", "v_eps_10"} <= set(frame.columns)
        summary = pd.read_csv(out / "fields_summary.csv")
        assert summary.F_xi0[0] == pytest.approx(1.40245, abs=3e-2)
        assert summary.vep_C_max[0] > 0.0
        assert summary.vep_C_ratio[0] == pytest.approx(1.0)
        assert summary.vep_residual_10[0] > 0.0

    async def test_fields_are_cached(self, lab, small_config):
        await lab.fields()
        grid = VortexLab(small_config).grid()
        assert "xi0" in grid.cache and "s_diag" in grid.cache

    async def test_registry(self, lab, small_config):
        await lab.fields()
        runs = VortexLab(small_config).list_runs()
        assert [run.command for run in runs] == ["fields"]
        assert runs[0].config["resolution"] == 24

    async def test_obstacle(self, small_config, cache_dir):
        lab = VortexLab({**small_config, "hex": [25.0], "lambdas": [0.6, 0.9]})
        manifest = await lab.obstacle()
        frame = pd.read_csv(Path(lab.output_dir) / "obstacle.csv")
        assert list(frame["lambda"]) == [0.6, 0.9]
        assert frame.f_residual.abs().max() <= 1e-4
        assert frame.m_lambda.is_monotonic_increasing
        assert "zeta.svg" in {Path(p).name for p in manifest.outputs}

    async def test_obstacle_lambda_below_window(self, small_config, cache_dir):
        lab = VortexLab({**small_config, "hex": [25.0], "lambdas": [0.2]})
        with pytest.raises(PreconditionError):
            await lab.obstacle()

    async def test_obstacle_n_outside_window(self, small_config, cache_dir):
        lab = VortexLab({**small_config, "N_rule": "fixed:40"})
        with pytest.raises(PreconditionError):
            await lab.obstacle()

    async def test_minimize(self, small_config, cache_dir):
        lab = VortexLab({**small_config, "N_rule": "fixed:2", "starts": 2})
        manifest = await lab.minimize()
        out = Path(lab.output_dir)
        frame = pd.read_csv(out / "minimize.csv")
        assert list(frame.columns[:9]) == ["hex", "N", "energy", "min_boundary_dist", "min_separation",
                                           "c0_hat", "c1_hat", "discrepancy", "runtime_s"]
        assert {"c0_floor", "c1_floor", "pass", "gap_pass", "inf_U", "inf_U_negative"} <= set(frame.columns)
        assert bool(frame["pass"][0])
        assert frame["c0_floor"][0] == pytest.approx(frame["c0_hat"][0] - 10.0 ** 0.25 / 24)
        assert math.isfinite(frame["discrepancy"][0])
        points = pd.read_csv(out / "minimize_points.csv")
        assert len(points) == 2
        fit = pd.read_csv(out / "minimize_fit.csv")
        assert fit["ratio"].iloc[-1] == pytest.approx(1.0)

        trend = pd.read_csv(out / "minimize_equilibrium.csv")
        assert list(trend["N"]) == [1, 2, 4]
        assert (trend["hex"] == 10.0).all()
        assert trend["decreasing"].nunique() == 1
        assert {"minimize_equilibrium.csv", "minimizer.svg"} <= {Path(p).name for p in manifest.outputs}
        svg = (out / "minimizer.svg").read_text()
        assert "<rect" in svg and svg.count("<circle") == 2

    async def test_separation_floors_frozen_at_smallest_field(self, small_config, cache_dir):
        lab = VortexLab({**small_config, "hex": [20.0, 10.0], "N_rule": "fixed:2", "starts": 2})
        await lab.minimize()
        frame = pd.read_csv(Path(lab.output_dir) / "minimize.csv")
        assert list(frame["hex"]) == [10.0, 20.0]
        c0_ref, c1_ref = frame["c0_hat"][0], frame["c1_hat"][0]
        np.testing.assert_allclose(frame["c0_floor"], c0_ref - frame["hex"] ** 0.25 / 24)
        np.testing.assert_allclose(frame["c1_floor"], c1_ref - np.sqrt(frame["hex"]) / 24)
        expected = (frame["c0_hat"] >= frame["c0_floor"]) & (frame["c1_hat"] >= frame["c1_floor"])
        assert list(frame["pass"]) == list(expected)
        assert frame["c0_hat"].nunique() == 2

    async def test_identities(self, small_config, cache_dir):
        lab = VortexLab({**small_config, "resolution": [24, 32]})
        await lab.identities(count=2)
        frame = pd.read_csv(Path(lab.output_dir) / "identities.csv", dtype={"config_hash": str})
        assert len(frame) == 4
        assert {"rate_B1", "rate_WH", "residual_reduction"} <= set(frame.columns)
        assert frame.groupby("config_hash").rate_B1.apply(lambda s: s.isna().iloc[0]).all()

    async def test_gamma_needs_resolved_eps(self, lab):
        with pytest.raises(PreconditionError):
            await lab.gamma(count=1)

    async def test_gamma(self, tmp_path, cache_dir):
        lab = VortexLab({
            "domain": {"kind": "disk", "radius": 3.0},
            "resolution": 160,
            "eps": [0.03],
            "output_dir": str(tmp_path / "gamma"),
        })
        await lab.gamma(count=1)
        frame = pd.read_csv(Path(lab.output_dir) / "gamma.csv")
        assert list(frame.columns) == ["config_hash", "N", "eps", "resolution", "E", "W", "gamma_sample"]
        assert frame.N[0] == 3
        summary = pd.read_csv(Path(lab.output_dir) / "gamma_summary.csv")
        assert summary.samples[0] == 1
        # hex = 25 lies above eps^(-1/4) at eps = 0.03
        assert not summary.hex_window_ok.any()


@pytest.mark.heavy
async def test_identity_rates_at_64_and_128(tmp_path, cache_dir):
    lab = VortexLab({"resolution": [64, 128], "hex": [5.0], "output_dir": str(tmp_path / "out"), "seed": 1})
    await lab.identities(count=3)
    frame = pd.read_csv(Path(lab.output_dir) / "identities.csv", dtype={"config_hash": str})
    fine = frame[frame.resolution == 128]
    assert len(fine) == 3
    assert (fine.rate_B1 >= 1.5).all()
    assert (fine.rate_WH >= 1.5).all()
    assert (fine.residual_WH <= 1e-2).all()
