from pathlib import Path

import pytest

from critsense.config import ETA_DECADES, ExperimentConfig, build_config, read_config
from critsense.errors import ConfigError


def _write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return path


class TestBuildConfig:
    def test_experiment_defaults(self):
        config = build_config("quadrature")
        assert config.model == "qrm_effective"
        assert len(config.grid()) == 8
        assert config.grid()[0] == pytest.approx(0.7)
        assert config.grid()[-1] == pytest.approx(0.95)

    def test_finite_eta_uses_half_decades(self):
        assert build_config("finite_eta").etas == ETA_DECADES
        assert len(ETA_DECADES) == 5

    def test_overrides_win_and_none_is_ignored(self):
        config = build_config("qfi", {"model": "opo", "workers": 3}, {"workers": None, "format": "json"})
        assert config.model == "opo"
        assert config.workers == 3
        assert config.format == "json"
        assert config.state == "vacuum"

    def test_explicit_grid_values(self):
        config = build_config("quadrature", {"grid_values": (0.5, 0.6)})
        assert config.grid() == (0.5, 0.6)

    def test_default_output_path(self):
        assert build_config("noise").output_path.endswith("noise.csv")

    @pytest.mark.parametrize(
        "values, message",
        [
            ({"model": "dicke"}, "unknown model"),
            ({"grid_min": 0.9, "grid_max": 0.5}, "grid min"),
            ({"grid_steps": 1}, "grid steps"),
            ({"branches": (0, 1)}, "branches"),
            ({"dephasing": (-0.1,)}, "dephasing"),
            ({"etas": (0.5,)}, "etas"),
            ({"cutoff_initial": 64, "cutoff_max": 32}, "cutoff bounds"),
            ({"workers": 0}, "workers"),
            ({"times": (-1.0,)}, "times"),
        ],
    )
    def test_invalid_values(self, values, message):
        with pytest.raises(ConfigError, match=message):
            build_config("quadrature", values)

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError, match="unknown experiment"):
            build_config("tomography")

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="invalid configuration"):
            build_config("quadrature", {"temperature": 1.0})

    def test_as_dict_covers_fields(self):
        assert build_config("loschmidt").as_dict()["branches"] == tuple(range(1, 7))


class TestReadConfig:
    def test_sections_and_parsers(self, tmp_path):
        path = _write(
            tmp_path,
            "[model]\nname = opo\nkappa = 0.2\n\n"
            "[grid]\nvalues = 0.9, 1.0; 1.1\nbranches = 1, 10-12\n\n"
            "[protocol]\nfrequency = yes\n\n"
            "[output]\nformat = json\n",
        )
        values = read_config(path)
        assert values["model"] == "opo"
        assert values["kappa"] == 0.2
        assert values["grid_values"] == (0.9, 1.0, 1.1)
        assert values["branches"] == (1, 10, 11, 12)
        assert values["frequency"] is True
        assert values["format"] == "json"

    def test_time_grid(self, tmp_path):
        path = _write(tmp_path, "[grid]\ntimes = 0, 1.5; 3\n")
        assert read_config(path)["times"] == (0.0, 1.5, 3.0)

    def test_unknown_entries_warn(self, tmp_path, caplog):
        path = _write(tmp_path, "[model]\ncolour = red\n\n[plots]\ndpi = 300\n")
        assert read_config(path) == {}
        assert "unknown key model.colour" in caplog.text
        assert "unknown section [plots]" in caplog.text

    def test_bad_value(self, tmp_path):
        path = _write(tmp_path, "[grid]\nsteps = many\n")
        with pytest.raises(ConfigError, match="grid.steps"):
            read_config(path)

    def test_bad_boolean(self, tmp_path):
        path = _write(tmp_path, "[protocol]\nfwhm = perhaps\n")
        with pytest.raises(ConfigError, match="not a boolean"):
            read_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            read_config(tmp_path / "absent.ini")

    def test_malformed_file(self, tmp_path):
        path = _write(tmp_path, "no section header\n")
        with pytest.raises(ConfigError, match="malformed"):
            read_config(path)


def test_dataclass_is_frozen():
    config = ExperimentConfig()
    with pytest.raises(AttributeError):
        config.omega = 2.0


@pytest.mark.parametrize("name", ["quadrature", "loschmidt", "qfi", "finite_eta", "noise"])
def test_shipped_configs_parse(name):
    path = Path(__file__).resolve().parent.parent / "configs" / f"{name}.ini"
    config = build_config(name, read_config(path))
    assert config.experiment == name
    assert config.grid()


def test_shipped_trace_config():
    path = Path(__file__).resolve().parent.parent / "configs" / "quadrature_traces.ini"
    config = build_config("quadrature", read_config(path))
    assert config.times[0] == 0.0
    assert len(config.times) == 17
    assert config.grid() == (0.5, 0.7, 0.8, 0.9)
