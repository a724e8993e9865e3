import pytest

from boxcbf.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main, resolve_seed
from conftest import rom_text


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(rom_text(t_final=0.5))
    return path


class TestSimulate:

    @pytest.mark.parametrize("name", ["drone_va", "rom_vb", "drone_rom_vb"])
    def test_bundled_scenarios_pass(self, scenario_dir, tmp_path, name):
        out = tmp_path / name
        assert main(["simulate", str(scenario_dir / f"{name}.cfg"), "--out", str(out), "--decimate", "10"]) == EXIT_OK
        for artifact in ("trace.csv", "audit.txt", "plot.gp"):
            assert (out / artifact).exists()
        audit = (out / "audit.txt").read_text()
        assert "[invariance]\nresult: PASS" in audit
        if name == "rom_vb":
            assert "[tracking bound]\nresult: PASS" in audit
        if name != "drone_va":
            # both corner constraints bind together
            intervals = next(line for line in audit.splitlines() if line.startswith("two_positive_intervals"))
            assert int(intervals.split(":")[1]) >= 1

    def test_trace_is_byte_identical(self, tiny_cfg, tmp_path):
        assert main(["simulate", str(tiny_cfg), "--out", str(tmp_path / "a")]) == EXIT_OK
        assert main(["simulate", str(tiny_cfg), "--out", str(tmp_path / "b")]) == EXIT_OK
        a = (tmp_path / "a" / "trace.csv").read_bytes()
        assert a == (tmp_path / "b" / "trace.csv").read_bytes()
        assert a.splitlines()[0].startswith(b"t,x_x,x_z,x_xdot,x_zdot,y_x,y_z,u_ax,u_az,")

    def test_decimate(self, tiny_cfg, tmp_path):
        main(["simulate", str(tiny_cfg), "--out", str(tmp_path), "--decimate", "10"])
        assert len((tmp_path / "trace.csv").read_text().splitlines()) == 1 + 6

    def test_plot_script_reads_trace(self, tiny_cfg, tmp_path):
        main(["simulate", str(tiny_cfg), "--out", str(tmp_path)])
        script = (tmp_path / "plot.gp").read_text()
        assert "multiplot layout 3,2" in script
        assert '"lambda_z_lower"' in script
        assert '"slack_x_upper"' in script

    def test_outside_safe_set_fails(self, tmp_path):
        cfg = tmp_path / "out.cfg"
        cfg.write_text(rom_text(x0="0, 2.5, 0, 0"))
        assert main(["simulate", str(cfg), "--out", str(tmp_path / "run")]) == EXIT_FAIL
        assert "expected: x0 outside safe set" in (tmp_path / "run" / "audit.txt").read_text()

    def test_bad_bounds_is_usage_error(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(rom_text().replace("channel.x.upper = 1", "channel.x.upper = -1"))
        assert main(["simulate", str(cfg), "--out", str(tmp_path / "run")]) == EXIT_USAGE
        assert "channel 'x'" in capsys.readouterr().err
        assert not (tmp_path / "run").exists()

    def test_missing_file(self, tmp_path):
        assert main(["simulate", str(tmp_path / "nope.cfg")]) == EXIT_USAGE

    def test_bad_decimate(self, tiny_cfg):
        assert main(["simulate", str(tiny_cfg), "--decimate", "0"]) == EXIT_USAGE


class TestCompareQp:

    @pytest.mark.parametrize("model", ["planar_drone", "double_integrator", "drone_with_rom"])
    def test_equivalence(self, model, capsys):
        assert main(["compare-qp", "--model", model, "-n", "200", "--seed", "3"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "200 samples, seed 3" in out

    def test_zero_samples(self):
        assert main(["compare-qp", "--model", "planar_drone", "-n", "0"]) == EXIT_USAGE

    def test_unknown_model(self):
        assert main(["compare-qp", "--model", "quadrotor", "-n", "5"]) == EXIT_USAGE

    def test_seed_from_environment(self, monkeypatch, capsys):
        monkeypatch.setenv("BOXCBF_SEED", "11")
        assert main(["compare-qp", "--model", "double_integrator", "-n", "5"]) == EXIT_OK
        assert "seed 11" in capsys.readouterr().out


class TestVerifyRelDeg:

    @pytest.mark.parametrize("model", ["planar_drone", "double_integrator", "drone_with_rom"])
    def test_bundled_models(self, model):
        assert main(["verify-reldeg", "--model", model, "-n", "200", "--include-boundary"]) == EXIT_OK

    def test_zero_margin_boundary_is_singular(self, capsys):
        code = main(["verify-reldeg", "--model", "planar_drone", "-n", "30", "--margin", "0", "--include-boundary"])
        assert code == EXIT_FAIL
        assert "singular_B" in capsys.readouterr().out

    def test_bad_margin(self):
        assert main(["verify-reldeg", "--model", "planar_drone", "-n", "10", "--margin", "2"]) == EXIT_USAGE

    def test_negative_count(self):
        assert main(["verify-reldeg", "--model", "planar_drone", "-n", "-3"]) == EXIT_USAGE


class TestSeedPrecedence:

    def test_flag_wins(self, monkeypatch):
        monkeypatch.setenv("BOXCBF_SEED", "9")
        assert resolve_seed(5, 3) == 5

    def test_environment_over_scenario(self, monkeypatch):
        monkeypatch.setenv("BOXCBF_SEED", "9")
        assert resolve_seed(None, 3) == 9

    def test_scenario_then_default(self):
        assert resolve_seed(None, 3) == 3
        assert resolve_seed(None) == 0


def test_no_command_is_usage_error():
    assert main([]) == EXIT_USAGE
