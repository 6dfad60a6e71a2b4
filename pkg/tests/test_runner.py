"""Runner, CLI, and self-check behavior."""

import json

import numpy as np
import pytest

from mimocap import cli, selfcheck, sphere
from mimocap.runner import (
    ConfigError,
    ExperimentConfig,
    run_capacity_sweep,
    run_csi_sweep,
    run_outage_sweep,
)


def base_config(**overrides):
    raw = {
        "config_id": "unit",
        "system": {"mt": 2, "mr": 2, "constellation": "4qam-gray", "es": 1.0},
        "fading": "ergodic",
        "csi": "perfect",
        "snr_grid_db": [0.0, 4.0],
        "demodulators": ["max_log", "mmse_soft"],
        "references": ["bicm"],
        "sampling": {"n_frames": 800, "bins": 8, "chunk": 256,
                     "n_blocks": 6, "frames_per_block": 400, "block_bins": 4},
        "seed": 99,
    }
    raw.update(overrides)
    return raw


def test_config_validation_messages():
    with pytest.raises(ConfigError, match="config.system.mt"):
        ExperimentConfig.from_dict({"system": {"mr": 2, "constellation": "4qam-gray"}})
    with pytest.raises(ConfigError, match="snr_grid_db"):
        ExperimentConfig.from_dict(base_config(snr_grid_db=[3.0, 1.0]))
    with pytest.raises(ConfigError, match="config.fading"):
        ExperimentConfig.from_dict(base_config(fading="blockwise"))
    with pytest.raises(ConfigError, match="config.csi"):
        ExperimentConfig.from_dict(base_config(csi={"nope": 1}))
    with pytest.raises(ConfigError, match="config.csi.np"):
        ExperimentConfig.from_dict(base_config(csi={"np": 2}))
    with pytest.raises(ConfigError, match="config.demodulators"):
        ExperimentConfig.from_dict(base_config(demodulators=["warp_drive"]))
    with pytest.raises(ConfigError, match="config.references"):
        ExperimentConfig.from_dict(base_config(references=["shannon"]))
    with pytest.raises(ConfigError, match="constellation"):
        ExperimentConfig.from_dict(base_config(system={"mt": 2, "mr": 2, "constellation": "7qam"}))
    with pytest.raises(ConfigError, match="config.outage"):
        ExperimentConfig.from_dict(base_config(outage={"target_rates": [2.0]}))


def test_capacity_sweep_outputs_and_reproducibility(tmp_path):
    cfg = ExperimentConfig.from_dict(base_config())
    out1 = run_capacity_sweep(cfg, tmp_path / "a", workers=1)
    out2 = run_capacity_sweep(ExperimentConfig.from_dict(base_config()), tmp_path / "b", workers=2)
    csv1 = (tmp_path / "a" / "capacity.csv").read_bytes()
    csv2 = (tmp_path / "b" / "capacity.csv").read_bytes()
    assert csv1 == csv2  # worker count never changes results
    header = csv1.decode().splitlines()[0]
    assert header == "config_id,demod,snr_db,rate_bpcu,ci,n_frames,bias_bound"
    names = {r["demod"] for r in out1["rows"]}
    assert names == {"max_log", "mmse_soft", "ref_bicm"}
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config_hash"] == cfg.config_hash()
    assert len(manifest["points"]) == 2


def test_capacity_sweep_rejects_bad_modes(tmp_path):
    with pytest.raises(ConfigError, match="no demodulators"):
        run_capacity_sweep(
            ExperimentConfig.from_dict(base_config(demodulators=[], references=[])), tmp_path
        )
    with pytest.raises(ConfigError, match="ergodic"):
        cfg = base_config(fading="quasistatic")
        run_capacity_sweep(ExperimentConfig.from_dict(cfg), tmp_path)
    with pytest.raises(ConfigError, match="100\\*bins"):
        cfg = base_config(sampling={"n_frames": 700, "bins": 8, "chunk": 256})
        run_capacity_sweep(ExperimentConfig.from_dict(cfg), tmp_path)


def test_capacity_sweep_resume(tmp_path):
    cfg = ExperimentConfig.from_dict(base_config())
    out_dir = tmp_path / "resume"
    state_path = out_dir / f"{cfg.config_hash()}.capacity.state.json"
    # simulate an interrupted run: only the first point completed
    from mimocap.runner import _capacity_point

    out_dir.mkdir(parents=True)
    rows0 = _capacity_point(cfg, 0)
    state_path.write_text(json.dumps({"points": {"0": rows0}}))
    out = run_capacity_sweep(cfg, out_dir, workers=1, resume=True)
    fresh = run_capacity_sweep(cfg, tmp_path / "fresh", workers=1)
    assert (out_dir / "capacity.csv").read_bytes() == (tmp_path / "fresh" / "capacity.csv").read_bytes()
    assert not state_path.exists()  # cleaned up after success
    assert out["rows"] == fresh["rows"]


def test_outage_sweep_outputs(tmp_path):
    raw = base_config(
        fading="quasistatic",
        outage={"target_rates": [1.0], "epsilons": [0.5]},
        demodulators=["max_log"],
        references=[],
        snr_grid_db=[2.0],
    )
    cfg = ExperimentConfig.from_dict(raw)
    out = run_outage_sweep(cfg, tmp_path, workers=1)
    pout = (tmp_path / "outage_pout.csv").read_text().splitlines()
    assert pout[0] == "config_id,demod,snr_db,rbar,pout"
    assert len(pout) == 2
    eps = (tmp_path / "outage_eps.csv").read_text().splitlines()
    assert eps[0] == "config_id,demod,snr_db,epsilon,c_eps"
    mean = (tmp_path / "outage_mean.csv").read_text().splitlines()
    assert mean[0] == "config_id,demod,snr_db,mean_rate_bpcu,n_blocks"
    rows = out["rows_by_kind"]["pout"]
    assert 0.0 <= rows[0]["pout"] <= 1.0


def test_outage_requires_quasistatic(tmp_path):
    cfg = ExperimentConfig.from_dict(base_config())
    cfg.outage_target_rates = [1.0]
    with pytest.raises(ConfigError, match="quasistatic"):
        run_outage_sweep(cfg, tmp_path)


def test_csi_sweep_outputs(tmp_path):
    raw = base_config(
        demodulators=["max_log"],
        references=[],
        snr_grid_db=[-2.0, 2.0, 6.0, 10.0],
        csi_sweep={"np_values": [4], "target_rate": 2.0, "include_perfect": True},
    )
    cfg = ExperimentConfig.from_dict(raw)
    out = run_csi_sweep(cfg, tmp_path, workers=1)
    required = out["required_rows"]
    assert {r["csi_np"] for r in required} == {0, 4}
    perfect = next(r for r in required if r["csi_np"] == 0)
    trained = next(r for r in required if r["csi_np"] == 4)
    assert trained["min_snr_db"] > perfect["min_snr_db"]  # estimation always costs SNR
    curves = (tmp_path / "csi_curves.csv").read_text().splitlines()
    assert curves[0] == "config_id,csi_np,demod,snr_db,rate_bpcu,ci,n_frames,bias_bound"


def test_csi_sweep_validation(tmp_path):
    raw = base_config(csi_sweep={"np_values": [4], "target_rate": 4.0})
    with pytest.raises(ConfigError, match="target_rate"):
        run_csi_sweep(ExperimentConfig.from_dict(raw), tmp_path)
    raw = base_config(csi_sweep={"np_values": [2], "target_rate": 2.0})
    with pytest.raises(ConfigError, match="np_values"):
        run_csi_sweep(ExperimentConfig.from_dict(raw), tmp_path)


def test_selfcheck_all_pass_and_reports_json():
    report = selfcheck.run_all(seed=7)
    assert report["ok"] is True
    assert set(report["suites"]) == set(selfcheck.SUITES)
    json.dumps(report)  # machine readable


def test_selfcheck_catches_injected_sign_flip(monkeypatch):
    """Flipping the max-log sign must trip the sign-consistency suite."""
    original = sphere.maxlog_llrs

    def flipped(*args, **kwargs):
        return -original(*args, **kwargs)

    monkeypatch.setattr(sphere, "maxlog_llrs", flipped)
    report = selfcheck.run_all(seed=7)
    assert report["ok"] is False
    assert report["suites"]["sign_consistency"]["pass"] is False


def test_cli_list_demods(capsys):
    assert cli.main(["list-demods"]) == 0
    out = capsys.readouterr().out
    assert "lsd" in out and "soft_map" in out


def test_cli_validate(tmp_path, capsys):
    report_path = tmp_path / "report.json"
    assert cli.main(["validate", "-o", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert report["ok"] is True
    capsys.readouterr()


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(base_config(snr_grid_db=[5.0, 1.0])))
    code = cli.main(["capacity", "-c", str(bad), "-o", str(tmp_path / "out")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_cli_capacity_run(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(base_config(snr_grid_db=[2.0], references=[])))
    code = cli.main(["capacity", "-c", str(cfg_path), "-o", str(tmp_path / "out")])
    assert code == 0
    assert (tmp_path / "out" / "capacity.csv").exists()
    capsys.readouterr()


def test_csv_quotes_demod_labels_with_commas(tmp_path):
    raw = base_config(
        demodulators=["flip:init=mmse,D=1", "softic:init=zf,iters=2"],
        references=[],
        snr_grid_db=[2.0],
    )
    out = run_capacity_sweep(ExperimentConfig.from_dict(raw), tmp_path)
    lines = out["csv"].read_text().splitlines()
    header_fields = lines[0].split(",")
    for line in lines[1:]:
        assert '"' in line  # comma-bearing label must be quoted
        # strip the quoted cell and confirm the remaining fields line up
        import csv as _csv

        parsed = next(_csv.reader([line]))
        assert len(parsed) == len(header_fields)
    names = {r["demod"] for r in out["rows"]}
    assert names == {"flip:init=mmse,D=1", "soft_ic:init=zf,iters=2"}


def test_capacity_sweep_emits_one_curve_per_demod_and_reference(tmp_path):
    raw = base_config(
        demodulators=["soft_map", "max_log", "hard_ml", "mmse_soft", "zf_soft", "zf_hard"],
        references=["gaussian", "cm", "bicm"],
        snr_grid_db=[0.0],
    )
    out = run_capacity_sweep(ExperimentConfig.from_dict(raw), tmp_path)
    names = {r["demod"] for r in out["rows"]}
    assert len(names) == 9  # six measured curves plus the three references


def test_seed_changes_results(tmp_path):
    cfg_a = ExperimentConfig.from_dict(base_config())
    cfg_b = ExperimentConfig.from_dict(base_config(seed=100))
    a = run_capacity_sweep(cfg_a, tmp_path / "s1")
    b = run_capacity_sweep(cfg_b, tmp_path / "s2")
    rates_a = [r["rate_bpcu"] for r in a["rows"]]
    rates_b = [r["rate_bpcu"] for r in b["rows"]]
    assert rates_a != rates_b
