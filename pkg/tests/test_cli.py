"""CLI smoke tests through main(argv)."""

import os

import pytest

from riscade.cli import build_parser, main


def test_parser_subcommands():
    ap = build_parser()
    args = ap.parse_args(["simulate", "--profile", "paper", "--snr", "inf"])
    assert args.command == "simulate" and args.profile == "paper"
    args = ap.parse_args(["sweep", "--sweep", "snr", "--values", "0,10", "--beamform"])
    assert args.sweep_name == "snr" and args.beamform
    args = ap.parse_args(["replay", "--from", "a", "--out", "b"])
    assert args.from_dir == "a"
    with pytest.raises(SystemExit):
        ap.parse_args(["simulate", "--profile", "bench"])
    with pytest.raises(SystemExit):
        ap.parse_args([])


def test_simulate_noiseless(tmp_path, capsys):
    out = tmp_path / "sim"
    rc = main([
        "simulate", "--seed", "3", "--trials", "1", "--snr", "inf",
        "--methods", "vs", "--out", str(out),
    ])
    assert rc == 0
    text = capsys.readouterr().out
    assert "parameter MSEs" in text
    assert (out / "results.csv").exists()


def test_sweep_writes_summary(tmp_path):
    out = tmp_path / "sw"
    rc = main([
        "sweep", "--seed", "5", "--trials", "1", "--sweep", "snr",
        "--values", "20", "--methods", "als", "--out", str(out),
    ])
    assert rc == 0
    assert sorted(os.listdir(out)) == [
        "metadata.ini", "results.csv", "summary.csv", "timings.csv"
    ]


def test_sweep_without_out_prints_medians(capsys):
    rc = main([
        "sweep", "--seed", "5", "--trials", "1", "--sweep", "snr",
        "--values", "25", "--methods", "vs",
    ])
    assert rc == 0
    assert "median nmse" in capsys.readouterr().out


def test_crb_table_command(tmp_path):
    out = tmp_path / "crb"
    rc = main([
        "crb", "--seed", "2", "--trials", "1", "--snr-list", "0,20", "--out", str(out),
    ])
    assert rc == 0
    lines = (out / "crb.csv").read_text().splitlines()
    assert len(lines) == 3


def test_beamform_reports_ratio(tmp_path, capsys):
    rc = main([
        "beamform", "--seed", "4", "--trials", "1", "--snr", "25",
        "--methods", "als,somp",
    ])
    assert rc == 0
    text = capsys.readouterr().out
    assert "SE ratio" in text  # somp filtered out, estimators still run


def test_replay_roundtrip_and_mismatch(tmp_path, capsys):
    out = tmp_path / "orig"
    main([
        "sweep", "--seed", "9", "--trials", "1", "--sweep", "snr",
        "--values", "30", "--methods", "vs", "--out", str(out),
    ])
    rc = main(["replay", "--from", str(out), "--out", str(tmp_path / "re")])
    assert rc == 0
    results = out / "results.csv"
    results.write_text(results.read_text().replace("30", "31", 1))
    rc = main(["replay", "--from", str(out), "--out", str(tmp_path / "re2")])
    assert rc == 1


def test_config_file_overlay(tmp_path):
    ini = tmp_path / "cfg.ini"
    ini.write_text("[run]\ntrials = 1\nmethods = vs\n\n[training]\nn_slots = 6\n")
    out = tmp_path / "run"
    rc = main([
        "sweep", "--config", str(ini), "--seed", "1", "--sweep", "snr",
        "--values", "20", "--out", str(out),
    ])
    assert rc == 0
    meta = (out / "metadata.ini").read_text()
    assert "n_slots = 6" in meta
