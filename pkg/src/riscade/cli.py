"""Command line front end.

Subcommands:
  simulate   one verbose pipeline run (single trial, single sweep point)
  sweep      Monte-Carlo sweep, CSV outputs
  crb        bound curves vs SNR, no estimation
  beamform   spectral-efficiency comparison, estimated vs perfect CSI
  replay     re-run a finished sweep from its metadata sidecar

Shared flags: --profile {desk,paper}, --config FILE, --seed, --trials,
--methods LIST, --out DIR. Flags override the config file, which overrides
the profile.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .harness import (
    ExperimentConfig,
    apply_config_file,
    crb_table,
    profile_config,
    replay,
    run_sweep,
    summarize,
    write_crb_table,
    write_results,
    write_summary,
)

__all__ = ["main", "build_parser"]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=("desk", "paper"), default="desk",
                   help="stock parameter set (default desk)")
    p.add_argument("--config", metavar="FILE", default=None,
                   help="sectioned key-value file overlaid on the profile")
    p.add_argument("--seed", type=int, default=None, help="base seed")
    p.add_argument("--trials", type=int, default=None, help="Monte-Carlo trials")
    p.add_argument("--methods", default=None,
                   help="comma list from {vs,als,somp}")
    p.add_argument("--out", metavar="DIR", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="riscade",
        description="cascade channel estimation and beamforming experiments",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="one verbose pipeline run")
    _add_common(sim)
    sim.add_argument("--snr", type=float, default=20.0,
                     help="estimation SNR in dB; 'inf' for noiseless")

    sw = sub.add_parser("sweep", help="Monte-Carlo sweep")
    _add_common(sw)
    sw.add_argument("--sweep", dest="sweep_name", default=None,
                    choices=("snr", "n_training", "n_frames", "n_slots"))
    sw.add_argument("--values", default=None, help="comma list of sweep values")
    sw.add_argument("--snr", type=float, default=None,
                    help="fixed SNR when sweeping a non-SNR variable")
    sw.add_argument("--beamform", action="store_true",
                    help="also design beamformers and record SE per row")

    cb = sub.add_parser("crb", help="bound curves vs SNR")
    _add_common(cb)
    cb.add_argument("--snr-list", default="0,10,20,30",
                    help="comma list of SNR points (dB)")

    bf = sub.add_parser("beamform", help="SE with estimated vs perfect CSI")
    _add_common(bf)
    bf.add_argument("--snr", type=float, default=20.0, help="estimation SNR in dB")
    bf.add_argument("--n-rf", type=int, default=None,
                    help="RF chains per side; enables the hybrid stage")

    rp = sub.add_parser("replay", help="re-run a sweep from its sidecar")
    rp.add_argument("--from", dest="from_dir", required=True, metavar="DIR")
    rp.add_argument("--out", required=True, metavar="DIR")
    return ap


def _config_from_args(args) -> ExperimentConfig:
    cfg = profile_config(args.profile)
    if args.config:
        cfg = apply_config_file(cfg, args.config)
    updates = {}
    if args.seed is not None:
        updates["base_seed"] = args.seed
    if args.trials is not None:
        updates["trials"] = args.trials
    if args.methods is not None:
        updates["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    return replace(cfg, **updates) if updates else cfg


def _print_records(records) -> None:
    head = ("trial", "method", "sweep_value", "nmse", "se_est", "se_perfect")
    print("  ".join(f"{h:>12}" for h in head))
    for r in records:
        print(
            f"{r.trial:>12}  {r.method:>12}  {r.sweep_value:>12.4g}  "
            f"{r.nmse:>12.4g}  {r.se_est:>12.4g}  {r.se_perfect:>12.4g}"
        )


def _cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    if np.isinf(args.snr):
        # noiseless: park the sweep on a no-op variable so snr_db=None rules
        cfg = replace(cfg, sweep_name="n_training",
                      sweep_values=(cfg.n_training,), snr_db=None)
    else:
        cfg = replace(cfg, sweep_name="snr", sweep_values=(args.snr,))
    records = run_sweep(cfg)
    _print_records(records)
    for r in records:
        if r.mse:
            print(f"\n[{r.method}] trial {r.trial} parameter MSEs:")
            for k, v in r.mse.items():
                line = f"  {k:>8}: {v:.6g}"
                if k in r.crb:
                    line += f"   (bound {r.crb[k]:.6g})"
                print(line)
    if args.out:
        paths = write_results(records, cfg, args.out)
        print(f"\nwrote {paths['results']}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    updates = {}
    if args.sweep_name is not None:
        updates["sweep_name"] = args.sweep_name
    if args.values is not None:
        updates["sweep_values"] = tuple(float(v) for v in args.values.split(",") if v.strip())
    if args.snr is not None:
        updates["snr_db"] = args.snr
    if args.beamform:
        updates["beamform"] = True
    if updates:
        cfg = replace(cfg, **updates)
    records = run_sweep(cfg)
    rows = summarize(records)
    if args.out:
        paths = write_results(records, cfg, args.out)
        write_summary(rows, paths["results"].replace("results.csv", "summary.csv"))
        print(f"wrote {paths['results']} ({len(records)} rows)")
    else:
        for row in rows:
            print(
                f"{row['method']:>6} @ {row['sweep_value']:>8.4g}: "
                f"median nmse {row['median_nmse']:.4g} (n={row['count']})"
            )
    return 0


def _cmd_crb(args) -> int:
    cfg = _config_from_args(args)
    snrs = tuple(float(v) for v in args.snr_list.split(",") if v.strip())
    rows = crb_table(cfg, snrs)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "crb.csv")
        write_crb_table(rows, path)
        print(f"wrote {path} ({len(rows)} rows)")
    else:
        for row in rows:
            print(
                f"trial {row['trial']} @ {row['snr_db']:>6.4g} dB: "
                + "  ".join(f"{k[4:]}={row[k]:.4g}" for k in row if k.startswith("crb_"))
            )
    return 0


def _cmd_beamform(args) -> int:
    cfg = _config_from_args(args)
    cfg = replace(
        cfg,
        sweep_name="snr",
        sweep_values=(args.snr,),
        beamform=True,
        n_rf_tx=args.n_rf,
        n_rf_rx=args.n_rf,
        methods=tuple(m for m in cfg.methods if m != "somp") or ("vs",),
    )
    records = run_sweep(cfg)
    _print_records(records)
    ratios = [r.se_est / r.se_perfect for r in records if np.isfinite(r.se_est)]
    if ratios:
        print(f"\nmedian estimated/perfect SE ratio: {np.median(ratios):.4f}")
    if args.out:
        paths = write_results(records, cfg, args.out)
        print(f"wrote {paths['results']}")
    return 0


def _cmd_replay(args) -> int:
    same = replay(args.from_dir, args.out)
    print("replay identical" if same else "replay DIFFERS from original results")
    return 0 if same else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "sweep": _cmd_sweep,
        "crb": _cmd_crb,
        "beamform": _cmd_beamform,
        "replay": _cmd_replay,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
