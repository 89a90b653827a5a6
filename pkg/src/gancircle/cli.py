"""Command-line entry point: ``gancircle {simulate,train,infer,evaluate}``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import data as D
from .checkpoint import CheckpointError, load_checkpoint, load_generator
from .config import ConfigError, RunConfig, load_config, with_seed, write_config
from .inference import super_resolve
from .metrics import (
    evaluate,
    evaluate_baselines,
    summary_csv,
    summary_table,
)
from .models import ShapeError
from .training import LOG_COLUMNS, default_model_configs, read_log, train

log = logging.getLogger("gancircle")

SLICE_SUFFIXES = (".png", ".raw")


def _out_dir(cfg: RunConfig, out) -> Path:
    path = Path(out or cfg.io.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _relpath(target: Path, start: Path) -> str:
    return os.path.relpath(target.resolve(), start.resolve())


def cmd_simulate(cfg: RunConfig, in_manifest, out_dir) -> Path:
    """Write a degraded X counterpart for every Y slice plus an updated manifest."""
    in_manifest = in_manifest or cfg.data.manifest
    if in_manifest is None:
        raise ConfigError("simulate needs an input manifest (argument or data.manifest)")
    out = _out_dir(cfg, out_dir)
    lr_dir = out / "lr"
    lr_dir.mkdir(exist_ok=True)
    manifest = D.read_manifest(in_manifest)
    spec = cfg.data.degradation
    entries = [D.ManifestEntry(_relpath(manifest.resolve(e), out), e.domain, e.pairing_id)
               for e in manifest.entries]
    has_x = {e.pairing_id for e in manifest.entries if e.domain == "X" and e.pairing_id is not None}
    new = []
    for i, e in enumerate(manifest.entries):
        if e.domain != "Y" or (e.pairing_id is not None and e.pairing_id in has_x):
            continue
        hr = D.read_slice(manifest.resolve(e), cfg.data.hu_window, slice_id=Path(e.path).stem)
        lr = D.simulate_lr(hr, spec)
        name = f"{hr.slice_id}.{cfg.data.lr_format}"
        D.write_slice(lr_dir / name, lr)
        entries[i].pairing_id = e.pairing_id or hr.slice_id
        new.append(D.ManifestEntry(f"lr/{name}", "X", entries[i].pairing_id))
    header = dict(manifest.header)
    header.update({f"degradation.{k}": v for k, v in asdict(spec).items()})
    header["hu_window"] = ",".join(repr(v) for v in cfg.data.hu_window)
    out_manifest = D.DatasetManifest(entries + new, header=header, root=out)
    D.write_manifest(out_manifest, out / "manifest.txt")
    write_config(cfg, out / "config.yaml")
    log.info("simulated %d LR slices into %s", len(new), lr_dir)
    return out / "manifest.txt"


def cmd_train(cfg: RunConfig, out_dir, resume=None):
    if cfg.data.manifest is None:
        raise ConfigError("train needs data.manifest")
    out = _out_dir(cfg, out_dir)
    slices = D.load_slices(cfg.data.manifest, cfg.data.hu_window,
                           min_size=cfg.data.hr_patch // 2)
    tc = cfg.train
    paired, pools = D.build_pools(slices, tc.mode, cfg.data.patches_per_slice, tc.paired_fraction,
                                  cfg.data.seed, cfg.data.upsample_method, cfg.data.hr_patch)
    split = {"paired": len(paired), "unpaired_x": len(pools.x), "unpaired_y": len(pools.y),
             "paired_fraction": tc.paired_fraction}
    log.info("split sizes: %s", split)
    (out / "split.json").write_text(json.dumps(split, sort_keys=True) + "\n")
    write_config(cfg, out / "config.yaml")
    log_path = out / "metrics.csv"
    state = None
    if resume is not None:
        state = load_checkpoint(resume)
        if (state.cfg.mode, state.cfg.variant) != (tc.mode, tc.variant):
            raise ConfigError(f"checkpoint was trained as {state.cfg.mode}/{state.cfg.variant}, "
                              f"config asks for {tc.mode}/{tc.variant}")
        state.cfg = tc
        rows = [r for r in read_log(log_path) if int(r["step"]) <= state.step] if log_path.exists() else []
        with log_path.open("w") as fh:
            fh.write(",".join(LOG_COLUMNS) + "\n")
            for r in rows:
                fh.write(",".join(r[c] for c in LOG_COLUMNS) + "\n")
    elif log_path.exists():
        log_path.unlink()
    model_cfgs = default_model_configs(tc, cfg.data.hr_patch, generator=cfg.model.generator,
                                       discriminator=cfg.model.discriminator)
    state, rows = train(tc, (paired, pools), state, log_path=log_path, checkpoint_dir=out / "checkpoints",
                        model_cfgs=model_cfgs, hr_size=cfg.data.hr_patch)
    return state, rows


def _slice_files(paths) -> list:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(f for f in p.iterdir() if f.suffix in SLICE_SUFFIXES)
        else:
            files.append(p)
    return files


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_infer(cfg: RunConfig, checkpoint, in_slices, out_dir) -> list:
    G, tc = load_generator(checkpoint)
    out = _out_dir(cfg, out_dir)
    tile = cfg.data.hr_patch if tc.mode == "unsupervised" else cfg.data.hr_patch // 2
    digest = _sha256(checkpoint)
    written = []
    for f in _slice_files(in_slices):
        sl = D.read_slice(f, cfg.data.hu_window)
        sr = super_resolve(G, sl.pixels, tc.mode, tile=tile, upsample_method=cfg.data.upsample_method)
        target = out / f"{f.stem}.png"
        D.write_stored(target, D.encode_slice(sr, cfg.data.hu_window))
        prov = {
            "source": f.name,
            "checkpoint_sha256": digest,
            "mode": tc.mode,
            "input_shape": list(sl.shape),
            "output_shape": list(sr.shape),
            "hu_window": list(cfg.data.hu_window),
            "tile": tile,
        }
        target.with_name(target.name + ".json").write_text(json.dumps(prov, sort_keys=True) + "\n")
        written.append(target)
    write_config(cfg, out / "config.yaml")
    log.info("wrote %d SR slices to %s", len(written), out)
    return written


def _read_dir(path, window) -> dict:
    return {f.stem: D.read_slice(f, window).pixels for f in _slice_files([path])}


def cmd_evaluate(cfg: RunConfig, ref_dir, test_dirs, out_dir) -> list:
    out = _out_dir(cfg, out_dir)
    window = cfg.data.hu_window
    refs = _read_dir(ref_dir, window)
    if not refs:
        raise ValueError(f"no reference slices found in {ref_dir}")
    reports = []
    if cfg.eval.baseline_lr_dir:
        lr = _read_dir(cfg.eval.baseline_lr_dir, window)
        reports += evaluate_baselines(refs, lr, cfg.eval.methods, cfg.eval.peak)
    for d in test_dirs:
        d = Path(d)
        reports.append(evaluate(refs, _read_dir(d, window), d.name, cfg.eval.peak))
    for r in reports:
        (out / f"report_{r.method}.csv").write_text(r.to_csv())
        for row in r.errors:
            log.error("%s / %s: %s", r.method, row.image_id, row.error)
    (out / "summary.csv").write_text(summary_csv(reports))
    table = summary_table(reports)
    (out / "summary.txt").write_text(table + "\n")
    print(table)
    write_config(cfg, out / "config.yaml")
    return reports


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override data and training seeds")
    common.add_argument("--out", help="output directory (default io.out_dir)")
    p = argparse.ArgumentParser(prog="gancircle", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="synthesise LR slices from HR slices")
    s.add_argument("manifest", nargs="?", help="input manifest (default data.manifest)")
    t = sub.add_parser("train", parents=[common], help="train generators and critics")
    t.add_argument("--resume", help="checkpoint to resume from")
    i = sub.add_parser("infer", parents=[common], help="super-resolve LR slices")
    i.add_argument("checkpoint")
    i.add_argument("slices", nargs="+", help="slice files or directories")
    e = sub.add_parser("evaluate", parents=[common], help="score SR outputs against references")
    e.add_argument("ref_dir")
    e.add_argument("test_dirs", nargs="*")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = with_seed(load_config(args.config), args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=cfg.io.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            cmd_simulate(cfg, args.manifest, args.out)
        elif args.command == "train":
            cmd_train(cfg, args.out, args.resume)
        elif args.command == "infer":
            cmd_infer(cfg, args.checkpoint, args.slices, args.out)
        elif args.command == "evaluate":
            reports = cmd_evaluate(cfg, args.ref_dir, args.test_dirs, args.out)
            if any(r.errors for r in reports):
                return 1
    except (ConfigError, D.ManifestError, CheckpointError, ShapeError, ValueError,
            FileNotFoundError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
