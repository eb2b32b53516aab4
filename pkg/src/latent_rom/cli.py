"""Command-line entry point: ``latent-rom {generate,train,evaluate,predict}``."""

import argparse
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import config as run_config
from . import fom, rom, storage, trainer
from .errors import ConfigError, LatentROMError, StorageError

log = logging.getLogger("latent_rom")


def snapshot_name(mu):
    return "mu_" + "_".join(f"{v:.6g}" for v in mu) + ".snap"


def parse_mu(text):
    try:
        mu = np.array([float(v) for v in text.split(",")])
    except (AttributeError, ValueError) as exc:
        raise ConfigError(f"--mu must be comma-separated floats, got {text!r}") from exc
    if mu.size != 2 or not np.all(np.isfinite(mu)):
        raise ConfigError(f"--mu needs 2 finite values (amplitude,width), got {text!r}")
    return mu


def cmd_generate(cfg, out=None, params=None):
    """Run the FOM at ``params`` (default: the config's starting set) and store each snapshot."""
    out = Path(out or cfg.output_dir) / "snapshots"
    params = cfg.starting_params() if params is None else np.atleast_2d(params)
    entries = []
    start = time.perf_counter()
    for mu in params:
        snap = fom.solve_timed(mu, cfg.grid, cfg.viscosity)
        name = snapshot_name(mu)
        storage.write_snapshot(out / name, snap.u, cfg.grid.dt, cfg.grid.dx, mu)
        entries.append({"file": name, "mu": mu.tolist(), "runtime": snap.runtime})
    manifest = {"snapshots": entries, "total_wall_time": time.perf_counter() - start}
    storage.write_json(out / "manifest.json", manifest)
    return manifest


def write_training_logs(out, state):
    storage.write_csv(out / "losses.csv", ["epoch", "loss_ae", "loss_sindy", "loss_total"],
                      [[e + 1, *row] for e, row in enumerate(state.loss_history)])
    storage.write_csv(out / "acquisitions.csv", ["epoch", "grid_index", "p1", "p2", "max_std"],
                      [[a.epoch, a.grid_index, *a.mu.tolist(), a.max_std] for a in state.acquisition_log])


def cmd_train(cfg, out=None):
    """Train, then write checkpoint.npz, losses.csv and acquisitions.csv.

    If training fails part-way the last good state is still written (as
    checkpoint_partial.npz when a surrogate can be fitted) before re-raising.
    """
    out = Path(out or cfg.output_dir)
    meta = cfg.to_dict()
    try:
        state = trainer.run(cfg.trainer, cfg.param_grid(), cfg.grid, initial_params=cfg.starting_params(),
                            viscosity=cfg.viscosity)
    except LatentROMError as exc:
        state = getattr(exc, "state", None)
        if state is not None and state.loss_history:
            write_training_logs(out, state)
            try:
                ckpt = storage.Checkpoint.from_state(state, cfg.viscosity, meta)
                storage.save_checkpoint(out / "checkpoint_partial.npz", ckpt)
            except LatentROMError as inner:
                log.error("could not checkpoint partial state: %s", inner)
        raise
    write_training_logs(out, state)
    storage.save_checkpoint(out / "checkpoint.npz", storage.Checkpoint.from_state(state, cfg.viscosity, meta))
    return state


def _timed_predict(ckpt, mu, n_samples, seed):
    start = time.perf_counter()
    pred = rom.predict(ckpt.ae, ckpt.surrogate, mu, ckpt.grid, n_samples, seed=seed, library=ckpt.library)
    return pred, time.perf_counter() - start


def cmd_evaluate(cfg, checkpoint, out=None, n_samples=None, seed=None):
    """Error/uncertainty heatmap over the whole test grid plus a summary.

    FOM snapshots are cached under ``<out>/truth`` with their runtimes in a
    manifest, so later evaluations reuse them.
    """
    out = Path(out or cfg.output_dir)
    ckpt = storage.load_checkpoint(checkpoint)
    n_samples = n_samples or cfg.trainer.n_samples
    seed = cfg.seed if seed is None else seed
    cache = out / "truth"
    manifest_path = cache / "manifest.json"
    manifest = storage.read_json(manifest_path) if manifest_path.exists() else {}
    grid = ckpt.param_grid
    rows, fom_times, rom_times = [], [], []
    worst = 0.0
    for idx, mu in enumerate(grid.points):
        name = snapshot_name(mu)
        if name in manifest and (cache / name).exists():
            u_true, _ = storage.read_snapshot(cache / name)
            fom_time = manifest[name]
        else:
            snap = fom.solve_timed(mu, ckpt.grid, ckpt.viscosity)
            u_true, fom_time = snap.u, snap.runtime
            storage.write_snapshot(cache / name, u_true, ckpt.grid.dt, ckpt.grid.dx, mu)
            manifest[name] = fom_time
        pred, _ = _timed_predict(ckpt, mu, n_samples, [seed, idx])
        _, rom_time = _timed_predict(ckpt, mu, 1, seed)
        err = rom.max_relative_error(u_true, pred.mean)
        worst = max(worst, err)
        fom_times.append(fom_time)
        rom_times.append(rom_time)
        rows.append([*mu.tolist(), err, pred.max_std, int(grid.sampled[idx])])
    storage.write_json(manifest_path, manifest)
    storage.write_csv(out / "heatmap.csv", storage.HEATMAP_HEADER, rows)
    summary = {
        "worst_max_rel_error": worst,
        "mean_fom_runtime": float(np.mean(fom_times)),
        "mean_rom_runtime": float(np.mean(rom_times)),
        "mean_speedup": float(np.mean(fom_times) / np.mean(rom_times)),
        "n_points": len(rows),
        "n_samples": n_samples,
    }
    storage.write_json(out / "evaluation.json", summary)
    print(f"worst max relative error: {100 * worst:.3f}%")
    print(f"mean speed-up (FOM / ROM, N_s=1): {summary['mean_speedup']:.1f}x")
    return summary


def cmd_predict(checkpoint, mu, n_samples=1, seed=0, out="prediction"):
    """Write mean.snap, variance.snap and summary.json for one parameter."""
    out = Path(out)
    ckpt = storage.load_checkpoint(checkpoint)
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (ckpt.param_grid.dim,):
        raise ConfigError(f"--mu needs {ckpt.param_grid.dim} values, got {mu.size}")
    inside = bool(np.all(mu >= ckpt.param_grid.lower) and np.all(mu <= ckpt.param_grid.upper))
    if not inside:
        warnings.warn(f"mu={mu.tolist()} lies outside the training parameter box; extrapolating", stacklevel=2)
    pred, runtime = _timed_predict(ckpt, mu, n_samples, seed)
    storage.write_snapshot(out / "mean.snap", pred.mean, ckpt.grid.dt, ckpt.grid.dx, mu)
    storage.write_snapshot(out / "variance.snap", pred.variance, ckpt.grid.dt, ckpt.grid.dx, mu)
    summary = {"mu": mu.tolist(), "n_samples": n_samples, "seed": seed, "max_std": pred.max_std,
               "runtime": runtime, "diverged": pred.diverged, "extrapolated": not inside}
    storage.write_json(out / "summary.json", summary)
    return summary


def build_parser():
    p = argparse.ArgumentParser(prog="latent-rom", description="Latent-space ROM with active learning.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("generate", help="run the FOM and write snapshot files")
    gen.add_argument("--config", required=True)
    gen.add_argument("--mu", help="single parameter 'a,w' instead of the config's starting set")
    gen.add_argument("--out")
    tr = sub.add_parser("train", help="joint training with greedy acquisition")
    tr.add_argument("--config", required=True)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--out")
    ev = sub.add_parser("evaluate", help="error and uncertainty heatmap over the test grid")
    ev.add_argument("--config", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--samples", type=int)
    ev.add_argument("--seed", type=int)
    ev.add_argument("--out")
    pr = sub.add_parser("predict", help="ROM prediction at one parameter")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--mu", required=True)
    pr.add_argument("--samples", type=int, default=1)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out", default="prediction")
    return p


def _load_config(args):
    cfg = run_config.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.trainer.seed = args.seed
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            cfg = _load_config(args)
            params = parse_mu(args.mu)[None] if args.mu else None
            manifest = cmd_generate(cfg, args.out, params)
            print(f"wrote {len(manifest['snapshots'])} snapshots")
        elif args.command == "train":
            cfg = _load_config(args)
            state = cmd_train(cfg, args.out)
            print(f"trained {state.epoch} epochs; dataset size {len(state.dataset)}; "
                  f"final loss {state.loss_history[-1][2]:.4e}")
        elif args.command == "evaluate":
            cmd_evaluate(_load_config(args), args.checkpoint, args.out, args.samples, args.seed)
        elif args.command == "predict":
            summary = cmd_predict(args.checkpoint, parse_mu(args.mu), args.samples, args.seed, args.out)
            print(f"max std {summary['max_std']:.4e}; runtime {summary['runtime']:.4g} s")
    except LatentROMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return StorageError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
