"""``nestcast`` command line: graph building, data, training, inference and scoring.

Every subcommand writes a ``manifest.json`` (a :class:`RunManifest`) next to
its outputs. ``nestcast replay --manifest FILE`` re-runs the recorded argv
and compares output hashes.

Exit codes: 0 ok, 1 runtime error, 2 usage error, 3 data-format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .fieldio import FieldFile, FieldFormatError, file_hash, read_field, write_field

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_FORMAT = 0, 1, 2, 3
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# manifests and seeds


def substream(seed: int, name: str) -> int:
    """Deterministic 32-bit seed for the named sub-stream of ``seed``."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1)[0])


@dataclass
class RunManifest:
    subcommand: str
    argv: list[str]
    config: dict
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    version: str = __version__

    def write(self, path: str) -> str:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
        return path

    @classmethod
    def read(cls, path: str) -> "RunManifest":
        with open(path) as f:
            return cls(**json.load(f))


def hash_outputs(out_dir: str) -> dict:
    """Hash of every file under ``out_dir`` except the manifest, keyed by relative path."""
    out = {}
    for root, _, files in os.walk(out_dir):
        for name in sorted(files):
            if name == MANIFEST and root == out_dir:
                continue
            p = os.path.join(root, name)
            out[os.path.relpath(p, out_dir)] = file_hash(p)
    return dict(sorted(out.items()))


def hash_inputs(paths) -> dict:
    out = {}
    for p in paths:
        if p is None:
            continue
        if os.path.isdir(p):
            for k, v in hash_outputs(p).items():
                out[os.path.join(p, k)] = v
        elif os.path.exists(p):
            out[p] = file_hash(p)
    return out


# --------------------------------------------------------------------------
# helpers


def _floats(text: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise UsageError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _load_model(ckpt: str, graph_dir: str | None = None):
    from .meshgraph import load_graph
    from .training import load_model

    graph = load_graph(graph_dir) if graph_dir else None
    return load_model(ckpt, graph)


def _physical_model(model, stats):
    """Wrap a normalised-space model so it maps physical fields to physical fields."""
    from .training import denormalize, normalize

    if stats is None:
        return model

    def step(z):
        zn = normalize(np.asarray(z, dtype=np.float64), stats).astype(model.params.dtype)
        return denormalize(model(zn).astype(np.float64), stats)

    return step


# --------------------------------------------------------------------------
# subcommands; each returns (config, seeds, inputs, out_dir)


def cmd_build_graph(a):
    from .meshgraph import RegionBox, build_earth_graph, save_graph

    regions = [RegionBox(*_floats(r, 4)) for r in a.region]
    domain = RegionBox(*_floats(a.domain, 4)) if a.domain else None
    g = build_earth_graph(a.h, a.w, a.levels, regions, g2m_factor=a.g2m_factor, domain=domain)
    save_graph(g, a.out)
    print(json.dumps(g.counts()))
    return {"counts": g.counts()}, {}, [], a.out


def cmd_gen_data(a):
    from .synthetic import VORTEX_CHANNELS, AdvectionConfig, VortexConfig, advection_dataset, vortex_dataset

    os.makedirs(a.out, exist_ok=True)
    seed = substream(a.seed, "data")
    prov = {"generator": f"synthetic/{a.kind}", "seed": a.seed, "data_seed": seed}
    if a.kind == "advect":
        cfg = AdvectionConfig()
        runs = advection_dataset(a.h, a.w, a.steps, a.channels, seed, cfg, n_trajectories=a.trajectories)
        if a.trajectories == 1:
            runs = runs[None]
        for i, run in enumerate(runs):
            write_field(
                os.path.join(a.out, f"traj_{i:04d}.field"),
                FieldFile(run.astype(np.float64), provenance=dict(prov, trajectory=i, advection=cfg.to_dict())),
            )
        config = {"advection": cfg.to_dict()}
    else:
        cfg = VortexConfig()
        fields, centers = vortex_dataset(a.h, a.w, a.steps, cfg)
        write_field(
            os.path.join(a.out, "traj_0000.field"),
            FieldFile(fields, list(VORTEX_CHANNELS), lon0=-180.0, provenance=dict(prov, vortex=cfg.to_dict())),
        )
        with open(os.path.join(a.out, "centers.json"), "w") as f:
            json.dump({"centers": centers.tolist()}, f)
        config = {"vortex": cfg.to_dict()}
    return config, {"data": seed}, [], a.out


def _read_trajectories(data_dir: str) -> np.ndarray:
    names = sorted(n for n in os.listdir(data_dir) if n.endswith(".field"))
    if not names:
        raise FieldFormatError(f"no .field files in {data_dir}")
    runs = [read_field(os.path.join(data_dir, n)).data for n in names]
    shapes = {r.shape for r in runs}
    if len(shapes) != 1:
        raise FieldFormatError(f"trajectories in {data_dir} have differing shapes {shapes}")
    return np.stack(runs).astype(np.float64)


def cmd_train(a):
    from .meshgraph import load_graph
    from .network import Forecaster, NetworkConfig
    from .training import TrainConfig, fit_norm, make_pairs, normalize, save_model, train

    graph = load_graph(a.graph)
    runs = _read_trajectories(a.data)
    if runs.shape[-2:] != graph.shape:
        raise FieldFormatError(f"data grid {runs.shape[-2:]} does not match graph grid {graph.shape}")
    stats = fit_norm(runs)
    x, y = make_pairs(normalize(runs, stats))
    ncfg = NetworkConfig(
        latent_dim=a.latent,
        n_msm_blocks=a.blocks,
        n_heads=a.heads,
        gate_dim=a.gate_dim,
        n_channels=runs.shape[-3],
        messaging=a.messaging,
    )
    seeds = {"init": substream(a.seed, "init"), "batches": substream(a.seed, "batches")}
    model = Forecaster(ncfg, graph, seed=seeds["init"], dtype=np.float32)
    tcfg = TrainConfig(steps=a.epochs, lr0=a.lr, batch_size=a.batch, seed=seeds["batches"], optimizer=a.optimizer, loss=a.loss)
    res = train(model, x, y, tcfg)
    save_model(model, a.out, stats, {"train": tcfg.to_dict()})
    with open(os.path.join(a.out, "loss.csv"), "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["step", "lr", "loss"])
        for i, (lr, loss) in enumerate(zip(res.lrs, res.losses)):
            wr.writerow([i, repr(float(lr)), repr(float(loss))])
    print(f"final loss {res.losses[-1]:.6g}")
    return {"network": ncfg.to_dict(), "train": tcfg.to_dict()}, seeds, [a.graph, a.data], a.out


def cmd_forecast(a):
    from .training import rollout

    model, stats, _ = _load_model(a.params, a.graph)
    init = read_field(a.init)
    z0 = init.data[0] if init.data.ndim == 4 else init.data
    if z0.shape != (model.cfg.in_channels,) + model.graph.shape:
        raise FieldFormatError(f"initial field {z0.shape} does not match model input")
    seq = rollout(_physical_model(model, stats), z0.astype(np.float64), a.steps)
    os.makedirs(a.out, exist_ok=True)
    write_field(os.path.join(a.out, "forecast.field"), FieldFile(np.asarray(seq, dtype=np.float64), init.channels))
    return {"steps": a.steps}, {}, [a.params, a.graph, a.init], a.out


def cmd_nest(a):
    from .nesting import NestMode, RegionWindow, nng_rollout
    from .training import denormalize, normalize

    mode = NestMode.parse(a.mode)
    window = RegionWindow.parse(a.window, a.boundary, a.refine)
    regional, rstats, _ = _load_model(a.regional_ckpt)
    zr0 = read_field(a.region_init).data
    zr0 = zr0[0] if zr0.ndim == 4 else zr0
    stats = rstats
    global_seq = None
    global_model = None
    zg0 = None
    if mode is not NestMode.NONE:
        if a.global_truth:
            gt = read_field(a.global_truth).data
            global_seq = normalize(gt.astype(np.float64), stats)[1 : a.steps + 1]
            if len(global_seq) < a.steps:
                raise FieldFormatError("global truth sequence shorter than --steps + 1")
        elif a.global_ckpt and a.global_init:
            gmodel, gstats, _ = _load_model(a.global_ckpt)
            zg0 = read_field(a.global_init).data
            zg0 = normalize((zg0[0] if zg0.ndim == 4 else zg0).astype(np.float64), stats)
            physical = _physical_model(gmodel, gstats)

            # the forcing lives in the regional model's normalised space
            def global_model(z):
                return normalize(physical(denormalize(z, stats)), stats)

        else:
            raise UsageError("nng/bf modes need --global-truth or --global-ckpt with --global-init")
    zr = normalize(zr0.astype(np.float64), stats).astype(regional.params.dtype)

    def reg(z):
        return regional(np.asarray(z, dtype=regional.params.dtype))

    seq = nng_rollout(global_model, reg, zg0, zr, window, mode, a.steps, global_seq)
    out = denormalize(np.asarray(seq, dtype=np.float64), stats)
    os.makedirs(a.out, exist_ok=True)
    write_field(os.path.join(a.out, "regional.field"), FieldFile(out))
    return {"mode": mode.value, "window": window.to_dict()}, {}, [a.regional_ckpt, a.global_ckpt, a.region_init, a.global_init, a.global_truth], a.out


def cmd_ensemble(a):
    from .ensemble import PerlinSpec, ensemble_forecast
    from .training import denormalize, normalize

    model, stats, _ = _load_model(a.params, a.graph)
    init = read_field(a.init)
    z0 = init.data[0] if init.data.ndim == 4 else init.data
    noise_seed = substream(a.seed, "members")
    spec = PerlinSpec(a.octaves, a.base_freq, a.persistence, a.amplitude, noise_seed)
    zn = normalize(z0.astype(np.float64), stats).astype(model.params.dtype)
    res = ensemble_forecast(model, zn, spec, a.members, a.steps)
    os.makedirs(a.out, exist_ok=True)
    for m in range(a.members):
        write_field(os.path.join(a.out, f"member_{m:03d}.field"), FieldFile(denormalize(res.members[m].astype(np.float64), stats)))
    write_field(os.path.join(a.out, "mean.field"), FieldFile(denormalize(res.mean.astype(np.float64), stats)))
    return {"perlin": spec.to_dict(), "members": a.members}, {"members": noise_seed}, [a.params, a.graph, a.init], a.out


def cmd_evaluate(a):
    from . import evaluation as ev

    pred = read_field(a.pred).data.astype(np.float64)
    truth = read_field(a.truth).data.astype(np.float64)
    if pred.shape != truth.shape:
        raise FieldFormatError(f"prediction {pred.shape} and truth {truth.shape} differ")
    clim = read_field(a.clim).data.astype(np.float64) if a.clim else ev.climatology(truth)
    if clim.ndim == 4:
        clim = clim[0]
    metrics = [m.strip() for m in a.metrics.split(",") if m.strip()]
    unknown = set(metrics) - {"rmse", "acc", "csi", "sedi"}
    if unknown:
        raise UsageError(f"unknown metrics {sorted(unknown)}")
    report = {"shape": list(pred.shape)}
    if "rmse" in metrics:
        report["rmse"] = ev.rmse(pred, truth).tolist()
    if "acc" in metrics:
        report["acc"] = ev.acc(pred, truth, clim).tolist()
    if "csi" in metrics or "sedi" in metrics:
        thr = ev.extreme_threshold(truth)
        counts = ev.contingency(pred, truth, thr)
        report["threshold"] = thr.tolist()
        report["contingency"] = [asdict(c) for c in counts]
        if "csi" in metrics:
            report["csi"] = [ev.csi(c) for c in counts]
        if "sedi" in metrics:
            report["sedi"] = [ev.sedi(c) for c in counts]
    out_dir = os.path.dirname(os.path.abspath(a.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(a.out, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True, default=lambda v: None)
    return {"metrics": metrics}, {}, [a.pred, a.truth, a.clim], out_dir


def cmd_spectrum(a):
    from .evaluation import zonal_spectrum

    ff = read_field(a.field)
    d = ff.data.astype(np.float64)
    p = zonal_spectrum(d)
    p = p.reshape((-1,) + p.shape[-2:]).mean(axis=0)
    out_dir = os.path.dirname(os.path.abspath(a.out))
    os.makedirs(out_dir, exist_ok=True)
    names = ff.channels or [f"ch{i}" for i in range(p.shape[0])]
    with open(a.out, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["k"] + list(names))
        for k in range(p.shape[1]):
            wr.writerow([k] + [repr(float(v)) for v in p[:, k]])
    return {}, {}, [a.field], out_dir


def cmd_track(a):
    from .tracking import CHANNELS, TrackerConfig, track_cyclone

    ff = read_field(a.fields)
    if ff.data.ndim != 4 or ff.data.shape[1] != len(CHANNELS):
        raise FieldFormatError(f"tracking needs [T, {len(CHANNELS)}, H, W] fields ({', '.join(CHANNELS)})")
    lat0, lon0 = _floats(a.init, 2)
    track = track_cyclone(ff.data.astype(np.float64), ff.lat(), ff.lon(), (lat0, lon0), TrackerConfig(), a.start_step)
    out_dir = os.path.dirname(os.path.abspath(a.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(a.out, "w") as f:
        json.dump(track.to_dict(), f, indent=2)
    if a.csv:
        with open(a.csv, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["step", "lat", "lon", "mslp"])
            for fx in track.fixes:
                wr.writerow([fx.step, fx.lat, fx.lon, fx.mslp])
    print(f"{len(track.fixes)} fixes, termination: {track.termination}")
    return {"tracker": TrackerConfig().to_dict()}, {}, [a.fields], out_dir


def cmd_replay(a):
    man = RunManifest.read(a.manifest)
    with tempfile.TemporaryDirectory() as tmp:
        argv = _redirect_outputs(man, tmp)
        code = run(argv, write_manifest=True)
        if code != EXIT_OK:
            raise RuntimeError(f"replayed command exited with {code}")
        fresh = RunManifest.read(manifest_path(build_parser().parse_args(argv))).outputs
    old = {os.path.basename(k) if man.subcommand in _FILE_OUTPUT else k: v for k, v in man.outputs.items()}
    new = {os.path.basename(k) if man.subcommand in _FILE_OUTPUT else k: v for k, v in fresh.items()}
    same = old == new
    print(json.dumps({"identical": same, "outputs": len(new)}))
    if not same:
        raise RuntimeError("replayed outputs differ from the manifest")
    return None


# subcommands whose --out is a file rather than a directory
_FILE_OUTPUT = {"evaluate", "spectrum", "track"}


def _redirect_outputs(man: RunManifest, tmp: str) -> list[str]:
    argv = list(man.argv)
    for flag in ("--out", "--csv"):
        if flag in argv:
            i = argv.index(flag) + 1
            argv[i] = os.path.join(tmp, os.path.basename(argv[i])) if man.subcommand in _FILE_OUTPUT else tmp
    return argv


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nestcast", description="Global-regional graph forecasting toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("build-graph", help="build and save a region-refined earth graph")
    s.add_argument("--h", type=int, required=True)
    s.add_argument("--w", type=int, required=True)
    s.add_argument("--levels", type=int, required=True)
    s.add_argument("--region", action="append", default=[], help="lat0,lat1,lon0,lon1 (repeatable)")
    s.add_argument("--domain", default=None, help="limited-area box lat0,lat1,lon0,lon1")
    s.add_argument("--g2m-factor", type=float, default=0.6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_graph)

    s = sub.add_parser("gen-data", help="generate synthetic trajectories")
    s.add_argument("--kind", choices=["advect", "vortex"], required=True)
    s.add_argument("--h", type=int, required=True)
    s.add_argument("--w", type=int, required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--channels", type=int, default=4)
    s.add_argument("--trajectories", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="one-step supervised training")
    s.add_argument("--graph", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int, default=200, help="optimisation steps")
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--optimizer", choices=["sgd", "adam"], default="sgd")
    s.add_argument("--loss", choices=["norm_ratio", "relative_l2"], default="norm_ratio")
    s.add_argument("--latent", type=int, default=32)
    s.add_argument("--blocks", type=int, default=4)
    s.add_argument("--heads", type=int, default=4)
    s.add_argument("--gate-dim", type=int, default=None)
    s.add_argument("--messaging", choices=["msm", "mlp"], default="msm")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("forecast", help="autoregressive rollout from an initial field")
    s.add_argument("--graph", default=None)
    s.add_argument("--params", required=True)
    s.add_argument("--init", required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_forecast)

    s = sub.add_parser("nest", help="regional rollout driven by a global model or truth")
    s.add_argument("--regional-ckpt", required=True)
    s.add_argument("--global-ckpt", default=None)
    s.add_argument("--global-init", default=None)
    s.add_argument("--global-truth", default=None, help="coarse global sequence used in place of a global model")
    s.add_argument("--region-init", required=True)
    s.add_argument("--window", required=True, help="r0,r1,c0,c1 on the coarse grid")
    s.add_argument("--boundary", type=int, default=2)
    s.add_argument("--refine", type=int, default=4)
    s.add_argument("--mode", choices=["nng", "bf", "none"], default="nng")
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_nest)

    s = sub.add_parser("ensemble", help="Perlin-perturbed ensemble rollout")
    s.add_argument("--graph", default=None)
    s.add_argument("--params", required=True)
    s.add_argument("--init", required=True)
    s.add_argument("--members", type=int, default=50)
    s.add_argument("--amplitude", type=float, default=0.05)
    s.add_argument("--octaves", type=int, default=3)
    s.add_argument("--base-freq", type=int, default=4)
    s.add_argument("--persistence", type=float, default=0.5)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("evaluate", help="RMSE / ACC / CSI / SEDI report")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--clim", default=None)
    s.add_argument("--metrics", default="rmse,acc,csi,sedi")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("spectrum", help="zonal power spectrum as CSV")
    s.add_argument("--field", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("track", help="track a cyclone through a field sequence")
    s.add_argument("--fields", required=True)
    s.add_argument("--init", required=True, help="lat,lon")
    s.add_argument("--start-step", type=int, default=0)
    s.add_argument("--csv", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_replay)
    return p


def _error(category: str, exc: BaseException) -> None:
    print(json.dumps({"error": category, "message": str(exc)}), file=sys.stderr)


def run(argv: list[str] | None = None, write_manifest: bool = True) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    t0 = time.perf_counter()
    try:
        result = args.func(args)
    except UsageError as exc:
        _error("usage", exc)
        return EXIT_USAGE
    except FieldFormatError as exc:
        _error(exc.category, exc)
        return EXIT_FORMAT
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        _error("runtime", exc)
        return EXIT_RUNTIME
    if result is not None and write_manifest:
        config, seeds, inputs, out_dir = result
        resolved = {k: v for k, v in vars(args).items() if k != "func"}
        man = RunManifest(
            args.command,
            argv,
            dict(config, args=resolved),
            dict(seeds, root=getattr(args, "seed", None)),
            hash_inputs(inputs),
            hash_outputs(out_dir) if args.command not in _FILE_OUTPUT else _file_outputs(args),
            round(time.perf_counter() - t0, 3),
        )
        man.write(manifest_path(args))
    return EXIT_OK


def manifest_path(args) -> str:
    """``<dir>/manifest.json`` for directory outputs, ``<file>.manifest.json`` otherwise."""
    if args.command in _FILE_OUTPUT:
        return os.path.abspath(args.out) + ".manifest.json"
    return os.path.join(args.out, MANIFEST)


def _file_outputs(args) -> dict:
    out = {}
    for p in (args.out, getattr(args, "csv", None)):
        if p and os.path.exists(p):
            out[p] = file_hash(p)
    return out


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
