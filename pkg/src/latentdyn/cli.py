"""Command-line pipeline driver.

Subcommands cover the full workflow: `synth` writes a synthetic dataset
directory, `cluster` partitions the mesh, `train` fits the sequential
autoencoder, `ica` fits the linear null model, `eval` scores checkpoints,
`traverse` exports latent-traversal maps, `tsne` embeds the latent
trajectory, and `sweep` repeats train+eval across the beta grid.

Option precedence is flag > config-file key > built-in default.  Exit
codes: 2 missing file, 3 bad configuration, 4 numerical abort.
"""

import argparse
import os
import sys
from io import BytesIO

BETA_SWEEP = (0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 2.0, 3.0, 4.0, 5.0)

EXIT_MISSING_FILE = 2
EXIT_BAD_CONFIG = 3
EXIT_NUMERICAL = 4

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _apply_thread_cap():
    cap = os.environ.get("LATENTDYN_THREADS")
    if cap:
        for var in _THREAD_VARS:
            # explicit per-library settings win over the blanket cap
            os.environ.setdefault(var, cap)


# must run at import time, before numpy wires up its thread pools
_apply_thread_cap()


class ConfigError(ValueError):
    """Configuration problem; the message names the offending field."""


def _load_config(path):
    if path is None:
        return {}
    from .io import read_json
    config = read_json(path)
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    return config


def _merge_options(command, config, allowed, flags):
    """flag > config key > default; unknown config keys are rejected."""
    unknown = sorted(set(config) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config field {unknown[0]!r} for {command}")
    merged = dict(config)
    for key, value in flags.items():
        if value is not None:
            merged[key] = value
    return merged


def _detuple(options):
    # JSON has no tuples; dataclass fields expect them
    return {key: tuple(value) if isinstance(value, list) else value
            for key, value in options.items()}


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def _run_hash(command, options, inputs):
    from .io import config_hash
    return config_hash({"command": command,
                        "options": {k: _jsonable(v)
                                    for k, v in sorted(options.items())},
                        "inputs": inputs})


def _stored_hash(path):
    """The config hash an artifact carries in its JSON body or sidecar."""
    from .io import read_json
    for candidate in (path, path + ".json"):
        if candidate.endswith(".json") and os.path.exists(candidate):
            value = read_json(candidate).get("config_hash")
            if value:
                return value
    return os.path.basename(path)


def _write_manifest(out_dir, run_hash, seed, inputs, outputs):
    from .io import RunManifest
    RunManifest(run_hash, seed, inputs=inputs, outputs=outputs).write(
        os.path.join(out_dir, "manifest.json"))


def _tag_sidecar(path, run_hash):
    from .io import write_json
    write_json(path + ".json", {"config_hash": run_hash})


def _new_figure(figsize):
    import matplotlib
    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "latentdyn"
    return plt, plt.subplots(figsize=figsize)


def _save_svg(fig, plt, path):
    from .io import atomic_write_bytes
    fig.tight_layout()
    buf = BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def _bar_svg(path, labels, values, ylabel):
    plt, (fig, ax) = _new_figure((6.0, 3.5))
    ax.bar(range(len(values)), values, color="#4878cf")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels([str(label) for label in labels])
    ax.set_xlabel("beta")
    ax.set_ylabel(ylabel)
    _save_svg(fig, plt, path)


# -- synth --------------------------------------------------------------


def _cmd_synth(args):
    from dataclasses import fields
    from .io import write_dataset
    from .synth import SynthConfig, generate

    allowed = tuple(f.name for f in fields(SynthConfig) if f.name != "design")
    flags = {"seed": args.seed, "n_subjects": args.subjects,
             "vertices_per_hemisphere": args.vertices,
             "n_sources": args.sources, "noise_sigma": args.noise,
             "mixing": args.mixing, "ar1_coeff": args.ar1,
             "blob_radius": args.blob_radius}
    options = _merge_options("synth", _load_config(args.config), allowed,
                             flags)
    cfg = SynthConfig(**_detuple(options))
    ds = generate(cfg)
    run_hash = write_dataset(args.out, ds)
    _write_manifest(args.out, run_hash, cfg.seed, inputs={},
                    outputs={"dataset": args.out})
    print(f"wrote {len(ds.subjects)} subjects x {ds.mesh.n_vertices} "
          f"vertices to {args.out}")
    return 0


# -- cluster ------------------------------------------------------------


def _cmd_cluster(args):
    from .io import read_dataset, write_clusters
    from .spectral import cluster_mesh
    from .surface import (functional_adjacency, geodesic_distances,
                          structural_adjacency)

    flags = {"mode": args.mode, "k": args.k, "seed": args.seed}
    options = _merge_options("cluster", _load_config(args.config),
                             ("mode", "k", "seed"), flags)
    mode = options.get("mode", "structural")
    k = int(options.get("k", 128))
    seed = int(options.get("seed", 0))
    if mode not in ("structural", "functional"):
        raise ConfigError(f"mode must be structural or functional, "
                          f"got {mode!r}")

    ds = read_dataset(args.dataset)
    adjacency = {}
    for h in ("L", "R"):
        ids = ds.mesh.vertex_ids(h)
        if mode == "structural":
            adjacency[h] = structural_adjacency(
                geodesic_distances(ds.mesh, h), ids)
        else:
            fit = [s for s in ds.subjects if s.split in ("train", "val")]
            adjacency[h] = functional_adjacency(
                [s.data[:, ids] for s in fit], ids,
                [s.split for s in fit])
    ca = cluster_mesh(ds.mesh, adjacency["L"], adjacency["R"], k, mode, seed)

    inputs = {"dataset": _stored_hash(os.path.join(args.dataset,
                                                   "config.json"))}
    run_hash = _run_hash("cluster", {"mode": mode, "k": k, "seed": seed},
                         inputs)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "clusters.json")
    write_clusters(path, ca, extra={"config_hash": run_hash})
    _write_manifest(args.out, run_hash, seed,
                    inputs={"dataset": args.dataset},
                    outputs={"clusters": path})
    print(f"wrote {mode} clustering (k={k}, max patch "
          f"{ca.max_cluster_size}) to {path}")
    return 0


# -- train --------------------------------------------------------------


def _split_model_train(command, config, flags, ca):
    """Partition merged options into ModelConfig and TrainConfig kwargs."""
    from dataclasses import fields
    from .model import ModelConfig
    from .trainer import TrainConfig

    model_fields = {f.name for f in fields(ModelConfig)}
    train_fields = {f.name for f in fields(TrainConfig)}
    options = _merge_options(command, config,
                             tuple(model_fields | train_fields), flags)
    model_kv = _detuple({k: v for k, v in options.items()
                         if k in model_fields})
    train_kv = _detuple({k: v for k, v in options.items()
                         if k in train_fields})
    stored_k = model_kv.setdefault("k_clusters", ca.k_per_hemisphere)
    if stored_k != ca.k_per_hemisphere:
        raise ConfigError(f"k_clusters {stored_k} does not match the "
                          f"clusters file (k={ca.k_per_hemisphere})")
    return options, model_kv, train_kv


def _train_one(ds, ca, model_kv, train_kv, out_dir, extra_meta):
    from dataclasses import asdict
    from .io import write_checkpoint
    from .model import Model, ModelConfig
    from .trainer import TrainConfig, train, write_metrics_csv

    mcfg = ModelConfig(**model_kv)
    tcfg = TrainConfig(**train_kv)
    model = Model(mcfg, ca, seed=tcfg.seed)
    os.makedirs(out_dir, exist_ok=True)
    history = train(ds.split_arrays("train"), ds.split_arrays("val"),
                    model, tcfg)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    write_metrics_csv(metrics_path, history)
    ckpt_path = os.path.join(out_dir, "checkpoint.svae")
    meta = {"model": {k: _jsonable(v) for k, v in asdict(mcfg).items()},
            "train": {k: _jsonable(v) for k, v in asdict(tcfg).items()},
            "n_parameters": model.count_parameters()}
    meta.update(extra_meta)
    write_checkpoint(ckpt_path, {name: p.data
                                 for name, p in model.params.items()},
                     kind="model", meta=meta)
    return model, history, ckpt_path, metrics_path


def _cmd_train(args):
    from .io import read_clusters, read_dataset

    config = _load_config(args.config)
    ds = read_dataset(args.dataset)
    ca = read_clusters(os.path.join(args.clusters, "clusters.json")
                       if os.path.isdir(args.clusters) else args.clusters,
                       ds.mesh.hemisphere)
    flags = {"beta": args.beta, "epochs": args.epochs, "seed": args.seed}
    options, model_kv, train_kv = _split_model_train("train", config, flags,
                                                     ca)
    inputs = {"dataset": _stored_hash(os.path.join(args.dataset,
                                                   "config.json")),
              "clusters": _stored_hash(args.clusters)}
    run_hash = _run_hash("train", options, inputs)

    model, history, ckpt_path, metrics_path = _train_one(
        ds, ca, model_kv, train_kv, args.out, {"config_hash": run_hash})
    _tag_sidecar(metrics_path, run_hash)
    _write_manifest(args.out, run_hash, train_kv.get("seed", 42),
                    inputs={"dataset": args.dataset,
                            "clusters": args.clusters},
                    outputs={"checkpoint": ckpt_path,
                             "metrics": metrics_path})
    last = history[-1]
    print(f"trained {model.count_parameters()} parameters for "
          f"{len(history)} epochs; final train {last.train_total:.4f}, "
          f"val {last.val_total:.4f}; checkpoint at {ckpt_path}")
    return 0


# -- ica ----------------------------------------------------------------


def _cmd_ica(args):
    import numpy as np
    from .io import read_dataset, write_checkpoint
    from .ica import fit_ica

    flags = {"n_components": args.components, "seed": args.seed,
             "lr": args.lr, "batch_size": args.batch_size,
             "max_epochs": args.max_epochs}
    options = _merge_options(
        "ica", _load_config(args.config),
        ("n_components", "seed", "lr", "batch_size", "max_epochs"), flags)
    n_components = int(options.pop("n_components", 16))
    seed = int(options.pop("seed", 0))

    ds = read_dataset(args.dataset)
    x = np.concatenate(ds.split_arrays("train"), axis=0)
    model = fit_ica(x, n_components, seed, **options)

    inputs = {"dataset": _stored_hash(os.path.join(args.dataset,
                                                   "config.json"))}
    run_hash = _run_hash("ica", {"n_components": n_components, "seed": seed,
                                 **options}, inputs)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "ica.svae")
    write_checkpoint(path,
                     {"whitening/matrix": model.whitening.matrix,
                      "whitening/mean": model.whitening.mean,
                      "whitening/explained": model.whitening.explained,
                      "unmixing": model.unmixing,
                      "mixing": model.mixing},
                     kind="ica",
                     meta={"n_components": n_components, "seed": seed,
                           "config_hash": run_hash})
    _write_manifest(args.out, run_hash, seed,
                    inputs={"dataset": args.dataset},
                    outputs={"checkpoint": path})
    print(f"fit {n_components}-component unmixing on "
          f"{x.shape[0]} frames; checkpoint at {path}")
    return 0


# -- eval / traverse / tsne ----------------------------------------------


def _load_model(checkpoint, mesh, clusters):
    from .io import read_checkpoint, read_clusters
    from .model import Model, ModelConfig

    tensors, meta = read_checkpoint(checkpoint)
    if meta.get("kind") != "model":
        raise ValueError(f"{checkpoint}: expected kind 'model', "
                         f"got {meta.get('kind')!r}")
    mcfg = ModelConfig(**_detuple(meta["model"]))
    ca = read_clusters(os.path.join(clusters, "clusters.json")
                       if os.path.isdir(clusters) else clusters,
                       mesh.hemisphere)
    model = Model(mcfg, ca, seed=0)
    missing = sorted(set(model.params) - set(tensors))
    extra = sorted(set(tensors) - set(model.params))
    if missing or extra:
        raise ValueError(f"{checkpoint}: parameter names do not match "
                         f"(missing {missing[:3]}, unexpected {extra[:3]})")
    for name, p in model.params.items():
        if tensors[name].shape != p.data.shape:
            raise ValueError(f"{checkpoint}: tensor {name} has shape "
                             f"{tensors[name].shape}, expected "
                             f"{p.data.shape}")
        p.data[...] = tensors[name]
    return model


def _write_maps_csv(path, maps):
    from .io import write_csv_rows
    n_factors, n_vertices = maps.shape
    names = ["vertex"] + [f"factor_{j:02d}" for j in range(n_factors)]
    rows = []
    for i in range(n_vertices):
        row = {"vertex": i}
        for j in range(n_factors):
            row[f"factor_{j:02d}"] = float(maps[j, i])
        rows.append(row)
    write_csv_rows(path, names, rows)


def _eval_one(model, ds, split, out_dir, tag, run_hash):
    from .evaluate import evaluate_model
    from .io import write_json

    report = evaluate_model(model, ds, split=split)
    report_path = os.path.join(out_dir, f"report_{tag}.json")
    write_json(report_path, {**report.to_dict(), "beta": model.cfg.beta,
                             "config_hash": run_hash})
    maps_path = os.path.join(out_dir, f"maps_{tag}.csv")
    _write_maps_csv(maps_path, report.spatial_maps)
    _tag_sidecar(maps_path, run_hash)
    return report, report_path, maps_path


def _cmd_eval(args):
    from .io import read_dataset, write_csv_rows

    ds = read_dataset(args.dataset)
    inputs = {"dataset": _stored_hash(os.path.join(args.dataset,
                                                   "config.json")),
              "checkpoints": [_stored_hash(ck) for ck in args.checkpoint]}
    run_hash = _run_hash("eval", {"split": args.split}, inputs)
    os.makedirs(args.out, exist_ok=True)

    outputs = {}
    summary = []
    for index, ck in enumerate(args.checkpoint):
        model = _load_model(ck, ds.mesh, args.clusters)
        beta = model.cfg.beta
        tag = f"{index:02d}_beta_{beta:g}"
        report, report_path, maps_path = _eval_one(
            model, ds, args.split, args.out, tag, run_hash)
        outputs[f"report_{tag}"] = report_path
        outputs[f"maps_{tag}"] = maps_path
        summary.append({"checkpoint": os.path.basename(ck),
                        "beta": float(beta),
                        "mean_abs_corr": float(report.mean_abs_corr),
                        "recon_corr_mean": float(report.recon_corr_mean),
                        "recon_corr_std": float(report.recon_corr_std)})
        print(f"{ck}: beta={beta:g} mean |corr| "
              f"{report.mean_abs_corr:.4f}, recon "
              f"{report.recon_corr_mean:.4f}")

    summary_path = os.path.join(args.out, "summary.csv")
    write_csv_rows(summary_path,
                   ("checkpoint", "beta", "mean_abs_corr",
                    "recon_corr_mean", "recon_corr_std"), summary)
    _tag_sidecar(summary_path, run_hash)
    svg_path = os.path.join(args.out, "subtask_correlation.svg")
    _bar_svg(svg_path, [f"{row['beta']:g}" for row in summary],
             [row["mean_abs_corr"] for row in summary],
             "mean |corr| with sub-task regressors")
    outputs.update({"summary": summary_path, "plot": svg_path})
    _write_manifest(args.out, run_hash, 0,
                    inputs={"dataset": args.dataset,
                            "clusters": args.clusters,
                            "checkpoints": list(args.checkpoint)},
                    outputs=outputs)
    return 0


def _cmd_traverse(args):
    from .evaluate import model_decoder, traversal_spatial_maps
    from .io import read_dataset

    ds = read_dataset(args.dataset)
    model = _load_model(args.checkpoint, ds.mesh, args.clusters)
    maps = traversal_spatial_maps(model_decoder(model), model.cfg.n_factors,
                                  n_steps=args.steps)
    inputs = {"checkpoint": _stored_hash(args.checkpoint)}
    run_hash = _run_hash("traverse", {"steps": args.steps}, inputs)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "traversal_maps.csv")
    _write_maps_csv(path, maps)
    _tag_sidecar(path, run_hash)
    _write_manifest(args.out, run_hash, 0,
                    inputs={"dataset": args.dataset,
                            "clusters": args.clusters,
                            "checkpoint": args.checkpoint},
                    outputs={"maps": path})
    print(f"wrote {maps.shape[0]} traversal maps to {path}")
    return 0


def _trajectory_scatter(path, rows):
    plt, (fig, ax) = _new_figure((5.0, 5.0))
    tasks = []
    for row in rows:
        if row["task"] not in tasks:
            tasks.append(row["task"])
    cmap = plt.get_cmap("tab10")
    for t_index, task in enumerate(tasks):
        pts = [row for row in rows if row["task"] == task]
        color = "0.6" if task == "none" else cmap(t_index % 10)
        ax.scatter([p["x"] for p in pts], [p["y"] for p in pts],
                   s=14, color=color, label=task,
                   alpha=[p["opacity"] for p in pts])
    ax.set_xlabel("embedding x")
    ax.set_ylabel("embedding y")
    ax.legend(fontsize=7, loc="best")
    _save_svg(fig, plt, path)


def _cmd_tsne(args):
    import numpy as np
    from .evaluate import trajectory_export, tsne_embed
    from .io import read_dataset, write_csv_rows

    ds = read_dataset(args.dataset)
    model = _load_model(args.checkpoint, ds.mesh, args.clusters)
    subjects = [s for s in ds.subjects if s.split == args.split]
    if not subjects:
        raise ValueError(f"no subjects in split {args.split!r}")
    mus = []
    for s in subjects:
        factors, _ = model.forward(s.data, sample=False)
        mus.append(factors.mu.data)
    trajectory = np.mean(mus, axis=0)
    embedding = tsne_embed(trajectory, perplexity=args.perplexity,
                           seed=args.seed)
    rows = trajectory_export(embedding, ds.design)

    inputs = {"checkpoint": _stored_hash(args.checkpoint)}
    run_hash = _run_hash("tsne", {"perplexity": args.perplexity,
                                  "seed": args.seed, "split": args.split},
                         inputs)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "trajectory.csv")
    write_csv_rows(csv_path, ("t", "x", "y", "task", "opacity"), rows)
    _tag_sidecar(csv_path, run_hash)
    svg_path = os.path.join(args.out, "trajectory.svg")
    _trajectory_scatter(svg_path, rows)
    _write_manifest(args.out, run_hash, args.seed,
                    inputs={"dataset": args.dataset,
                            "clusters": args.clusters,
                            "checkpoint": args.checkpoint},
                    outputs={"trajectory": csv_path, "plot": svg_path})
    print(f"wrote {len(rows)}-frame embedding to {csv_path}")
    return 0


# -- sweep --------------------------------------------------------------


def _cmd_sweep(args):
    from .io import read_clusters, read_dataset, write_csv_rows

    config = _load_config(args.config)
    if "beta" in config:
        raise ConfigError("beta is swept; remove it from the sweep config")
    ds = read_dataset(args.dataset)
    ca = read_clusters(os.path.join(args.clusters, "clusters.json")
                       if os.path.isdir(args.clusters) else args.clusters,
                       ds.mesh.hemisphere)
    flags = {"epochs": args.epochs, "seed": args.seed}
    options, model_kv, train_kv = _split_model_train("sweep", config, flags,
                                                     ca)
    inputs = {"dataset": _stored_hash(os.path.join(args.dataset,
                                                   "config.json")),
              "clusters": _stored_hash(args.clusters)}
    run_hash = _run_hash("sweep", options, inputs)
    os.makedirs(args.out, exist_ok=True)

    summary = []
    outputs = {}
    for beta in BETA_SWEEP:
        point_dir = os.path.join(args.out, f"beta_{beta:g}")
        point_model = dict(model_kv, beta=beta)
        model, history, ckpt_path, _ = _train_one(
            ds, ca, point_model, train_kv, point_dir,
            {"config_hash": run_hash})
        report, _, _ = _eval_one(model, ds, args.split, point_dir,
                                 f"beta_{beta:g}", run_hash)
        summary.append({"beta": float(beta),
                        "mean_abs_corr": float(report.mean_abs_corr),
                        "recon_corr_mean": float(report.recon_corr_mean),
                        "val_total": float(history[-1].val_total)})
        outputs[f"beta_{beta:g}"] = ckpt_path
        print(f"beta={beta:g}: mean |corr| {report.mean_abs_corr:.4f}, "
              f"val {history[-1].val_total:.4f}")

    summary_path = os.path.join(args.out, "sweep.csv")
    write_csv_rows(summary_path,
                   ("beta", "mean_abs_corr", "recon_corr_mean", "val_total"),
                   summary)
    _tag_sidecar(summary_path, run_hash)
    svg_path = os.path.join(args.out, "sweep.svg")
    _bar_svg(svg_path, [f"{row['beta']:g}" for row in summary],
             [row["mean_abs_corr"] for row in summary],
             "mean |corr| with sub-task regressors")
    outputs.update({"summary": summary_path, "plot": svg_path})
    _write_manifest(args.out, run_hash, train_kv.get("seed", 42),
                    inputs={"dataset": args.dataset,
                            "clusters": args.clusters},
                    outputs=outputs)
    return 0


# -- parser -------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="latentdyn",
        description="factor discovery in spatiotemporal surface signals")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", default=None,
                       help="JSON config file (flags override its keys)")
        return p

    p = add("synth", _cmd_synth, "generate a synthetic dataset directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--subjects", type=int, default=None)
    p.add_argument("--vertices", type=int, default=None,
                   help="vertices per hemisphere (icosphere sizes)")
    p.add_argument("--sources", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--mixing", choices=("linear", "tanh"), default=None)
    p.add_argument("--ar1", type=float, default=None)
    p.add_argument("--blob-radius", type=float, default=None)

    p = add("cluster", _cmd_cluster, "spectral-cluster the mesh")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=("structural", "functional"),
                   default=None)
    p.add_argument("--k", type=int, default=None,
                   help="clusters per hemisphere (default 128)")
    p.add_argument("--seed", type=int, default=None)

    p = add("train", _cmd_train, "fit the sequential autoencoder")
    p.add_argument("--dataset", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = add("ica", _cmd_ica, "fit the linear unmixing null model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--components", type=int, default=None,
                   help="number of components (default 16)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)

    p = add("eval", _cmd_eval, "score checkpoints on held-out subjects")
    p.add_argument("--dataset", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--checkpoint", action="append", required=True,
                   help="model checkpoint; repeat to compare several")
    p.add_argument("--split", default="test",
                   choices=("train", "val", "test"))

    p = add("traverse", _cmd_traverse, "export latent-traversal maps")
    p.add_argument("--dataset", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=50)

    p = add("tsne", _cmd_tsne, "embed the latent trajectory in 2-D")
    p.add_argument("--dataset", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="test",
                   choices=("train", "val", "test"))

    p = add("sweep", _cmd_sweep, "train and score across the beta grid")
    p.add_argument("--dataset", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--split", default="test",
                   choices=("train", "val", "test"))

    return parser


def main(argv=None):
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        path = err.filename if err.filename else str(err)
        print(f"error: missing file: {path}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ConfigError, ValueError, TypeError) as err:
        print(f"error: bad configuration: {err}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except RuntimeError as err:
        print(f"error: numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
