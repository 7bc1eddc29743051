"""Pipeline driver: build, train, quantize, partition, simulate, report.

Each stage loads its predecessor's artifact, writes one artifact plus a
manifest (config params, seeds, sha256 of inputs and outputs), and refuses
to run when an upstream artifact no longer matches its recorded hash. All
outputs are deterministic for fixed seeds, so rerunning a stage must
reproduce its artifact byte for byte; the manifests make that checkable.

Exit codes: 0 ok, 2 config error, 3 stage-order error, 4 numerical failure.
The output directory comes from the config, overridable by --outdir or the
SPIKEFORGE_OUTDIR environment variable.
"""

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from multiprocessing import get_context

import numpy as np

from . import costmodel, data, fixsim, netgraph, partitioner, quantizer, trainer
from .ratemodel import RegularizerParams

log = logging.getLogger("spikeforge.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_NUMERIC = 4

OUTDIR_ENV = "SPIKEFORGE_OUTDIR"
MANIFEST_FORMAT = "spikeforge-manifest"
MANIFEST_VERSION = 1

STAGES = ("build", "train", "quantize", "partition", "simulate", "report")

DEFAULTS = {
    "outdir": "run",
    "graph": {"size": 32, "base_channels": 6, "meta_layers": 2,
              "encoder_channels": 8, "amplitude": 1.0 / 200.0,
              "dt": 0.001, "tau_s": 0.005, "seed": 7},
    "data": {"train": 200, "test": 100, "train_seed": 11, "test_seed": 12},
    "train": {"epochs": 60, "batch_size": 8, "learning_rate": 1e-2,
              "momentum": 0.9, "seed": 13, "noise": True,
              "probe_images": 16, "drive_std": 60.0, "drive_mean": 50.0,
              "reg": {"percentile": 99.0, "f_min": 50.0, "f_max": 200.0,
                      "weight": 1e-4}},
    "quantize": {"q": 0.494, "v_th": 1.0},
    "partition": {"max_neurons": 1024, "max_in_axons": 4096,
                  "max_out_axons": 4096, "max_synapse_memory": 131072,
                  "tolerance": 0.05, "seed": 0},
    "simulate": {"steps": 200, "window": 100, "images": 100,
                 "stats_image": 0, "rate_images": 5},
    "energy": {},
    "sweep": {"amplitudes": [1.0 / 300.0, 1.0 / 500.0, 1.0 / 1000.0],
              "epochs": 25, "t_grid": [50, 100, 200], "images": 20,
              "processes": 2},
}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    pass


_NUMERIC_ERRORS = (trainer.TrainingDiverged, quantizer.QuantizationError,
                   partitioner.PartitionError, fixsim.FixsimError,
                   FloatingPointError)


def _typed(default, val, key):
    ok = ((isinstance(default, bool) and isinstance(val, bool))
          or (isinstance(default, int) and not isinstance(default, bool)
              and isinstance(val, int) and not isinstance(val, bool))
          or (isinstance(default, float) and isinstance(val, (int, float))
              and not isinstance(val, bool))
          or (isinstance(default, str) and isinstance(val, str))
          or (isinstance(default, list) and isinstance(val, list)))
    if not ok:
        raise ConfigError(
            f"'{key}' expects {type(default).__name__}, "
            f"got {type(val).__name__} ({val!r})")
    return type(default)(val) if isinstance(default, float) else val


def _merge(base: dict, override: dict, path=""):
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key '{path}{key}'")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"'{path}{key}' must be a section")
            _merge(base[key], val, f"{path}{key}.")
        else:
            base[key] = _typed(base[key], val, f"{path}{key}")


def _apply_set(cfg: dict, spec: str):
    if "=" not in spec:
        raise ConfigError(f"--set needs key=value, got '{spec}'")
    key, raw = spec.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key '{key}'")
        node = node[p]
    if parts[-1] not in node or isinstance(node[parts[-1]], dict):
        raise ConfigError(f"unknown config key '{key}'")
    node[parts[-1]] = _typed(node[parts[-1]], val, key)


def load_config(path=None, sets=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
        _merge(cfg, user)
    for spec in sets:
        _apply_set(cfg, spec)
    return cfg


def _outdir(cfg, cli_outdir=None) -> str:
    out = os.environ.get(OUTDIR_ENV) or cli_outdir or cfg["outdir"]
    os.makedirs(out, exist_ok=True)
    return out


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest_path(outdir, stage):
    return os.path.join(outdir, f"{stage}.manifest.json")


def _write_manifest(outdir, stage, params, inputs, outputs, metrics=None):
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "package": "spikeforge",
        "stage": stage,
        "params": params,
        "inputs": inputs,
        "outputs": {name: _sha256(os.path.join(outdir, name))
                    for name in outputs},
        "metrics": metrics or {},
    }
    with open(_manifest_path(outdir, stage), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return doc


def _read_manifest(outdir, stage) -> dict:
    path = _manifest_path(outdir, stage)
    if not os.path.exists(path):
        raise StageError(f"stage '{stage}' has not run; run it first")
    with open(path) as fh:
        return json.load(fh)


def _require(outdir, upto: str) -> dict:
    """Verify every stage up to and including `upto`; return their outputs.

    A stage is stale when an output hash no longer matches the file on
    disk, or when a recorded input no longer matches what its producer
    stage now emits (e.g. build was rerun under a different seed after
    train consumed the old graph).  The named stage is the one to rerun.
    """
    inputs = {}
    for stage in STAGES[:STAGES.index(upto) + 1]:
        man = _read_manifest(outdir, stage)
        for name, digest in man["inputs"].items():
            if inputs.get(name) != digest:
                raise StageError(
                    f"stage '{stage}' is stale: {name} changed since it ran")
        for name, digest in man["outputs"].items():
            path = os.path.join(outdir, name)
            if not os.path.exists(path):
                raise StageError(f"stage '{stage}' is stale: {name} is missing")
            if _sha256(path) != digest:
                raise StageError(
                    f"stage '{stage}' is stale: {name} changed since it ran")
            inputs[name] = digest
    return inputs


def _budget(pcfg) -> partitioner.CoreBudget:
    return partitioner.CoreBudget(
        max_neurons=pcfg["max_neurons"],
        max_in_axons=pcfg["max_in_axons"],
        max_out_axons=pcfg["max_out_axons"],
        max_synapse_memory=pcfg["max_synapse_memory"])


def _train_config(tcfg) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        epochs=tcfg["epochs"], batch_size=tcfg["batch_size"],
        learning_rate=tcfg["learning_rate"], momentum=tcfg["momentum"],
        seed=tcfg["seed"], noise=tcfg["noise"],
        reg=RegularizerParams(**tcfg["reg"]))


def _build_graph(gcfg) -> netgraph.NetworkGraph:
    return netgraph.build_unet(
        gcfg["size"], gcfg["base_channels"], gcfg["meta_layers"],
        dt=gcfg["dt"], tau_s=gcfg["tau_s"],
        encoder_channels=gcfg["encoder_channels"],
        amplitude=gcfg["amplitude"], seed=gcfg["seed"])


def cmd_build(cfg, outdir) -> int:
    graph = _build_graph(cfg["graph"])
    netgraph.save_graph(graph, os.path.join(outdir, "graph.json"),
                        os.path.join(outdir, "graph.blob"))
    _write_manifest(outdir, "build", cfg["graph"], {},
                    ["graph.json", "graph.blob"],
                    metrics={"neurons": netgraph.neuron_count(graph),
                             "parameters": netgraph.param_count(graph)})
    log.info("build: %d neurons, %d parameters",
             netgraph.neuron_count(graph), netgraph.param_count(graph))
    return EXIT_OK


def cmd_train(cfg, outdir) -> int:
    inputs = _require(outdir, "build")
    graph = netgraph.load_graph(os.path.join(outdir, "graph.json"))
    dcfg = cfg["data"]
    tcfg = cfg["train"]
    size = graph.layers[0].in_shape.h
    train_set = data.task_samples(dcfg["train_seed"], dcfg["train"], size)
    test_set = data.task_samples(dcfg["test_seed"], dcfg["test"], size)

    probe, _ = trainer.stack_dataset(train_set[:tcfg["probe_images"]])
    trainer.normalize_init(graph, probe, drive_std=tcfg["drive_std"],
                           drive_mean=tcfg["drive_mean"])
    history = trainer.train(graph, train_set, _train_config(cfg["train"]))
    result = trainer.evaluate(graph, test_set)

    netgraph.save_graph(graph, os.path.join(outdir, "model.json"),
                        os.path.join(outdir, "model.blob"))
    _write_manifest(outdir, "train", {**cfg["train"], "data": dcfg},
                    inputs, ["model.json", "model.blob"],
                    metrics={"history": history,
                             "pixel_accuracy": result.pixel_accuracy,
                             "mean_iou": result.mean_iou,
                             "layer_p99_hz": result.layer_p99})
    log.info("train: pixel accuracy %.4f, mean IoU %.4f",
             result.pixel_accuracy, result.mean_iou)
    return EXIT_OK


def cmd_quantize(cfg, outdir) -> int:
    inputs = _require(outdir, "train")
    graph = netgraph.load_graph(os.path.join(outdir, "model.json"))
    result = quantizer.quantize(graph, q=cfg["quantize"]["q"],
                                v_th=cfg["quantize"]["v_th"])
    quantizer.save_quant(result, os.path.join(outdir, "quant.json"),
                         os.path.join(outdir, "quant.blob"))
    per_layer = {name: {"exponent": lq.exponent, "v_th_bar": lq.v_th_bar}
                 for name, lq in result.layers.items()}
    _write_manifest(outdir, "quantize", cfg["quantize"], inputs,
                    ["quant.json", "quant.blob"],
                    metrics={"delta_u": result.delta_u,
                             "y_hat": result.y_hat,
                             "layers": per_layer})
    return EXIT_OK


def cmd_partition(cfg, outdir) -> int:
    inputs = _require(outdir, "quantize")
    graph = netgraph.load_graph(os.path.join(outdir, "model.json"))
    pcfg = cfg["partition"]
    budget = _budget(pcfg)
    part, cg = partitioner.partition_network(
        graph, budget, tolerance=pcfg["tolerance"], seed=pcfg["seed"])
    naive, _ = partitioner.partition_network(
        graph, budget, tolerance=pcfg["tolerance"], naive=True)
    partitioner.save_partition(part, os.path.join(outdir, "partition.json"))
    partitioner.save_partition(naive,
                               os.path.join(outdir, "partition.naive.json"))
    cut = partitioner.edge_cut(cg, part.assignment)
    cut_naive = partitioner.edge_cut(cg, naive.assignment)
    _write_manifest(outdir, "partition", pcfg, inputs,
                    ["partition.json", "partition.naive.json"],
                    metrics={"cores": len(part.cores),
                             "edge_cut": cut,
                             "edge_cut_naive": cut_naive})
    log.info("partition: %d cores, cut %d (naive %d)",
             len(part.cores), cut, cut_naive)
    return EXIT_OK


def _spiking_accuracy(graph, quant, part, images, labels, steps, window):
    preds = []
    for img in images:
        drive, _ = fixsim.run_inference(graph, quant, part, img, steps)
        preds.append(fixsim.decode_output(drive, window))
    return data.pixel_accuracy(np.stack(preds), labels)


def cmd_simulate(cfg, outdir) -> int:
    inputs = _require(outdir, "partition")
    graph = netgraph.load_graph(os.path.join(outdir, "model.json"))
    quant = quantizer.load_quant(os.path.join(outdir, "quant.json"))
    part = partitioner.load_partition(os.path.join(outdir, "partition.json"))
    naive = partitioner.load_partition(
        os.path.join(outdir, "partition.naive.json"))

    scfg = cfg["simulate"]
    steps, window = scfg["steps"], scfg["window"]
    size = graph.layers[0].in_shape.h
    test_set = data.task_samples(cfg["data"]["test_seed"],
                                 cfg["data"]["test"], size)[:scfg["images"]]
    images = np.stack([s.image for s in test_set])
    labels = trainer.crop_labels(graph, np.stack([s.label for s in test_set]))

    accuracy = _spiking_accuracy(graph, quant, part, images, labels,
                                 steps, window)

    idx = scfg["stats_image"]
    drive, stats = fixsim.run_inference(graph, quant, part, images[idx], steps)
    drive_n, stats_n = fixsim.run_inference(graph, quant, naive, images[idx],
                                            steps)
    # chip assignment must not affect values, only traffic accounting
    if not np.array_equal(drive, drive_n):
        raise fixsim.FixsimError("naive-partition run diverged from optimized")
    fixsim.save_stats(stats, os.path.join(outdir, "stats.json"))
    fixsim.save_stats(stats_n, os.path.join(outdir, "stats.naive.json"))

    # network-level layer rates, pooled over a few images so one odd
    # sample does not dominate the comparison
    nrate = min(scfg["rate_images"], len(images))
    sim_sum, ref_sum = {}, {}
    for img in images[:nrate]:
        _, st = fixsim.run_inference(graph, quant, part, img, steps)
        state = trainer.forward_pass(graph, img[None], trainer.MODE_EVAL)
        for name, hz in fixsim.mean_rates(st, graph, window, graph.dt).items():
            sim_sum[name] = sim_sum.get(name, 0.0) + hz
            ref_sum[name] = ref_sum.get(name, 0.0) + float(
                state.rates[name].mean())
    layer_rates = {}
    for name, total in sim_sum.items():
        ref_hz = ref_sum[name] / nrate
        sim_hz = total / nrate
        layer_rates[name] = {
            "rate_model_hz": ref_hz,
            "fixsim_hz": sim_hz,
            "rel_err": abs(sim_hz - ref_hz) / ref_hz if ref_hz else 0.0,
        }

    _write_manifest(outdir, "simulate", scfg, inputs,
                    ["stats.json", "stats.naive.json"],
                    metrics={"spiking_pixel_accuracy": accuracy,
                             "images": len(images),
                             "layer_rates_hz": layer_rates,
                             "u_clamps": stats.u_clamps,
                             "v_clamps": stats.v_clamps})
    log.info("simulate: spiking pixel accuracy %.4f over %d images",
             accuracy, len(images))
    return EXIT_OK


def cmd_report(cfg, outdir) -> int:
    inputs = _require(outdir, "simulate")
    part = partitioner.load_partition(os.path.join(outdir, "partition.json"))
    naive = partitioner.load_partition(
        os.path.join(outdir, "partition.naive.json"))
    stats = fixsim.load_stats(os.path.join(outdir, "stats.json"))
    stats_n = fixsim.load_stats(os.path.join(outdir, "stats.naive.json"))

    params = costmodel.EnergyParams(**cfg["energy"])
    rep = costmodel.estimate(stats, part, stats.steps, params)
    rep_n = costmodel.estimate(stats_n, naive, stats_n.steps, params)
    costmodel.save_csv([("optimized", rep), ("naive", rep_n)],
                       os.path.join(outdir, "cost.csv"))

    train_man = _read_manifest(outdir, "train")
    part_man = _read_manifest(outdir, "partition")
    sim_man = _read_manifest(outdir, "simulate")
    rate_acc = train_man["metrics"]["pixel_accuracy"]
    spike_acc = sim_man["metrics"]["spiking_pixel_accuracy"]
    report = {
        "accuracy": {
            "rate_model": rate_acc,
            "spiking": spike_acc,
            "gap": rate_acc - spike_acc,
        },
        "layer_rates_hz": sim_man["metrics"]["layer_rates_hz"],
        "partition": part_man["metrics"],
        "cost": {
            "optimized": asdict(rep),
            "naive": asdict(rep_n),
            "optimized_vs_naive": costmodel.compare(rep_n, rep),
            "reference": {
                "note": "hardware reference, not validated",
                "energy_per_inference_j": 0.01,
                "inferences_per_second": 23.79,
                "dynamic_power_w": 0.34,
            },
        },
    }
    with open(os.path.join(outdir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _write_manifest(outdir, "report", cfg["energy"], inputs,
                    ["report.json", "cost.csv"])
    log.info("report: accuracy rate %.4f spiking %.4f, energy ratio %.2f",
             rate_acc, spike_acc,
             report["cost"]["optimized_vs_naive"]["energy_ratio"])
    return EXIT_OK


def _overall_rate_hz(stats, graph, window, dt):
    spiking = [l.name for l in graph.layers
               if l.activation == netgraph.ACT_SPIKING]
    spikes = sum(int(stats.layer_spikes[n][-window:].sum()) for n in spiking)
    neurons = sum(s.h * s.w * s.c
                  for s in (graph.layer(n).out_shape for n in spiking))
    return spikes / (neurons * window * dt)


def _sweep_variant(job):
    """Train (or load) one sweep entry and measure its tables' row."""
    cfg, label, amplitude, outdir = job
    gcfg = dict(cfg["graph"])
    tcfg = copy.deepcopy(cfg["train"])
    if amplitude is None:
        graph = netgraph.load_graph(os.path.join(outdir, "model.json"))
    else:
        gcfg["amplitude"] = amplitude
        tcfg["reg"]["weight"] = 0.0
        tcfg["epochs"] = cfg["sweep"]["epochs"]
        graph = _build_graph(gcfg)
        size = graph.layers[0].in_shape.h
        train_set = data.task_samples(cfg["data"]["train_seed"],
                                      cfg["data"]["train"], size)
        probe, _ = trainer.stack_dataset(train_set[:tcfg["probe_images"]])
        # smaller amplitude carries less charge per spike; the variants
        # make it up in rate, which is what the sweep is probing
        scale = cfg["graph"]["amplitude"] / amplitude
        trainer.normalize_init(graph, probe,
                               drive_std=tcfg["drive_std"] * scale,
                               drive_mean=tcfg["drive_mean"] * scale)
        trainer.train(graph, train_set, _train_config(tcfg))

    quant = quantizer.quantize(graph, q=cfg["quantize"]["q"],
                               v_th=cfg["quantize"]["v_th"])
    part, _ = partitioner.partition_network(
        graph, _budget(cfg["partition"]),
        tolerance=cfg["partition"]["tolerance"],
        seed=cfg["partition"]["seed"])

    size = graph.layers[0].in_shape.h
    test_set = data.task_samples(cfg["data"]["test_seed"], cfg["data"]["test"],
                                 size)[:cfg["sweep"]["images"]]
    images = np.stack([s.image for s in test_set])
    labels = trainer.crop_labels(graph, np.stack([s.label for s in test_set]))

    t_grid = sorted(cfg["sweep"]["t_grid"])
    t_max = t_grid[-1]
    window = cfg["simulate"]["window"]
    preds = {t: [] for t in t_grid}
    sim_sum, ref_sum = {}, {}
    for img in images:
        drive, st = fixsim.run_inference(graph, quant, part, img, t_max)
        for t in t_grid:
            # a T-step run is the prefix of a longer one; decode prefixes
            preds[t].append(fixsim.decode_output(drive[:t], min(window, t)))
        state = trainer.forward_pass(graph, img[None], trainer.MODE_EVAL)
        for n, hz in fixsim.mean_rates(st, graph, min(window, t_max),
                                       graph.dt).items():
            sim_sum[n] = sim_sum.get(n, 0.0) + hz
            ref_sum[n] = ref_sum.get(n, 0.0) + float(state.rates[n].mean())
    accuracy = {str(t): data.pixel_accuracy(np.stack(preds[t]), labels)
                for t in t_grid}
    rate_err = max(abs(sim_sum[n] - ref_sum[n]) / max(ref_sum[n], 1e-9)
                   for n in sim_sum)

    idx = cfg["simulate"]["stats_image"]
    _, stats = fixsim.run_inference(graph, quant, part, images[idx], t_max)
    rep = costmodel.estimate(stats, part, t_max,
                             costmodel.EnergyParams(**cfg["energy"]))
    return {
        "label": label,
        "amplitude": gcfg["amplitude"],
        "reg_weight": tcfg["reg"]["weight"],
        "accuracy": accuracy,
        "mean_rate_hz": _overall_rate_hz(stats, graph, min(window, t_max),
                                         graph.dt),
        "energy_per_inference": rep.energy_per_inference,
        "inferences_per_second": rep.inferences_per_second,
        "max_layer_rate_rel_err": rate_err,
    }


def _plot_sweep(rows, t_grid, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_acc, ax_energy) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for row in rows:
        ts = sorted(int(t) for t in row["accuracy"])
        ax_acc.plot(ts, [row["accuracy"][str(t)] for t in ts],
                    marker="o", label=row["label"])
    ax_acc.set_xlabel("timesteps")
    ax_acc.set_ylabel("pixel accuracy")
    ax_acc.legend(fontsize=7)

    order = sorted(rows, key=lambda r: r["mean_rate_hz"])
    ax_energy.plot([r["mean_rate_hz"] for r in order],
                   [r["energy_per_inference"] for r in order], marker="s")
    for r in order:
        ax_energy.annotate(r["label"], (r["mean_rate_hz"],
                                        r["energy_per_inference"]),
                           fontsize=7)
    ax_energy.set_xlabel("mean firing rate (Hz)")
    ax_energy.set_ylabel("energy per inference (J)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_sweep(cfg, outdir, plot=False) -> int:
    inputs = _require(outdir, "train")
    jobs = [(cfg, "regularized", None, outdir)]
    for amp in cfg["sweep"]["amplitudes"]:
        jobs.append((cfg, f"1/{round(1.0 / amp)}", amp, outdir))

    procs = min(cfg["sweep"]["processes"], len(jobs))
    if procs > 1:
        with get_context("fork").Pool(procs) as pool:
            rows = pool.map(_sweep_variant, jobs)
    else:
        rows = [_sweep_variant(j) for j in jobs]

    with open(os.path.join(outdir, "sweep.json"), "w") as fh:
        json.dump({"rows": rows, "t_grid": cfg["sweep"]["t_grid"]}, fh,
                  indent=1, sort_keys=True)
        fh.write("\n")
    t_grid = sorted(cfg["sweep"]["t_grid"])
    import csv as _csv
    with open(os.path.join(outdir, "sweep.csv"), "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["label", "amplitude", "reg_weight", "mean_rate_hz",
                         "energy_per_inference", "inferences_per_second",
                         "max_layer_rate_rel_err"]
                        + [f"acc_t{t}" for t in t_grid])
        for r in rows:
            writer.writerow([r["label"], r["amplitude"], r["reg_weight"],
                             r["mean_rate_hz"], r["energy_per_inference"],
                             r["inferences_per_second"],
                             r["max_layer_rate_rel_err"]]
                            + [r["accuracy"][str(t)] for t in t_grid])
    outputs = ["sweep.json", "sweep.csv"]
    if plot:
        _plot_sweep(rows, t_grid, os.path.join(outdir, "sweep.png"))
        outputs.append("sweep.png")
    _write_manifest(outdir, "sweep", cfg["sweep"], inputs, outputs)
    for r in rows:
        log.info("sweep %-12s rate %7.2f Hz, energy %.3g J, rate err %.3f",
                 r["label"], r["mean_rate_hz"], r["energy_per_inference"],
                 r["max_layer_rate_rel_err"])
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="spikeforge",
        description="spiking CNN pipeline: build, train, quantize, "
                    "partition, simulate, report")
    ap.add_argument("--config", help="JSON config; defaults used if omitted")
    ap.add_argument("--outdir", help="output directory (overrides config; "
                                     f"${OUTDIR_ENV} overrides both)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                    help="override one config field, e.g. simulate.steps=100")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name)
    sweep_p = sub.add_parser("sweep")
    sweep_p.add_argument("--plot", action="store_true",
                         help="also write sweep.png")
    run_p = sub.add_parser("run", help="all six stages in order")
    del run_p

    args = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")

    handlers = {"build": cmd_build, "train": cmd_train,
                "quantize": cmd_quantize, "partition": cmd_partition,
                "simulate": cmd_simulate, "report": cmd_report}
    try:
        cfg = load_config(args.config, args.set)
        outdir = _outdir(cfg, args.outdir)
        if args.command == "sweep":
            return cmd_sweep(cfg, outdir, plot=args.plot)
        if args.command == "run":
            for name in STAGES:
                rc = handlers[name](cfg, outdir)
                if rc != EXIT_OK:
                    return rc
            return EXIT_OK
        return handlers[args.command](cfg, outdir)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TypeError, ValueError) as e:
        if isinstance(e, _NUMERIC_ERRORS):
            print(f"numerical failure: {e}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as e:
        print(f"stage error: {e}", file=sys.stderr)
        return EXIT_STAGE
    except _NUMERIC_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
