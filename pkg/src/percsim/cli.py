"""Command-line entry point: ``percsim <command> [options]``."""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import torch

from . import checkpoint
from .errors import ConfigError, PercsimError
from .ioutil import append_jsonl, load_png, save_png, write_sidecar

log = logging.getLogger("percsim")


# model loading ------------------------------------------------------------------

def load_metric_model(path, taps=None):
    """(extractor, MetricWeights, codec-or-None) from a checkpoint, or ``"pixels"``."""
    from .metric import CodecTaps, MetricWeights, PixelTaps
    from .train import load_model

    if str(path) == "pixels":
        ext = PixelTaps()
        return ext, MetricWeights.uniform(ext.channels()), None
    tensors, meta = checkpoint.load(path)
    weights = MetricWeights.from_tensors(tensors)
    if "spec" not in meta:
        if not weights.taps:
            raise ConfigError(f"{path} holds neither a codec nor metric weights")
        return PixelTaps(), weights, None
    codec, _, _ = load_model(tensors, meta)
    codec.eval()
    if weights.taps:
        ext = CodecTaps(codec, weights.taps)
    else:
        ext = CodecTaps(codec, taps)
        weights = MetricWeights.uniform(ext.channels())
    return ext, weights, codec


def _load_codec(path):
    from .train import load_model

    codec, _, meta = load_model(path)
    return codec.eval(), meta


def _triplets(opts):
    """Stacked (ref, p0, p1, h) tensors from a manifest or a synthetic suite."""
    from .data import synthetic_twoafc_suite
    from .manifest import load_manifest, load_triplet_images

    if "manifest" in opts:
        trip = load_triplet_images(load_manifest(opts["manifest"], opts.get("kind", "twoafc_csv")))
        if not trip:
            raise ConfigError("no triplets in manifest")
        return (torch.stack([t.ref for t in trip]), torch.stack([t.p0 for t in trip]),
                torch.stack([t.p1 for t in trip]), torch.tensor([t.h for t in trip], dtype=torch.float64))
    syn = opts.get("synthetic")
    if syn is None:
        raise ConfigError("give a manifest or a synthetic triplet description")
    return synthetic_twoafc_suite(**syn)


def _out_dir(opts, default):
    out = Path(opts.get("out") or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _artifact(path, opts, **extra):
    write_sidecar(path, {k: v for k, v in opts.items() if k != "json_errors"}, opts.get("seed"), **extra)


# commands -----------------------------------------------------------------------

def cmd_train(opts):
    from .train import TrainConfig, run_phase

    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    cfg = TrainConfig(**{k: v for k, v in opts.items() if k in fields and k != "out_dir"})
    res = run_phase(cfg, init=opts.get("init"), out_dir=_out_dir(opts, cfg.out_dir))
    return {"epochs": len(res.log), "final": res.log[-1] if res.log else None,
            "best": str(res.best) if res.best else None, "last": str(res.last) if res.last else None}


def cmd_calibrate(opts):
    from .metric import CalibrationConfig, calibrate, distance
    from .quality import two_afc_from_distances

    ext, _, codec = load_metric_model(opts.get("model", "pixels"), opts.get("taps"))
    ref, p0, p1, h = _triplets(opts)
    fields = {f.name for f in dataclasses.fields(CalibrationConfig)}
    cfg = CalibrationConfig(**{k: v for k, v in opts.items() if k in fields})
    weights, _, trace = calibrate(ref, p0, p1, h, ext, cfg)
    with torch.no_grad():
        score = two_afc_from_distances(distance(ref, p0, ext, weights), distance(ref, p1, ext, weights), h)
    out = _out_dir(opts, "runs/calibrate")
    path = out / "metric.nckp"
    tensors = checkpoint.module_tensors(codec, "codec") if codec is not None else {}
    tensors.update(weights.to_tensors())
    meta = {"kind": "metric", "taps": weights.taps}
    if codec is not None:
        meta.update(spec=codec.spec.to_dict(), sigma_min=codec.sigma_min)
    checkpoint.save(path, tensors, meta)
    _artifact(path, opts)
    return {"checkpoint": str(path), "train_2afc": score, "final_loss": trace[-1]}


def cmd_distance(opts):
    from .metric import cpips_distance

    ext, weights, _ = load_metric_model(opts["model"])
    a, b = load_png(opts["a"]), load_png(opts["b"])
    return cpips_distance(a, b, ext, weights).to_json()


def cmd_eval_2afc(opts):
    from .metric import distance
    from .quality import two_afc_from_distances

    models = opts["model"] if isinstance(opts["model"], list) else [opts["model"]]
    ref, p0, p1, h = _triplets(opts)
    scores = {}
    for m in models:
        ext, weights, _ = load_metric_model(m)
        with torch.no_grad():
            scores[str(m)] = two_afc_from_distances(distance(ref, p0, ext, weights),
                                                    distance(ref, p1, ext, weights), h)
    res = {"scores": scores, "n": int(h.numel())}
    if len(scores) > 1:
        vals = list(scores.values())
        res["gap"] = max(vals) - min(vals)
    if opts.get("out"):
        from .report import ResultsTable, emit_table

        out = _out_dir(opts, "runs/eval")
        table = ResultsTable("2AFC accuracy", ["2AFC"], [(Path(k).stem if k != "pixels" else k, [v])
                                                        for k, v in scores.items()])
        for fmt in ("json", "text"):
            p = out / f"2afc.{fmt if fmt == 'json' else 'txt'}"
            p.write_bytes(emit_table(table, fmt))
            _artifact(p, opts)
        res["table"] = str(out / "2afc.json")
    return res


def _rd_images(opts):
    from .data import synthetic_images
    from .ioutil import list_images

    if "images" in opts:
        return [(p.name, load_png(p)) for p in list_images(opts["images"])]
    syn = opts.get("synthetic", {"n": 4, "size": 64, "seed": 0})
    imgs = synthetic_images(syn.get("n", 4), syn.get("size", 64), syn.get("seed", 0))
    return [(f"synthetic_{i:03d}", x) for i, x in enumerate(imgs)]


def cmd_rd_curve(opts):
    from .manifest import write_rd_csv
    from .quality import NeuralCodecAdapter, collect_rd_curve

    models = {int(q): NeuralCodecAdapter(_load_codec(p)[0], int(q)) for q, p in opts["models"].items()}
    curve = collect_rd_curve(models, _rd_images(opts), label=opts.get("label", "codec"))
    out = _out_dir(opts, "runs/rd")
    path = out / f"{curve.label}.csv"
    write_rd_csv(path, curve)
    _artifact(path, opts)
    return {"curve": str(path), "points": [list(p) for p in curve.points]}


def cmd_bd(opts):
    from .manifest import load_rd_curve
    from .quality import bd_delta

    anchor, test = load_rd_curve(opts["anchor"]), load_rd_curve(opts["test"])
    return {"anchor": anchor.label, "test": test.label,
            "bd_rate": bd_delta(anchor, test, "rate"), "bd_psnr": bd_delta(anchor, test, "psnr")}


def cmd_compress(opts):
    from .codec.bitstream import compress

    codec, _ = _load_codec(opts["model"])
    x = load_png(opts["in"])
    data, _ = compress(codec, x, int(opts.get("quality", 0)))
    Path(opts["out"]).write_bytes(data)
    _artifact(opts["out"], opts)
    h, w = x.shape[-2:]
    return {"bytes": len(data), "bpp": len(data) * 8.0 / (h * w)}


def cmd_decompress(opts):
    from .codec.bitstream import decompress

    codec, _ = _load_codec(opts["model"])
    x = decompress(codec, Path(opts["in"]).read_bytes())
    save_png(opts["out"], x)
    _artifact(opts["out"], opts)
    return {"height": x.shape[-2], "width": x.shape[-1]}


def cmd_style(opts):
    from .apps.style import StyleConfig, style_transfer
    from .metric import CodecTaps

    fields = {f.name for f in dataclasses.fields(StyleConfig)}
    cfg = StyleConfig(**{k: v for k, v in opts.get("style_config", {}).items() if k in fields})
    codec, _ = _load_codec(opts["model"])
    ext = CodecTaps(codec, list(dict.fromkeys([cfg.content_tap] + list(cfg.style_taps))))
    out, trace = style_transfer(load_png(opts["content"]), load_png(opts["style"]), ext, cfg)
    save_png(opts["out"], out)
    _artifact(opts["out"], opts)
    trace_path = Path(str(opts["out"]) + ".trace.jsonl")
    trace_path.unlink(missing_ok=True)
    for rec in trace:
        append_jsonl(trace_path, rec)
    return {"out": str(opts["out"]), "initial": trace[0], "final": trace[-1]}


def cmd_sr_train(opts):
    from .apps.sr import SrConfig, save_generator, train_sr
    from .data import synthetic_images
    from .ioutil import list_images
    from .metric import CodecTaps

    fields = {f.name for f in dataclasses.fields(SrConfig)}
    cfg = SrConfig(**{k: v for k, v in opts.items() if k in fields})
    if not cfg.model:
        raise ConfigError("sr-train needs an encoder checkpoint (model)")
    codec, _ = _load_codec(cfg.model)
    ext = CodecTaps(codec, [cfg.perceptual_tap])
    ds = cfg.dataset
    if ds.get("kind") == "folder":
        hr = torch.stack([load_png(p) for p in list_images(ds["path"])])
    else:
        hr = synthetic_images(ds.get("n", 50), ds.get("size", 64), ds.get("seed", 0))
    out = _out_dir(opts, cfg.out_dir)
    metrics = out / "metrics.jsonl"
    metrics.unlink(missing_ok=True)
    res = train_sr(hr, ext, cfg, on_epoch=lambda r: append_jsonl(metrics, r))
    gpath = out / "gen.nckp"
    save_generator(gpath, res.generator, cfg)
    _artifact(gpath, opts)
    _artifact(metrics, opts)
    return {"generator": str(gpath), "final": res.log[-1] if res.log else None, "baseline": res.baseline}


def cmd_sr_infer(opts):
    from .apps.sr import load_generator, sr_infer

    g = load_generator(opts["model"])
    y = sr_infer(g, load_png(opts["in"]))
    save_png(opts["out"], y)
    _artifact(opts["out"], opts)
    return {"height": y.shape[-2], "width": y.shape[-1]}


def cmd_run_plan(opts):
    from .plan import ExperimentPlan, run_experiment

    plan = ExperimentPlan.from_json(opts.get("plan") or opts["config"])
    if opts.get("out"):
        plan.output_dir = opts["out"]
    if opts.get("seed") is not None:
        plan.seed = opts["seed"]
    status, summary = run_experiment(plan)
    if status:
        failed = summary["steps"][-1]
        raise PercsimError(f"plan step {failed['command']} failed: {failed['error']['message']}")
    return summary


def cmd_export_tables(opts):
    from .report import ResultsTable, emit_table

    src = opts.get("results") or opts.get("config")
    with open(src) as f:
        doc = json.load(f)
    tables = [ResultsTable.from_json(t) for t in doc.get("tables", [doc])]
    fmt = opts.get("format", "text")
    blob = b"\n".join(emit_table(t, fmt) for t in tables)
    if opts.get("out"):
        Path(opts["out"]).write_bytes(blob)
        _artifact(opts["out"], opts)
        return {"out": opts["out"], "tables": len(tables)}
    return {"text": blob.decode()}


COMMANDS = {
    "train": cmd_train, "calibrate": cmd_calibrate, "distance": cmd_distance,
    "eval-2afc": cmd_eval_2afc, "rd-curve": cmd_rd_curve, "bd": cmd_bd,
    "compress": cmd_compress, "decompress": cmd_decompress, "style": cmd_style,
    "sr-train": cmd_sr_train, "sr-infer": cmd_sr_infer, "run-plan": cmd_run_plan,
    "export-tables": cmd_export_tables,
}

# commands whose --config names a typed config rather than an options document
_TYPED_CONFIG = {"style": "style_config", "run-plan": "plan", "export-tables": "results"}


def run_command(name, config=None, out=None, seed=None, extra=None):
    """Run a command with options from a JSON config file, overridden by ``extra``."""
    if name not in COMMANDS:
        raise ConfigError(f"unknown command {name!r}")
    opts = {}
    if config:
        if name in _TYPED_CONFIG:
            key = _TYPED_CONFIG[name]
            if key == "style_config":
                with open(config) as f:
                    opts[key] = json.load(f)
            else:
                opts[key] = config
        else:
            with open(config) as f:
                opts.update(json.load(f))
    opts.update({k: v for k, v in (extra or {}).items() if v is not None})
    if out is not None:
        opts["out"] = out
    if seed is not None:
        opts["seed"] = seed
        torch.manual_seed(seed)
    try:
        return COMMANDS[name](opts)
    except KeyError as exc:
        raise ConfigError(f"{name}: missing option {exc}") from exc


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    common.add_argument("--json-errors", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="percsim", parents=[common],
                                description="Learned codec, CPIPS metric and perceptual-loss tools")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_, *args):
        sp = sub.add_parser(name, help=help_, parents=[common])
        for flag, kw in args:
            sp.add_argument(flag, default=argparse.SUPPRESS, **kw)
        return sp

    add("train", "train a codec phase",
        ("--phase", {"choices": ["pretrain_cls", "joint", "finetune_hyper"]}), ("--init", {}),
        ("--epochs", {"type": int}))
    add("calibrate", "learn metric channel weights on 2AFC data",
        ("--model", {}), ("--manifest", {}), ("--kind", {}), ("--steps", {"type": int}))
    add("distance", "CPIPS distance between two images",
        ("--a", {"required": True}), ("--b", {"required": True}), ("--model", {"required": True}))
    add("eval-2afc", "2AFC accuracy of one or more metric checkpoints",
        ("--model", {"action": "append"}), ("--manifest", {}), ("--kind", {}))
    add("rd-curve", "rate-distortion curve of codec checkpoints",
        ("--model", {"action": "append", "help": "QUALITY=PATH"}), ("--images", {}), ("--label", {}))
    add("bd", "Bjontegaard deltas between two RD curves",
        ("--anchor", {"required": True}), ("--test", {"required": True}))
    add("compress", "encode a PNG to a CPIP stream",
        ("--model", {"required": True}), ("--in", {"required": True, "dest": "in_"}),
        ("--quality", {"type": int}))
    add("decompress", "decode a CPIP stream to PNG",
        ("--model", {"required": True}), ("--in", {"required": True, "dest": "in_"}))
    add("style", "style transfer with the analysis transform as loss network",
        ("--content", {"required": True}), ("--style", {"required": True}), ("--model", {"required": True}))
    add("sr-train", "train a 4x super-resolution generator", ("--model", {}))
    add("sr-infer", "run a trained generator",
        ("--model", {"required": True}), ("--in", {"required": True, "dest": "in_"}))
    add("run-plan", "execute an experiment plan", ("--plan", {}))
    add("export-tables", "render result tables",
        ("--results", {}), ("--format", {"choices": ["json", "text", "csv"]}))
    return p


def main(argv=None):
    args = vars(_parser().parse_args(argv))
    name = args.pop("command")
    json_errors = args.pop("json_errors", False)
    logging.basicConfig(level=logging.INFO if args.pop("verbose", False) else logging.WARNING)
    if "in_" in args:
        args["in"] = args.pop("in_")
    if name == "rd-curve" and "model" in args:
        try:
            args["models"] = dict(m.split("=", 1) for m in args.pop("model"))
        except ValueError:
            args = {"_bad": True}
    config, out, seed = args.pop("config", None), args.pop("out", None), args.pop("seed", None)
    try:
        if args.pop("_bad", False):
            raise ConfigError("--model for rd-curve takes QUALITY=PATH")
        result = run_command(name, config=config, out=out, seed=seed, extra=args)
    except (PercsimError, OSError, json.JSONDecodeError) as exc:
        if isinstance(exc, PercsimError):
            payload = exc.to_json()
        else:
            payload = {"error": "io", "type": type(exc).__name__, "message": str(exc)}
        if json_errors:
            print(json.dumps(payload), file=sys.stderr)
        else:
            print(f"percsim {name}: {payload['message']}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=1, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
