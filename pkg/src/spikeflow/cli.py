"""Command-line pipeline: synth, encode, train, eval, predict, gradcheck,
render, params.

Configuration comes from an optional YAML file (sections ``model``, ``train``,
``data``) with command-line flags taking precedence; every run echoes its
fully resolved configuration as a reproducibility header. Exit codes: 0
success, 1 usage, 2 data/format error, 3 numerical failure.
"""

import argparse
import glob
import json
import os
import sys
from dataclasses import asdict

import numpy as np
import yaml

from . import io as storage
from . import reports as reporting
from .events import COMBINED, SEPARATE, encode_histograms, sliding_window
from .gradcheck import PASS_THRESHOLD, run_suite
from .losses import LOSS_VARIANTS
from .model import ModelConfig, build_model
from .synthetic import PATTERN_KINDS, Pattern, generate_synthetic_scene
from .training import (
    NumericalError,
    Sample,
    TrainConfig,
    checkpoint_load,
    evaluate,
    fit,
)

PARAM_COUNT_TARGET = 1_220_000
PARAM_COUNT_TOLERANCE = 0.10


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _echo_config(command, resolved):
    print(f"# spikeflow {command} config: {json.dumps(resolved, sort_keys=True)}")


def _load_yaml(path):
    if path is None:
        return {}
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise storage.FormatError(f"{path}: config root must be a mapping")
    return data


def _merged_section(file_cfg, section, overrides):
    merged = dict(file_cfg.get(section) or {})
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


_DATA_DEFAULTS = {
    "window_frames": 21,
    "frame_duration_us": 9000,
    "stride_frames": 2,
    "polarity_mode": SEPARATE,
}


def _load_scene_samples(data_dir, data_cfg):
    """Build windowed samples from scene_*.evt / scene_*.flw pairs."""
    event_files = sorted(glob.glob(os.path.join(data_dir, "*.evt")))
    if not event_files:
        raise storage.FormatError(f"no .evt files found in {data_dir}")
    samples = []
    dims = None
    for evt_path in event_files:
        flow_path = os.path.splitext(evt_path)[0] + ".flw"
        if not os.path.exists(flow_path):
            raise storage.FormatError(f"missing flow ground truth for {evt_path}")
        events, sensor_dims = storage.read_events(evt_path)
        flow = storage.read_flow(flow_path)
        if flow.sensor_dims != sensor_dims:
            raise storage.FormatError(
                f"{flow_path}: flow dims {flow.sensor_dims} != event sensor {sensor_dims}"
            )
        dims = sensor_dims
        name = os.path.splitext(os.path.basename(evt_path))[0]
        for hist in sliding_window(
            events,
            window_frames=data_cfg["window_frames"],
            frame_duration_us=data_cfg["frame_duration_us"],
            stride_frames=data_cfg["stride_frames"],
            sensor_dims=sensor_dims,
            polarity_mode=data_cfg["polarity_mode"],
            t0_us=0,
        ):
            samples.append(Sample(hist, flow, sequence=name))
    return samples, dims


def _model_config(file_cfg, overrides, sensor_dims=None, num_frames=None, input_channels=None):
    section = _merged_section(file_cfg, "model", overrides)
    if sensor_dims is not None and "sensor_dims" not in section:
        section["sensor_dims"] = list(sensor_dims)
    if num_frames is not None and "num_frames" not in section:
        section["num_frames"] = num_frames
    if input_channels is not None and "input_channels" not in section:
        section["input_channels"] = input_channels
    if "sensor_dims" in section:
        section["sensor_dims"] = tuple(section["sensor_dims"])
    config = ModelConfig(**section)
    config.validate()
    return config


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    os.makedirs(args.out_dir, exist_ok=True)
    resolved = {
        "pattern": args.pattern, "velocity": args.velocity, "duration_s": args.duration_s,
        "dims": args.dims, "contrast": args.contrast, "gt_interval_s": args.gt_interval,
        "scenes": args.scenes, "seed": args.seed, "out_dir": args.out_dir,
    }
    _echo_config("synth", resolved)
    dims = tuple(args.dims)
    for s in range(args.scenes):
        kind = args.pattern if args.pattern != "mixed" else PATTERN_KINDS[1 + s % 2]
        pattern = Pattern(kind, seed=args.seed * 1000 + s, cell=6 + 2 * (s % 3))
        events, flow = generate_synthetic_scene(
            pattern,
            args.velocity,
            int(args.duration_s * 1e6),
            dims,
            contrast_threshold=args.contrast,
            gt_interval_s=args.gt_interval,
        )
        evt_path = os.path.join(args.out_dir, f"scene_{s:03d}.evt")
        storage.write_events(evt_path, events, dims)
        storage.write_flow(os.path.join(args.out_dir, f"scene_{s:03d}.flw"), flow)
        print(f"scene={s} pattern={kind} events={events.size} file={evt_path}")
    return 0


def cmd_encode(args):
    events, dims = storage.read_events(args.events)
    t0 = args.t0 if args.t0 is not None else (int(events["t"][0]) if events.size else 0)
    if args.frames is not None:
        frames = args.frames
    elif events.size:
        frames = int((int(events["t"][-1]) - t0) // args.frame_us) + 1
    else:
        frames = 1
    resolved = {
        "events": args.events, "t0_us": t0, "frame_duration_us": args.frame_us,
        "num_frames": frames, "polarity_mode": args.polarity, "out": args.out,
    }
    _echo_config("encode", resolved)
    hist = encode_histograms(events, t0, args.frame_us, frames, dims, args.polarity)
    storage.write_histograms(args.out, hist)
    pos = int(hist.data[0].sum())
    neg = int(hist.data[1].sum()) if hist.data.shape[0] > 1 else 0
    print(f"total_events={pos + neg} positive={pos} negative={neg}")
    pixels = dims[0] * dims[1]
    for k in range(hist.num_frames):
        frame = hist.data[:, k]
        print(
            f"frame={k} count={int(frame.sum())} "
            f"occupancy={float((frame.sum(axis=0) > 0).sum()) / pixels:.6f}"
        )
    return 0


def cmd_train(args):
    file_cfg = _load_yaml(args.config)
    data_cfg = {**_DATA_DEFAULTS, **_merged_section(file_cfg, "data", {
        "window_frames": args.window_frames,
        "frame_duration_us": args.frame_us,
        "stride_frames": args.stride,
        "polarity_mode": args.polarity,
    })}
    train_section = _merged_section(file_cfg, "train", {
        "epochs": args.epochs, "base_lr": args.lr, "lr_gamma": args.gamma,
        "seed": args.seed, "loss_variant": args.loss, "optimizer": args.optimizer,
        "eval_every": args.eval_every, "checkpoint_every": args.checkpoint_every,
    })
    train_cfg = TrainConfig(**train_section)

    train_data, dims = _load_scene_samples(args.data, data_cfg)
    val_data = None
    if args.val_data:
        val_data, _ = _load_scene_samples(args.val_data, data_cfg)

    input_channels = 1 if data_cfg["polarity_mode"] == COMBINED else 2
    model_cfg = _model_config(
        file_cfg,
        {
            "stem_channels": args.stem_channels, "skip_mode": args.skip_mode,
            "downsample": args.downsample, "encoding": args.encoding,
        },
        sensor_dims=dims,
        num_frames=data_cfg["window_frames"],
        input_channels=input_channels,
    )
    _echo_config("train", {
        "model": model_cfg.to_dict(), "train": asdict(train_cfg), "data": data_cfg,
        "num_train_windows": len(train_data),
        "num_val_windows": len(val_data) if val_data else 0,
        "out": args.out, "resume": args.resume,
    })

    model = build_model(model_cfg, seed=train_cfg.seed)
    os.makedirs(args.out, exist_ok=True)

    def on_epoch(report):
        print(reporting.format_epoch_line(report))

    trainer, train_reports, val_reports = fit(
        model, train_data, train_cfg, val_data=val_data, out_dir=args.out,
        resume_from=args.resume, on_epoch=on_epoch,
    )
    final = evaluate(trainer.model, val_data if val_data else train_data)
    print(f"final aee={final.aee:.6f} aae={final.aae:.6f} n={final.num_samples}")
    return 0


def cmd_eval(args):
    model, bundle = checkpoint_load(args.checkpoint)
    defaults = dict(_DATA_DEFAULTS)
    defaults["window_frames"] = model.config.num_frames
    defaults["polarity_mode"] = SEPARATE if model.config.input_channels == 2 else COMBINED
    data_cfg = {**defaults, **_merged_section(_load_yaml(args.config), "data", {
        "window_frames": args.window_frames,
        "frame_duration_us": args.frame_us,
        "stride_frames": args.stride,
        "polarity_mode": args.polarity,
    })}
    samples, dims = _load_scene_samples(args.data, data_cfg)
    _echo_config("eval", {
        "checkpoint": args.checkpoint, "data": args.data, "data_cfg": data_cfg,
        "model": model.config.to_dict(), "num_windows": len(samples),
    })
    report = evaluate(model, samples)
    lines = reporting.write_eval_report(args.out, report) if args.out else None
    if args.out:
        reporting.plot_eval_breakdown(args.out, report)
        for line in lines:
            print(line)
    else:
        print(f"overall aee={report.aee:.6f} aae={report.aae:.6f} n={report.num_samples}")
        for seq in sorted(report.per_sequence):
            aee, aae, n = report.per_sequence[seq]
            print(f"sequence={seq} aee={aee:.6f} aae={aae:.6f} n={n}")
    return 0


def cmd_predict(args):
    model, bundle = checkpoint_load(args.checkpoint)
    events, dims = storage.read_events(args.events)
    cfg = model.config
    if tuple(cfg.sensor_dims) != dims:
        raise storage.FormatError(
            f"checkpoint expects sensor {tuple(cfg.sensor_dims)}, events are {dims}"
        )
    windows = list(sliding_window(
        events,
        window_frames=cfg.num_frames,
        frame_duration_us=args.frame_us,
        stride_frames=args.stride,
        sensor_dims=dims,
        polarity_mode=SEPARATE if cfg.input_channels == 2 else COMBINED,
        t0_us=0,
    ))
    if not windows:
        raise storage.FormatError("stream shorter than one window; nothing to predict")
    index = args.window_index if args.window_index >= 0 else len(windows) + args.window_index
    if not (0 <= index < len(windows)):
        raise UsageError(f"window index {args.window_index} outside 0..{len(windows) - 1}")
    _echo_config("predict", {
        "checkpoint": args.checkpoint, "events": args.events, "window_index": index,
        "num_windows": len(windows), "frame_duration_us": args.frame_us,
        "out_flow": args.out_flow, "out_image": args.out_image,
    })
    from .autodiff import no_grad
    from .events import FlowMap

    with no_grad():
        trace = model.forward(windows[index].data.astype(model.dtype))
    pred = trace.prediction.data
    flow = FlowMap(pred[0], pred[1], np.ones(dims, dtype=bool))
    if args.out_flow:
        storage.write_flow(args.out_flow, flow)
    if args.out_image:
        with open(args.out_image, "wb") as f:
            f.write(storage.render_flow_image(flow, args.max_magnitude))
    mag = float(np.hypot(pred[0], pred[1]).mean())
    print(f"window={index} mean_magnitude={mag:.6f}")
    return 0


def cmd_gradcheck(args):
    _echo_config("gradcheck", {"seed": args.seed, "threshold": PASS_THRESHOLD})
    results = run_suite(args.seed)
    worst = 0.0
    for name, err in results:
        status = "ok" if err < PASS_THRESHOLD else "FAIL"
        print(f"op={name} max_rel_err={err:.3e} {status}")
        worst = max(worst, err)
    if worst >= PASS_THRESHOLD:
        raise NumericalError(f"gradient check failed: max relative error {worst:.3e}")
    print(f"all gradients within {PASS_THRESHOLD:.0e} (worst {worst:.3e})")
    return 0


def cmd_params(args):
    file_cfg = _load_yaml(args.config)
    model_cfg = _model_config(file_cfg, {
        "stem_channels": args.stem_channels, "skip_mode": args.skip_mode,
        "downsample": args.downsample, "encoding": args.encoding,
        "num_residuals": args.residuals,
    }, sensor_dims=(64, 64))
    _echo_config("params", {"model": model_cfg.to_dict()})
    model = build_model(model_cfg, seed=0)
    total = 0
    for name, shape, count in model.describe_parameters():
        print(f"layer={name} shape={'x'.join(map(str, shape))} params={count}")
        total += count
    deviation = (total - PARAM_COUNT_TARGET) / PARAM_COUNT_TARGET
    inside = abs(deviation) <= PARAM_COUNT_TOLERANCE
    print(
        f"total={total} target={PARAM_COUNT_TARGET} deviation={deviation * 100:+.2f}% "
        f"within_tolerance={'yes' if inside else 'no'}"
    )
    return 0


def cmd_render(args):
    flow = storage.read_flow(args.flow)
    _echo_config("render", {
        "flow": args.flow, "out": args.out, "max_magnitude": args.max_magnitude,
    })
    with open(args.out, "wb") as f:
        f.write(storage.render_flow_image(flow, args.max_magnitude))
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="spikeflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic event scenes with ground-truth flow")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--pattern", default="checkerboard", choices=PATTERN_KINDS + ("mixed",))
    p.add_argument("--velocity", nargs=2, type=float, default=[100.0, 0.0], metavar=("VX", "VY"))
    p.add_argument("--duration-s", type=float, default=2.0)
    p.add_argument("--dims", nargs=2, type=int, default=[64, 64], metavar=("H", "W"))
    p.add_argument("--contrast", type=float, default=0.25)
    p.add_argument("--gt-interval", type=float, default=0.1)
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="encode an event file into frame histograms")
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frame-us", type=int, default=9000)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--t0", type=int, default=None)
    p.add_argument("--polarity", default=SEPARATE, choices=(SEPARATE, COMBINED))
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train on scene files; writes reports, figures, checkpoints")
    p.add_argument("--data", required=True, help="directory of *.evt/*.flw scene pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--val-data", default=None)
    p.add_argument("--config", default=None, help="YAML with model/train/data sections")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--loss", default=None, choices=LOSS_VARIANTS)
    p.add_argument("--optimizer", default=None, choices=("adaptive_moments", "sgd_momentum"))
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--stem-channels", type=int, default=None)
    p.add_argument("--skip-mode", default=None, choices=("concat", "sum"))
    p.add_argument("--downsample", default=None, choices=("maxpool", "strided"))
    p.add_argument("--encoding", default=None, choices=("3d", "2d"))
    p.add_argument("--window-frames", type=int, default=None)
    p.add_argument("--frame-us", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--polarity", default=None, choices=(SEPARATE, COMBINED))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="AEE/AAE report for a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="directory for eval.txt + figure")
    p.add_argument("--config", default=None)
    p.add_argument("--window-frames", type=int, default=None)
    p.add_argument("--frame-us", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--polarity", default=None, choices=(SEPARATE, COMBINED))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="flow file + rendered pixmap for one window")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--window-index", type=int, default=-1)
    p.add_argument("--frame-us", type=int, default=9000)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out-flow", default=None)
    p.add_argument("--out-image", default=None)
    p.add_argument("--max-magnitude", type=float, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference suite (soft mode, float64)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="per-layer parameter table vs the 1.22M target")
    p.add_argument("--config", default=None)
    p.add_argument("--stem-channels", type=int, default=None)
    p.add_argument("--skip-mode", default=None, choices=("concat", "sum"))
    p.add_argument("--downsample", default=None, choices=("maxpool", "strided"))
    p.add_argument("--encoding", default=None, choices=("3d", "2d"))
    p.add_argument("--residuals", type=int, default=None)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("render", help="flow file -> PPM image")
    p.add_argument("--flow", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-magnitude", type=float, default=None)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (storage.FormatError, FileNotFoundError, NotADirectoryError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, KeyError, yaml.YAMLError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
