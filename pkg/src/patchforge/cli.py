"""Command-line interface: train / synthesize / eval / serve."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import PRESETS, load_configs
from .errors import PatchforgeError
from .image_io import load_image, save_image
from .inference import SynthesisEngine, SynthesisRequest
from .metrics import PatchMetricConfig, bidirectional_report
from .service import InferenceService
from .training import train


def _parse_sets(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise PatchforgeError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _cmd_train(args) -> int:
    overrides = _parse_sets(args.set)
    if args.iterations is not None:
        overrides["train.iterations"] = str(args.iterations)
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    if args.ablate_reconst:
        overrides["train.ablate_reconst"] = "true"
    if args.single_scale_d:
        overrides["train.ablate_multiscale"] = "true"
    cfg, gen_cfg, disc_cfg = load_configs(args.preset, args.config, overrides)

    image = load_image(args.image)
    orig_hw = (image.shape[1], image.shape[2])
    os.makedirs(args.out_dir, exist_ok=True)

    state = None
    start = 0
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        from .checkpoint import restore_state

        state = restore_state(ckpt)
        cfg = ckpt.train_config
        start = ckpt.iteration

    def snapshot(st, iteration, padded):
        path = os.path.join(args.out_dir, f"checkpoint_{iteration:06d}.pfck")
        save_checkpoint(path, st, padded, orig_hw)
        save_checkpoint(os.path.join(args.out_dir, "checkpoint.pfck"), st,
                        padded, orig_hw)

    train(
        image,
        cfg,
        gen_cfg,
        disc_cfg,
        telemetry_path=os.path.join(args.out_dir, "telemetry.jsonl"),
        snapshot_every=args.snapshot_every,
        snapshot_fn=snapshot,
        log_every=args.log_every,
        state=state,
        start_iteration=start,
    )
    print(os.path.join(args.out_dir, "checkpoint.pfck"))
    return 0


def _request_from_args(args) -> SynthesisRequest:
    corners = None
    if args.corners:
        vals = [float(v) for v in args.corners.replace(",", " ").split()]
        if len(vals) != 8:
            raise PatchforgeError("--corners needs 8 numbers: x0 y0 x1 y1 x2 y2 x3 y3")
        corners = tuple((vals[i], vals[i + 1]) for i in range(0, 8, 2))
        return SynthesisRequest(output_height=args.height, output_width=args.width,
                                corners=corners)
    sx = 1.0 if args.scale_x is None else args.scale_x
    sy = 1.0 if args.scale_y is None else args.scale_y
    return SynthesisRequest(output_height=args.height, output_width=args.width,
                            scale_x=sx, scale_y=sy)


def _cmd_synthesize(args) -> int:
    engine = SynthesisEngine(load_checkpoint(args.checkpoint))
    img = engine.synthesize(_request_from_args(args))
    save_image(args.out, img)
    print(args.out)
    return 0


def _cmd_eval(args) -> int:
    engine = SynthesisEngine(load_checkpoint(args.checkpoint))
    if args.image:
        source = load_image(args.image)
    else:
        h, w = engine.orig_hw
        source = engine.source[:, :h, :w]
    with open(args.grid, "r", encoding="utf-8") as fh:
        grid = json.load(fh)
    if not isinstance(grid, list):
        raise PatchforgeError("grid file must hold a JSON array of requests")
    mcfg = PatchMetricConfig(patch_size=args.patch_size, stride=args.stride)
    with open(args.out, "w", encoding="utf-8") as fh:
        for entry in grid:
            req = SynthesisRequest.from_dict(entry)
            y = engine.synthesize(req)
            rep = bidirectional_report(y, source, mcfg)
            fh.write(json.dumps({"request": entry, "report": rep}) + "\n")
    print(args.out)
    return 0


def _cmd_serve(args) -> int:
    service = InferenceService(args.checkpoint, host=args.host, port=args.port)
    host, port = service.address
    print(f"serving on http://{host}:{port}", file=sys.stderr)
    service.serve_forever()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="patchforge",
                                description="single-image generative retargeting")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on one image")
    t.add_argument("--image", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--preset", default="default", choices=sorted(PRESETS))
    t.add_argument("--config", default=None, help="flat key=value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a single config key")
    t.add_argument("--iterations", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--ablate-reconst", action="store_true",
                   help="drop the reconstruction loss (ablation)")
    t.add_argument("--single-scale-d", action="store_true",
                   help="force a single-scale discriminator (ablation)")
    t.add_argument("--snapshot-every", type=int, default=0)
    t.add_argument("--log-every", type=int, default=1)
    t.add_argument("--resume", default=None, help="checkpoint to resume from")
    t.set_defaults(fn=_cmd_train)

    s = sub.add_parser("synthesize", help="synthesize from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--scale-x", type=float, default=None)
    s.add_argument("--scale-y", type=float, default=None)
    s.add_argument("--height", type=int, default=None)
    s.add_argument("--width", type=int, default=None)
    s.add_argument("--corners", default=None,
                   help="8 numbers (TL TR BR BL, [0,1] output coords)")
    s.set_defaults(fn=_cmd_synthesize)

    e = sub.add_parser("eval", help="metric report over a request grid")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--grid", required=True, help="JSON array of requests")
    e.add_argument("--out", required=True, help="JSONL report path")
    e.add_argument("--image", default=None,
                   help="reference image (default: the checkpoint's source)")
    e.add_argument("--patch-size", type=int, default=7)
    e.add_argument("--stride", type=int, default=1)
    e.set_defaults(fn=_cmd_eval)

    v = sub.add_parser("serve", help="HTTP inference service")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8765)
    v.set_defaults(fn=_cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PatchforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
