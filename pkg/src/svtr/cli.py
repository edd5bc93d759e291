"""Command-line surface: train / eval / infer / gen-data / params / flops /
attn-dump / gradcheck.

Every command validates its config before touching data, funnels all
randomness through --seed, exits 0 on success, and prints a single
``error: ...`` line on stderr otherwise.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import gradcheck as gc
from .audit import count_flops, count_params, param_breakdown
from .checkpoint import check_compatible, load_checkpoint, restore_model
from .config import PRESETS, load_config
from .ctc import Charset, greedy_decode
from .data import (RenderStyle, gen_dataset, load_dataset, read_pnm, save_dataset,
                   write_pnm, _resize_nearest)
from .exceptions import SvtrError
from .model import SvtrModel, export_attention
from .train import evaluate, train

# Published reference figures for the four variants (excluding classifier).
PARAM_REFS = {"svtr-t": 4.15e6, "svtr-s": 8.45e6, "svtr-b": 22.66e6, "svtr-l": 38.81e6}
FLOP_REFS_G = {"svtr-t": 0.29, "svtr-s": 0.63, "svtr-b": 3.55, "svtr-l": 6.07}
# Geometry the published FLOP figures correspond to (W/4 = max predict length).
REFERENCE_FLOP_GEOMETRY = (32, 100)


def _add_config_arg(p):
    p.add_argument("--config", required=True,
                   help="preset name (%s) or config file path" % ", ".join(PRESETS))


def _charset_for(config, args) -> Charset:
    if getattr(args, "charset", None):
        cs = Charset.from_file(args.charset)
    else:
        cs = Charset()
    if cs.size != config.charset_size:
        raise SvtrError(f"charset has {cs.size} classes but config expects "
                        f"{config.charset_size}")
    return cs


def cmd_params(args):
    config = load_config(args.config)
    breakdown = param_breakdown(config)
    total_excl = count_params(config, include_classifier=False)
    total_incl = count_params(config, include_classifier=True)
    print(f"{'module':<12} {'params':>12}")
    for section, count in breakdown.items():
        print(f"{section:<12} {count:>12,}")
    print(f"{'total':<12} {total_incl:>12,}  (incl. classifier)")
    print(f"{'total':<12} {total_excl:>12,}  (excl. classifier)")
    if args.config in PARAM_REFS:
        ref = PARAM_REFS[args.config]
        delta = 100.0 * (total_excl - ref) / ref
        print(f"reference {ref / 1e6:.2f} M, delta {delta:+.2f}%")
    return 0


def cmd_flops(args):
    config = load_config(args.config)
    report = count_flops(config, input_h=args.input_h, input_w=args.input_w)
    print(f"input geometry {report.input_h}x{report.input_w}")
    print(f"{'component':<20} {'MACs':>14}  quadratic-in-n")
    for entry in report.entries:
        print(f"{entry.name:<20} {entry.macs:>14,}  {'yes' if entry.quadratic else 'no'}")
    print(f"total {report.total_macs / 1e9:.4f} G (1-MAC convention)")
    print(f"total {report.total_flops / 1e9:.4f} G (2-FLOP convention)")
    if args.config in FLOP_REFS_G:
        rh, rw = REFERENCE_FLOP_GEOMETRY
        ref_report = count_flops(config, input_h=rh, input_w=rw)
        print(f"reference {FLOP_REFS_G[args.config]:.2f} G at {rh}x{rw}: "
              f"this model {ref_report.total_macs / 1e9:.4f} G (1-MAC) / "
              f"{ref_report.total_flops / 1e9:.4f} G (2-FLOP)")
    return 0


def cmd_gen_data(args):
    charset = Charset()
    style = RenderStyle(noise_sigma=args.noise_sigma)
    samples = gen_dataset(args.n, charset, (args.min_len, args.max_len),
                          args.height, args.width, seed=args.seed, style=style)
    save_dataset(samples, args.out, charset)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args):
    config = load_config(args.config)
    charset = _charset_for(config, args)
    if args.data:
        dataset = load_dataset(args.data, config.input_h, config.input_w,
                               charset, config.max_label_len)
    else:
        dataset = gen_dataset(args.synth, charset, (args.min_len, args.max_len),
                              config.input_h, config.input_w, seed=args.seed)
    model = SvtrModel(config, seed=args.seed)
    history = train(model, dataset, epochs=args.epochs, batch_size=args.batch_size,
                    seed=args.seed, peak_lr=args.lr, val_fraction=args.val_fraction,
                    warmup_epochs=args.warmup_epochs,
                    clip_norm=None if args.no_clip else 5.0,
                    checkpoint_dir=args.out, log_path=args.log)
    for m in history[-5:]:
        print(f"epoch {m.epoch}: loss {m.loss:.4f} accuracy {m.accuracy:.4f}")
    return 0


def cmd_eval(args):
    config = load_config(args.config)
    charset = _charset_for(config, args)
    model, _ = restore_model(args.checkpoint, expected_config=config)
    dataset = load_dataset(args.data, config.input_h, config.input_w,
                           charset, config.max_label_len)
    report = evaluate(model, dataset)
    if report.warning:
        print(f"warning: {report.warning}")
    print(f"word_accuracy\t{report.word_accuracy:.6f}")
    print(f"norm_edit_sim\t{report.norm_edit_sim:.6f}")
    return 0


def _load_image(path, config):
    image = read_pnm(path)
    if image.ndim == 2:
        image = np.repeat(image[None], 3, axis=0)
    return _resize_nearest(image, config.input_h, config.input_w).astype(np.float32)


def cmd_infer(args):
    config = load_config(args.config)
    charset = _charset_for(config, args)
    model, _ = restore_model(args.checkpoint, expected_config=config)
    model.eval()
    dumped = {}
    for path in args.image:
        image = _load_image(path, config)
        logits = model.forward(image[None])
        label = greedy_decode(logits)[0]
        print(f"{path}\t{charset.decode(label)}")
        if args.dump_logits:
            dumped[path] = logits.data[0]
    if args.dump_logits:
        np.savez(args.dump_logits, **dumped)
    return 0


def _query_for_char(model, charset, image, char: str, stage: int) -> int:
    """Map a character to a query index: the grid cell at the stage's centre
    row in the column where greedy decoding first emits that character."""
    logits = model.forward(image[None])
    path = np.argmax(logits.data[0], axis=-1)
    target = charset.encode(char).indices[0]
    cols = np.nonzero(path == target)[0]
    if cols.size == 0:
        raise SvtrError(f"character {char!r} is not predicted for this image")
    h, w, _ = model.config.stage_geometry()[stage - 1]
    return (h // 2) * w + int(cols[0])


def cmd_attn_dump(args):
    config = load_config(args.config)
    model, _ = restore_model(args.checkpoint, expected_config=config)
    model.eval()
    image = _load_image(args.image, config)
    if args.char is not None:
        charset = _charset_for(config, args)
        query = _query_for_char(model, charset, image, args.char, args.stage)
    elif args.query is not None:
        query = args.query
    else:
        raise SvtrError("one of --query or --char is required")
    heads = [args.head] if args.head is not None else \
        list(range(config.heads[args.stage - 1]))
    for head in heads:
        heatmap = export_attention(model, image[None], args.stage, args.block,
                                   head, query)
        peak = heatmap.max()
        scaled = heatmap / peak if peak > 0 else heatmap
        name = f"attn_s{args.stage}_b{args.block}_h{head}_q{query}.pgm"
        out_path = f"{args.out.rstrip('/')}/{name}" if args.out else name
        write_pnm(out_path, scaled)
        print(out_path)
    return 0


def cmd_gradcheck(args):
    dtype = np.float64 if args.dtype == "f64" else np.float32
    tol = gc.TOLERANCES[np.float64 if args.dtype == "f64" else np.float32]
    failed = False
    print(f"{'op':<22} {'worst rel err':>14}")
    for name, err in gc.run_suite(dtype=dtype).items():
        flag = "" if err < tol else "  FAIL"
        failed |= err >= tol
        print(f"{name:<22} {err:>14.3e}{flag}")
    worst_model = max(gc.check_model(dtype=dtype).values())
    flag = "" if worst_model < tol else "  FAIL"
    failed |= worst_model >= tol
    print(f"{'model (end-to-end)':<22} {worst_model:>14.3e}{flag}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svtr",
                                     description="Scene text recognition toolkit")
    parser.add_argument("--seed", type=int, default=42, help="global random seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="parameter count audit")
    _add_config_arg(p)
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("flops", help="multiply-accumulate audit")
    _add_config_arg(p)
    p.add_argument("--input-h", type=int, help="override input height")
    p.add_argument("--input-w", type=int, help="override input width")
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--min-len", type=int, default=1)
    p.add_argument("--max-len", type=int, default=5)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--noise-sigma", type=float, default=0.02)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    _add_config_arg(p)
    p.add_argument("--data", help="dataset directory (labels.tsv layout)")
    p.add_argument("--synth", type=int, default=64,
                   help="generate this many synthetic samples when --data is absent")
    p.add_argument("--min-len", type=int, default=1)
    p.add_argument("--max-len", type=int, default=5)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, help="peak learning rate (default: 5e-4*batch/2048)")
    p.add_argument("--warmup-epochs", type=int, default=2)
    p.add_argument("--val-fraction", type=float, default=0.0)
    p.add_argument("--no-clip", action="store_true", help="disable gradient clipping")
    p.add_argument("--out", help="checkpoint directory")
    p.add_argument("--log", help="metrics log path")
    p.add_argument("--charset", help="charset file (one symbol per line)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_config_arg(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--charset")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="decode text from images")
    _add_config_arg(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", nargs="+", required=True)
    p.add_argument("--dump-logits", help="write raw logits to this .npz file")
    p.add_argument("--charset")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("attn-dump", help="export attention heatmaps as PGM")
    _add_config_arg(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--stage", type=int, required=True)
    p.add_argument("--block", type=int, required=True)
    p.add_argument("--head", type=int, help="default: all heads of the stage")
    p.add_argument("--query", type=int)
    p.add_argument("--char", help="pick the query from the column predicting this character")
    p.add_argument("--out", help="output directory (default: cwd)")
    p.add_argument("--charset")
    p.set_defaults(fn=cmd_attn_dump)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--dtype", choices=["f32", "f64"], default="f64")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SvtrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
