"""Command-line entry point: ``nigjdd <command> [options]``.

Exit codes: 0 success, 1 numeric validation failure, 2 usage or I/O error.
Errors go to stderr as ``error[<category>]: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, dump_config, load_config

log = logging.getLogger("nigjdd")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    def __init__(self, category: str, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.category = category
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError("usage", message)


# --- helpers -----------------------------------------------------------------


def _read_image(path):
    from .imaging import ImageError, load_png

    try:
        return load_png(path)
    except FileNotFoundError as e:
        raise CliError("io", f"no such file: {path}") from e
    except (ImageError, ValueError) as e:
        raise CliError("io", f"{path}: {e}") from e


def _read_raw(path):
    """A 1-channel PNG is taken as an RGGB mosaic; a colour PNG is mosaicked."""
    from .bayer import mosaic
    from .imaging import RawMosaic

    img = _read_image(path)
    if np.ptp(img, axis=2).max() == 0 and _is_gray_file(path):
        return RawMosaic(img[..., 0])
    return mosaic(img)


def _is_gray_file(path) -> bool:
    import cv2

    a = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    return a is not None and a.ndim == 2


def _load_ckpt(path):
    from .checkpoint import CheckpointError, load_checkpoint

    try:
        return load_checkpoint(path)
    except FileNotFoundError as e:
        raise CliError("io", f"no such checkpoint: {path}") from e
    except (CheckpointError, ValueError, KeyError) as e:
        raise CliError("checkpoint", f"{path}: {e}") from e


def _write_text(path, text: str):
    from .imaging import atomic_write_bytes

    atomic_write_bytes(path, text.encode())


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v: float) -> str:
    return "inf" if np.isinf(v) else f"{v:.4f}"


def _image_list(paths):
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out.extend(sorted(p.glob("*.png")))
        else:
            out.append(p)
    return out


def _stage(outputs):
    """Write ``{path: writer}`` only after every payload has been produced."""
    for path, write in outputs.items():
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        write(path)


# --- commands ------------------------------------------------------------------


def cmd_degrade(args, cfg: RunConfig):
    from .bayer import mosaic
    from .degrade import NoiseSpec, gen_sigma_field
    from .imaging import save_png

    noise_text = args.noise or cfg.noise
    inputs = _image_list(args.inputs)
    if not inputs:
        raise CliError("usage", "no input images")
    images = [(p, _read_image(p)) for p in inputs]
    outputs = {}
    out = Path(args.out)
    for i, (path, img) in enumerate(images):
        seed = args.seed + i
        try:
            spec = NoiseSpec.parse(noise_text, seed=seed)
        except ValueError as e:
            raise CliError("config", f"noise: {e}") from e
        field = None
        if spec.kind == "gaussian_spatial":
            field = gen_sigma_field(*img.shape[:2], spec.params["sigma_max"], spec.params["smoothness"],
                                    np.random.default_rng([seed, 1]))
        from .degrade import add_noise

        noisy = add_noise(img, spec, sigma_field=field)
        raw = mosaic(noisy)
        stem = path.stem
        outputs[out / f"{stem}_raw.png"] = lambda p, r=raw: save_png(r.data, p, bit_depth=16)
        outputs[out / f"{stem}_noisy.png"] = lambda p, n=noisy: save_png(n, p)
        if field is not None and args.sigma_map:
            scale = float(field.max()) or 1.0
            outputs[out / f"{stem}_sigma.png"] = lambda p, f=field, s=scale: save_png(f / s, p)
        print(f"{path}: noise={spec.kind} seed={seed}")
    _stage(outputs)
    return EXIT_OK


def _datasets(cfg: RunConfig):
    from .data import load_image_dir, procedural_dataset
    from .train import make_validation_set

    d = cfg.data
    try:
        train_imgs = load_image_dir(d.train_dir) if d.train_dir else procedural_dataset(d.n_train, d.size, cfg.seed)
        val_imgs = (load_image_dir(d.val_dir) if d.val_dir
                    else procedural_dataset(d.n_val, d.size, cfg.seed + 12345))
    except (OSError, ValueError) as e:
        raise CliError("io", str(e)) from e
    if not train_imgs or not val_imgs:
        raise CliError("io", "empty training or validation set")
    val = make_validation_set(val_imgs, cfg.train.sigma_range, cfg.train.sigma_smoothness, seed=cfg.seed + 7)
    return train_imgs, val


def cmd_train(args, cfg: RunConfig):
    from .checkpoint import save_checkpoint
    from .train import baseline_scores, train

    dataset, val = _datasets(cfg)
    tcfg = cfg.train if args.steps is None else replace(cfg.train, max_steps=args.steps)
    t0 = time.time()
    res = train(dataset, val, cfg.net, tcfg, cfg.prior, log_path=args.log)
    save_checkpoint(res.best, args.out)
    if args.last:
        save_checkpoint(res.last, args.last)
    print(f"steps={res.last.training_meta['step']} time={time.time() - t0:.1f}s "
          f"best_val_psnr={res.best.training_meta['val_psnr']:.3f} "
          f"baseline_psnr={baseline_scores(val)['psnr']:.3f}")
    return EXIT_OK


def _noise_map_outputs(field, outputs, noise_png, dump):
    from .checkpoint import save_float_dump
    from .imaging import save_png

    var = field.noise_variance()
    lo, hi = float(var.min()), float(var.max())
    if noise_png:
        vis = (var - lo) / (hi - lo) if hi > lo else np.zeros_like(var)
        outputs[noise_png] = lambda p: save_png(vis, p)
        print(f"noise map: E[sigma^2] in [{lo:.6g}, {hi:.6g}] mapped to [0, 1]")
    if dump:
        outputs[dump] = lambda p: save_float_dump(
            {"noise_variance": var, "mean": field.mean}, p, {"min": lo, "max": hi})


def cmd_infer(args, cfg: RunConfig):
    from . import net
    from .imaging import save_png
    from .train import restore

    ck = _load_ckpt(args.ckpt)
    raw = _read_raw(args.input)
    try:
        from .bayer import to_rggb

        raw = to_rggb(raw)
    except ValueError as e:
        raise CliError("io", str(e)) from e
    restored = restore(ck.weights, ck.net_config, raw, ensemble=args.ensemble)
    field = net.predict(raw, ck.weights, ck.net_config)
    if not np.all(np.isfinite(restored)):
        raise CliError("numeric", "non-finite output", EXIT_NUMERIC)
    outputs = {args.out: lambda p: save_png(restored, p)}
    _noise_map_outputs(field, outputs, args.noise_map, args.dump_float)
    _stage(outputs)
    return EXIT_OK


def cmd_finetune(args, cfg: RunConfig):
    from .checkpoint import save_checkpoint
    from .finetune import DegenerateMaskError, finetune
    from .imaging import save_png
    from .train import write_curve_csv

    ck = _load_ckpt(args.ckpt)
    raw = _read_raw(args.input)
    clean = _read_image(args.ref) if args.ref else None
    if args.curve and clean is None:
        raise CliError("usage", "--curve needs --ref")
    fcfg = cfg.finetune
    if args.iterations is not None:
        fcfg = replace(fcfg, iterations=args.iterations)
    if args.lr is not None:
        fcfg = replace(fcfg, lr=args.lr)
    try:
        res = finetune(ck, raw, fcfg, clean=clean)
    except DegenerateMaskError as e:
        raise CliError("numeric", str(e), EXIT_NUMERIC) from e
    outputs = {args.out_ckpt: lambda p: save_checkpoint(res.checkpoint, p),
               args.out: lambda p: save_png(res.restored, p)}
    if args.curve:
        outputs[args.curve] = lambda p: write_curve_csv(p, res.curve, ("iteration", "psnr"))
    _stage(outputs)
    if res.curve:
        peak = max(res.curve, key=lambda r: r[1])
        print(f"psnr iter0={res.curve[0][1]:.3f} final={res.curve[-1][1]:.3f} "
              f"peak={peak[1]:.3f}@{peak[0]}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig):
    from .imaging import ImageError, metrics

    preds, refs = _image_list(args.pred), _image_list(args.ref)
    if len(preds) != len(refs):
        raise CliError("usage", f"{len(preds)} predictions vs {len(refs)} references")
    rows = []
    for p, r in zip(preds, refs):
        try:
            m = metrics(_read_image(p), _read_image(r))
        except (ImageError, ValueError) as e:
            raise CliError("io", f"{p} vs {r}: {e}") from e
        rows.append((str(p), m.psnr, m.ssim))
    finite = [r[1] for r in rows if np.isfinite(r[1])]
    mean_psnr = float("inf") if len(finite) < len(rows) and not finite else float(np.mean(finite or [np.inf]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    table = [(n, _fmt(a), f"{b:.4f}") for n, a, b in rows] + [("mean", _fmt(mean_psnr), f"{mean_ssim:.4f}")]
    width = max(len(t[0]) for t in table)
    print(f"{'image':<{width}}  {'psnr':>9}  {'ssim':>7}")
    for n, a, b in table:
        print(f"{n:<{width}}  {a:>9}  {b:>7}")
    if args.csv:
        _write_text(args.csv, _csv_text(("image", "psnr", "ssim"), table))
    return EXIT_OK


def cmd_validate_loss(args, cfg: RunConfig):
    from .validation import oracle_suite

    rep = oracle_suite(args.n, args.samples, args.seed, args.threshold)
    w = rep["worst"]
    print(f"configs={args.n} samples={args.samples} seed={args.seed}")
    print(f"max |z| = {abs(w.z):.3f} ({w.term} #{w.index}: closed {w.closed_form:.6f} "
          f"vs mc {w.estimate:.6f} +/- {w.stderr:.6f})")
    print(f"paper_literal minus sampled expectation at (lam=1, alpha=3, beta=0.5): "
          f"{rep['literal_gap']:.4f} +/- {rep['literal_gap_stderr']:.4f} nats")
    for r in rep["failures"]:
        print(f"  outside {args.threshold} stderr: {r.term} #{r.index} z={r.z:.2f}")
    print("PASS" if rep["passed"] else "FAIL")
    return EXIT_OK if rep["passed"] else EXIT_NUMERIC


def cmd_overfit(args, cfg: RunConfig):
    from .data import cartoon
    from .degrade import NoiseSpec
    from .train import single_image_overfit, write_curve_csv

    clean = cartoon(args.size) if args.image == "cartoon" else _read_image(args.image)
    try:
        spec = NoiseSpec.parse(args.noise or cfg.noise, seed=args.seed)
    except ValueError as e:
        raise CliError("config", f"noise: {e}") from e
    out = Path(args.out)
    curves = {}
    for loss in ("mse", "elbo"):
        curves[loss] = single_image_overfit(clean, spec, loss, args.steps, args.eval_every, seed=args.seed,
                                            lr=args.lr)
        peak = max(curves[loss], key=lambda r: r[1])
        print(f"{loss}: peak {peak[1]:.3f} dB at step {peak[0]}, final {curves[loss][-1][1]:.3f} dB")
    _stage({out / f"{k}.csv": (lambda p, c=c: write_curve_csv(p, c)) for k, c in curves.items()})
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--print-config", action="store_true", help="print the resolved configuration")
    common.add_argument("--deterministic", action="store_true", help="single-threaded numeric paths")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="nigjdd", description="Joint demosaicking and denoising with NIG uncertainty.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("degrade", parents=[common], help="synthesise noisy raw mosaics")
    s.add_argument("--in", dest="inputs", nargs="+", required=True)
    s.add_argument("--noise", help="kind:key=value,... (8-bit units for sigma and a)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--sigma-map", action="store_true", help="also write the sigma field (spatial noise)")
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--out", required=True, help="best checkpoint path")
    s.add_argument("--last", help="also save the final weights here")
    s.add_argument("--log", help="JSON-lines training log")
    s.add_argument("--steps", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", parents=[common], help="restore a raw mosaic")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="input", required=True, help="16-bit gray RGGB PNG or colour PNG")
    s.add_argument("--out", required=True)
    s.add_argument("--noise-map", help="PNG visualisation of E[sigma^2]")
    s.add_argument("--dump-float", help="exact noise map and mean in the checkpoint container")
    s.add_argument("--ensemble", action="store_true", help="average over the 8 Bayer-preserving transforms")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("finetune", parents=[common], help="adapt a model to one input")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True, help="restored PNG")
    s.add_argument("--out-ckpt", required=True)
    s.add_argument("--ref", help="clean reference for the PSNR curve")
    s.add_argument("--curve", help="CSV of (iteration, psnr)")
    s.add_argument("--iterations", type=int)
    s.add_argument("--lr", type=float)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("eval", parents=[common], help="PSNR/SSIM table")
    s.add_argument("--pred", nargs="+", required=True)
    s.add_argument("--ref", nargs="+", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("validate-loss", parents=[common], help="closed forms vs Monte Carlo")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--samples", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--threshold", type=float, default=3.0)
    s.set_defaults(func=cmd_validate_loss)

    s = sub.add_parser("overfit", parents=[common], help="single-image MSE vs ELBO curves")
    s.add_argument("--image", default="cartoon", help="'cartoon' or a PNG path")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--noise", help="defaults to gaussian_iid:sigma=25")
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--eval-every", type=int, default=50)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_overfit)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        try:
            cfg = load_config(args.config) if args.config else RunConfig()
        except FileNotFoundError as e:
            raise CliError("io", f"no such config: {args.config}") from e
        if args.command == "overfit" and not args.noise:
            args.noise = "gaussian_iid:sigma=25"
        if args.print_config:
            print(dump_config(cfg), end="")
            print(json.dumps({k: v for k, v in vars(args).items() if k != "func"}, sort_keys=True))
        if args.deterministic:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=1):
                return args.func(args, cfg)
        return args.func(args, cfg)
    except CliError as e:
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        return e.code
    except ConfigError as e:
        print(f"error[config]: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error[io]: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as e:
        print(f"error[numeric]: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
