"""Command-line front end.

Verbs::

    tdminv gen        write a reference/target phantom pair
    tdminv sim        simulate noisy measurements of a target image
    tdminv recon      run TDM-INV and the baselines, write all artifacts
    tdminv baseline   run only the baselines
    tdminv gridsearch search alpha, beta and reg_scale for the best SSIM
    tdminv metrics    SSIM and PSNR of an image against a reference

``recon``, ``baseline`` and ``gridsearch`` read an optional config file
(``--config``); every config key is also a flag, and flags win.  Relative
output directories are placed under ``$TDMINV_OUTPUT_ROOT`` when it is set.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import experiment as ex
from .imageio import ImageFormatError, read_image, write_pfm, write_pgm, write_sinogram
from .metrics import psnr, ssim
from .phantoms import KINDS, make_phantom


def _add_spec_flags(p):
    for f in dataclasses.fields(ex.ExperimentSpec):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                       metavar=f.type.upper() if f.type in ("int", "float") else "VALUE")
    p.add_argument("--config", help="key = value experiment file")


def _spec(args):
    base = ex.load_spec(args.config) if args.config else ex.ExperimentSpec()
    flags = {f.name: getattr(args, f.name) for f in dataclasses.fields(ex.ExperimentSpec)
             if getattr(args, f.name) is not None}
    return ex.spec_from_mapping(flags, base)


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _print_rows(report):
    print(f"config {report.config_hash}")
    for r in report.rows:
        print(f"{r.method:8s} SSIM {r.ssim:.4f}  PSNR {r.psnr:.2f} dB  {r.runtime:.1f} s")
    if report.out_dir is not None:
        print(f"wrote {report.out_dir}")


def cmd_gen(args):
    detail = None if args.detail == "auto" else args.detail == "yes"
    ph = make_phantom(args.kind, args.size, args.seed, not args.no_deform, detail)
    out = ex.output_dir(ex.ExperimentSpec(output=args.out))
    out.mkdir(parents=True, exist_ok=True)
    for name, img in (("reference", ph.reference), ("target", ph.target)):
        write_pgm(out / f"{name}.pgm", img)
        write_pfm(out / f"{name}.pfm", img)
    print(f"wrote {out}")


def cmd_sim(args):
    spec = _spec(args)
    target = read_image(args.target)
    if target.shape[0] != target.shape[1]:
        raise ex.SpecError("target image must be square")
    op = ex.make_operator(spec, target.shape[0])
    data = ex.add_gaussian_noise(op.apply(target), spec.noise, spec.noise_seed)
    out = ex.output_dir(spec)
    out.mkdir(parents=True, exist_ok=True)
    write_sinogram(out / "data.pfm", data, op)
    print(f"wrote {out / 'data.pfm'}")


def cmd_recon(args):
    _print_rows(ex.run_experiment(_spec(args)))


def cmd_baseline(args):
    _print_rows(ex.run_experiment(_spec(args), tdm=False))


def cmd_gridsearch(args):
    spec = _spec(args)
    res = ex.grid_search(spec, _floats(args.alphas), _floats(args.betas), _floats(args.reg_scales))
    for c in res.table:
        print(f"alpha {c['alpha']:g} beta {c['beta']:g} reg_scale {c['reg_scale']:g}: "
              f"SSIM {c['ssim']:.4f} PSNR {c['psnr']:.2f}")
    b = res.best
    print(f"best alpha {b.alpha:g} beta {b.beta:g} reg_scale {b.reg_scale:g}")


def cmd_metrics(args):
    img, ref = read_image(args.image), read_image(args.truth)
    print(f"SSIM {ssim(img, ref):.6f}")
    print(f"PSNR {psnr(img, ref, args.peak):.4f}")


def build_parser():
    parser = argparse.ArgumentParser(prog="tdminv", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen", help="generate a phantom pair")
    p.add_argument("--kind", choices=KINDS, default="ellipses")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--detail", choices=("auto", "yes", "no"), default="auto")
    p.add_argument("--no-deform", action="store_true")
    p.add_argument("--out", default="phantom")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sim", help="simulate measurements of a target image")
    p.add_argument("--target", required=True)
    _add_spec_flags(p)
    p.set_defaults(func=cmd_sim)

    for name, func, text in (("recon", cmd_recon, "reconstruct and compare"),
                             ("baseline", cmd_baseline, "baselines only")):
        p = sub.add_parser(name, help=text)
        _add_spec_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("gridsearch", help="grid search over alpha, beta, reg_scale")
    _add_spec_flags(p)
    p.add_argument("--alphas", required=True, help="comma-separated values")
    p.add_argument("--betas", required=True)
    p.add_argument("--reg-scales", required=True)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("metrics", help="SSIM and PSNR against a reference image")
    p.add_argument("image")
    p.add_argument("truth")
    p.add_argument("--peak", type=float, default=1.0)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ex.SpecError, ImageFormatError, ValueError, OSError, FloatingPointError) as exc:
        print(f"tdminv {args.verb}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
