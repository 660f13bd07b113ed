"""Command-line entry point: ``docbin {synth,train,binarize,eval,baseline,sweep}``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 domain error.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import datagen, report
from .baselines import howe, otsu, sauvola
from .errors import DomainError, FormatError, InvalidArgument, InvalidState
from .features import FeatureConfig
from .imaging import list_pairs, load_gray, load_mask, save_image
from .inference import StitchPlan, binarize_image, ensemble_binarize
from .metrics import evaluate_pair, mean_report, report_csv
from .network import NetworkSpec, load_model, parameter_count, save_model
from .trainer import TrainConfig, make_split, parse_kv, prepare_crops, train

log = logging.getLogger("docbin")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DOMAIN = 0, 1, 2, 3
IMAGE_EXTS = (".pgm", ".ppm", ".pnm", ".pbm")
NET_KEYS = ("depth", "width", "scales", "kernel", "features", "val_count", "members")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _stem(path) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _gather_images(paths) -> list[str]:
    out = []
    for p in paths:
        if os.path.isdir(p):
            for name in sorted(os.listdir(p)):
                stem, ext = os.path.splitext(name)
                if ext in IMAGE_EXTS and ext != ".pbm" and not stem.endswith("_gt"):
                    out.append(os.path.join(p, name))
        elif os.path.exists(p):
            out.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    if not out:
        raise InvalidArgument("no input images found")
    return out


def _parse_sets(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise InvalidArgument(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load_settings(args) -> dict:
    values = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            values.update(parse_kv(f.read()))
    values.update(_parse_sets(getattr(args, "set", None)))
    for key in ("loss", "depth", "width", "scales", "kernel", "features"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    return values


def _split_settings(values: dict):
    net = {k: values[k] for k in NET_KEYS if k in values}
    rest = {k: v for k, v in values.items() if k not in NET_KEYS}
    return net, TrainConfig.from_dict(rest)


def _spec_from(net_vals: dict, features: FeatureConfig, seed: int) -> NetworkSpec:
    base = NetworkSpec()
    try:
        spec = NetworkSpec(
            depth=int(net_vals.get("depth", base.depth)),
            width=int(net_vals.get("width", base.width)),
            scales=int(net_vals.get("scales", base.scales)),
            kernel=int(net_vals.get("kernel", base.kernel)),
            in_channels=features.channels, seed=seed)
    except ValueError as exc:
        raise InvalidArgument(f"bad network setting: {exc}") from None
    spec.validate()
    return spec


def _load_pairs(directory):
    pairs = list_pairs(directory)
    if not pairs:
        raise InvalidArgument(f"no image/ground-truth pairs found in {directory}")
    return [(load_gray(i), load_mask(g)) for i, g in pairs]


def _datasets(args, net_vals, cfg, features):
    pages = _load_pairs(args.data)
    rng = np.random.default_rng(cfg.seed)
    if args.val:
        val_pages = _load_pairs(args.val)
        train_c = [c for i, (a, b) in enumerate(pages)
                   for c in prepare_crops(a, b, features, cfg.crop, cfg.stride, i)]
        val_c = [c for i, (a, b) in enumerate(val_pages)
                 for c in prepare_crops(a, b, features, cfg.crop, cfg.stride, i)]
    else:
        n_val = int(net_vals.get("val_count", max(1, len(pages) // 10)))
        train_c, val_c = make_split(pages, n_val, rng, features, cfg.crop, cfg.stride)
    if not train_c or not val_c:
        raise DomainError("no usable crops (every crop needs ink)")
    return train_c, val_c


def _progress(args):
    return None if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))


# -- subcommands --------------------------------------------------------------

def cmd_synth(args) -> int:
    values = _parse_sets(args.set)
    if args.size:
        values["size"] = args.size
    params = datagen.params_from_dict(values, replace(datagen.PageParams(), seed=args.seed or 0))
    rows = datagen.generate_corpus(args.n, params, args.out)
    print(f"wrote {len(rows)} pages to {args.out}")
    return EXIT_OK


def _train_one(args, net_vals, cfg, features, train_c, val_c, out_path):
    spec = _spec_from(net_vals, features, cfg.seed)
    net, tlog = train(cfg, train_c, val_c, spec, features, _progress(args))
    save_model(net, out_path)
    base = os.path.splitext(out_path)[0]
    with open(base + "_log.csv", "w") as f:
        f.write(tlog.to_csv())
    report.training_curve(tlog, base + "_curve.png", title=os.path.basename(out_path))
    return net, tlog


def cmd_train(args) -> int:
    values = _load_settings(args)
    net_vals, cfg = _split_settings(values)
    features = FeatureConfig.parse(net_vals.get("features", "rd"))
    members = int(net_vals.get("members", args.members))
    train_c, val_c = _datasets(args, net_vals, cfg, features)
    log.info("%d training crops, %d validation crops", len(train_c), len(val_c))
    outs = [args.out] if members == 1 else [
        f"{os.path.splitext(args.out)[0]}_{i}.fcnb" for i in range(members)]
    for i, path in enumerate(outs):
        _, tlog = _train_one(args, net_vals, replace(cfg, seed=cfg.seed + i), features,
                             train_c, val_c, path)
        print(f"{path}: best validation P-FM {tlog.best_pfm:.4f} at step {tlog.best_step}")
    return EXIT_OK


def _write_mask(out_dir, path, mask, prob=None):
    base = os.path.join(out_dir, _stem(path))
    save_image(base + ".pbm", mask.astype(np.uint8))
    if prob is not None:
        save_image(base + "_prob.pgm", np.asarray(prob, dtype=np.float64))


def cmd_binarize(args) -> int:
    if bool(args.model) == bool(args.ensemble):
        raise UsageError("give exactly one of --model or --ensemble")
    paths = args.ensemble.split(",") if args.ensemble else [args.model]
    nets = [load_model(p) for p in paths]
    images = _gather_images(args.images)
    os.makedirs(args.out, exist_ok=True)
    plan = StitchPlan(args.crop, args.stride)

    def run(path):
        img = load_gray(path)
        if len(nets) == 1:
            prob, mask = binarize_image(nets[0], img, plan=plan)
            return mask, prob
        return ensemble_binarize(nets, img, plan=plan), None

    results = _map(run, images, args.jobs)
    for path, (mask, prob) in zip(images, results):
        _write_mask(args.out, path, mask, prob if args.prob else None)
    print(f"wrote {len(images)} masks to {args.out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    images = _gather_images(args.images)
    os.makedirs(args.out, exist_ok=True)
    if args.method == "otsu":
        fn = otsu
    elif args.method == "sauvola":
        fn = lambda img: sauvola(img, args.window, args.k)
    else:
        fn = lambda img: howe(img, args.c)
    masks = _map(lambda p: fn(load_gray(p)), images, args.jobs)
    for path, m in zip(images, masks):
        _write_mask(args.out, path, m)
    print(f"wrote {len(images)} {args.method} masks to {args.out}")
    return EXIT_OK


def _key(path) -> str:
    s = _stem(path)
    return s[:-3] if s.endswith("_gt") else s


def _files(p):
    if os.path.isdir(p):
        return [os.path.join(p, n) for n in sorted(os.listdir(p))
                if os.path.splitext(n)[1] in IMAGE_EXTS and not n.endswith("_prob.pgm")]
    return [p]


def _match(pred_arg, gt_arg):
    for p in (pred_arg, gt_arg):
        if not os.path.exists(p):
            raise FileNotFoundError(f"no such file or directory: {p}")
    if os.path.isfile(pred_arg) and os.path.isfile(gt_arg):
        return [(pred_arg, gt_arg)]
    gts = {}
    for g in _files(gt_arg):
        k = _key(g)
        # in a corpus directory only the _gt files are ground truth
        if os.path.isdir(gt_arg) and any(_stem(x).endswith("_gt") for x in _files(gt_arg)) \
                and not _stem(g).endswith("_gt"):
            continue
        gts[k] = g
    preds = {}
    for p in _files(pred_arg):
        # a bilevel .pbm wins over any other file with the same key
        k = _key(p)
        if k not in preds or (p.endswith(".pbm") and not preds[k].endswith(".pbm")):
            preds[k] = p
    keys = sorted(set(gts) & set(preds))
    if not keys:
        raise InvalidArgument("no prediction/ground-truth pairs with matching names")
    missing = sorted(set(gts) - set(preds))
    if missing:
        log.warning("%d ground-truth files have no prediction: %s", len(missing), ", ".join(missing[:5]))
    return [(preds[k], gts[k]) for k in keys]


def cmd_eval(args) -> int:
    pairs = _match(args.pred, args.gt)

    def score(pair):
        p, g = pair
        try:
            return evaluate_pair(load_mask(p), load_mask(g)), None
        except DomainError as exc:
            return None, f"{g}: {exc}"

    results = _map(score, pairs, args.jobs)
    rows = [(_key(g), r) for (_, g), (r, _) in zip(pairs, results)]
    good = [r for r, _ in results if r is not None]
    text = report_csv(rows, mean_report(good) if good else None)
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w") as f:
            f.write(text)
        if not args.no_figures and good:
            base = os.path.splitext(args.out)[0]
            report.metric_summary(rows, base + "_metrics.png")
            if args.images:
                for (p, g), (name, r) in zip(pairs, rows):
                    src = os.path.join(args.images, name + ".pgm")
                    if r is not None and os.path.exists(src):
                        report.error_overlay(load_gray(src), load_mask(p), load_mask(g),
                                             f"{base}_{name}_errors.png")
    else:
        sys.stdout.write(text)
    errors = [e for _, e in results if e]
    for e in errors:
        print(f"domain error: {e}", file=sys.stderr)
    return EXIT_DOMAIN if errors else EXIT_OK


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",")]
    except ValueError:
        raise InvalidArgument(f"expected comma-separated integers, got {text!r}") from None


def cmd_sweep(args) -> int:
    values = _load_settings(replace_ns(args, depth=None, width=None, scales=None, kernel=None))
    net_vals, cfg = _split_settings(values)
    features = FeatureConfig.parse(net_vals.get("features", "rd"))
    base = NetworkSpec()
    grid = {
        "depth": _int_list(args.depth or net_vals.get("depth", base.depth)),
        "width": _int_list(args.width or net_vals.get("width", base.width)),
        "scales": _int_list(args.scales or net_vals.get("scales", base.scales)),
        "kernel": _int_list(args.kernel or net_vals.get("kernel", base.kernel)),
    }
    train_c, val_c = _datasets(args, net_vals, cfg, features)
    os.makedirs(args.out, exist_ok=True)
    points = []
    lines = ["label,depth,width,scales,kernel,params,val_pfm,best_step,model"]
    for L, D, S, K in itertools.product(grid["depth"], grid["width"], grid["scales"], grid["kernel"]):
        label = f"L{L}_D{D}_S{S}_K{K}"
        point = dict(net_vals, depth=L, width=D, scales=S, kernel=K)
        try:
            spec = _spec_from(point, features, cfg.seed)
        except InvalidArgument as exc:
            print(f"skip {label}: {exc}", file=sys.stderr)
            continue
        path = os.path.join(args.out, label + ".fcnb")
        _, tlog = _train_one(args, point, cfg, features, train_c, val_c, path)
        n = parameter_count(spec)
        points.append({"label": label, "params": n, "val_pfm": tlog.best_pfm})
        lines.append(f"{label},{L},{D},{S},{K},{n},{tlog.best_pfm:.6f},{tlog.best_step},{label}.fcnb")
    if not points:
        raise InvalidArgument("sweep grid has no valid architecture")
    with open(os.path.join(args.out, "sweep.csv"), "w") as f:
        f.write("\n".join(lines) + "\n")
    report.sweep_plot(points, os.path.join(args.out, "sweep.png"))
    print(f"trained {len(points)} models; report in {os.path.join(args.out, 'sweep.csv')}")
    return EXIT_OK


def replace_ns(ns, **kw):
    d = dict(vars(ns))
    d.update(kw)
    return argparse.Namespace(**d)


# -- parser -------------------------------------------------------------------

def _add_common(p, seed=True):
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for per-image work")
    p.add_argument("-q", "--quiet", action="store_true")
    if seed:
        p.add_argument("--seed", type=int, default=None)


def _add_train_opts(p, sweep=False):
    p.add_argument("data", help="directory of image/ground-truth pairs")
    p.add_argument("--val", help="separate validation directory (default: split from data)")
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--loss", choices=("pfm", "fm", "pfm+fm", "ce"))
    kind = str if sweep else int
    for name in ("depth", "width", "scales", "kernel"):
        p.add_argument(f"--{name}", type=kind, default=None,
                       help="comma-separated values" if sweep else None)
    p.add_argument("--features", help="feature channels, e.g. 'rd' or 'rd,otsu' or 'none'")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="docbin", description="Document binarisation with multi-scale FCNs.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic degraded corpus")
    p.add_argument("out")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--size", help="page size, e.g. 128 or 96,160")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="page parameter override")
    _add_common(p)

    p = sub.add_parser("train", help="train a network (or several with --members)")
    _add_train_opts(p)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--members", type=int, default=1, help="train an ensemble of this size")
    _add_common(p)

    p = sub.add_parser("binarize", help="binarize images with a model or an ensemble")
    p.add_argument("images", nargs="+")
    p.add_argument("--model")
    p.add_argument("--ensemble", help="comma-separated model files; majority vote")
    p.add_argument("--out", required=True, help="output directory for P4 masks")
    p.add_argument("--prob", action="store_true", help="also write P5 probability maps")
    p.add_argument("--crop", type=int, default=256)
    p.add_argument("--stride", type=int, default=128)
    _add_common(p)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("pred", help="prediction file or directory")
    p.add_argument("gt", help="ground-truth file or directory")
    p.add_argument("--out", help="CSV path (default: stdout); figures go beside it")
    p.add_argument("--images", help="directory of source pages for error overlays")
    p.add_argument("--no-figures", action="store_true")
    _add_common(p)

    p = sub.add_parser("baseline", help="run a classical binarisation method")
    p.add_argument("images", nargs="+")
    p.add_argument("--method", choices=("otsu", "sauvola", "howe"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=31)
    p.add_argument("--k", type=float, default=0.2)
    p.add_argument("--c", type=float, default=50.0, help="Howe pairwise penalty")
    _add_common(p)

    p = sub.add_parser("sweep", help="train one model per architecture grid point")
    _add_train_opts(p, sweep=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)
    return ap


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "binarize": cmd_binarize,
            "eval": cmd_eval, "baseline": cmd_baseline, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"docbin: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("docbin: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, InvalidArgument, InvalidState) as exc:
        print(f"docbin {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"docbin {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DomainError as exc:
        print(f"docbin {args.command}: domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
