"""Command-line entry point: ``nmgsparse <command> [options]``.

Every option can also come from a JSON object passed with ``--config``
(keys are option names, dashes or underscores); flags given on the command
line win over the config file.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .core import ContractError, DegenerateInputError, StructureError, energy, sparsity
from .dispatch import DispatchError, make_registry
from .io import FormatError, read_matrix, save_checkpoint, write_encoded
from .kernels import DEFAULT_TILING, GemmTiling
from .kernels.bench import FORMATS, OracleMismatch, bench_gemm, check_against_oracle, prepare

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("nmgsparse")


class UsageError(Exception):
    pass


def _int_list(s) -> list:
    try:
        return [int(v) for v in str(s).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _nm_list(s) -> list:
    out = []
    for item in str(s).split(","):
        try:
            n, m = item.split(":")
            out.append((int(n), int(m)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected n:m pairs like 1:2,2:6, got {s!r}") from None
    return out


def _shape_list(s) -> list:
    out = []
    for item in str(s).split(","):
        try:
            dims = tuple(int(v) for v in item.lower().split("x"))
        except ValueError:
            dims = ()
        if len(dims) != 3 or min(dims) < 1:
            raise argparse.ArgumentTypeError(f"expected shapes like 768x3072x4096, got {item!r}")
        out.append(dims)
    return out


def _name_list(s) -> list:
    return [v.strip() for v in str(s).split(",") if v.strip()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults (flags win)")
    common.add_argument("--seed", type=int, default=0, help="base random seed")
    common.add_argument("--threads", type=int, default=1, help="kernel threads")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="nmgsparse", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    subs = {}

    p = sub.add_parser("convert", parents=[common], help="encode a dense matrix as n:m:g")
    p.add_argument("input", help="STNM or CSV dense matrix")
    p.add_argument("output", help="STNG file to write")
    p.add_argument("--n", type=int, required=False)
    p.add_argument("--m", type=int, required=False)
    p.add_argument("--g", type=int, required=False)
    p.add_argument("--algorithm", choices=("greedy", "greedy+exchange"), default="greedy")
    p.add_argument("--sparse-dim", type=int, choices=(0, 1), default=1)
    p.add_argument("--group-dim", type=int, choices=(0, 1), default=0)
    p.add_argument("--pad", action="store_true", help="zero-pad to the next divisible shape")
    subs["convert"] = p

    p = sub.add_parser("energy-sweep", parents=[common],
                       help="energy kept by each sparsity structure on Gaussian matrices")
    p.add_argument("--rows", type=int, default=768)
    p.add_argument("--cols", type=int, default=3072)
    p.add_argument("--nm", type=_nm_list, default="1:2,1:4,1:8", help="sparsity points as n:m")
    p.add_argument("--groups", type=_int_list, default="1,4,16")
    p.add_argument("--block", type=int, default=4, help="side of the blocked baseline's blocks")
    p.add_argument("--seeds", type=int, default=5, help="matrices per point")
    p.add_argument("--out", help="CSV path (default stdout)")
    subs["energy-sweep"] = p

    p = sub.add_parser("gemm-bench", parents=[common], help="time GEMM kernels")
    p.add_argument("--shape", type=_shape_list, default="768x3072x4096", help="MxKxN list")
    p.add_argument("--formats", type=_name_list, default="dense,nmg")
    p.add_argument("--nm", type=_nm_list, default="1:2,2:6,1:8")
    p.add_argument("--groups", type=_int_list, default="4")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--tiling", type=_int_list, default=None, help="mc,kc,nc,nr")
    p.add_argument("--sweep", action="store_true", help="tune the tiling on the first shape first")
    p.add_argument("--out", help="CSV path (default stdout)")
    subs["gemm-bench"] = p

    p = sub.add_parser("train-demo", parents=[common],
                       help="dense training, then one-shot/iterative/layer-wise pruning")
    p.add_argument("--sizes", type=_int_list, default="64,32,1")
    p.add_argument("--teacher-sizes", type=_int_list, default="64,8,1")
    p.add_argument("--n-train", type=int, default=1024)
    p.add_argument("--n-eval", type=int, default=1024)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=60, help="dense training epochs")
    p.add_argument("--finetune-epochs", type=int, default=50, help="fine-tuning budget per schedule")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--target", type=float, default=0.5)
    p.add_argument("--start", type=float, default=0.1, help="iterative schedule start")
    p.add_argument("--step", type=float, default=0.1, help="iterative schedule increment")
    p.add_argument("--schedules", type=_name_list, default="one_shot,iterative,layer_wise")
    p.add_argument("--global-pruning", action="store_true", help="pool all weights when pruning")
    p.add_argument("--out-dir", help="directory for per-schedule CSV logs")
    p.add_argument("--checkpoint-dir", help="directory for final weights")
    subs["train-demo"] = p

    p = sub.add_parser("verify", parents=[common], help="run the self-check suites")
    p.add_argument("--suites", type=_name_list, default=None)
    subs["verify"] = p

    p = sub.add_parser("registry", parents=[common], help="list registered implementations")
    subs["registry"] = p
    return parser, subs


def _normalize_config(cfg: dict) -> dict:
    out = {}
    for k, v in cfg.items():
        if isinstance(v, list):
            v = ",".join(":".join(map(str, x)) if isinstance(x, list) else str(x) for x in v)
        out[k.replace("-", "_")] = v
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    cfg = _normalize_config(cfg)
    sp = subs[args.command]
    known = {a.dest for a in sp._actions}
    unknown = sorted(set(cfg) - known - {"config"})
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    sp.set_defaults(**cfg)
    return parser.parse_args(argv)


def _emit(lines, out):
    text = "".join(line + "\n" for line in lines)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------


def cmd_convert(args) -> int:
    from .nmg import from_dense_greedy, pad_to_format

    if None in (args.n, args.m, args.g):
        raise UsageError("convert needs --n, --m and --g")
    x = read_matrix(args.input)
    src = pad_to_format(x, args.n, args.m, args.g, args.sparse_dim) if args.pad else x
    enc = from_dense_greedy(src, args.n, args.m, args.g, args.sparse_dim, args.group_dim,
                            refine=args.algorithm == "greedy+exchange")
    write_encoded(args.output, enc)
    decoded = enc.to_dense()[: x.shape[0], : x.shape[1]]
    try:
        e = f"{energy(decoded, x):.10f}"
    except DegenerateInputError:
        e = "nan"
    print(f"format={args.n}:{args.m}:{args.g}")
    print(f"algorithm={args.algorithm}")
    print(f"shape={x.shape[0]}x{x.shape[1]}")
    print(f"encoded_shape={enc.shape[0]}x{enc.shape[1]}")
    print(f"sparsity={sparsity(decoded):.10f}")
    print(f"energy={e}")
    return EXIT_OK


def cmd_energy_sweep(args) -> int:
    from .experiments import SweepRow, energy_sweep

    if not args.nm or not args.groups or args.seeds < 1:
        raise UsageError("energy-sweep needs a nonempty --nm grid, --groups and --seeds >= 1")
    rows = energy_sweep(args.rows, args.cols, args.nm, args.groups, args.block, args.seeds, args.seed)
    _emit([SweepRow.HEADER] + [r.csv() for r in rows], args.out)
    return EXIT_OK


def _sweep_tiling(shape, threads, dtype, seed) -> GemmTiling:
    best = None
    print("tiling_mc,kc,nc,nr,median_s", file=sys.stderr)
    for mc in (48, 96, 192):
        for kc in (128, 256, 512):
            for nr in (64, 128):
                t = GemmTiling(mc, kc, 1024, nr, threads)
                r = bench_gemm(shape, "dense", reps=3, tiling=t, seed=seed)
                print(f"{mc},{kc},1024,{nr},{r.median_s:.6f}", file=sys.stderr)
                if best is None or r.median_s < best[0]:
                    best = (r.median_s, t)
    print(f"selected tiling {best[1]}", file=sys.stderr)
    return best[1]


def cmd_gemm_bench(args) -> int:
    from .kernels.bench import BenchReport

    dtype = np.dtype(args.dtype)
    unknown = set(args.formats) - set(FORMATS)
    if unknown or not args.formats:
        raise UsageError(f"--formats must be drawn from {FORMATS}")
    if args.reps < 3:
        raise UsageError("--reps must be at least 3")
    if args.tiling:
        if len(args.tiling) != 4:
            raise UsageError("--tiling takes mc,kc,nc,nr")
        tiling = GemmTiling(*args.tiling, threads=args.threads)
    else:
        tiling = GemmTiling(DEFAULT_TILING.mc, DEFAULT_TILING.kc, DEFAULT_TILING.nc,
                            DEFAULT_TILING.nr, args.threads)
    if args.sweep:
        tiling = _sweep_tiling(args.shape[0], args.threads, dtype, args.seed)

    configs = []
    for fmt in args.formats:
        if fmt in ("dense", "blas"):
            configs.append((fmt, 0, 0, 0, 0.0))
        elif fmt == "csr":
            configs += [(fmt, n, m, 0, 1.0 - n / m) for n, m in args.nm]
        else:
            configs += [(fmt, n, m, g, 1.0 - n / m) for n, m in args.nm for g in args.groups]

    lines = [BenchReport.csv_header()]
    for shape in args.shape:
        dense_median = None
        for fmt, n, m, g, sp in configs:
            prepared = prepare(shape, fmt, n, m, g, sp, tiling, args.seed, dtype)
            try:
                err = check_against_oracle(prepared)
            except OracleMismatch as exc:
                print(f"oracle mismatch for {fmt} {n}:{m}:{g} on {shape}: {exc}", file=sys.stderr)
                return EXIT_VERIFY
            log.info("%s %s:%s:%s oracle error %.3g", fmt, n, m, g, err)
            rep = bench_gemm(shape, fmt, n, m, g, sp, args.reps, tiling, args.seed,
                             prepared=prepared)
            lines.append(rep.csv_row())
            if fmt == "dense":
                dense_median = rep.median_s
            if dense_median and fmt != "dense":
                print(f"speedup vs internal dense {fmt} {n}:{m}:{g} "
                      f"{'x'.join(map(str, shape))}: {dense_median / rep.median_s:.3f}",
                      file=sys.stderr)
    _emit(lines, args.out)
    return EXIT_OK


def cmd_train_demo(args) -> int:
    from .train import DemoConfig, TrainConfig, run_demo

    train = TrainConfig(lr=args.lr, batch_size=args.batch_size, dense_epochs=args.epochs,
                        finetune_epochs=args.finetune_epochs, seed=args.seed,
                        global_pruning=args.global_pruning)
    cfg = DemoConfig(sizes=tuple(args.sizes), teacher_sizes=tuple(args.teacher_sizes),
                     n_train=args.n_train, n_eval=args.n_eval, noise=args.noise,
                     target=args.target, start=args.start, step=args.step,
                     finetune_epochs=args.finetune_epochs, train=train)
    result = run_demo(cfg, tuple(args.schedules))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "dense.csv").write_text(result.dense.to_csv())
        (out / "dense_reference.csv").write_text(result.reference.to_csv())
        for name, tl in result.logs.items():
            (out / f"{name}.csv").write_text(tl.to_csv())
    base = result.dense_final_loss
    layers = result.models["dense"].layer_names
    print("schedule,final_loss,loss_ratio,prune_events,mask_violations,"
          + ",".join(f"sparsity_{n}" for n in layers))
    print(f"dense,{base:.10g},1.000000,0,0," + ",".join("0.000000" for _ in layers))
    for name, tl in result.logs.items():
        sp = result.models[name].weight_sparsity()
        print(f"{name},{tl.final_loss:.10g},{tl.final_loss / base:.6f},{len(tl.events)},"
              f"{tl.mask_violations}," + ",".join(f"{sp[n]:.6f}" for n in layers))
    if args.checkpoint_dir:
        for name, model in result.models.items():
            save_checkpoint(Path(args.checkpoint_dir) / name, model.parameters,
                            {"schedule": name, "sizes": list(cfg.sizes), "seed": args.seed})
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, format_table, run_suites

    names = args.suites or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise UsageError(f"unknown suites {unknown}; available: {', '.join(SUITES)}")
    results = run_suites(names, seed=args.seed)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_registry(args) -> int:
    print(make_registry().dump())
    return EXIT_OK


COMMANDS = {
    "convert": cmd_convert,
    "energy-sweep": cmd_energy_sweep,
    "gemm-bench": cmd_gemm_bench,
    "train-demo": cmd_train_demo,
    "verify": cmd_verify,
    "registry": cmd_registry,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse: --help or a usage error
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ContractError, StructureError, DispatchError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
