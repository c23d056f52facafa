"""Command-line pipeline: gen -> freq -> sketch/merge -> estimate -> eval.

Every command takes an explicit seed (no wall-clock entropy) and writes a
manifest JSON next to each output artifact, so re-running a manifest's
command line reproduces the artifact bit for bit.  Exit codes: 0 success,
2 usage, 3 data integrity (frequency fingerprint mismatch), 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np
import scipy

from . import __version__
from .bounds import (BoundValue, ParamDomain, covering_bound_gauss,
                     covering_bound_gmm, domination_branch,
                     domination_constant, sketch_size_gmm,
                     sketch_size_single_gauss)
from .evaluate import gen_synthetic, kl_sym_mc, mmd_mc
from .freqdesign import (ESTIM_BLOCKS, ESTIM_M0, ESTIM_N0, ESTIM_ROUNDS,
                         design_frequencies, kind_from_name, read_freqs,
                         write_freqs)
from .model import Dataset, mixture_sample, read_gmm, write_gmm
from .recovery import (Algorithm, DegenerateAtomError, RecoveryConfig,
                       estimate)
from .sketch import (DEFAULT_CHUNK_SIZE, FingerprintMismatch, read_sketch,
                     sketch_chunks, stream_data, write_data, write_sketch,
                     sketch_merge)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INTEGRITY = 3
EXIT_NUMERIC = 4


def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


def _child_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(stream + 1)[stream])


def _write_manifest(out_path: str, command: str, params: dict, started: float):
    manifest = {
        "command": command,
        "parameters": params,
        "wall_ms": int((time.monotonic() - started) * 1000),
        "versions": {
            "sketchmix": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
    }
    with open(str(out_path) + ".manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _head_rows(path: str, limit: int) -> np.ndarray:
    """First rows of a data file, read without loading the full payload."""
    rows, have = [], 0
    for chunk in stream_data(path):
        rows.append(chunk)
        have += chunk.shape[0]
        if have >= limit:
            break
    head = np.concatenate(rows, axis=0)
    return head[:limit]


def cmd_gen(args) -> int:
    started = time.monotonic()
    problem = gen_synthetic(args.dim, args.components, args.seed)
    data = mixture_sample(problem.truth, args.samples, _child_rng(args.seed, 0))
    write_data(args.out, data)
    write_gmm(args.model_out, problem.truth)
    params = {"dim": args.dim, "components": args.components,
              "samples": args.samples, "seed": args.seed,
              "out": args.out, "model_out": args.model_out}
    _write_manifest(args.out, "gen", params, started)
    _write_manifest(args.model_out, "gen", params, started)
    return EXIT_OK


def cmd_freq(args) -> int:
    started = time.monotonic()
    head = Dataset(_head_rows(args.data, args.n0))
    fs = design_frequencies(head, args.m, kind_from_name(args.kind),
                            args.seed, n0=args.n0, m0=args.m0,
                            c=args.blocks, T=args.iters)
    write_freqs(args.out, fs)
    _write_manifest(args.out, "freq", {
        "data": args.data, "m": args.m, "kind": args.kind, "seed": args.seed,
        "n0": args.n0, "m0": args.m0, "blocks": args.blocks,
        "iters": args.iters, "sigma2_bar": fs.sigma2_bar, "out": args.out,
    }, started)
    return EXIT_OK


def cmd_sketch(args) -> int:
    started = time.monotonic()
    fs = read_freqs(args.freqs)
    sk = sketch_chunks(stream_data(args.data, args.chunk_size), fs)
    write_sketch(args.out, sk)
    _write_manifest(args.out, "sketch", {
        "data": args.data, "freqs": args.freqs,
        "chunk_size": args.chunk_size, "out": args.out, "count": sk.count,
    }, started)
    return EXIT_OK


def cmd_merge(args) -> int:
    started = time.monotonic()
    sketches = [read_sketch(p) for p in args.inputs]
    merged = sketches[0]
    for sk in sketches[1:]:
        merged = sketch_merge(merged, sk)
    write_sketch(args.out, merged)
    _write_manifest(args.out, "merge",
                    {"inputs": list(args.inputs), "out": args.out}, started)
    return EXIT_OK


def cmd_estimate(args) -> int:
    started = time.monotonic()
    sk = read_sketch(args.sketch)
    fs = read_freqs(args.freqs)
    cfg = RecoveryConfig(K=args.k, algorithm=Algorithm(args.algo),
                         seed=args.seed)
    mix = estimate(sk, fs, cfg)
    write_gmm(args.out, mix)
    _write_manifest(args.out, "estimate", {
        "sketch": args.sketch, "freqs": args.freqs, "k": args.k,
        "algo": args.algo, "seed": args.seed, "out": args.out,
    }, started)
    return EXIT_OK


def cmd_eval(args) -> int:
    truth = read_gmm(args.true)
    est = read_gmm(args.est)
    if args.metric == "kl":
        res = kl_sym_mc(truth, est, args.samples,
                        np.random.default_rng(args.seed))
        print(f"kl_sym {_fmt17(res.estimate)} {_fmt17(res.stderr)}")
        print(f"kl_clamp_count {res.clamp_count} 0")
    else:
        value, stderr = mmd_mc(truth, est, args.sigma2,
                               kind_from_name(args.kind), args.m,
                               np.random.default_rng(args.seed),
                               return_stderr=True)
        print(f"mmd {_fmt17(value)} {_fmt17(stderr)}")
    return EXIT_OK


def _print_bound(name: str, bv: BoundValue):
    linear = _fmt17(bv.linear) if bv.linear is not None else "inf"
    print(f"{name} {linear}")
    print(f"log_{name} {_fmt17(bv.log)}")


def cmd_bounds(args) -> int:
    dom = ParamDomain(args.dim, args.sigma2_min, args.sigma2_max,
                      args.mean_bound, args.radius)
    eps = args.eta * args.eta / 24.0
    if args.family == "gauss":
        m = sketch_size_single_gauss(dom, args.a, args.eta, args.rho)
        cov = covering_bound_gauss(dom, eps)
        print(f"A_branch {domination_branch(dom, args.a, args.eta)}")
    else:
        m = sketch_size_gmm(dom, args.dim, args.k, args.eta, args.rho)
        cov = covering_bound_gmm(dom, args.k, eps)
    print(f"m_lower_bound {m}")
    print(f"log_covering_number {_fmt17(cov.log)}")
    _print_bound("D", domination_constant(dom, args.a))
    return EXIT_OK


def _sweep_manifest_params(args) -> dict:
    return {
        "dims": list(args.dims), "ks": list(args.ks),
        "m_factors": list(args.m_factors), "seeds": list(args.seeds),
        "samples": args.samples, "kind": args.kind,
        "kl_samples": args.kl_samples, "mmd_samples": args.mmd_samples,
        "out": args.out,
    }


def cmd_sweep(args) -> int:
    started = time.monotonic()
    params = _sweep_manifest_params(args)
    manifest_path = args.out + ".manifest.json"
    done = set()
    if os.path.exists(args.out):
        if not os.path.exists(manifest_path):
            print("sweep: existing table has no manifest, refusing to resume",
                  file=sys.stderr)
            return EXIT_USAGE
        with open(manifest_path, encoding="utf-8") as f:
            previous = json.load(f)["parameters"]
        if previous != params:
            print("sweep: existing manifest does not match this grid",
                  file=sys.stderr)
            return EXIT_USAGE
        with open(args.out, newline="", encoding="utf-8") as f:
            for row in csv.DictReader(f):
                done.add((int(row["d"]), int(row["K"]), int(row["m"]),
                          int(row["seed"])))
    else:
        with open(args.out, "w", newline="", encoding="utf-8") as f:
            csv.writer(f).writerow(["d", "K", "m", "seed", "kl", "mmd",
                                    "wall_ms"])
    _write_manifest(args.out, "sweep", params, started)

    kind = kind_from_name(args.kind)
    for d in args.dims:
        for K in args.ks:
            for factor in args.m_factors:
                m = max(1, round(factor * (2 * d + 1) * K))
                for seed in args.seeds:
                    if (d, K, m, seed) in done:
                        continue
                    row_start = time.monotonic()
                    problem = gen_synthetic(d, K, seed)
                    data = mixture_sample(problem.truth, args.samples,
                                          _child_rng(seed, 0))
                    fs = design_frequencies(data, m, kind, seed)
                    sk = sketch_chunks(
                        iter(np.array_split(data.samples,
                                            max(1, data.n // DEFAULT_CHUNK_SIZE))),
                        fs)
                    cfg = RecoveryConfig(K=K, algorithm=Algorithm.CLOMPR,
                                         seed=seed)
                    mix = estimate(sk, fs, cfg)
                    kl = kl_sym_mc(problem.truth, mix, args.kl_samples,
                                   _child_rng(seed, 1))
                    mmd = mmd_mc(problem.truth, mix, fs.sigma2_bar, kind,
                                 args.mmd_samples, _child_rng(seed, 2))
                    wall_ms = int((time.monotonic() - row_start) * 1000)
                    with open(args.out, "a", newline="", encoding="utf-8") as f:
                        csv.writer(f).writerow(
                            [d, K, m, seed, _fmt17(kl.estimate), _fmt17(mmd),
                             wall_ms])
    _write_manifest(args.out, "sweep", params, started)
    return EXIT_OK


def _positive(kind=int, minimum=1):
    def convert(text):
        value = kind(text)
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}")
        return value
    return convert


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sketchmix",
        description="Compressive Gaussian mixture estimation from "
                    "characteristic-function sketches.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset and truth GMM")
    g.add_argument("--dim", type=_positive(), required=True)
    g.add_argument("--components", type=_positive(), required=True)
    g.add_argument("--samples", type=_positive(), required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True, help="CLDATA01 output path")
    g.add_argument("--model-out", required=True, help="truth GMM output path")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("freq", help="design a frequency set from data")
    f.add_argument("--data", required=True)
    f.add_argument("--m", type=_positive(), required=True)
    f.add_argument("--kind", choices=["gauss", "fgr", "ar"], default="ar")
    f.add_argument("--seed", type=int, required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--n0", type=_positive(), default=ESTIM_N0)
    f.add_argument("--m0", type=_positive(), default=ESTIM_M0)
    f.add_argument("--blocks", type=_positive(), default=ESTIM_BLOCKS)
    f.add_argument("--iters", type=_positive(), default=ESTIM_ROUNDS)
    f.set_defaults(func=cmd_freq)

    s = sub.add_parser("sketch", help="sketch a data file")
    s.add_argument("--data", required=True)
    s.add_argument("--freqs", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--chunk-size", type=_positive(), default=DEFAULT_CHUNK_SIZE)
    s.set_defaults(func=cmd_sketch)

    mg = sub.add_parser("merge", help="merge sketches of disjoint data")
    mg.add_argument("--out", required=True)
    mg.add_argument("inputs", nargs="+")
    mg.set_defaults(func=cmd_merge)

    e = sub.add_parser("estimate", help="recover a GMM from a sketch")
    e.add_argument("--sketch", required=True)
    e.add_argument("--freqs", required=True)
    e.add_argument("--k", type=_positive(), required=True)
    e.add_argument("--algo", choices=["clomp", "clompr", "split"],
                   default="clompr")
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_estimate)

    ev = sub.add_parser("eval", help="compare two GMM files")
    ev.add_argument("metric", choices=["kl", "mmd"])
    ev.add_argument("--true", required=True)
    ev.add_argument("--est", required=True)
    ev.add_argument("--samples", type=_positive(), default=500_000,
                    help="Monte-Carlo samples for kl")
    ev.add_argument("--m", type=_positive(), default=500_000,
                    help="Monte-Carlo frequencies for mmd")
    ev.add_argument("--seed", type=int, required=True)
    ev.add_argument("--sigma2", type=float, default=1.0)
    ev.add_argument("--kind", choices=["gauss", "fgr", "ar"], default="ar")
    ev.set_defaults(func=cmd_eval)

    b = sub.add_parser("bounds", help="sketch-size bound calculators")
    b.add_argument("family", choices=["gauss", "gmm"])
    b.add_argument("--dim", type=_positive(), required=True)
    b.add_argument("--k", type=_positive(), default=1)
    b.add_argument("--eta", type=float, default=0.5)
    b.add_argument("--rho", type=float, default=0.05)
    b.add_argument("--sigma2-min", type=float, default=0.25)
    b.add_argument("--sigma2-max", type=float, default=4.0)
    b.add_argument("--mean-bound", type=float, default=1.0)
    b.add_argument("--radius", type=float, default=1.0)
    b.add_argument("--a", type=float, default=1.0)
    b.set_defaults(func=cmd_bounds)

    sw = sub.add_parser("sweep", help="grid of end-to-end runs as CSV")
    sw.add_argument("--dims", type=int, nargs="*", default=[])
    sw.add_argument("--ks", type=int, nargs="*", default=[])
    sw.add_argument("--m-factors", type=float, nargs="*", default=[])
    sw.add_argument("--seeds", type=int, nargs="*", default=[])
    sw.add_argument("--samples", type=_positive(), default=100_000)
    sw.add_argument("--kind", choices=["gauss", "fgr", "ar"], default="ar")
    sw.add_argument("--kl-samples", type=_positive(), default=100_000)
    sw.add_argument("--mmd-samples", type=_positive(), default=50_000)
    sw.add_argument("--out", required=True)
    sw.set_defaults(func=cmd_sweep)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FingerprintMismatch as exc:
        print(f"sketchmix: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (DegenerateAtomError, FloatingPointError) as exc:
        print(f"sketchmix: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RuntimeError as exc:
        print(f"sketchmix: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"sketchmix: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
