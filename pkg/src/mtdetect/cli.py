"""Command-line interface: ``mtdetect <command> ...``.

Every command writes its artifacts plus ``<output>.run.json``, which holds the
resolved arguments and sha256 hashes of the files read and written. Failures
print one JSON object on stderr and exit with a code that identifies the
failure class (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .core import FORMAT_VERSION, AutocorrSet, FormatError, MixtureModel, PlacementModel, Signal, validate

EXIT_CODES = {
    "ok": 0,
    "internal": 1,
    "usage": 2,
    "format": 3,
    "model": 4,
    "numerical": 5,
    "empty": 6,
    "io": 7,
}

THREADS_ENV = "MTDETECT_THREADS"


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# argument types


def sci_int(text: str) -> int:
    """Integer that may be written in scientific notation, e.g. ``1e7``."""
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v.is_integer():
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return int(v)


def grid_range(text: str) -> list[int]:
    """``a:b`` or ``a:step:b`` (inclusive) or a comma list."""
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) == 2:
                a, b, step = parts[0], parts[1], 1
            elif len(parts) == 3:
                a, step, b = parts
            else:
                raise ValueError
            if step < 1:
                raise ValueError
            return list(range(a, b + 1, step))
        return [int(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}; use a:b, a:step:b or a,b,c")


def float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}")


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# artifact helpers


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dump_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError("io", f"{path}: no such file")
    except json.JSONDecodeError as exc:
        raise CliError("format", f"{path}: malformed JSON ({exc})")


def write_run_manifest(command: str, args: argparse.Namespace, inputs, outputs, anchor: str | None) -> None:
    if anchor is None or anchor == "-":
        return
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    man = {
        "format": "mtdetect.run",
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "command": command,
        "config": config,
        "inputs": {p: sha256_file(p) for p in inputs if os.path.exists(p)},
        "outputs": {p: sha256_file(p) for p in outputs if os.path.exists(p)},
    }
    dump_json(man, anchor + ".run.json")


def load_ac(path: str) -> AutocorrSet:
    if not os.path.exists(path):
        raise CliError("io", f"{path}: no such file")
    return AutocorrSet.load(path)


def _mixture_from_args(args) -> MixtureModel:
    K, L = args.k, args.l
    if args.signals:
        raw = load_json(args.signals)
        sigs = [Signal(np.asarray(s, float)) for s in (raw["signals"] if isinstance(raw, dict) else raw)]
        if len(sigs) != K:
            raise CliError("model", f"--k {K} but {len(sigs)} signals in {args.signals}")
        if any(s.L != L for s in sigs):
            raise CliError("model", f"signals in {args.signals} do not have length {L}")
    else:
        rng = np.random.default_rng(np.random.SeedSequence([args.signal_seed, 99]))
        if args.dim == 2:
            sigs = []
            for _ in range(K):
                img = rng.standard_normal((L, L))
                sigs.append(Signal(img - img.mean()))
        else:
            sigs = [Signal(rng.standard_normal(L)) for _ in range(K)]
    if args.pi is None or args.pi == "uniform":
        pi = np.full(K, 1.0 / K)
    else:
        pi = np.asarray(float_list(args.pi))
        if pi.size != K or np.any(pi <= 0):
            raise CliError("model", f"--pi needs {K} positive weights")
        pi = pi / pi.sum()
    return MixtureModel.from_pi(sigs, args.gamma, pi, args.sigma)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    from .synth import synth_2d, synth_poisson, synth_well_separated, write_frames, write_stream

    model = _mixture_from_args(args)
    problems = validate(model, PlacementModel(args.model))
    if problems:
        raise CliError("model", "; ".join(problems))
    if args.dim == 2:
        if args.model != "separated":
            raise CliError("model", "2-D observations use the separated placement model")
        H = W = args.size
        occ = args.occurrences
        streams = [synth_2d(model, H, W, occ, seed=[args.seed, j], fixed_count=args.fixed_count)
                   for j in range(args.obs)]
        write_frames(streams, args.output)
    else:
        if args.model == "poisson":
            stream = synth_poisson(model, args.n, seed=args.seed, segment_length=args.segment_length)
        else:
            stream = synth_well_separated(model, args.n, seed=args.seed, segment_length=args.segment_length)
        write_stream(stream, args.output)
    side = [args.output + ".json"] + ([args.output + ".manifest.jsonl"] if args.dim == 1 else [])
    write_run_manifest("synth", args, [], [args.output] + side, args.output)
    return 0


def cmd_ac(args) -> int:
    from .acc import EXACT, AccumulatorState, accumulate_2d, finalize, parallel_accumulate
    from .synth import read_frames, read_header, read_stream_segments

    if not os.path.exists(args.input):
        raise CliError("io", f"{args.input}: no such file")
    head = read_header(args.input)
    L = args.l if args.l is not None else (len(head["model"]["signals"][0]["values"]) if head else None)
    if L is None:
        raise CliError("usage", "raw stream without header: pass --l")
    dim = len(head["shape"]) if head else 1
    if dim == 2 and head and "n_frames" in head:
        if args.order == 3:
            raise CliError("numerical", "third-order autocorrelations are not implemented in 2-D")
        state = AccumulatorState.empty(L, args.order, 2)
        for frame in read_frames(args.input, head["shape"]):
            state = accumulate_2d(state, frame)
    else:
        segs = read_stream_segments(args.input, args.segment_length, min_length=L)
        state = parallel_accumulate(segs, L, args.order, args.junction or EXACT, args.threads)
    if state.n_samples == 0:
        raise CliError("empty", "empty stream: no samples accumulated")
    ac = finalize(state)
    ac.save(args.output)
    write_run_manifest("ac", args, [args.input], [args.output, args.output + ".bin"], args.output)
    return 0


def _parse_sigma(text: str):
    if text == "solve":
        return None
    if text.startswith("known:"):
        try:
            return float(text.split(":", 1)[1])
        except ValueError:
            pass
    raise CliError("usage", f"--sigma must be 'solve' or 'known:<value>', got {text!r}")


def cmd_solve_homo(args) -> int:
    from .homo import solve_homo_separated, solve_poisson_explicit

    ac = load_ac(args.input)
    sigma = _parse_sigma(args.sigma)
    if args.model == "poisson":
        est = solve_poisson_explicit(ac)
        if sigma is not None:
            est.diagnostics["sigma_ignored"] = "the Poisson closed form estimates sigma itself"
    else:
        est = solve_homo_separated(ac, sigma, root_tol=args.root_tol, fallback=args.roots == "fallback")
    dump_json(est.to_dict(), args.output)
    write_run_manifest("solve-homo", args, [args.input], [args.output], args.output)
    return 0


def cmd_solve_hetero(args) -> int:
    from .hetero import SolverOptions, two_stage_solve

    ac = load_ac(args.input)
    if ac.L != args.l:
        raise CliError("model", f"artifact has L = {ac.L}, --l {args.l}")
    pi = None
    if args.pi is not None:
        pi = np.full(args.k, 1.0 / args.k) if args.pi == "uniform" else np.asarray(float_list(args.pi))
    gamma = None if args.gamma == "solve" else float(args.gamma)
    if gamma is not None and pi is None:
        pi = np.full(args.k, 1.0 / args.k)
    sigma = None if args.sigma is None else _parse_sigma(args.sigma)
    rep = two_stage_solve(ac, args.k, args.l, starts=args.starts, seed=args.seed, kind=args.model,
                          sigma=sigma, pi=pi, gamma=gamma, include_contaminated=args.include_contaminated,
                          threads=args.threads, opts=SolverOptions(max_nfev=args.max_nfev))
    dump_json(rep.to_dict(), args.output)
    write_run_manifest("solve-hetero", args, [args.input], [args.output], args.output)
    return 0 if rep.estimates is not None else EXIT_CODES["numerical"]


def _write_png(img: np.ndarray, path: str) -> bool:
    try:
        from PIL import Image
    except ImportError:
        return False
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo)
    Image.fromarray(np.round(255 * scaled).astype(np.uint8), mode="L").save(path)
    return True


def cmd_solve_2d(args) -> int:
    from .phase2d import extract_image_ac2, occupancy_density, rrr_multi

    ac = load_ac(args.input)
    if ac.dim != 2:
        raise CliError("model", "solve-2d needs a 2-D autocorrelation artifact")
    gamma, sigma = args.gamma, args.sigma
    if args.stream_header:
        head = load_json(args.stream_header)
        frames = head.get("n_frames", 1)
        gamma = occupancy_density(head["n_occurrences"] / frames, ac.L, head["shape"])
        sigma = head["model"]["noise_sigma"] if sigma is None else sigma
    if gamma is None or sigma is None:
        raise CliError("usage", "pass --gamma and --sigma, or --stream-header")
    W = args.w if args.w is not None else ac.L
    if W != ac.L:
        raise CliError("model", f"--w {W} does not match the artifact's L = {ac.L}")
    ac2 = extract_image_ac2(ac, gamma, sigma)
    res = rrr_multi(ac2, W, range(args.seeds), beta=args.beta, max_iter=args.max_iter, tol=args.tol)
    prefix = args.output
    res.image.astype("<f8").tofile(prefix + ".bin")
    with open(prefix + ".residual.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "residual"])
        for it, r in res.trace:
            w.writerow([int(it), repr(float(r))])
    png = _write_png(res.image, prefix + ".png")
    summary = {"format": "mtdetect.image_estimate", "format_version": FORMAT_VERSION, "W": W,
               "image": res.image.tolist(), "residual": res.residual, "iterations": res.iterations,
               "restarts": res.restarts, "converged": res.converged, "warning": res.warning,
               "gamma": gamma, "sigma": sigma, "png": png, "extras": res.extras}
    dump_json(summary, prefix + ".json")
    outs = [prefix + s for s in (".bin", ".residual.csv", ".json")] + ([prefix + ".png"] if png else [])
    write_run_manifest("solve-2d", args, [args.input], outs, prefix)
    if res.warning:
        sys.stderr.write(json.dumps({"warning": res.warning}) + "\n")
    return 0


def _estimate_signals(d: dict):
    fmt = d.get("format")
    if fmt == "mtdetect.homo_estimate":
        return [Signal.from_dict(d["x_hat"])]
    if fmt == "mtdetect.solve_report":
        if d["estimates"] is None:
            raise CliError("numerical", "solve report has no estimate")
        return list(MixtureModel.from_dict(d["estimates"]).signals)
    if fmt == "mtdetect.image_estimate":
        return [Signal(np.asarray(d["image"], float))]
    raise CliError("format", f"unrecognized estimate format {fmt!r}")


def _truth_signals(d: dict):
    if d.get("format") == "mtdetect.stream":
        d = d["model"]
    if "signals" not in d:
        raise CliError("format", "truth file holds neither a stream header nor a model")
    return list(MixtureModel.from_dict(d).signals)


def cmd_eval(args) -> int:
    from .eval import HarnessConfig, aligned_error, experiment1_harness
    from .phase2d import align_2d

    if args.harness:
        try:
            with open(args.harness) as fh:
                cfg = HarnessConfig.from_json(fh.read())
        except FileNotFoundError:
            raise CliError("io", f"{args.harness}: no such file")
        except json.JSONDecodeError as exc:
            raise CliError("format", f"{args.harness}: malformed JSON ({exc})")
        if args.output in (None, "-"):
            raise CliError("usage", "--harness needs -o <file.csv>")
        experiment1_harness(cfg, args.output)
        write_run_manifest("eval", args, [args.harness], [args.output], args.output)
        return 0
    if not (args.estimate and args.truth):
        raise CliError("usage", "eval needs --estimate and --truth, or --harness")
    est = _estimate_signals(load_json(args.estimate))
    truth = _truth_signals(load_json(args.truth))
    if truth[0].dim == 2:
        if len(est) != 1 or len(truth) != 1:
            raise CliError("model", "2-D evaluation compares a single image")
        err, (sign, refl) = align_2d(est[0], truth[0])
        out = {"errors": [err], "sign": sign, "reflected": refl}
    else:
        if est[0].L != truth[0].L:
            padded = [Signal(np.pad(e.values, (0, truth[0].L - e.L))) if e.L < truth[0].L else e for e in est]
            est = padded
        out = aligned_error(est, truth, allow_shift=args.shift).to_dict()
    dump_json(out, args.output)
    write_run_manifest("eval", args, [args.estimate, args.truth], [args.output] if args.output else [], args.output)
    return 0


def cmd_phase_diagram(args) -> int:
    from .hetero import phase_diagram

    cells = phase_diagram(args.l, args.k, starts=args.starts, seed=args.seed, threads=args.threads)
    rows = [c.row() for c in cells]
    if not args.include_time:
        for r in rows:
            r.pop("median_log10_time")
    fh = sys.stdout if args.output in (None, "-") else open(args.output, "w", newline="")
    try:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()
    write_run_manifest("phase-diagram", args, [], [args.output] if args.output else [], args.output)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mtdetect", description="Multi-target detection by autocorrelation analysis.")
    p.add_argument("--version", action="version", version=f"mtdetect {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="simulate an observation")
    s.add_argument("--model", choices=["separated", "poisson"], default="separated")
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--l", type=int, required=True)
    s.add_argument("--gamma", type=float, required=True)
    s.add_argument("--sigma", type=float, default=0.0)
    s.add_argument("--pi", default=None, help="'uniform' or comma-separated weights")
    s.add_argument("--n", type=sci_int, default=10**6, help="stream length (1-D)")
    s.add_argument("--seed", type=sci_int, default=0)
    s.add_argument("--signal-seed", type=sci_int, default=0)
    s.add_argument("--signals", default=None, help="JSON list of signals (default: random normal)")
    s.add_argument("--segment-length", type=sci_int, default=1 << 22)
    s.add_argument("--dim", type=int, choices=[1, 2], default=1)
    s.add_argument("--obs", type=sci_int, default=1, help="number of 2-D observations")
    s.add_argument("--size", type=int, default=256, help="side of each 2-D observation")
    s.add_argument("--occurrences", type=float, default=5.0, help="mean images per 2-D observation")
    s.add_argument("--fixed-count", action="store_true", help="place exactly --occurrences images")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("ac", help="estimate autocorrelations of a stream")
    a.add_argument("-i", "--input", required=True)
    a.add_argument("-o", "--output", required=True)
    a.add_argument("--order", type=int, choices=[1, 2, 3], default=3)
    a.add_argument("--l", type=int, default=None, help="window length (default: from the header)")
    a.add_argument("--junction", choices=["exact", "paper"], default="exact")
    a.add_argument("--segment-length", type=sci_int, default=1 << 22)
    a.add_argument("--threads", type=int, default=default_threads())
    a.set_defaults(func=cmd_ac)

    h = sub.add_parser("solve-homo", help="closed-form K = 1 recovery")
    h.add_argument("-i", "--input", required=True)
    h.add_argument("-o", "--output", default=None)
    h.add_argument("--model", choices=["separated", "poisson"], default="separated")
    h.add_argument("--sigma", default="solve", help="'solve' or 'known:<value>'")
    h.add_argument("--root-tol", type=float, default=1e-6,
                   help="relative tolerance for matching the two quadratics' roots")
    h.add_argument("--roots", choices=["strict", "fallback"], default="fallback",
                   help="on a failed root match, error (strict) or use the first quadratic's "
                        "unique positive root (fallback)")
    h.set_defaults(func=cmd_solve_homo)

    t = sub.add_parser("solve-hetero", help="multi-start least-squares recovery")
    t.add_argument("-i", "--input", required=True)
    t.add_argument("-o", "--output", default=None)
    t.add_argument("--k", type=int, required=True)
    t.add_argument("--l", type=int, required=True)
    t.add_argument("--starts", type=int, default=10)
    t.add_argument("--seed", type=sci_int, default=0)
    t.add_argument("--pi", default=None, help="'uniform' or comma-separated weights (default: free)")
    t.add_argument("--gamma", default="solve", help="a value, or 'solve'")
    t.add_argument("--model", choices=["separated", "poisson"], default="separated")
    t.add_argument("--sigma", default=None, help="'known:<value>' to debias with a known noise level")
    t.add_argument("--include-contaminated", action="store_true")
    t.add_argument("--max-nfev", type=sci_int, default=5000)
    t.add_argument("--threads", type=int, default=default_threads())
    t.set_defaults(func=cmd_solve_hetero)

    d = sub.add_parser("solve-2d", help="image recovery by phase retrieval")
    d.add_argument("-i", "--input", required=True)
    d.add_argument("-o", "--output", required=True, help="output prefix")
    d.add_argument("--w", type=int, default=None)
    d.add_argument("--beta", type=float, default=0.5)
    d.add_argument("--max-iter", type=sci_int, default=100_000)
    d.add_argument("--seeds", type=int, default=1, help="number of random restarts (seeds 0..S-1)")
    d.add_argument("--tol", type=float, default=1e-9)
    d.add_argument("--gamma", type=float, default=None, help="covered fraction of each observation")
    d.add_argument("--sigma", type=float, default=None)
    d.add_argument("--stream-header", default=None, help="take gamma and sigma from a synth header")
    d.set_defaults(func=cmd_solve_2d)

    e = sub.add_parser("eval", help="aligned errors, or run an error-versus-length harness")
    e.add_argument("-e", "--estimate", default=None)
    e.add_argument("-t", "--truth", default=None, help="stream header or model JSON")
    e.add_argument("--shift", action="store_true", help="also align by translation")
    e.add_argument("--harness", default=None, help="JSON harness config")
    e.add_argument("-o", "--output", default=None)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("phase-diagram", help="success grid over (K, L)")
    g.add_argument("--l", type=grid_range, required=True)
    g.add_argument("--k", type=grid_range, required=True)
    g.add_argument("--starts", type=int, default=50)
    g.add_argument("--seed", type=sci_int, default=0)
    g.add_argument("--include-time", action="store_true",
                   help="add the median log10 run time (makes the CSV non-reproducible)")
    g.add_argument("--threads", type=int, default=default_threads())
    g.add_argument("-o", "--output", default=None)
    g.set_defaults(func=cmd_phase_diagram)
    return p


def _classify(exc: BaseException) -> str:
    from .homo import DegenerateMoments
    from .synth import PlacementError

    if isinstance(exc, CliError):
        return exc.kind
    if isinstance(exc, FormatError):
        return "format"
    if isinstance(exc, (DegenerateMoments, NotImplementedError, ArithmeticError)):
        return "numerical"
    if isinstance(exc, (PlacementError, ValueError)):
        if "empty stream" in str(exc):
            return "empty"
        return "model"
    if isinstance(exc, OSError):
        return "io"
    return "internal"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise CliError("usage", "a command is required; see --help")
        return int(args.func(args))
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:
        kind = _classify(exc)
        code = EXIT_CODES[kind]
        sys.stderr.write(json.dumps({"error": kind, "message": str(exc), "exit_code": code}) + "\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
