"""Command-line entry point.

Subcommands: ``run`` (experiment to CSV + manifest), ``theory`` (closed
form table), ``verify`` (fast property suites), ``dump-code`` (encoding
matrix as integer CSV). Exit codes: 0 success, 1 config error, 2 run
failure, 3 verification failure.
"""

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import __version__
from .config import PRESETS, ConfigError, build_pipeline, parse_config
from .data import DatasetError
from .dnc import build_encoding_matrix, verify_mds
from .galois import GaloisField
from .metrics import final_round_accuracy, summarize, write_csv, write_manifest
from .protocol import METHODS, run_experiment
from .rng import substream
from .theory import (
    AssumptionConstants,
    client_outage_dominant,
    client_unseen_probability,
    kbar_inverse,
    kstar,
    sample_unseen_frequency,
    convergence_bound,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUN = 2
EXIT_VERIFY = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; bad flags are config errors here
    def error(self, message):
        raise _UsageError(message)


def _iid_or_int(text: str):
    if text == "iid":
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'iid' or an integer, got {text!r}")


def _num_list(cast):
    def parse(text: str):
        try:
            values = [cast(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma list, got {text!r}")
        if not values:
            raise argparse.ArgumentTypeError("expected a non-empty comma list")
        return values

    return parse


# run flag destination -> dotted config key
_RUN_OVERRIDES = {
    "trials": "experiment.num_trials",
    "seed": "experiment.master_seed",
    "rounds": "experiment.rounds",
    "clients": "experiment.n_clients",
    "methods": "experiment.methods",
    "snr": "channel.snr",
    "snr_db": "channel.snr_db",
    "pe": "channel.p_e_override",
    "bits": "quantizer.bits",
    "data_source": "data.source",
    "data_path": "data.path",
    "classes_per_client": "data.classes_per_client",
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="codedfl", description=__doc__.splitlines()[0])
    parser.add_argument(
        "--version", action="version", version=f"codedfl {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment, write CSV + manifest")
    run.add_argument("--config", help="TOML config file")
    run.add_argument("--preset", choices=sorted(PRESETS), help="named preset")
    run.add_argument("--out", default="runs/latest", help="output directory")
    run.add_argument("--trials", type=int, help="number of trials")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--rounds", type=int, help="communication rounds")
    run.add_argument("--clients", type=int, help="number of clients")
    run.add_argument("--methods", help="comma list drawn from " + ",".join(METHODS))
    run.add_argument("--snr", type=float, help="linear SNR")
    run.add_argument("--snr-db", type=float, dest="snr_db", help="SNR in dB")
    run.add_argument("--pe", type=float, help="direct erasure probability override")
    run.add_argument("--bits", type=int, help="quantizer bits")
    run.add_argument("--data-source", choices=("synthetic", "mnist"))
    run.add_argument("--data-path", help="directory holding IDX files")
    run.add_argument(
        "--classes-per-client", type=_iid_or_int, help="'iid' or classes per client"
    )
    run.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config key (value parsed as TOML)",
    )

    theory = sub.add_parser("theory", help="print the closed-form analysis table")
    theory.add_argument(
        "--clients", type=_num_list(int), default=[2, 5, 10],
        help="comma list of client counts",
    )
    theory.add_argument(
        "--pe", type=_num_list(float), default=[0.0, 0.1, 0.2, 0.3],
        help="comma list of erasure probabilities",
    )
    theory.add_argument("--rounds", type=int, default=20)
    theory.add_argument("--local-steps", type=int, default=5, dest="local_steps")
    theory.add_argument("--batch-size", type=int, default=1024, dest="batch_size")
    theory.add_argument("--smoothness", type=float, default=1.0)
    theory.add_argument("--gap", type=float, default=1.0)
    theory.add_argument("--sigma2", type=float, default=1.0)
    theory.add_argument("--dissimilarity", type=float, default=1.0)
    theory.add_argument("--j2", type=float, default=0.0)

    verify = sub.add_parser(
        "verify", help="fast property suites: MDS, participation, outage"
    )
    verify.add_argument("--trials", type=int, default=200_000)
    verify.add_argument("--seed", type=int, default=0)

    dump = sub.add_parser("dump-code", help="emit the encoding matrix as CSV")
    dump.add_argument("--clients", type=int, required=True)
    dump.add_argument("--field-order", type=int, default=256, dest="field_order")
    dump.add_argument("--out", help="write to a file instead of stdout")
    return parser


def _collect_overrides(args) -> dict:
    overrides = {}
    for dest, dotted in _RUN_OVERRIDES.items():
        value = getattr(args, dest)
        if value is not None:
            overrides[dotted] = value
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        overrides[key] = value
    return overrides


def _cmd_run(args) -> int:
    cfg = parse_config(
        path=args.config, preset=args.preset, overrides=_collect_overrides(args)
    )
    pipeline = build_pipeline(cfg)
    start = time.perf_counter()
    records = run_experiment(
        cfg.experiment,
        pipeline.model_spec,
        pipeline.objective,
        pipeline.partition,
        pipeline.train,
        pipeline.test,
    )
    wall = time.perf_counter() - start
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = write_csv(records, out / "metrics.csv")
    manifest_path = write_manifest(
        out / "manifest.json", cfg, {"metrics_csv": csv_path}, wall
    )
    sys.stdout.write(summarize(records))
    finals = final_round_accuracy(records)
    print("final accuracy: " + "  ".join(f"{m}={a:.4f}" for m, a in finals.items()))
    print(f"wrote {csv_path} and {manifest_path} ({wall:.1f}s)")
    return EXIT_OK


def _cmd_theory(args) -> int:
    print(
        f"{'M':>3} {'p_e':>6} {'outage':>11} {'1/kbar':>9} "
        f"{'kstar':>9} {'bound':>12}"
    )
    for m in args.clients:
        for p in args.pe:
            outage = client_outage_dominant(m, p)
            kinv = kbar_inverse(m, outage)
            ks = kstar(m, p)
            constants = AssumptionConstants(
                smoothness=args.smoothness,
                initial_gap=args.gap,
                sigma2=args.sigma2,
                batch_size=args.batch_size,
                local_steps=args.local_steps,
                rounds=args.rounds,
                n_clients=m,
                j_squared=args.j2,
                d=args.dissimilarity,
            )
            bound = convergence_bound(constants, ks, check_condition=False)
            print(
                f"{m:>3} {p:>6.3f} {outage:>11.4e} {kinv:>9.6f} "
                f"{ks:>9.4f} {bound:>12.6g}"
            )
    print("bound column: step-size admissibility not enforced")
    return EXIT_OK


def _kbar_subset_sum(m: int, q: float) -> float:
    total = 0.0
    norm = 0.0
    for mask in range(1, 1 << m):
        v = mask.bit_count()
        pr = (1.0 - q) ** v * q ** (m - v)
        total += pr / v
        norm += pr
    return total / norm


def _verify_mds(_trials, _rng) -> str:
    for m in (2, 3, 4):
        verdict = verify_mds(
            build_encoding_matrix(m, GaloisField(256)), math.comb(m * m, m)
        )
        assert verdict.ok and verdict.exhaustive, f"M={m}: {verdict.counterexample}"
    for m in (5, 8, 10):
        verdict = verify_mds(build_encoding_matrix(m, GaloisField(256)), 300)
        assert verdict.ok, f"M={m}: {verdict.counterexample}"
    return "exhaustive M=2,3,4; 300 sampled subsets each for M=5,8,10"


def _verify_participation(trials, rng) -> str:
    draws = max(trials // 4, 10_000)
    for m, q in ((3, 0.3), (6, 0.5)):
        delta = 1.0 + np.arange(m)
        masks = rng.random((draws, m)) > q
        masks = masks[masks.any(axis=1)]
        sizes = masks.sum(axis=1)
        samples = (masks * delta).sum(axis=1) / sizes
        want = delta.mean()
        se = samples.std(ddof=1) / np.sqrt(samples.size)
        gap = abs(samples.mean() - want)
        assert gap <= 5 * se, f"M={m} q={q}: gap {gap:.3e} > 5 SE {se:.3e}"
    for m in (4, 10):
        for q in (0.1, 0.6):
            gap = abs(kbar_inverse(m, q) - _kbar_subset_sum(m, q))
            assert gap < 1e-12, f"M={m} q={q}: closed form off by {gap:.2e}"
    return "unbiased within 5 SE; closed form matches subset sums to 1e-12"


def _verify_outage(trials, rng) -> str:
    for m, p in ((2, 0.3), (3, 0.2)):
        closed = client_unseen_probability(m, p)
        dominant = client_outage_dominant(m, p)
        assert dominant <= closed <= 2 * dominant, (
            f"M={m} p={p}: closed form {closed:.3e} outside dominance band"
        )
        freq = sample_unseen_frequency(m, p, trials, rng)
        se = math.sqrt(closed * (1 - closed) / trials)
        gap = abs(freq - closed)
        assert gap <= 5 * se, f"M={m} p={p}: MC gap {gap:.3e} > 5 SE {se:.3e}"
    return "closed form inside [p^(2M-1), 2 p^(2M-1)]; MC within 5 SE"


def _cmd_verify(args) -> int:
    suites = (
        ("mds any-M-columns", _verify_mds),
        ("participation identities", _verify_participation),
        ("outage dominance", _verify_outage),
    )
    failed = False
    for index, (name, fn) in enumerate(suites):
        rng = substream(args.seed, "verify", index)
        try:
            detail = fn(args.trials, rng)
        except AssertionError as exc:
            failed = True
            print(f"FAIL  {name}: {exc}")
        else:
            print(f"ok    {name}: {detail}")
    if failed:
        print("verification failed")
        return EXIT_VERIFY
    print("all checks passed")
    return EXIT_OK


def _cmd_dump_code(args) -> int:
    code = build_encoding_matrix(args.clients, GaloisField(args.field_order))
    lines = [",".join(str(int(v)) for v in row) for row in code.matrix]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    commands = {
        "run": _cmd_run,
        "theory": _cmd_theory,
        "verify": _cmd_verify,
        "dump-code": _cmd_dump_code,
    }
    try:
        return commands[args.command](args)
    except (ConfigError, DatasetError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"run failure: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
