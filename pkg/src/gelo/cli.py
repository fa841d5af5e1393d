"""Command-line surface: serve, bench, attack, crossover, gramcheck, datagen.

Configuration is layered: built-in defaults, then a flat key=value config
file (section prefixes like dims.n, no nesting), then explicit flags.  Exit
codes: 0 success, 1 a checked identity or metric failed, 2 bad usage or an
environment/IO problem.
"""

import argparse
import csv
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .attacks import BSS_METHODS, RESIDUAL_METHODS, SWEEP_COLUMNS, cell_seed, run_cell
from .errors import (
    DimensionError,
    GeloError,
    ParameterError,
    TransportError,
)
from .harness import (
    OffloadClient,
    RoundConfig,
    UntrustedServer,
    benchmark_sweep,
    run_offload_round,
)
from .metrics import ComplexityModel, covariance_leak, crossover_length, participation_ratio
from .numerics import sample_invertible, sample_orthogonal
from .protocol import ShieldConfig, pad_shields
from .seeds import derive_seed, rng_from
from .synthdata import HiddenStatePrior, gen_hidden_states, save_dataset

BENCH_ROW_HEADER = "n,gelo_total_ms,baseline_total_ms,overhead_pct"
BREAKDOWN_HEADER = "n,a_gen_ms,mix_ms,gemm_ms,unmix_ms,copy_ms"
ATTACK_CSV_COLUMNS = SWEEP_COLUMNS + ["error"]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Aggregated experiment parameters shared by the subcommands."""

    master_seed: int = 0
    n: int = 512
    d: int = 256
    p: int = 256
    mixing_kind: str = "orthogonal"
    kappa_max: float = 100.0
    shield_fraction: float = 0.05
    shield_scale: float = 10.0
    skip_first: tuple = (0, 1)
    skip_last: bool = True
    flood_threshold: float = 1.0
    endpoint: str = "127.0.0.1:7445"
    output_dir: str = "out"

    def __post_init__(self):
        if self.n < 2:
            raise ParameterError(f"dims.n must be >= 2, got {self.n}")
        if self.d < 1 or self.p < 1:
            raise ParameterError("dims.d and dims.p must be >= 1")
        if self.mixing_kind not in ("orthogonal", "general"):
            raise ParameterError(f"unknown mixing.kind {self.mixing_kind!r}")
        if self.kappa_max <= 1.0:
            raise ParameterError("mixing.kappa_max must exceed 1")
        if not 0.0 <= self.shield_fraction < 1.0:
            raise ParameterError("shields.fraction must be in [0, 1)")
        if self.shield_scale < 0.0:
            raise ParameterError("shields.scale must be >= 0")
        if self.flood_threshold <= 0.0:
            raise ParameterError("defense.flood_threshold must be positive")
        if any(layer < 0 for layer in self.skip_first):
            raise ParameterError("defense.skip_first entries must be >= 0")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"expected a boolean, got {text!r}")


def _parse_int_tuple(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


# config-file key -> (RunConfig field, coercion)
_CONFIG_KEYS = {
    "seed": ("master_seed", int),
    "dims.n": ("n", int),
    "dims.d": ("d", int),
    "dims.p": ("p", int),
    "mixing.kind": ("mixing_kind", str),
    "mixing.kappa_max": ("kappa_max", float),
    "shields.fraction": ("shield_fraction", float),
    "shields.scale": ("shield_scale", float),
    "defense.skip_first": ("skip_first", _parse_int_tuple),
    "defense.skip_last": ("skip_last", _parse_bool),
    "defense.flood_threshold": ("flood_threshold", float),
    "endpoint": ("endpoint", str),
    "output_dir": ("output_dir", str),
}


def parse_config_text(text: str) -> dict:
    """Flat key = value lines; '#' comments; unknown keys fail fast."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line {lineno} is not key = value: {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ParameterError(f"unknown config key {key!r} (line {lineno})")
        field_name, coerce = _CONFIG_KEYS[key]
        try:
            values[field_name] = coerce(value.strip())
        except ValueError as exc:
            raise ParameterError(f"config key {key!r}: {exc}")
    return values


def load_run_config(config_path=None, **overrides) -> RunConfig:
    """Defaults, then the config file, then non-None keyword overrides."""
    values = {}
    if config_path is not None:
        values.update(parse_config_text(Path(config_path).read_text(encoding="utf-8")))
    for name, value in overrides.items():
        if value is None:
            continue
        if name not in {f.name for f in fields(RunConfig)}:
            raise ParameterError(f"unknown config override {name!r}")
        values[name] = value
    return RunConfig(**values)


def _csv_list(text, coerce):
    items = [part.strip() for part in str(text).split(",")]
    return [coerce(part) for part in items if part]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_serve(args) -> int:
    cfg = load_run_config(args.config, endpoint=args.endpoint)
    server = UntrustedServer(cfg.endpoint, capture_path=args.capture)
    address = server.bind()
    print(f"listening on {address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


def _write_bench_csvs(out_dir: Path, rows, breakdowns) -> None:
    with open(out_dir / "bench.csv", "w", encoding="utf-8") as fh:
        fh.write(BENCH_ROW_HEADER + "\n")
        for row in rows:
            fh.write(
                f"{row.n},{row.gelo_total_ms:.6f},{row.baseline_total_ms:.6f},"
                f"{row.overhead_pct:.6f}\n"
            )
    with open(out_dir / "breakdown.csv", "w", encoding="utf-8") as fh:
        fh.write(BREAKDOWN_HEADER + "\n")
        for row, bd in zip(rows, breakdowns):
            fh.write(
                f"{row.n},{bd.a_gen_ms:.6f},{bd.mix_ms:.6f},{bd.gemm_ms:.6f},"
                f"{bd.unmix_ms:.6f},{bd.copy_ms:.6f}\n"
            )


def _print_breakdown_table(n: int, bd) -> None:
    print(f"latency breakdown at n={n} (median ms)")
    print(f"{'step':<10}{'ms':>12}{'% of total':>14}")
    steps = [
        ("a_gen", bd.a_gen_ms),
        ("mix", bd.mix_ms),
        ("gemm", bd.gemm_ms),
        ("unmix", bd.unmix_ms),
        ("copy", bd.copy_ms),
    ]
    for name, ms in steps:
        share = 100.0 * ms / bd.total_ms if bd.total_ms > 0 else 0.0
        print(f"{name:<10}{ms:>12.3f}{share:>13.1f}%")
    print(f"{'total':<10}{bd.total_ms:>12.3f}{100.0:>13.1f}%")


def cmd_bench(args) -> int:
    cfg = load_run_config(
        args.config,
        master_seed=args.seed,
        endpoint=args.endpoint,
        output_dir=args.out,
        d=args.d,
        p=args.p,
    )
    sizes = _csv_list(args.sizes, int)
    if not sizes:
        raise ParameterError("bench needs at least one batch size")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    round_cfg = RoundConfig(
        mixing=cfg.mixing_kind,
        kappa_max=cfg.kappa_max,
        shield_fraction=cfg.shield_fraction if args.shields else 0.0,
        shield_scale=cfg.shield_scale,
        seed=derive_seed(cfg.master_seed, 21),
    )
    with OffloadClient(cfg.endpoint) as client:
        if args.baseline_only:
            # no overhead comparison to report, only the zero-mixing breakdown
            from statistics import median

            from .harness import TimingBreakdown

            rng = rng_from(derive_seed(cfg.master_seed, 7))
            w = rng.standard_normal((cfg.d, cfg.p))
            base_cfg = RoundConfig(mode="baseline", seed=round_cfg.seed)
            with open(out_dir / "breakdown.csv", "w", encoding="utf-8") as fh:
                fh.write(BREAKDOWN_HEADER + "\n")
                for n in sizes:
                    h = rng_from(derive_seed(cfg.master_seed, 11, n)).standard_normal(
                        (n, cfg.d)
                    )
                    timings = []
                    for rep in range(2 * args.reps):
                        _, timing = run_offload_round(
                            client, h, w, base_cfg, batch_id=rep + 1
                        )
                        if rep >= args.reps:
                            timings.append(timing)
                    bd = TimingBreakdown(
                        a_gen_ms=0.0,
                        mix_ms=0.0,
                        gemm_ms=median(t.gemm_ms for t in timings),
                        unmix_ms=0.0,
                        copy_ms=median(t.copy_ms for t in timings),
                        total_ms=median(t.total_ms for t in timings),
                        mode="baseline",
                    )
                    fh.write(
                        f"{n},0.000000,0.000000,{bd.gemm_ms:.6f},"
                        f"0.000000,{bd.copy_ms:.6f}\n"
                    )
                    _print_breakdown_table(n, bd)
            return 0
        rows, breakdowns = benchmark_sweep(
            client,
            sizes,
            d=cfg.d,
            p=cfg.p,
            reps=args.reps,
            seed=cfg.master_seed,
            cfg=round_cfg,
            csv_path=out_dir / "bench_combined.csv",
        )
    _write_bench_csvs(out_dir, rows, breakdowns)
    spotlight = 512 if 512 in sizes else max(sizes)
    _print_breakdown_table(spotlight, breakdowns[sizes.index(spotlight)])
    print(f"wrote {out_dir / 'bench.csv'} and {out_dir / 'breakdown.csv'}")
    return 0


def cmd_attack(args) -> int:
    cfg = load_run_config(args.config, master_seed=args.seed, output_dir=args.out)
    n_list = _csv_list(args.n, int)
    k_list = _csv_list(args.k, int)
    methods = _csv_list(args.method, str)
    bss_list = _csv_list(args.bss, str)
    scales = _csv_list(args.shield_scale, float)
    for method in methods:
        if method not in RESIDUAL_METHODS:
            raise ParameterError(f"unknown residual method {method!r}")
    for bss in bss_list:
        if bss not in BSS_METHODS:
            raise ParameterError(f"unknown bss method {bss!r}")
    if args.seeds < 0:
        raise ParameterError("--seeds must be >= 0")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "attack_sweep.csv"
    written = 0
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ATTACK_CSV_COLUMNS)
        for n in n_list:
            for k in k_list:
                for method in methods:
                    for bss in bss_list:
                        for scale in scales:
                            for rep in range(args.seeds):
                                seed = cell_seed(
                                    cfg.master_seed, n, args.d, k, bss, scale, rep
                                )
                                row = run_cell(
                                    n,
                                    args.d,
                                    k,
                                    method,
                                    bss,
                                    scale,
                                    seed,
                                    shield_fraction=cfg.shield_fraction,
                                )
                                writer.writerow(
                                    row[col] for col in ATTACK_CSV_COLUMNS
                                )
                                written += 1
    print(f"wrote {written} rows to {csv_path}")
    return 0


def cmd_crossover(args) -> int:
    model = ComplexityModel(d=args.d, d_ffn=args.d_ffn, h=args.heads)
    length = crossover_length(model)
    total = model.projection_madds + model.ffn_madds
    print(f"projection madds per token: {model.projection_madds}")
    print(f"ffn madds per token:        {model.ffn_madds}")
    print(f"offloadable total:          {total}")
    print(f"attention core per context token: {model.attention_madds_per_ctx}")
    print(f"crossover length L = {length}")
    return 0


def cmd_gramcheck(args) -> int:
    cfg = load_run_config(args.config, master_seed=args.seed)
    n = args.n if args.n is not None else min(cfg.n, 128)
    d = args.d if args.d is not None else min(cfg.d, 128)
    prior = HiddenStatePrior(
        d=d, r_eff=min(16, d), seed=derive_seed(cfg.master_seed, 31)
    )
    batch = gen_hidden_states(n, prior)

    a_orth = sample_orthogonal(n, seed=derive_seed(cfg.master_seed, 32))
    leak_orth = covariance_leak(a_orth.matrix @ batch.h, batch.h)

    if args.general_kind == "general":
        a_gen = sample_invertible(
            n, kappa_max=cfg.kappa_max, seed=derive_seed(cfg.master_seed, 33)
        )
    else:
        a_gen = sample_orthogonal(n, seed=derive_seed(cfg.master_seed, 33))
    leak_general = covariance_leak(a_gen.matrix @ batch.h, batch.h)

    shield_cfg = ShieldConfig(
        fraction=cfg.shield_fraction,
        scale=args.shield_scale if args.shield_scale is not None else cfg.shield_scale,
        seed=derive_seed(cfg.master_seed, 34),
    )
    padded = pad_shields(batch, shield_cfg)
    a_pad = sample_orthogonal(padded.n, seed=derive_seed(cfg.master_seed, 35))
    leak_shielded = covariance_leak(a_pad.matrix @ padded.h, batch.h)

    checks = [
        ("orthogonal unshielded leak", leak_orth, "<= 1e-10", leak_orth <= 1e-10),
        ("general mixing leak", leak_general, "> 1e-6", leak_general > 1e-6),
        ("shielded batch leak", leak_shielded, "> 1e-6", leak_shielded > 1e-6),
    ]
    all_ok = True
    for name, value, requirement, ok in checks:
        verdict = "ok" if ok else "FAIL"
        print(f"{name}: {value:.3e}  (require {requirement})  {verdict}")
        all_ok = all_ok and ok
    print(f"gramcheck: {'PASS' if all_ok else 'FAIL'}")
    return 0 if all_ok else 1


def cmd_datagen(args) -> int:
    cfg = load_run_config(args.config, master_seed=args.seed, output_dir=args.out)
    prior = HiddenStatePrior(
        d=args.d,
        r_eff=args.r_eff,
        radius=args.radius,
        norm_cv=args.norm_cv,
        heavy_tail=args.heavy_tail,
        seed=cfg.master_seed,
    )
    batch = gen_hidden_states(args.n, prior)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_path = out_dir / args.filename
    save_dataset(data_path, batch.h)
    norms = np.linalg.norm(batch.h, axis=1)
    report_lines = [
        f"file: {data_path}",
        f"n: {batch.n}",
        f"d: {batch.d}",
        f"mean_norm: {norms.mean():.6f}",
        f"norm_cv: {norms.std() / norms.mean():.6f}",
        f"participation_ratio: {participation_ratio(batch.h):.6f}",
        f"target_r_eff: {prior.r_eff}",
        f"seed: {prior.seed}",
    ]
    report_path = Path(str(data_path) + ".report.txt")
    report_path.write_text("\n".join(report_lines) + "\n", encoding="utf-8")
    print("\n".join(report_lines))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="flat key=value config file")
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--endpoint", default=None, help="server address host:port")
    common.add_argument("--capture", default=None, help="observation capture path")

    parser = argparse.ArgumentParser(
        prog="gelo",
        description="batch-mixing GEMM offload: server, benchmarks, attacks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", parents=[common], help="run the untrusted GEMM server")
    p_serve.set_defaults(func=cmd_serve)

    p_bench = sub.add_parser("bench", parents=[common], help="latency benchmark sweep")
    p_bench.add_argument("--sizes", default="64,128,256,512")
    p_bench.add_argument("--reps", type=int, default=5)
    p_bench.add_argument("--d", type=int, default=None)
    p_bench.add_argument("--p", type=int, default=None)
    p_bench.add_argument("--shields", action="store_true", help="pad shields during gelo rounds")
    p_bench.add_argument("--baseline-only", action="store_true")
    p_bench.set_defaults(func=cmd_bench)

    p_attack = sub.add_parser("attack", parents=[common], help="recovery-attack sweep")
    p_attack.add_argument("--n", default="128")
    p_attack.add_argument("--d", type=int, default=128)
    p_attack.add_argument("--k", default="0")
    p_attack.add_argument("--method", default="subtraction")
    p_attack.add_argument("--bss", default="fastica")
    p_attack.add_argument("--shield-scale", default="0.0")
    p_attack.add_argument("--seeds", type=int, default=1, help="replicates per cell")
    p_attack.set_defaults(func=cmd_attack)

    p_cross = sub.add_parser("crossover", parents=[common], help="offload crossover length")
    p_cross.add_argument("--d", type=int, default=4096)
    p_cross.add_argument("--d-ffn", type=int, default=11008)
    p_cross.add_argument("--heads", type=int, default=32)
    p_cross.set_defaults(func=cmd_crossover)

    p_gram = sub.add_parser("gramcheck", parents=[common], help="verify gram-leak identities")
    p_gram.add_argument("--n", type=int, default=None)
    p_gram.add_argument("--d", type=int, default=None)
    p_gram.add_argument("--shield-scale", type=float, default=None)
    p_gram.add_argument(
        "--general-kind",
        choices=("general", "orthogonal"),
        default="general",
        help="mixing used in the general-leak slot (orthogonal forces a failure)",
    )
    p_gram.set_defaults(func=cmd_gramcheck)

    p_data = sub.add_parser("datagen", parents=[common], help="generate a synthetic dataset")
    p_data.add_argument("--n", type=int, default=512)
    p_data.add_argument("--d", type=int, default=256)
    p_data.add_argument("--r-eff", type=int, default=16)
    p_data.add_argument("--radius", type=float, default=24.0)
    p_data.add_argument("--norm-cv", type=float, default=0.039)
    p_data.add_argument("--heavy-tail", type=float, default=0.5)
    p_data.add_argument("--filename", default="dataset.geld")
    p_data.set_defaults(func=cmd_datagen)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParameterError, DimensionError, TransportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GeloError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
