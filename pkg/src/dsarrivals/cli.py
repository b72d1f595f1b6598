"""``dsarrivals`` command line: synth, clean, split, train, sample, epochs, queue, stats.

Every command accepts ``--seed``, ``--config`` (JSON) and ``--out``. Values
given as flags override the matching key in the command's config section.
Each output file gets a ``<out>.meta.json`` sidecar recording the resolved
settings, their hash, the seed and library versions.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import (CountDataError, Horizon, RngStream, RunConfig, config_hash, read_counts_csv,
                   read_epochs_csv, write_counts_csv, write_epochs_csv)

log = logging.getLogger("dsarrivals")

# stream ids, so that commands sharing a seed never share random numbers
SYNTH_STREAM = 10
SPLIT_STREAM = 11
SAMPLE_STREAM = 12
EPOCHS_STREAM = 13
SERVICE_STREAM = 14


class CLIError(Exception):
    pass


def _versions() -> dict:
    import scipy
    import sklearn
    return {"dsarrivals": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "python": platform.python_version()}


def write_sidecar(out, command: str, settings: dict, seed: int) -> Path:
    path = Path(str(out) + ".meta.json")
    meta = {"command": command, "seed": seed, "config_hash": config_hash(settings),
            "settings": settings, "versions": _versions()}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


class Settings:
    """Flag values layered over a config section (flags win) over defaults."""

    def __init__(self, args, section: dict):
        self.args = args
        self.section = section
        self.resolved: dict = {}

    def get(self, name: str, default=None, key: str | None = None):
        key = key or name
        value = getattr(self.args, name, None)
        if value is None:
            value = self.section.get(key, default)
        self.resolved[key] = value
        return value

    def require(self, name: str, key: str | None = None):
        value = self.get(name, None, key)
        if value is None:
            raise CLIError(f"missing --{name.replace('_', '-')} (or '{key or name}' in config)")
        return value


def _load_config(args) -> RunConfig:
    if args.config is None:
        return RunConfig()
    try:
        return RunConfig.load(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot read config {args.config}: {exc}") from exc


def _seed(args, cfg: RunConfig) -> int:
    return int(args.seed) if args.seed is not None else cfg.seed


def _horizon(cfg: RunConfig, T=None, p=None, default=(11.0, 22)) -> Horizon:
    base = cfg.horizon or Horizon(*default)
    return Horizon(base.T if T is None else T, base.p if p is None else p)


def _int_tuple(text) -> tuple | None:
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).split(",") if x.strip())


# -- commands ---------------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig) -> int:
    from .synthetic import CIRConfig, PGnortaConfig, simulate_cir_days, simulate_pgnorta

    s = Settings(args, cfg.section("synth"))
    model = s.get("model", "cir")
    days = int(s.require("days"))
    if days < 1:
        raise CLIError("--days must be >= 1")
    out = s.get("out", "counts.csv")
    seed = _seed(args, cfg)
    stream = RngStream(seed, SYNTH_STREAM)
    if model == "cir":
        cir = dict(s.get("cir", {}) or {})
        if cfg.horizon is not None:
            cir.setdefault("horizon", cfg.horizon.to_dict())
        config = CIRConfig.from_dict(cir)
        s.resolved["cir"] = config.to_dict()
        epochs_dir = s.get("epochs_dir")
        if epochs_dir:
            counts, epochs = simulate_cir_days(config, days, stream, keep_epochs=True)
            for i, ep in enumerate(epochs, start=1):
                write_epochs_csv(Path(epochs_dir) / f"day_{i:05d}.csv", ep)
        else:
            counts = simulate_cir_days(config, days, stream)
    elif model == "pgnorta":
        pg = s.get("pgnorta")
        if not pg:
            raise CLIError("pgnorta model needs a 'pgnorta' block in the synth config "
                           "(base_rates, alphas, and correlation or rho)")
        config = PGnortaConfig.from_dict(pg)
        s.resolved["pgnorta"] = config.to_dict()
        counts = simulate_pgnorta(config, days, stream)
    else:
        raise CLIError(f"unknown model {model!r} (expected 'cir' or 'pgnorta')")
    write_counts_csv(out, counts)
    write_sidecar(out, "synth", s.resolved, seed)
    return 0


def cmd_clean(args, cfg: RunConfig) -> int:
    from .stats import clean_outliers

    s = Settings(args, cfg.section("clean"))
    data = read_counts_csv(s.require("data"))
    out = s.get("out", "clean.csv")
    removed_path = s.get("removed")
    kept, removed = clean_outliers(data, float(s.get("lower", 0.025)), float(s.get("upper", 0.975)))
    write_counts_csv(out, kept)
    if removed_path:
        Path(removed_path).parent.mkdir(parents=True, exist_ok=True)
        # zero-based row indices of the input (header excluded)
        np.savetxt(removed_path, removed, fmt="%d")
    log.info("removed %d of %d rows", removed.size, data.shape[0])
    write_sidecar(out, "clean", s.resolved, _seed(args, cfg))
    return 0


def cmd_split(args, cfg: RunConfig) -> int:
    from .stats import split

    s = Settings(args, cfg.section("split"))
    data = read_counts_csv(s.require("data"))
    out = s.get("out", "train.csv")
    test_out = s.get("test_out", str(Path(out).with_name(Path(out).stem + ".test.csv")))
    seed = _seed(args, cfg)
    train, test = split(data, s.get("ratio", "2:1"), RngStream(seed, SPLIT_STREAM))
    write_counts_csv(out, train)
    write_counts_csv(test_out, test)
    write_sidecar(out, "split", s.resolved, seed)
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    from .dswgan import TrainingConfig, TrainingDivergedError, train

    s = Settings(args, cfg.section("train"))
    data = read_counts_csv(s.require("data"))
    out = s.get("out", "model.json")
    log_path = s.get("log", str(out) + ".log.csv")
    seed = _seed(args, cfg)
    tc = dict(s.section.get("training", {}) or {})
    overrides = {
        "generator_hidden": _int_tuple(args.hidden),
        "critic_hidden": _int_tuple(args.critic_hidden),
        "iterations": args.iterations,
        "batch_size": args.batch_size,
        "n_critic": args.n_critic,
        "penalty_coef": args.penalty,
        "lr_start": args.lr_start,
        "lr_end": args.lr_end,
        "dtype": args.dtype,
    }
    tc.update({k: v for k, v in overrides.items() if v is not None})
    tc["seed"] = seed
    config = TrainingConfig.from_dict(tc)
    s.resolved["training"] = config.to_dict()
    horizon = _horizon(cfg, T=s.get("T"), p=data.shape[1])
    s.resolved["horizon"] = horizon.to_dict()
    every = max(config.iterations // 20, 1)

    def progress(it, model, history):
        if (it + 1) % every == 0:
            row = dict(zip(history.columns, history.rows[-1]))
            log.info("iteration %d/%d  critic %.4g  generator %.4g  penalty %.4g",
                     it + 1, config.iterations, row["loss_critic"], row["loss_generator"],
                     row["penalty"])

    try:
        model, history = train(data, config, horizon, callback=progress)
    except TrainingDivergedError as exc:
        dump = Path(str(out) + ".diverged.json")
        dump.parent.mkdir(parents=True, exist_ok=True)
        dump.write_text(json.dumps(exc.diagnostics, indent=2, default=str) + "\n")
        raise CLIError(f"training diverged: {exc} (diagnostics in {dump})") from exc
    model.save(out)
    history.write_csv(log_path)
    write_sidecar(out, "train", s.resolved, seed)
    return 0


def cmd_sample(args, cfg: RunConfig) -> int:
    from .dswgan import DSWGANModel, sample

    s = Settings(args, cfg.section("sample"))
    model_path = s.require("model")
    if not Path(model_path).is_file():
        raise CLIError(f"model file not found: {model_path}")
    model = DSWGANModel.load(model_path)
    days = int(s.require("days"))
    if days < 1:
        raise CLIError("--days must be >= 1")
    scale = float(s.get("scale", 1.0))
    out = s.get("out", "samples.csv")
    seed = _seed(args, cfg)
    write_counts_csv(out, sample(model, days, scale, RngStream(seed, SAMPLE_STREAM)))
    write_sidecar(out, "sample", s.resolved, seed)
    return 0


def cmd_epochs(args, cfg: RunConfig) -> int:
    from .epochs import simulate_epochs

    s = Settings(args, cfg.section("epochs"))
    counts = read_counts_csv(s.require("counts"))
    mode = s.get("mode", "pwc")
    out_dir = Path(s.get("out_dir") or s.get("out", "epochs"))
    horizon = _horizon(cfg, T=s.get("T"), p=counts.shape[1])
    s.resolved["horizon"] = horizon.to_dict()
    seed = _seed(args, cfg)
    base = RngStream(seed, EPOCHS_STREAM)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, row in enumerate(counts, start=1):
        ep = simulate_epochs(row, horizon, base.child(i), mode)
        write_epochs_csv(out_dir / f"day_{i:05d}.csv", ep)
    write_sidecar(out_dir / "epochs", "epochs", s.resolved, seed)
    return 0


def cmd_queue(args, cfg: RunConfig) -> int:
    from .queueing import (ServiceSpec, StaffingPlan, interval_mean_waits, interval_volumes,
                           minute_checkpoints, run_infinite_server, run_many_server,
                           staffing_power, staffing_sqrt, summarize_runs)
    from .synthetic import DEFAULT_RATE_KNOTS, RateProfile

    s = Settings(args, cfg.section("queue"))
    epochs_dir = Path(s.require("epochs_dir"))
    files = sorted(epochs_dir.glob("day_*.csv"))
    if not files:
        raise CLIError(f"no day_*.csv epoch files in {epochs_dir}")
    mode = s.get("mode", "infinite")
    service = ServiceSpec(float(s.require("service_mean")), float(s.get("service_var", 0.0)),
                          s.get("service_dist", "lognormal"))
    horizon = _horizon(cfg, T=s.get("T"), p=s.get("p"))
    s.resolved["horizon"] = horizon.to_dict()
    macro = int(s.get("macro_reps", 100))
    out = s.get("out", "report.csv")
    seed = _seed(args, cfg)
    base = RngStream(seed, SERVICE_STREAM)

    if mode == "infinite":
        checkpoints = minute_checkpoints(horizon)
        rows = [run_infinite_server(read_epochs_csv(f), service, checkpoints, base.child(i))
                for i, f in enumerate(files, start=1)]
        report = summarize_runs(rows, "occupancy", macro, index=checkpoints)
    elif mode == "many":
        servers = s.get("servers")
        if servers is not None:
            plan = StaffingPlan.constant(int(servers), horizon)
        else:
            knots = s.get("rate", [list(k) for k in DEFAULT_RATE_KNOTS])
            R = interval_volumes(RateProfile.from_knots(knots), horizon)
            beta = float(s.get("beta", 1.0))
            rule = s.get("staffing", "sqrt")
            if rule == "sqrt":
                levels = staffing_sqrt(R, service.mean, beta)
            elif rule == "power":
                levels = staffing_power(R, service.mean, beta, float(s.get("alpha", 0.3)))
            else:
                raise CLIError(f"unknown staffing rule {rule!r} (expected 'sqrt' or 'power')")
            plan = StaffingPlan(levels, horizon)
        s.resolved["staffing_levels"] = plan.levels.tolist()
        rows = []
        for i, f in enumerate(files, start=1):
            ep = read_epochs_csv(f)
            waits = run_many_server(ep, service, plan, base.child(i))
            rows.append(interval_mean_waits(ep, waits, horizon))
        report = summarize_runs(rows, "waiting", macro)
    else:
        raise CLIError(f"unknown queue mode {mode!r} (expected 'infinite' or 'many')")
    report.write_csv(out)
    write_sidecar(out, "queue", s.resolved, seed)
    return 0


def cmd_stats(args, cfg: RunConfig) -> int:
    from .stats import summarize

    s = Settings(args, cfg.section("stats"))
    data = read_counts_csv(s.require("data"))
    out = s.get("out", "summary.csv")
    st = summarize(data)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("statistic,index,value,flag\n")
        for j, v in enumerate(st.marginal_mean, start=1):
            fh.write(f"mean,{j},{float(v)!r},\n")
        for j, v in enumerate(st.marginal_variance, start=1):
            fh.write(f"variance,{j},{float(v)!r},\n")
        for j, (v, bad) in enumerate(zip(st.past_future_corr, st.corr_degenerate), start=1):
            fh.write(f"past_future_corr,{j},{float(v)!r},{'zero_variance' if bad else ''}\n")
    write_sidecar(out, "stats", s.resolved, _seed(args, cfg))
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (default: config seed or 0)")
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = argparse.ArgumentParser(prog="dsarrivals", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="simulate synthetic count data")
    p.add_argument("--model", choices=["cir", "pgnorta"])
    p.add_argument("--days", type=int)
    p.add_argument("--epochs-dir", help="also write per-day arrival epochs (cir only)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("clean", parents=[common], help="remove percentile outlier days")
    p.add_argument("--data")
    p.add_argument("--removed", help="write removed row indices here")
    p.add_argument("--lower", type=float)
    p.add_argument("--upper", type=float)
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("split", parents=[common], help="random train/test split")
    p.add_argument("--data")
    p.add_argument("--ratio")
    p.add_argument("--test-out", help="test set path (default: <out stem>.test.csv)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="fit a DS-WGAN model")
    p.add_argument("--data")
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    p.add_argument("--T", type=float, help="day length (default: config horizon or 11)")
    p.add_argument("--hidden", help="generator hidden widths, e.g. 128,128,128")
    p.add_argument("--critic-hidden", help="critic hidden widths (default: same as generator)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--n-critic", type=int)
    p.add_argument("--penalty", type=float, help="gradient penalty coefficient")
    p.add_argument("--lr-start", type=float)
    p.add_argument("--lr-end", type=float)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[common], help="generate counts from a trained model")
    p.add_argument("--model")
    p.add_argument("--days", type=int)
    p.add_argument("--scale", type=float, help="multiply intensities (what-if volume change)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("epochs", parents=[common], help="arrival epochs from interval counts")
    p.add_argument("--counts")
    p.add_argument("--mode", choices=["pwc", "pwl"])
    p.add_argument("--T", type=float)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_epochs)

    p = sub.add_parser("queue", parents=[common], help="run epochs through a queue")
    p.add_argument("--epochs-dir")
    p.add_argument("--mode", choices=["infinite", "many"])
    p.add_argument("--service-mean", type=float)
    p.add_argument("--service-var", type=float)
    p.add_argument("--service-dist", choices=["lognormal", "exponential", "deterministic"])
    p.add_argument("--staffing", choices=["sqrt", "power"])
    p.add_argument("--servers", type=int, help="constant server count instead of a formula")
    p.add_argument("--beta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--macro-reps", type=int)
    p.add_argument("--T", type=float)
    p.add_argument("--p", type=int)
    p.set_defaults(func=cmd_queue)

    p = sub.add_parser("stats", parents=[common], help="summary statistics of count data")
    p.add_argument("--data")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except (CLIError, CountDataError, ValueError, OSError) as exc:
        print(f"dsarrivals {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
