"""Command-line front end.

Subcommands: ``calibrate`` a TOML run configuration, run a named
``benchmark``, ``generate`` a synthetic dataset, ``summarize`` emitted
chain CSVs. All numeric output is written with 17 significant digits so
files are byte-stable across reruns with the same seed.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .calibration import (
    CalibrationAborted,
    CalibrationConfig,
    InputScaler,
    bias_corrected_response,
    calibrate,
    fitted_response,
)
from .diagnostics import SUMMARY_FIELDS, summarize
from .errors import BiascalError, ConfigError, FactorizationError
from .gp import BiasModel
from .inference import Chain, LogNormalPrior, NormalPrior, UniformPrior
from .kernels import Constant, Heteroscedastic, Hyper, Matern32, Product, RBF, Sum, WhiteNoise
from .models import GENERATORS, MODELS, read_csv, write_csv
from .presets import BENCHMARKS, DEFAULT_SEEDS, band_grid, make_benchmark


def _fmt(v):
    return f"{float(v):.17g}"


def _check_keys(table, allowed, where):
    unknown = set(table) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in [{where}]; allowed: {sorted(allowed)}")


def _parse_hyper(node, where, log_scale=True):
    if isinstance(node, (int, float)):
        return Hyper.fixed(float(node), log_scale=log_scale)
    if isinstance(node, dict):
        _check_keys(node, {"value", "free", "bounds"}, where)
        bounds = tuple(node.get("bounds", ())) or None
        kwargs = {"free": bool(node.get("free", False)), "log_scale": log_scale}
        if bounds:
            kwargs["bounds"] = (float(bounds[0]), float(bounds[1]))
            return Hyper(float(node["value"]), **kwargs)
        return (
            Hyper(float(node["value"]), **kwargs)
            if node.get("free")
            else Hyper.fixed(float(node["value"]), log_scale=log_scale)
        )
    raise ConfigError(f"hyperparameter at {where} must be a number or a value/free/bounds table")


def _parse_kernel(node, where="bias.kernel"):
    if not isinstance(node, dict) or "type" not in node:
        raise ConfigError(f"kernel node at {where} needs a 'type' key")
    kind = node["type"]
    if kind == "constant":
        _check_keys(node, {"type", "value"}, where)
        return Constant(_parse_hyper(node["value"], f"{where}.value"))
    if kind in ("matern32", "rbf"):
        _check_keys(node, {"type", "amplitude", "lengthscale"}, where)
        cls = Matern32 if kind == "matern32" else RBF
        return cls(
            amplitude=_parse_hyper(node["amplitude"], f"{where}.amplitude"),
            lengthscale=_parse_hyper(node["lengthscale"], f"{where}.lengthscale"),
        )
    if kind == "white_noise":
        _check_keys(node, {"type", "variance"}, where)
        return WhiteNoise(_parse_hyper(node["variance"], f"{where}.variance"))
    if kind == "heteroscedastic":
        _check_keys(node, {"type", "anchors", "log_variances", "bandwidth"}, where)
        return Heteroscedastic(
            anchors=np.asarray(node["anchors"], dtype=float),
            log_variances=[
                _parse_hyper(lv, f"{where}.log_variances[{i}]", log_scale=False)
                for i, lv in enumerate(node["log_variances"])
            ],
            bandwidth=node.get("bandwidth"),
        )
    if kind in ("sum", "product"):
        _check_keys(node, {"type", "left", "right"}, where)
        cls = Sum if kind == "sum" else Product
        return cls(_parse_kernel(node["left"], f"{where}.left"), _parse_kernel(node["right"], f"{where}.right"))
    raise ConfigError(f"unknown kernel type {kind!r} at {where}")


def _parse_prior(node, idx):
    where = f"priors[{idx}]"
    _check_keys(node, {"name", "dist", "mean", "sd", "mu_log", "sd_log", "lo", "hi"}, where)
    name = node.get("name")
    dist = node.get("dist")
    if not name or not dist:
        raise ConfigError(f"{where} needs 'name' and 'dist'")
    if dist == "normal":
        return NormalPrior(name, float(node["mean"]), float(node["sd"]))
    if dist == "lognormal":
        return LogNormalPrior(name, float(node["mu_log"]), float(node["sd_log"]))
    if dist == "uniform":
        return UniformPrior(name, float(node["lo"]), float(node["hi"]))
    raise ConfigError(f"unknown prior dist {dist!r} in {where}")


_TOP_KEYS = {
    "method",
    "model",
    "output_dir",
    "noise_param",
    "dataset",
    "priors",
    "bias",
    "mcmc",
    "scaling",
    "extension",
    "output",
}


def load_config(path):
    """Parse a TOML run configuration; paths resolve relative to the file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    _check_keys(raw, _TOP_KEYS, "top level")
    for key in ("method", "model", "dataset", "mcmc"):
        if key not in raw:
            raise ConfigError(f"config is missing the required key {key!r}")

    model_name = raw["model"]
    if model_name not in MODELS:
        raise ConfigError(f"unknown model {model_name!r}; expected one of {sorted(MODELS)}")
    model = MODELS[model_name]()

    ds = raw["dataset"]
    _check_keys(ds, {"path", "generate", "seed"}, "dataset")
    if "path" in ds:
        data = read_csv((path.parent / ds["path"]).resolve())
        data_seed = data.meta.get("seed")
    elif "generate" in ds:
        gen = ds["generate"]
        if gen not in GENERATORS:
            raise ConfigError(f"unknown generator {gen!r}")
        data_seed = int(ds.get("seed", DEFAULT_SEEDS[gen]))
        data = GENERATORS[gen](data_seed)
    else:
        raise ConfigError("dataset needs either 'path' or 'generate'")

    priors = [_parse_prior(p, i) for i, p in enumerate(raw.get("priors", []))]
    if not priors:
        raise ConfigError("at least one prior is required")

    extension = raw.get("extension", {})
    _check_keys(extension, {"use_eta"}, "extension")
    extended = bool(extension.get("use_eta", False))

    scaling = raw.get("scaling", {})
    _check_keys(scaling, {"inputs_to_unit_box", "residual_factor"}, "scaling")
    scaler = None
    if scaling.get("inputs_to_unit_box", False):
        scaler = InputScaler.from_data(data.inputs(extended=extended))
    residual_scale = float(scaling.get("residual_factor", 1.0))

    bias = None
    fd_steps = 1e-3
    if raw["method"] in ("koh", "ogp"):
        node = raw.get("bias")
        if node is None:
            raise ConfigError(f"method {raw['method']!r} needs a [bias] table")
        _check_keys(node, {"kernel", "mean", "anchors", "fd_steps", "jitter", "hyperpriors"}, "bias")
        if "kernel" not in node:
            raise ConfigError("[bias] needs a kernel expression tree")
        kernel = _parse_kernel(node["kernel"])
        mean = _parse_hyper(node.get("mean", 0.0), "bias.mean", log_scale=False)
        anchors = node.get("anchors")
        if anchors is not None:
            anchors = np.asarray(anchors, dtype=float)
            if anchors.ndim == 1:
                anchors = anchors[:, None]
        fd_steps = node.get("fd_steps", 1e-3)
        hyper_priors = None
        if "hyperpriors" in node:
            hyper_priors = {
                k: (float(v["mu_log"]), float(v["sd_log"])) for k, v in node["hyperpriors"].items()
            }
        bias = BiasModel(
            kernel=kernel,
            mean=mean,
            anchors=anchors,
            orthogonal=raw["method"] == "ogp",
            jitter=float(node.get("jitter", 0.0)),
            hyper_priors=hyper_priors,
        )

    mc = raw["mcmc"]
    _check_keys(mc, {"steps", "burn_in", "chains", "seeds", "proposal_sd", "init"}, "mcmc")
    n_chains = int(mc.get("chains", 2))
    seeds = tuple(int(s) for s in mc.get("seeds", range(1, n_chains + 1)))
    config = CalibrationConfig(
        method=raw["method"],
        model=model,
        priors=priors,
        bias=bias,
        extended=extended,
        scaler=scaler,
        residual_scale=residual_scale,
        fd_steps=fd_steps,
        steps=int(mc["steps"]),
        burn_in=int(mc.get("burn_in", 0)),
        n_chains=n_chains,
        seeds=seeds,
        proposal_sd=np.asarray(mc["proposal_sd"], dtype=float) if "proposal_sd" in mc else None,
        init=np.asarray(mc["init"], dtype=float) if "init" in mc else None,
        noise_param=raw.get("noise_param"),
        label=f"{model_name}-{raw['method']}",
    )

    output = raw.get("output", {})
    _check_keys(output, {"band_grid"}, "output")
    grid = None
    if "band_grid" in output:
        bg = output["band_grid"]
        _check_keys(bg, {"start", "stop", "num"}, "output.band_grid")
        grid = np.linspace(float(bg["start"]), float(bg["stop"]), int(bg["num"]))

    outdir = Path(raw.get("output_dir", "biascal_out"))
    if not outdir.is_absolute():
        outdir = (path.parent / outdir).resolve()
    return config, data, data_seed, grid, outdir


def write_chain_csv(chain, path):
    lines = ["step," + ",".join(chain.param_names) + ",log_posterior"]
    for i in range(len(chain)):
        cells = [str(chain.burn_in + i)]
        cells += [_fmt(v) for v in chain.samples[i]]
        cells.append(_fmt(chain.log_posterior[i]))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def read_chain_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    if header[0] != "step" or header[-1] != "log_posterior":
        raise ConfigError(f"{path} is not a chain CSV (header {header})")
    names = tuple(header[1:-1])
    rows = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    return Chain(
        samples=rows[:, 1:-1],
        log_posterior=rows[:, -1],
        acceptance_rate=0.0,
        proposal_sd=np.ones(len(names)),
        seed=0,
        burn_in=int(rows[0, 0]),
        param_names=names,
    )


def _summary_json(summary):
    payload = {
        name: {k: row[k] for k in SUMMARY_FIELDS} for name, row in summary.params.items()
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _write_band_csv(band, path):
    cols = ["x"] + (["eta"] if band.eta is not None else []) + ["mean", "sd"]
    lines = [",".join(cols)]
    for i in range(band.x.shape[0]):
        cells = [_fmt(band.x[i])]
        if band.eta is not None:
            cells.append(_fmt(band.eta[i]))
        cells += [_fmt(band.mean[i]), _fmt(band.sd[i])]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_outputs(outdir, result, data, grid, grid_eta, seed, extra_meta=None):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for k, chain in enumerate(result.chains):
        write_chain_csv(chain, outdir / f"chain_{k}.csv")
    (outdir / "summary.json").write_text(_summary_json(result.summary))
    model = result.config.model
    fitted = fitted_response(result, model, grid)
    _write_band_csv(fitted, outdir / "fitted_band.csv")
    if result.config.method in ("koh", "ogp"):
        corrected = bias_corrected_response(result, model, grid, eta=grid_eta)
        _write_band_csv(corrected, outdir / "bias_band.csv")
    meta = {
        "config": result.config.describe(),
        "wall_seconds": result.wall_seconds,
        "seed": seed,
        "version": __version__,
        "diagnostics": result.diagnostics,
        "acceptance_rates": [c.acceptance_rate for c in result.chains],
        "theta_star": [float(v) for v in result.theta_star],
    }
    meta.update(extra_meta or {})
    (outdir / "run_meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def _cmd_calibrate(args):
    config, data, seed, grid, outdir = load_config(args.config)
    result = calibrate(config, data)
    if grid is None:
        grid = np.unique(data.x[:, 0])
    grid_eta = None
    if config.extended:
        per_x = np.unique(data.x[:, 0])
        etas = np.unique(data.eta[:, 0])
        grid_eta = np.repeat(etas, per_x.size)
        grid = np.tile(per_x, etas.size)
    write_outputs(outdir, result, data, grid, grid_eta, seed)
    print(f"wrote results to {outdir}")
    return 0


def _cmd_benchmark(args):
    data, config = make_benchmark(
        args.name,
        method=args.method,
        seed=args.seed,
        extended=args.extended,
        steps=args.steps,
        burn_in=args.burn_in,
    )
    t0 = time.perf_counter()
    result = calibrate(config, data)
    seed = args.seed if args.seed is not None else DEFAULT_SEEDS[args.name]
    outdir = args.out or f"biascal_runs/{config.label}-seed{seed}"
    grid, grid_eta = band_grid(args.name, data=data, extended=config.extended)
    write_outputs(outdir, result, data, grid, grid_eta, seed, {"benchmark": args.name})
    mean = {name: row["mean"] for name, row in result.summary.params.items()}
    print(
        f"{config.label}: mean={mean} r_hat="
        f"{ {n: round(r['r_hat'], 4) for n, r in result.summary.params.items()} } "
        f"({time.perf_counter() - t0:.1f} s) -> {outdir}"
    )
    return 0


def _cmd_generate(args):
    if args.name not in GENERATORS:
        raise ConfigError(f"unknown benchmark {args.name!r}; expected one of {BENCHMARKS}")
    seed = args.seed if args.seed is not None else DEFAULT_SEEDS[args.name]
    data = GENERATORS[args.name](seed)
    write_csv(data, args.out)
    print(f"wrote {len(data)} rows to {args.out}")
    return 0


def _cmd_summarize(args):
    chains = [read_chain_csv(p) for p in args.chains]
    text = _summary_json(summarize(chains))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="biascal", description=__doc__)
    parser.add_argument("--version", action="version", version=f"biascal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="run a calibration described by a TOML config")
    p.add_argument("config")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("benchmark", help="run a named benchmark case")
    p.add_argument("name", choices=BENCHMARKS)
    p.add_argument("--method", default="nobias", choices=("nobias", "koh", "ogp"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--extended", action="store_true", help="extend the bias inputs with eta")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("generate", help="write a synthetic benchmark dataset to CSV")
    p.add_argument("name", choices=BENCHMARKS)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("summarize", help="summarize emitted chain CSVs")
    p.add_argument("chains", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_summarize)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FactorizationError, CalibrationAborted, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except BiascalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
