"""Command line: generate -> compress -> learn -> infer -> evaluate.

Exit codes: 0 success, 1 configuration or validation error, 2 I/O error,
3 numerical failure.  Logs go to stderr as JSON lines.
"""
import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .errors import MMGMRFError, NumericalError, ValidationError

EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

log = logging.getLogger("mmgmrf")


class ConfigError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        rec = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        extra = getattr(record, "fields", None)
        if extra:
            rec.update(extra)
        return json.dumps(rec, sort_keys=True, default=str)


def _event(msg, **fields):
    log.info(msg, extra={"fields": fields})


def read_config(path):
    """``key = value`` lines; ``#`` starts a comment; optional ``[section]`` headers are ignored."""
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    with fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line or (line.startswith("[") and line.endswith("]")):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
                value = value[1:-1]
            out[key.replace("-", "_")] = value
    return out


def _grid(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"grid must look like 5x5, got {text!r}") from exc
    return w, h


def _range(text):
    parts = [int(v) for v in str(text).split("-")]
    return (parts[0], parts[0]) if len(parts) == 1 else (parts[0], parts[1])


def _int_list(text):
    return [int(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


# option name -> (type, default, help); flags win over config, config over defaults
OPTIONS = {
    "generate": {
        "grid": (_grid, (5, 5), "grid size WxH"),
        "m": (_positive_int, 2, "states per link"),
        "trajectories": (_positive_int, 1000, "number of trajectories"),
        "path_len": (_range, (5, 15), "path length range lo-hi"),
        "period": (float, 1.0, "GPS sampling period (s)"),
        "noise": (_nonneg_float, 2.0, "GPS offset noise sd (m)"),
        "sample_seed": (int, 1, "seed of the trajectory sample (the world follows --seed)"),
        "out": (str, "data", "output directory"),
    },
    "compress": {
        "network": (str, None, "network CSV"),
        "traces": (str, None, "trace JSONL"),
        "out": (str, "observations.jsonl", "output JSONL of compressed observations"),
    },
    "learn": {
        "network": (str, None, "network CSV"),
        "observations": (str, None, "compressed observations JSONL"),
        "model": (str, "model", "output model directory"),
        "m": (_positive_int, 2, "states per link (unless the network CSV has a modes column)"),
        "prune_min_count": (int, 10, "minimum co-observations to keep a pattern pair"),
        "smoothing": (_nonneg_float, 0.5, "additive smoothing of transition counts"),
        "jl_k": (int, None, "sketch width"),
        "jl_eps": (float, None, "sketch distortion target (sets width from the bound)"),
        "tol": (float, 1e-6, "stationarity tolerance of the precision fit"),
        "max_iter": (_positive_int, 1000, "iteration cap of the precision fit"),
        "inverse": (str, "selected", "inverse entries: selected, columns or sketch"),
    },
    "infer": {
        "model": (str, "model", "model directory"),
        "path": (_int_list, None, "comma-separated link ids"),
        "queries": (str, None, "JSONL of queries"),
        "K": (_positive_int, 1000, "sampled state sequences per query"),
        "budget": (float, None, "time budget for on-time probability (s)"),
        "exact": (bool, False, "enumerate all state sequences instead of sampling"),
        "out": (str, None, "write responses here instead of stdout"),
    },
    "evaluate": {
        "model": (str, "model", "model directory"),
        "observations": (str, None, "validation observations JSONL"),
        "K": (_positive_int, 1000, "sampled state sequences per path"),
        "out": (str, "metrics", "output directory"),
        "ablation": (bool, False, "also score the diagonal-covariance ablation"),
        "kl_path": (_int_list, None, "path for the KL-vs-K study"),
        "kl_K": (_int_list, None, "K values for the KL study"),
        "kl_seeds": (_positive_int, 10, "seeds per K in the KL study"),
        "scaling": (_int_list, None, "square grid sizes for the scaling study"),
    },
}


def build_parser():
    p = _ArgumentParser(prog="mmgmrf", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=_positive_int, default=None, help="worker threads/processes")
    p.add_argument("--seed", type=int, default=None, help="root seed")
    p.add_argument("--config", default=None, help="key = value config file (flags win)")
    p.add_argument("--log-level", default="info", help="logging level")
    sub = p.add_subparsers(dest="command", parser_class=_ArgumentParser)
    for name, opts in OPTIONS.items():
        sp_ = sub.add_parser(name)
        for key, (typ, _default, help_) in opts.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                sp_.add_argument(flag, action="store_const", const=True, default=None, help=help_)
            else:
                sp_.add_argument(flag, type=typ, default=None, help=help_)
    return p


def _coerce(typ, value, key):
    if typ is bool:
        v = str(value).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"option {key}: expected a boolean, got {value!r}")
    try:
        return typ(value)
    except (ValueError, TypeError, argparse.ArgumentTypeError) as exc:
        raise ConfigError(f"option {key}: {exc}") from exc


def resolve(args):
    """Merge flags, config file and defaults into a plain dict."""
    config = read_config(args.config) if args.config else {}
    opts = OPTIONS[args.command]
    known = set(opts) | {"threads", "seed"}
    unknown = set(config) - known - {k for o in OPTIONS.values() for k in o}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for key, (typ, default, _h) in opts.items():
        val = getattr(args, key, None)
        if val is None and key in config:
            val = _coerce(typ, config[key], key)
        out[key] = default if val is None else val
    out["threads"] = args.threads or (_coerce(int, config["threads"], "threads") if "threads" in config else 1)
    out["seed"] = args.seed if args.seed is not None else (
        _coerce(int, config["seed"], "seed") if "seed" in config else 0)
    return out


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise ConfigError(f"--{k.replace('_', '-')} is required")
        if k in ("network", "traces", "observations", "queries") and not os.path.exists(cfg[k]):
            raise FileNotFoundError(f"{cfg[k]} does not exist")


def _read_jsonl(path):
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if line:
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValidationError(f"{path}:{n}: invalid JSON ({exc.msg})") from exc


def cmd_generate(cfg):
    from .network import save_network
    from .synth import generate_world, render_points, sample_trajectories, trace_record

    w, h = cfg["grid"]
    seed = cfg["seed"]
    truth = generate_world(w, h, m=cfg["m"], seed=seed)
    os.makedirs(cfg["out"], exist_ok=True)
    save_network(truth.network, os.path.join(cfg["out"], "network.csv"))
    truth.save(os.path.join(cfg["out"], "truth.json"))
    rng = np.random.default_rng([seed, cfg["sample_seed"]])
    obs = sample_trajectories(truth, cfg["trajectories"], cfg["path_len"], rng)
    with open(os.path.join(cfg["out"], "traces.jsonl"), "w") as fh:
        for o in obs:
            t, link, x = render_points(o, cfg["period"], cfg["noise"], truth, rng)
            fh.write(json.dumps(trace_record(o, t, link, x)) + "\n")
    with open(os.path.join(cfg["out"], "observations_true.jsonl"), "w") as fh:
        for o in obs:
            fh.write(json.dumps(o.to_record()) + "\n")
    _event("generated", links=truth.network.n_links, d=truth.d, trajectories=len(obs), seed=seed,
           sample_seed=cfg["sample_seed"])
    return 0


def cmd_compress(cfg):
    from .network import load_network
    from .pipeline import compress_records

    _require(cfg, "network", "traces")
    net = load_network(cfg["network"])
    t0 = time.perf_counter()
    records = list(_read_jsonl(cfg["traces"]))
    obs = compress_records(records, net, threads=cfg["threads"])
    with open(cfg["out"], "w") as fh:
        for o in obs:
            fh.write(json.dumps(o.to_record()) + "\n")
    _event("compressed", traces=len(records), observations=len(obs),
           seconds=round(time.perf_counter() - t0, 3))
    return 0


def _load_observations(path, network=None):
    from .markov import CompressedObservation

    out = []
    for rec in _read_jsonl(path):
        o = CompressedObservation.from_record(rec)
        if network is not None:
            for l in o.path:
                network.check_link(l)
            if np.any(o.states < 0) or np.any(o.states >= network.modes[o.path]):
                raise ValidationError(f"observation {o.id}: state out of range")
        out.append(o)
    return out


def cmd_learn(cfg):
    from .network import load_network
    from .pipeline import learn

    _require(cfg, "network", "observations")
    net = load_network(cfg["network"], m=cfg["m"])
    obs = _load_observations(cfg["observations"], net)
    t0 = time.perf_counter()
    model, _stats, pecm = learn(net, obs, smoothing=cfg["smoothing"],
                                prune_min_count=cfg["prune_min_count"], tol=cfg["tol"],
                                max_iter=cfg["max_iter"], inverse=cfg["inverse"],
                                jl_k=cfg["jl_k"], jl_eps=cfg["jl_eps"], seed=cfg["seed"])
    model.save(cfg["model"])
    pecm.save(os.path.join(cfg["model"], "pecm.bin"))
    fit = model.precision.diagnostics
    _event("learned", d=model.index.d, observations=len(obs), iterations=fit["iterations"],
           converged=fit["converged"], diag_boost=pecm.diag_boost,
           seconds=round(time.perf_counter() - t0, 3))
    return 0


def _load_model(path):
    from .inference import TravelTimeModel

    if not os.path.isdir(path):
        raise FileNotFoundError(f"model directory {path} does not exist")
    return TravelTimeModel.load(path)


def cmd_infer(cfg):
    from .inference import PathQuery, exact_mixture, infer_distribution

    model = _load_model(cfg["model"])
    if cfg["path"] is not None:
        queries = [{"path": cfg["path"], "budget_s": cfg["budget"]}]
    elif cfg["queries"] is not None:
        _require(cfg, "queries")
        queries = list(_read_jsonl(cfg["queries"]))
    else:
        raise ConfigError("either --path or --queries is required")
    out = open(cfg["out"], "w") if cfg["out"] else sys.stdout
    try:
        for qid, rec in enumerate(queries):
            q = PathQuery.from_json(rec, K=cfg["K"], seed=cfg["seed"], query_id=qid)
            t0 = time.perf_counter()
            if cfg["exact"]:
                dist = exact_mixture(model, q.path)
            else:
                dist = infer_distribution(model, q)
            resp = dist.to_response(budget_s=q.budget_s)
            elapsed = time.perf_counter() - t0
            out.write(json.dumps(resp) + "\n")
            _event("query", id=qid, links=len(q.path), components=dist.n_components,
                   ms=round(1e3 * elapsed, 3))
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_evaluate(cfg):
    from .evaluate import (LENGTH_BINS, diagonal_ablation, kl_vs_exact, pp_metrics, scaling_report,
                           validate)

    os.makedirs(cfg["out"], exist_ok=True)
    metrics = {"seed": cfg["seed"], "length_bins": [list(b) for b in LENGTH_BINS]}
    model = None
    if cfg["observations"]:
        _require(cfg, "observations")
        model = _load_model(cfg["model"])
        obs = _load_observations(cfg["observations"], model.network)
        res = validate(model, obs, K=cfg["K"], seed=cfg["seed"])
        pp = pp_metrics(res.pit)
        metrics["validation"] = {"n": len(obs), "mean_loglik": res.mean_loglik(),
                                 "loglik_by_length": res.by_length(), "pp_a": pp.a, "pp_b": pp.b}
        with open(os.path.join(cfg["out"], "pp_curve.csv"), "w") as fh:
            fh.write(pp.to_csv())
        if cfg["ablation"]:
            res2 = validate(diagonal_ablation(model), obs, K=cfg["K"], seed=cfg["seed"])
            pp2 = pp_metrics(res2.pit)
            metrics["diagonal_ablation"] = {"mean_loglik": res2.mean_loglik(),
                                            "loglik_by_length": res2.by_length(),
                                            "pp_a": pp2.a, "pp_b": pp2.b}
    if cfg["kl_path"]:
        model = model or _load_model(cfg["model"])
        I = len(cfg["kl_path"])
        Ks = cfg["kl_K"] or [int(round(100 * np.log(max(I, 2)))), int(round(1000 * np.log(max(I, 2))))]
        kl = kl_vs_exact(model, cfg["kl_path"], Ks, seeds=range(cfg["kl_seeds"]))
        metrics["kl"] = {str(K): float(np.median(v)) for K, v in kl.items()}
        with open(os.path.join(cfg["out"], "kl_vs_K.csv"), "w") as fh:
            fh.write("K,seed,kl\n")
            for K, vals in kl.items():
                for s, v in enumerate(vals):
                    fh.write(f"{K},{s},{v:.10g}\n")
    if cfg["scaling"]:
        rep = scaling_report(cfg["scaling"], seed=cfg["seed"])
        metrics["scaling_slope"] = rep.slope
        with open(os.path.join(cfg["out"], "scaling.csv"), "w") as fh:
            fh.write(rep.to_csv())
    with open(os.path.join(cfg["out"], "metrics.json"), "w") as fh:
        json.dump(metrics, fh, indent=1, sort_keys=True)
    _event("evaluated", **{k: v for k, v in metrics.items() if not isinstance(v, (dict, list))})
    return 0


COMMANDS = {"generate": cmd_generate, "compress": cmd_compress, "learn": cmd_learn,
            "infer": cmd_infer, "evaluate": cmd_evaluate}


def _setup_logging(level):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))
    logging.captureWarnings(True)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        _setup_logging(args.log_level)
        if args.command is None:
            raise ConfigError("a subcommand is required: " + ", ".join(COMMANDS))
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ValidationError) as exc:
        _report("config", exc)
        return EXIT_CONFIG
    except (OSError, EOFError) as exc:
        _report("io", exc)
        return EXIT_IO
    except NumericalError as exc:
        _report("numeric", exc)
        return EXIT_NUMERIC
    except MMGMRFError as exc:
        _report("config", exc)
        return EXIT_CONFIG


def _report(kind, exc):
    if not logging.getLogger().handlers:
        _setup_logging("info")
    log.error(str(exc), extra={"fields": {"error": kind, "type": type(exc).__name__}})


if __name__ == "__main__":
    sys.exit(main())
