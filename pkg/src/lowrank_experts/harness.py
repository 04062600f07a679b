"""Experiment runner: config parsing, seeded runs and CSV output.

A config is a single JSON document::

    {"experiments": [
        {"name": "lowrank_d3",
         "algorithm": "lowrank",
         "adversary": {"kind": "stochastic_lowrank", "N": 500, "d": 3, "T": 4000},
         "seeds": [1, 2, 3],
         "algorithm_params": {"span_tol": 1e-7}}
    ]}

Unknown keys anywhere are errors.  The adversary kind ``file`` reads a
stored loss matrix (``"path"``, CSV or binary, relative to the config).
Each (experiment, seed) pair is one run; runs are numbered in config order
and their outputs are merged in that order regardless of ``--jobs``.
"""

import csv
import json
import json.decoder
import json.scanner
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adversaries, algorithms
from .errors import ContractError, NumericError

ALGORITHMS = ("hedge", "ftl", "omd_fixed", "lowrank", "adagrad", "combiner")
ALGORITHM_PARAMS = {
    "hedge": {"eta", "horizon"},
    "ftl": set(),
    "omd_fixed": {"eta", "eps"},
    "lowrank": {"eta", "eps", "span_tol"},
    "adagrad": {"eta", "delta"},
    "combiner": {"eta", "eps", "span_tol", "horizon"},
}
ADVERSARY_KEYS = {"kind", "N", "d", "T", "eps", "path"}
EXPERIMENT_KEYS = {"name", "algorithm", "adversary", "seeds", "algorithm_params"}
ROUND_COLUMNS = ["run_id", "experiment", "seed", "t", "round_loss", "cum_regret"]
SUMMARY_COLUMNS = ["experiment", "seed", "N", "d", "T", "final_regret", "regret_over_sqrtT", "wall_ms"]
SEED_ENV = "LRE_SEED_OFFSET"
U64 = 2 ** 64
NAME_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


class ConfigError(ContractError):
    """Invalid experiment config; carries the offending field and line."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class RunError(NumericError):
    def __init__(self, run_id, experiment, seed, round_index, message):
        self.run_id = run_id
        self.experiment = experiment
        self.seed = seed
        self.detail = message
        super().__init__(message, round_index=round_index)

    def __str__(self):
        at = f" at round {self.round_index}" if self.round_index is not None else ""
        return f"run {self.run_id} ({self.experiment}, seed {self.seed}) failed{at}: {self.detail}"


# ---------------------------------------------------------------- JSON with lines


class _Located(dict):
    line = None
    key_lines = None


def _located_decoder():
    """A JSON decoder whose objects remember their own and their keys' line numbers."""
    decoder = json.JSONDecoder()

    def parse_object(s_and_end, strict, scan_once, object_hook, object_pairs_hook, memo=None):
        s, end = s_and_end
        start = end - 1
        pairs, new_end = json.decoder.JSONObject(
            s_and_end, strict, scan_once, None, lambda p: p, memo
        )
        obj = _Located()
        obj.line = s.count("\n", 0, start) + 1
        obj.key_lines = {}
        pos = start
        for key, value in pairs:
            at = s.find(json.dumps(key), pos, new_end)
            line = s.count("\n", 0, at) + 1 if at >= 0 else obj.line
            if key in obj:
                raise ConfigError(f"duplicate key {key!r}", field=key, line=line)
            obj[key] = value
            obj.key_lines[key] = line
        return obj, new_end

    decoder.parse_object = parse_object
    decoder.scan_once = json.scanner.py_make_scanner(decoder)
    return decoder


def _line(obj, key=None):
    if isinstance(obj, _Located):
        if key is not None and obj.key_lines and key in obj.key_lines:
            return obj.key_lines[key]
        return obj.line
    return None


# ---------------------------------------------------------------- config


@dataclass
class Experiment:
    name: str
    algorithm: str
    adversary: dict
    seeds: list
    algorithm_params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    experiments: list
    base_dir: Path = Path(".")


def _require_int(value, where, line, lo=1, hi=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", field=where, line=line)
    if value < lo or (hi is not None and value > hi):
        rng = f">= {lo}" if hi is None else f"in [{lo}, {hi}]"
        raise ConfigError(f"value {value} must be {rng}", field=where, line=line)
    return value


def _require_real(value, where, line, positive=True):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"expected a finite number, got {value!r}", field=where, line=line)
    if positive and value <= 0:
        raise ConfigError(f"value {value} must be positive", field=where, line=line)
    return float(value)


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError("expected a JSON object", field=where, line=_line(obj))
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", field=f"{where}.{key}" if where else key,
                              line=_line(obj, key))


def _validate_adversary(adv, where, base_dir):
    _check_keys(adv, ADVERSARY_KEYS, where)
    if "kind" not in adv:
        raise ConfigError("missing key 'kind'", field=where, line=_line(adv))
    kind = adv["kind"]
    if kind == "file":
        extra = set(adv) - {"kind", "path"}
        if extra:
            key = sorted(extra)[0]
            raise ConfigError(f"key {key!r} is not valid for file adversaries", field=f"{where}.{key}",
                              line=_line(adv, key))
        if not isinstance(adv.get("path"), str):
            raise ConfigError("file adversary needs a string 'path'", field=f"{where}.path", line=_line(adv, "path"))
        path = Path(adv["path"])
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"loss file {path} not found", field=f"{where}.path", line=_line(adv, "path"))
        return {"kind": "file", "path": str(path)}
    if kind not in adversaries.KINDS:
        raise ConfigError(f"unknown adversary kind {kind!r}", field=f"{where}.kind", line=_line(adv, "kind"))
    if "path" in adv:
        raise ConfigError("'path' is only valid for file adversaries", field=f"{where}.path", line=_line(adv, "path"))
    out = {"kind": kind}
    for key in ("N", "d", "T"):
        if key in adv:
            out[key] = _require_int(adv[key], f"{where}.{key}", _line(adv, key))
    needed = {"stochastic_lowrank": ("N", "d", "T"), "approx_lowrank": ("N", "d", "T", "eps"),
              "hypercube": ("d", "T"), "adagrad_case1": ("N", "T"), "adagrad_case2": ("N", "T")}[kind]
    for key in needed:
        if key not in adv:
            raise ConfigError(f"missing key {key!r} for adversary kind {kind}", field=where, line=_line(adv))
    if "eps" in adv:
        if kind != "approx_lowrank":
            raise ConfigError("'eps' is only valid for approx_lowrank", field=f"{where}.eps", line=_line(adv, "eps"))
        out["eps"] = _require_real(adv["eps"], f"{where}.eps", _line(adv, "eps"), positive=False)
    try:
        adversaries.AdversaryConfig(**out)
    except ContractError as exc:
        raise ConfigError(str(exc), field=where, line=_line(adv)) from None
    return out


def _validate_params(algorithm, params, adversary, where):
    _check_keys(params, ALGORITHM_PARAMS[algorithm], where)
    out = {}
    for key, value in params.items():
        line = _line(params, key)
        if key == "horizon":
            out[key] = None if value is None else _require_int(value, f"{where}.{key}", line)
        elif key == "eps":
            v = _require_real(value, f"{where}.{key}", line)
            if v > 1:
                raise ConfigError("ellipsoid eps must lie in (0, 1]", field=f"{where}.{key}", line=line)
            out[key] = v
        else:
            out[key] = _require_real(value, f"{where}.{key}", line)
    if algorithm == "omd_fixed" and adversary["kind"] == "file":
        raise ConfigError("omd_fixed needs an adversary with a known embedding, not a loss file",
                          field=where.rsplit(".", 1)[0] + ".algorithm", line=_line(params))
    return out


def parse_config(text, base_dir="."):
    """Parse and validate a config document; raises :class:`ConfigError`."""
    base_dir = Path(base_dir)
    try:
        doc = _located_decoder().decode(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
    _check_keys(doc, {"experiments"}, "")
    exps = doc.get("experiments")
    if not isinstance(exps, list) or not exps:
        raise ConfigError("'experiments' must be a non-empty list", field="experiments", line=_line(doc, "experiments"))
    out = []
    names = set()
    for j, exp in enumerate(exps):
        where = f"experiments[{j}]"
        _check_keys(exp, EXPERIMENT_KEYS, where)
        for key in ("name", "algorithm", "adversary", "seeds"):
            if key not in exp:
                raise ConfigError(f"missing key {key!r}", field=where, line=_line(exp))
        name = exp["name"]
        if not isinstance(name, str) or not NAME_RE.match(name):
            raise ConfigError("name must be a non-empty string of letters, digits, '_', '.', '-'",
                              field=f"{where}.name", line=_line(exp, "name"))
        if name in names:
            raise ConfigError(f"duplicate experiment name {name!r}", field=f"{where}.name", line=_line(exp, "name"))
        names.add(name)
        algorithm = exp["algorithm"]
        if algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {algorithm!r}; expected one of {', '.join(ALGORITHMS)}",
                              field=f"{where}.algorithm", line=_line(exp, "algorithm"))
        adversary = _validate_adversary(exp["adversary"], f"{where}.adversary", base_dir)
        seeds = exp["seeds"]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("'seeds' must be a non-empty list", field=f"{where}.seeds", line=_line(exp, "seeds"))
        for s in seeds:
            _require_int(s, f"{where}.seeds", _line(exp, "seeds"), lo=0, hi=U64 - 1)
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds must be distinct", field=f"{where}.seeds", line=_line(exp, "seeds"))
        params = _validate_params(algorithm, exp.get("algorithm_params", {}), adversary,
                                  f"{where}.algorithm_params")
        out.append(Experiment(name, algorithm, adversary, list(seeds), params))
    return ExperimentConfig(out, base_dir)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise ConfigError("config is not valid UTF-8") from None
    return parse_config(text, base_dir=path.parent)


# ---------------------------------------------------------------- runs


def seed_offset():
    raw = os.environ.get(SEED_ENV, "0").strip() or "0"
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


@dataclass
class RunSpec:
    run_id: int
    experiment: Experiment
    seed: int


def plan_runs(config, offset=0):
    specs = []
    for exp in config.experiments:
        for s in exp.seeds:
            specs.append(RunSpec(len(specs) + 1, exp, (s + offset) % U64))
    return specs


def build_stream(adversary, seed):
    if adversary["kind"] == "file":
        return adversaries.load_stream(adversary["path"])
    return adversaries.generate(adversaries.AdversaryConfig(seed=seed, **adversary))


def build_learner(algorithm, params, stream):
    N, T = stream.N, stream.T
    if algorithm == "hedge":
        return algorithms.Hedge(N, eta=params.get("eta"), horizon=params.get("horizon", T))
    if algorithm == "ftl":
        return algorithms.FTL(N)
    if algorithm == "omd_fixed":
        if stream.embedding is None:
            raise ContractError("omd_fixed needs an adversary with a known embedding")
        H, _ = algorithms.subspace_regularizer(stream.embedding, eps=params.get("eps", 1.0))
        dim = stream.embedding.shape[1]
        return algorithms.OMDFixed(H, algorithms.sqrt_schedule(dim, params.get("eta", 4.0)))
    if algorithm == "lowrank":
        return algorithms.LowRankExperts(
            N, span_tol=params.get("span_tol", algorithms.SPAN_TOL),
            eps=params.get("eps", 1.0), eta_scale=params.get("eta", 4.0),
        )
    if algorithm == "adagrad":
        return algorithms.AdaGrad(N, eta=params.get("eta", 1.0), delta=params.get("delta", 1.0))
    if algorithm == "combiner":
        low = algorithms.LowRankExperts(N, span_tol=params.get("span_tol", algorithms.SPAN_TOL),
                                        eps=params.get("eps", 1.0))
        hedge = algorithms.Hedge(N, horizon=T)
        return algorithms.MetaCombiner(low, hedge, eta=params.get("eta"), horizon=params.get("horizon", T))
    raise ContractError(f"unknown algorithm {algorithm!r}")


def execute(spec):
    """Run one (experiment, seed) pair and return its trace."""
    exp = spec.experiment
    t0 = time.perf_counter()
    try:
        stream = build_stream(exp.adversary, spec.seed)
        learner = build_learner(exp.algorithm, exp.algorithm_params, stream)
        out = algorithms.play(learner, stream.losses)
    except NumericError as exc:
        raise RunError(spec.run_id, exp.name, spec.seed, getattr(exc, "round_index", None),
                       getattr(exc, "message", str(exc))) from None
    wall = (time.perf_counter() - t0) * 1000.0
    return {
        "run_id": spec.run_id,
        "experiment": exp.name,
        "seed": spec.seed,
        "N": stream.N,
        "d": stream.rank_certificate,
        "T": stream.T,
        "round_loss": out["round_loss"],
        "cum_regret": out["cum_regret"],
        "wall_ms": wall,
    }


def _worker(spec):
    # exceptions with custom signatures do not survive pickling; ship them as data
    try:
        return execute(spec)
    except RunError as exc:
        return {"run_id": spec.run_id, "error": (exc.run_id, exc.experiment, exc.seed,
                                                 exc.round_index, exc.detail)}


def round_file_name(experiment, seed):
    return f"{experiment}_seed{seed}.csv"


def _fmt(x):
    return repr(float(x))


def write_round_csv(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUND_COLUMNS)
        for t, (rl, cr) in enumerate(zip(result["round_loss"], result["cum_regret"]), start=1):
            w.writerow([result["run_id"], result["experiment"], result["seed"], t, _fmt(rl), _fmt(cr)])


def summary_row(result, timing=True):
    T = result["T"]
    final = float(result["cum_regret"][-1]) if T else 0.0
    return {
        "experiment": result["experiment"],
        "seed": result["seed"],
        "N": result["N"],
        "d": result["d"],
        "T": T,
        "final_regret": _fmt(final),
        "regret_over_sqrtT": _fmt(final / math.sqrt(T) if T else 0.0),
        "wall_ms": f"{result['wall_ms']:.3f}" if timing else "0",
    }


def run(config_path, out_dir, jobs=1, summary_only=False, timing=True, plot=False):
    """Execute every run of a config and write CSVs under ``out_dir``.

    Returns the list of summary rows.  Raises :class:`ConfigError` or
    :class:`RunError`.
    """
    config = load_config(config_path)
    specs = plan_runs(config, seed_offset())
    out_dir = Path(out_dir)
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    if jobs > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_worker, specs))
    else:
        results = [_worker(s) for s in specs]
    results.sort(key=lambda r: r["run_id"])
    for res in results:
        if "error" in res:
            raise RunError(*res["error"])
    rows = []
    for res in results:
        if not summary_only:
            write_round_csv(res, runs_dir / round_file_name(res["experiment"], res["seed"]))
        rows.append(summary_row(res, timing))
    summary = out_dir / "summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    if plot:
        from .plotting import plot_summary
        plot_summary(summary, out_dir / "regret.svg")
    return rows


def read_round_csv(path):
    """Per-round trace as a dict of numpy arrays."""
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames != ROUND_COLUMNS:
            raise ContractError(f"{path}: unexpected columns {r.fieldnames}")
        rows = list(r)
    return {
        "run_id": [int(x["run_id"]) for x in rows],
        "experiment": [x["experiment"] for x in rows],
        "seed": [int(x["seed"]) for x in rows],
        "t": np.array([int(x["t"]) for x in rows]),
        "round_loss": np.array([float(x["round_loss"]) for x in rows]),
        "cum_regret": np.array([float(x["cum_regret"]) for x in rows]),
    }


def read_summary(path):
    with open(path, newline="") as fh:
        text = fh.read()
    if not text.strip():
        return []
    r = csv.DictReader(text.splitlines())
    if r.fieldnames != SUMMARY_COLUMNS:
        raise ContractError(f"{path}: unexpected columns {r.fieldnames}")
    return list(r)


def regret_from_trace(L, round_loss):
    """Cumulative regret recomputed from a stored stream and the per-round learner losses."""
    L = np.asarray(L, dtype=float)
    best = np.min(np.cumsum(L, axis=1), axis=0)
    return np.cumsum(round_loss) - best
