"""Command-line front end: simulate, train, query, reproduce.

One JSON config file (strict schema, unknown keys rejected) carries the
SCM, model, and experiment settings; flags override config values which
override built-in defaults.  Exit codes: 0 success, 2 config/flag error,
3 I/O error, 4 training divergence, 5 tolerance failure.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import dataclass, field, replace

from . import bench, ctf, scm
from .bench import ExperimentSpec, QueryTemplate, experiment_spec
from .model import Checkpoint, DivergenceError, ModelConfig, train
from .oracle import InterventionSpec
from .scm import LinearSCMSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4
EXIT_TOLERANCE = 5


class ConfigError(ValueError):
    """Bad config file or inconsistent flag values."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a full reproduction run needs, JSON-serializable."""

    seed: int = 0
    output_dir: str = "out"
    scm_spec: LinearSCMSpec = field(default_factory=scm.mean_reverting_pair_spec)
    n_sequences: int = 5000
    length: int = 10
    model: dict = field(default_factory=dict)  # ModelConfig overrides, graph-free
    intervention_time: int = 4
    horizons: tuple[int, ...] = (1, 2, 3, 4, 5)
    n_eval_histories: int = 100
    n_samples: int = 4096
    train_seeds: tuple[int, ...] = (0, 1, 2)
    tolerance: float = 0.15
    query: QueryTemplate = QueryTemplate("X", 0.0, "Y", 0.0)

    def model_config(self, seed: int | None = None) -> ModelConfig:
        return ModelConfig(
            graph=self.scm_spec.graph,
            sequence_length=self.length,
            seed=self.seed if seed is None else seed,
            **self.model,
        )

    def experiment(self, exp_id: str) -> ExperimentSpec:
        base = ExperimentSpec(
            id=exp_id,
            scm_spec=self.scm_spec,
            query=self.query,
            model_config=self.model_config(),
            horizons=self.horizons,
            intervention_time=self.intervention_time,
            n_eval_histories=self.n_eval_histories,
            n_ctf_samples=self.n_samples,
            n_train_sequences=self.n_sequences,
            seeds=self.train_seeds,
            data_seed=self.seed + 100,
            eval_seed=self.seed + 777,
            tolerance=self.tolerance,
        )
        if exp_id in ("exp1", "exp2"):
            template = experiment_spec(exp_id)
            base = replace(base, query=template.query)
        return base


_MODEL_KEYS = {
    "latent_dim", "feature_width", "gru_width", "decoder_width", "flow_depth",
    "flow_width", "beta", "learning_rate", "adam_beta1", "adam_beta2", "adam_eps",
    "epochs", "batch_size",
}


def _require_keys(payload: dict, allowed: set[str], where: str) -> None:
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def run_config_from_dict(payload: dict) -> RunConfig:
    _require_keys(
        payload, {"seed", "output_dir", "scm", "data", "model", "experiment"}, "config"
    )
    kwargs: dict = {}
    if "seed" in payload:
        kwargs["seed"] = int(payload["seed"])
    if "output_dir" in payload:
        kwargs["output_dir"] = str(payload["output_dir"])
    if "scm" in payload:
        try:
            kwargs["scm_spec"] = LinearSCMSpec.from_dict(payload["scm"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad scm section: {exc}") from exc
    data = payload.get("data", {})
    _require_keys(data, {"n_sequences", "length"}, "data")
    if "n_sequences" in data:
        kwargs["n_sequences"] = int(data["n_sequences"])
    if "length" in data:
        kwargs["length"] = int(data["length"])
    model = dict(payload.get("model", {}))
    _require_keys(model, _MODEL_KEYS, "model")
    kwargs["model"] = model
    experiment = payload.get("experiment", {})
    _require_keys(
        experiment,
        {"intervention_time", "horizons", "n_eval_histories", "n_samples", "seeds",
         "tolerance", "query"},
        "experiment",
    )
    if "intervention_time" in experiment:
        kwargs["intervention_time"] = int(experiment["intervention_time"])
    if "horizons" in experiment:
        kwargs["horizons"] = tuple(int(k) for k in experiment["horizons"])
    if "n_eval_histories" in experiment:
        kwargs["n_eval_histories"] = int(experiment["n_eval_histories"])
    if "n_samples" in experiment:
        kwargs["n_samples"] = int(experiment["n_samples"])
    if "seeds" in experiment:
        kwargs["train_seeds"] = tuple(int(s) for s in experiment["seeds"])
    if "tolerance" in experiment:
        kwargs["tolerance"] = float(experiment["tolerance"])
    if "query" in experiment:
        q = experiment["query"]
        _require_keys(
            q,
            {"intervention_variable", "intervention_value", "target", "threshold",
             "direction"},
            "query",
        )
        kwargs["query"] = QueryTemplate(
            q["intervention_variable"], float(q["intervention_value"]), q["target"],
            float(q["threshold"]), q.get("direction", "greater"),
        )
    return RunConfig(**kwargs)


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return run_config_from_dict(payload)


_DO_PATTERN = re.compile(
    r"^([A-Za-z_]\w*)=([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)@(\d+)$"
)


def parse_do(text: str) -> InterventionSpec:
    match = _DO_PATTERN.match(text)
    if match is None:
        raise argparse.ArgumentTypeError(
            f"malformed intervention {text!r}; expected VAR=VALUE@T, e.g. X=0@4"
        )
    return InterventionSpec(match.group(1), int(match.group(3)), float(match.group(2)))


def _seed_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}; expected e.g. 0,1,2")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalgen",
        description="Causal market simulation, counterfactual queries, and "
        "reproduction of the bundled threshold-query experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p_sim = sub.add_parser(
        "simulate", help="simulate SCM paths to CSV", formatter_class=fmt
    )
    p_sim.add_argument("--config", help="JSON run config (defaults are built in)")
    p_sim.add_argument("--out", default="data.csv", help="output CSV path")
    p_sim.add_argument("--n", type=int, help="number of sequences (config: data.n_sequences)")
    p_sim.add_argument("--length", type=int, help="steps per sequence (config: data.length)")
    p_sim.add_argument("--seed", type=int, help="master seed (config: seed)")

    p_train = sub.add_parser(
        "train", help="train the model, write checkpoint + log", formatter_class=fmt
    )
    p_train.add_argument("--config", help="JSON run config")
    p_train.add_argument("--data", help="training CSV (simulated inline when omitted)")
    p_train.add_argument("--checkpoint", default="model.ckpt", help="checkpoint output path")
    p_train.add_argument("--log", default="training_log.csv", help="per-epoch loss CSV")
    p_train.add_argument("--epochs", type=int, help="override model.epochs")
    p_train.add_argument("--beta", type=float, help="override model.beta")
    p_train.add_argument("--batch-size", type=int, help="override model.batch_size")
    p_train.add_argument("--learning-rate", type=float, help="override model.learning_rate")
    p_train.add_argument("--seed", type=int, help="master seed (config: seed)")

    p_ctf = sub.add_parser(
        "ctf", help="counterfactual threshold query on a checkpoint", formatter_class=fmt
    )
    p_ctf.add_argument("--checkpoint", required=True, help="trained checkpoint path")
    p_ctf.add_argument("--do", required=True, type=parse_do, metavar="VAR=VALUE@T",
                       help="intervention, e.g. X=0@4")
    p_ctf.add_argument("--target", required=True, help="queried variable")
    p_ctf.add_argument("--threshold", required=True, type=float, help="event threshold")
    p_ctf.add_argument("--horizon", type=int, default=5, help="steps after intervention")
    p_ctf.add_argument("--samples", type=int, default=4096, help="counterfactual samples")
    p_ctf.add_argument("--direction", choices=("greater", "less"), default="greater",
                       help="event direction")
    p_ctf.add_argument("--data", help="factual CSV (simulated from config when omitted)")
    p_ctf.add_argument("--sequence", type=int, default=0, help="factual row in --data")
    p_ctf.add_argument("--config", help="JSON run config (for inline factual simulation)")
    p_ctf.add_argument("--seed", type=int, help="sampling seed (config: seed)")
    p_ctf.add_argument("--out", help="optional CSV output for the estimates")

    p_rep = sub.add_parser(
        "reproduce", help="end-to-end experiment reproduction", formatter_class=fmt
    )
    p_rep.add_argument("--experiment", choices=("1", "2", "all"), default="all",
                       help="which bundled experiment to run")
    p_rep.add_argument("--config", help="JSON run config")
    p_rep.add_argument("--out-dir", help="artifact directory (config: output_dir)")
    p_rep.add_argument("--oracle-selftest", action="store_true",
                       help="replace the model with the Monte-Carlo oracle (harness check)")
    p_rep.add_argument("--mc-samples", type=int, default=200_000,
                       help="samples per query in --oracle-selftest")
    p_rep.add_argument("--seeds", type=_seed_list, metavar="S0,S1,...",
                       help="training seeds (config: experiment.seeds)")
    p_rep.add_argument("--histories", type=int, help="evaluation histories")
    p_rep.add_argument("--samples", type=int, help="counterfactual samples per estimate")
    p_rep.add_argument("--epochs", type=int, help="training epochs")
    p_rep.add_argument("--tolerance", type=float, help="per-horizon acceptance tolerance")
    p_rep.add_argument("--seed", type=int, help="master seed (config: seed)")
    return parser


def cmd_simulate(args) -> int:
    config = load_run_config(args.config)
    n = args.n if args.n is not None else config.n_sequences
    length = args.length if args.length is not None else config.length
    seed = args.seed if args.seed is not None else config.seed
    paths = scm.simulate(config.scm_spec, n, length, seed)
    scm.write_csv(paths, args.out)
    print(f"wrote {n} sequences x {length} steps to {args.out}")
    for j, v in enumerate(paths.variables):
        col = paths.values[:, :, j]
        print(f"  {v}: mean {col.mean():+.4f} var {col.var():.4f}")
    return EXIT_OK


def _model_config_with_overrides(config: RunConfig, args) -> ModelConfig:
    model = dict(config.model)
    for flag, key in (("epochs", "epochs"), ("beta", "beta"),
                      ("batch_size", "batch_size"), ("learning_rate", "learning_rate")):
        value = getattr(args, flag)
        if value is not None:
            model[key] = value
    seed = args.seed if args.seed is not None else config.seed
    return replace(config, model=model).model_config(seed)


def cmd_train(args) -> int:
    config = load_run_config(args.config)
    model_config = _model_config_with_overrides(config, args)
    if args.data is not None:
        data = scm.read_csv(args.data)
    else:
        data = scm.simulate(
            config.scm_spec, config.n_sequences, model_config.sequence_length,
            (args.seed if args.seed is not None else config.seed) + 100,
        )
    checkpoint, report = train(model_config, data)
    checkpoint.save(args.checkpoint)
    with open(args.log, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,total,reconstruction,kl\n")
        for row in report.epochs:
            fh.write(f"{row['epoch']},{row['total']:.12g},"
                     f"{row['reconstruction']:.12g},{row['kl']:.12g}\n")
    final = report.final
    print(f"checkpoint -> {args.checkpoint}")
    print(f"log -> {args.log}")
    print(f"final: total {final['total']:.4f} reconstruction "
          f"{final['reconstruction']:.4f} kl {final['kl']:.4f} "
          f"({report.wall_time_s:.1f}s)")
    return EXIT_OK


def cmd_ctf(args) -> int:
    config = load_run_config(args.config)
    checkpoint = Checkpoint.load(args.checkpoint)
    intervention: InterventionSpec = args.do
    seed = args.seed if args.seed is not None else config.seed
    window = intervention.time_index + 1

    if args.data is not None:
        full = scm.read_csv(args.data)
        if not 0 <= args.sequence < full.n_sequences:
            raise ConfigError(
                f"--sequence {args.sequence} outside 0..{full.n_sequences - 1}"
            )
        if full.length < window:
            raise ConfigError(
                f"factual data has {full.length} steps; intervention needs {window}"
            )
        factual = scm.PathBatch(
            full.variables, full.values[args.sequence : args.sequence + 1, :window]
        )
    else:
        factual = scm.simulate(config.scm_spec, 1, window, seed + 777)

    request = ctf.CtfRequest(
        checkpoint, factual, intervention, horizon=args.horizon,
        n_samples=args.samples, seed=seed,
    )
    paths = ctf.counterfactual_paths(request)
    rows = []
    for k in range(1, args.horizon + 1):
        estimate = ctf.threshold_probability(
            paths, args.target, intervention.time_index + k, args.threshold,
            args.direction,
        )
        rows.append((k, estimate))
        op = ">" if args.direction == "greater" else "<"
        print(f"k={k}: P({args.target} {op} {args.threshold:g}) = "
              f"{estimate.probability:.4f} +/- {estimate.std_error:.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("step,probability,std_error,n_samples\n")
            for k, estimate in rows:
                fh.write(f"{k},{estimate.probability:.12g},"
                         f"{estimate.std_error:.12g},{estimate.n_samples}\n")
        print(f"estimates -> {args.out}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    import os

    config = load_run_config(args.config)
    out_dir = args.out_dir if args.out_dir is not None else config.output_dir
    os.makedirs(out_dir, exist_ok=True)

    overrides: dict = {}
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.seeds is not None:
        overrides["seeds"] = args.seeds
    if args.histories is not None:
        overrides["n_eval_histories"] = args.histories
    if args.samples is not None:
        overrides["n_ctf_samples"] = args.samples
    if args.tolerance is not None:
        overrides["tolerance"] = args.tolerance

    exp_ids = {"1": ["exp1"], "2": ["exp2"], "all": ["exp1", "exp2"]}[args.experiment]
    all_within = True
    for exp_id in exp_ids:
        spec = config.experiment(exp_id)
        if overrides:
            spec = replace(spec, **overrides)
        if args.epochs is not None:
            spec = replace(spec, model_config=replace(spec.model_config, epochs=args.epochs))
        mode = "oracle-selftest" if args.oracle_selftest else "model"
        report = bench.run_experiment(spec, mode=mode)
        table = bench.format_table(report)
        print(table, end="")
        prefix = os.path.join(out_dir, f"{exp_id}{'_selftest' if args.oracle_selftest else ''}")
        bench.export_curves(report, f"{prefix}_report.csv", f"{prefix}_curves.svg")
        with open(f"{prefix}_table.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(table)
        print(f"artifacts -> {prefix}_report.csv, {prefix}_curves.svg, {prefix}_table.txt")
        all_within = all_within and report.within_tolerance()
    return EXIT_OK if all_within else EXIT_TOLERANCE


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "train": cmd_train,
        "ctf": cmd_ctf,
        "reproduce": cmd_reproduce,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
