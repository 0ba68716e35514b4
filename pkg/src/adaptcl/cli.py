"""Command-line entry point: benchmark runs, sweeps over temperature or
adaptation epochs, the standalone verification suite, and raw embedding
dumps for external plotting.

Config files are flat `section.key = value` text; every run directory gets a
manifest (written even on failure) plus deterministic CSV artifacts.
Exit codes: 0 success, 1 run/verification failure, 2 config error.
"""

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .adaptation import ADAPT_MODES, AdaptConfig
from .continual import CORE_STRATEGIES, run_acl
from .data import SyntheticSpec, generate_synthetic, pretrain_backbone
from .errors import AdaptclError, CheckpointError, ConfigError
from .metrics import (
    avg_incremental_accuracy,
    forgetting,
    last_accuracy,
    plasticity,
)
from .model import ModelConfig, embed, init_model, load_checkpoint, save_checkpoint
from .numerics import make_rng
from .verify import VerifySizes, run_all


def _fmt(x) -> str:
    return repr(float(x))


_DEFAULTS = {
    "data.input_dim": "32",
    "data.n_pretrain_classes": "10",
    "data.n_incremental_classes": "8",
    "data.n_tasks": "4",
    "data.train_per_class": "100",
    "data.test_per_class": "50",
    "data.sigma": "0.3",
    "data.domain_shift": "2.0",
    "data.seed": "0",
    "model.embed_dim": "16",
    "model.hidden": "64,64",
    "model.activation": "tanh",
    "model.adapter_rank": "8",
    "pretrain.epochs": "30",
    "pretrain.lr": "0.05",
    "adapt.temperature": "0.1",
    "adapt.epochs": "1",
    "adapt.lr": "0.05",
    "adapt.batch_size": "32",
    "adapt.momentum": "0.0",
    "adapt.modes": "acl",
    "adapt.first_task_only": "false",
    "core.strategy": "ncm",
    "core.epochs": "10",
    "core.lr": "0.1",
    "core.tune_adapter": "false",
    "metrics.plasticity": "best_ever",
    "run.out": "out",
}
_REQUIRED = ("run.seeds",)


def parse_config_text(text: str) -> dict:
    values = dict(_DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _DEFAULTS and key not in _REQUIRED:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = value
    for key in _REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    return values


@dataclass
class RunConfig:
    spec: SyntheticSpec
    model: ModelConfig
    adapter_rank: int
    pretrain_epochs: int
    pretrain_lr: float
    adapt_base: dict  # AdaptConfig kwargs without mode
    modes: tuple
    core_strategy: str
    core_epochs: int
    core_lr: float
    tune_adapter: bool
    seeds: tuple
    out: Path
    plasticity_variant: str = "best_ever"
    raw_text: str = ""

    @classmethod
    def from_values(cls, values: dict, raw_text: str = "") -> "RunConfig":
        def _int(k):
            return int(values[k])

        def _float(k):
            return float(values[k])

        def _bool(k):
            v = values[k].lower()
            if v not in ("true", "false"):
                raise ConfigError(f"{k} must be true or false")
            return v == "true"

        try:
            spec = SyntheticSpec(
                input_dim=_int("data.input_dim"),
                n_pretrain_classes=_int("data.n_pretrain_classes"),
                n_incremental_classes=_int("data.n_incremental_classes"),
                n_tasks=_int("data.n_tasks"),
                train_per_class=_int("data.train_per_class"),
                test_per_class=_int("data.test_per_class"),
                sigma=_float("data.sigma"),
                domain_shift=_float("data.domain_shift"),
                seed=_int("data.seed"),
            )
            hidden = tuple(int(h) for h in values["model.hidden"].split(",") if h)
            model = ModelConfig(
                input_dim=spec.input_dim,
                embed_dim=_int("model.embed_dim"),
                hidden=hidden,
                activation=values["model.activation"],
            )
            modes = tuple(m.strip() for m in values["adapt.modes"].split(",") if m.strip())
            for m in modes:
                if m not in ADAPT_MODES:
                    raise ConfigError(f"unknown adaptation mode {m!r}")
            if not modes:
                raise ConfigError("adapt.modes is empty")
            strategy = values["core.strategy"]
            if strategy not in CORE_STRATEGIES:
                raise ConfigError(f"unknown core strategy {strategy!r}")
            seeds = tuple(int(s) for s in values["run.seeds"].split(",") if s.strip())
            if not seeds:
                raise ConfigError("run.seeds is empty")
            plasticity_variant = values["metrics.plasticity"]
            if plasticity_variant not in ("best_ever", "immediate"):
                raise ConfigError(
                    f"metrics.plasticity must be best_ever or immediate, "
                    f"got {plasticity_variant!r}"
                )
            adapt_base = dict(
                temperature=_float("adapt.temperature"),
                epochs=_int("adapt.epochs"),
                lr=_float("adapt.lr"),
                batch_size=_int("adapt.batch_size"),
                momentum=_float("adapt.momentum"),
                first_task_only=_bool("adapt.first_task_only"),
            )
            AdaptConfig(mode=modes[0], **adapt_base)  # validate eagerly
            return cls(
                spec=spec,
                model=model,
                adapter_rank=_int("model.adapter_rank"),
                pretrain_epochs=_int("pretrain.epochs"),
                pretrain_lr=_float("pretrain.lr"),
                adapt_base=adapt_base,
                modes=modes,
                core_strategy=strategy,
                core_epochs=_int("core.epochs"),
                core_lr=_float("core.lr"),
                tune_adapter=_bool("core.tune_adapter"),
                seeds=seeds,
                out=Path(values["run.out"]),
                plasticity_variant=plasticity_variant,
                raw_text=raw_text,
            )
        except (ValueError, AdaptclError) as e:
            raise ConfigError(str(e)) from e


def load_config(path, seeds_override=None, out_override=None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(str(e)) from e
    values = parse_config_text(text)
    if seeds_override:
        values["run.seeds"] = seeds_override
    if out_override:
        values["run.out"] = str(out_override)
    return RunConfig.from_values(values, raw_text=text)


def _write_matrix_csv(path, matrix, K, status):
    with open(path, "w", newline="\n") as f:
        f.write("after_task," + ",".join(f"task_{j + 1}" for j in range(K)) + ",status\n")
        for b, row in enumerate(matrix.rows, start=1):
            cells = [_fmt(a) for a in row] + [""] * (K - len(row))
            f.write(f"{b}," + ",".join(cells) + f",{status}\n")


def run_single(config: RunConfig, seed: int, mode: str, pretrained=None):
    """One (seed, mode) cell: data, pretrain, continual run. Returns a dict
    of results plus the pretrained model for reuse across modes."""
    _, _, stream = generate_synthetic(config.spec)
    stream = stream.permuted(make_rng(seed, 1))
    if pretrained is None:
        backbone, adapter = init_model(config.model, make_rng(seed, 2), config.adapter_rank)
        pre_train, _, _ = generate_synthetic(config.spec)
        backbone = pretrain_backbone(
            backbone, pre_train, config.pretrain_epochs, config.pretrain_lr, make_rng(seed, 3)
        )
        pretrained = (backbone, adapter)
    backbone, adapter = pretrained
    adapt_cfg = AdaptConfig(mode=mode, **config.adapt_base)
    result = run_acl(
        stream,
        backbone,
        adapter,
        adapt_cfg,
        config.core_strategy,
        make_rng(seed, 4),
        core_epochs=config.core_epochs,
        core_lr=config.core_lr,
        tune_adapter=config.tune_adapter,
    )
    return result, pretrained


def cmd_run(config: RunConfig) -> int:
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool_version": __version__,
        "config": config.raw_text,
        "status": {},
        "files": [],
        "wall_clock": {},
    }
    metrics_rows = []
    bounds_rows = []
    exit_code = 0
    multi_mode = len(config.modes) > 1
    try:
        for seed in config.seeds:
            pretrained = None
            for mode in config.modes:
                t0 = time.perf_counter()
                cell = f"seed={seed},mode={mode}"
                try:
                    result, pretrained = run_single(config, seed, mode, pretrained)
                except AdaptclError as e:
                    manifest["status"][cell] = f"error: {e}"
                    exit_code = 1
                    continue
                K = config.spec.n_tasks
                name = (
                    f"accuracy_matrix_{mode}_{seed}.csv"
                    if multi_mode
                    else f"accuracy_matrix_{seed}.csv"
                )
                _write_matrix_csv(out / name, result.matrix, K, result.status)
                manifest["files"].append(name)
                manifest["status"][cell] = result.status
                if result.status != "ok":
                    manifest["status"][cell] = f"failed: {result.error}"
                    exit_code = 1
                else:
                    m = result.matrix
                    metrics_rows.append(
                        (
                            f"{mode}_{seed}",
                            seed,
                            mode,
                            last_accuracy(m),
                            avg_incremental_accuracy(m),
                            forgetting(m) if m.K >= 2 else "",
                            plasticity(
                                m, immediate=config.plasticity_variant == "immediate"
                            ),
                        )
                    )
                    ckpt = f"model_{mode}_{seed}.ckpt"
                    save_checkpoint(out / ckpt, result.state.backbone, result.state.adapter)
                    manifest["files"].append(ckpt)
                if result.adapt_reports:
                    report_name = f"adapt_report_{mode}_{seed}.csv"
                    with open(out / report_name, "w", newline="\n") as f:
                        f.write(
                            "task,epoch,mean_loss,bound_lhs,bound_rhs,"
                            "markov_lhs,markov_rhs\n"
                        )
                        for task_k, report in result.adapt_reports:
                            for r in report.rows():
                                f.write(
                                    f"{task_k},{r[0]},"
                                    + ",".join(_fmt(v) for v in r[1:])
                                    + "\n"
                                )
                    manifest["files"].append(report_name)
                for task_k, report in result.adapt_reports:
                    for row in report.rows():
                        epoch, mean_loss, b_lhs, b_rhs, m_lhs, m_rhs = row
                        bounds_rows.append(
                            (
                                f"stability/mode={mode}/seed={seed}/task={task_k}/epoch={epoch}",
                                b_lhs,
                                b_rhs,
                            )
                        )
                        bounds_rows.append(
                            (
                                f"markov/mode={mode}/seed={seed}/task={task_k}/epoch={epoch}",
                                m_lhs,
                                m_rhs,
                            )
                        )
                manifest["wall_clock"][cell] = round(time.perf_counter() - t0, 3)

        with open(out / "metrics.csv", "w", newline="\n") as f:
            f.write("run_id,seed,mode,LA,AIA,forgetting,plasticity\n")
            for run_id, seed, mode, la, aia, fg, pl in metrics_rows:
                fg_s = _fmt(fg) if fg != "" else ""
                f.write(
                    f"{run_id},{seed},{mode},{_fmt(la)},{_fmt(aia)},{fg_s},{_fmt(pl)}\n"
                )
        manifest["files"].append("metrics.csv")

        with open(out / "bounds.csv", "w", newline="\n") as f:
            f.write("context,lhs,rhs,slack,pass\n")
            for context, lhs, rhs in bounds_rows:
                tol = 1e-9 if context.startswith("stability") else 1e-12
                ok = rhs - lhs >= -tol
                f.write(f"{context},{_fmt(lhs)},{_fmt(rhs)},{_fmt(rhs - lhs)},{ok}\n")
                if not ok:
                    exit_code = 1
        manifest["files"].append("bounds.csv")
    finally:
        with open(out / "manifest.json", "w", newline="\n") as f:
            json.dump(manifest, f, indent=2)
            f.write("\n")
    return exit_code


def cmd_sweep(config: RunConfig, axis: str, values) -> int:
    if axis not in ("temperature", "epochs"):
        raise ConfigError(f"unknown sweep axis {axis!r}")
    if not values:
        raise ConfigError("sweep needs a non-empty value list")
    root = config.out
    root.mkdir(parents=True, exist_ok=True)
    overall = 0
    agg = []
    for value in values:
        cell_values = parse_config_text(config.raw_text)
        cell_values[f"adapt.{axis}"] = str(value)
        cell_out = root / f"sweep_{axis}_{value}"
        cell_values["run.out"] = str(cell_out)
        cell_values["run.seeds"] = ",".join(str(s) for s in config.seeds)
        try:
            cell_cfg = RunConfig.from_values(cell_values, raw_text=config.raw_text)
            code = cmd_run(cell_cfg)
        except AdaptclError as e:
            print(f"sweep cell {axis}={value} failed: {e}", file=sys.stderr)
            overall = 1
            continue
        overall = max(overall, code)
        metrics_path = cell_out / "metrics.csv"
        if metrics_path.exists():
            for line in metrics_path.read_text().splitlines()[1:]:
                run_id, seed, mode, la, aia, *_ = line.split(",")
                agg.append((axis, value, seed, mode, la, aia))
    with open(root / "sweep.csv", "w", newline="\n") as f:
        f.write("axis,value,seed,mode,LA,AIA\n")
        for row in agg:
            f.write(",".join(str(c) for c in row) + "\n")
    return overall


def cmd_verify(seed: int, sizes: VerifySizes) -> int:
    results = run_all(seed, sizes)
    width = max(len(r.name) for r in results)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        if r.vacuous:
            status = "PASS (vacuous)"
            print(f"warning: {r.name} ran zero cases", file=sys.stderr)
        print(f"{r.name:<{width}}  {status}  {r.detail}")
        failed |= not r.passed
    return 1 if failed else 0


def cmd_dump_embeddings(config: RunConfig, checkpoint, out_path, splits=("train", "test")) -> int:
    backbone, adapter = load_checkpoint(checkpoint)
    _, _, stream = generate_synthetic(config.spec)
    d = backbone.weights[-1].shape[0]
    with open(out_path, "w", newline="\n") as f:
        f.write("task_id,class_id,split," + ",".join(f"e_{i + 1}" for i in range(d)) + "\n")
        for k, task in enumerate(stream.tasks, start=1):
            for split in splits:
                for x, y in getattr(task, split):
                    e = embed(backbone, adapter, x)
                    f.write(f"{k},{y},{split}," + ",".join(_fmt(v) for v in e) + "\n")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="adaptcl",
        description="Continual-learning benchmark with a pre-task adaptation phase",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the benchmark for each seed")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seeds", help="comma-separated seed list override")
    p_run.add_argument("--out", help="output directory override")

    p_sweep = sub.add_parser("sweep", help="sweep temperature or adaptation epochs")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True, choices=("temperature", "epochs"))
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--seeds")
    p_sweep.add_argument("--out")

    p_verify = sub.add_parser("verify", help="run the verification campaigns")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--sizes", help="comma list of name=count overrides")

    p_dump = sub.add_parser("dump-embeddings", help="export embeddings as CSV")
    p_dump.add_argument("--config", required=True)
    p_dump.add_argument("--checkpoint", required=True)
    p_dump.add_argument("--out", default="embeddings.csv")
    p_dump.add_argument("--splits", default="train,test")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config, args.seeds, args.out)
            return cmd_run(config)
        if args.command == "sweep":
            config = load_config(args.config, args.seeds, args.out)
            values = [v for v in args.values.split(",") if v]
            return cmd_sweep(config, args.axis, values)
        if args.command == "verify":
            sizes = VerifySizes()
            if args.sizes:
                for item in args.sizes.split(","):
                    name, count = item.split("=")
                    if not hasattr(sizes, name):
                        raise ConfigError(f"unknown size {name!r}")
                    setattr(sizes, name, int(count))
            return cmd_verify(args.seed, sizes)
        if args.command == "dump-embeddings":
            config = load_config(args.config)
            splits = tuple(s for s in args.splits.split(",") if s)
            return cmd_dump_embeddings(config, args.checkpoint, args.out, splits)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 1
    except AdaptclError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
