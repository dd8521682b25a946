# cli.py
"""
Optimal-transport labeling command-line interface
Solve transport problems, produce pseudo-labels, score image corpora,
run toy training, OT ablations and evaluations

Exit codes: 0 success, 1 input error, 2 numerical warning (non-convergence)
"""

import argparse
import hashlib
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .ot_assign import __version__
from .ot_assign.errors import ExitCode, OracleSizeError, OTLabelError
from .ot_assign.formats import load_cost_file, write_label_png, write_plan, write_pseudo_labels
from .ot_assign.oracle import lp_oracle_solve
from .ot_assign.pixel_loss import DEFAULT_GAMMA, confidence_gate, make_pseudo_labels
from .ot_assign.quality import format_summary, list_images, score_corpus, write_metric_csv
from .ot_assign.transport import (
    DEFAULT_BETA,
    DEFAULT_MAX_ITERS,
    DEFAULT_TOLERANCE,
    SinkhornSettings,
    build_cost_matrix,
    flatten_predictions,
    sinkhorn_solve,
    transport_cost,
    validate_prob_tensor,
)
from .toy.harness import (
    ABLATION_SEEDS,
    build_data,
    dump_predictions,
    evaluate_dumps,
    run_ablation,
    run_training,
    write_ablation_csv,
    write_iou_csv,
    write_step_log,
)
from .toy.settings import load_config

logger = logging.getLogger("otlabel")

MANIFEST_NAME = "manifest.json"
PROBS_SIMPLEX_ATOL = 1e-4


class RunManifest(BaseModel):
    """One per output directory. Only `timing` changes between identical reruns."""

    tool: str = "otlabel"
    version: str = __version__
    command: str
    config: Dict[str, Any] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    results: Dict[str, Any] = Field(default_factory=dict)
    timing: Dict[str, Any] = Field(default_factory=dict)

    def write(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / MANIFEST_NAME).write_text(self.model_dump_json(indent=2) + "\n")


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _started() -> Dict[str, Any]:
    return {"started_at": datetime.now(timezone.utc).isoformat()}


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to the input-error exit code."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(ExitCode.INPUT_ERROR.value, f"{self.prog}: error: {message}\n")


# Commands

def cmd_solve_ot(args: argparse.Namespace) -> ExitCode:
    cost_path = Path(args.cost)
    out_path = Path(args.out)
    c = load_cost_file(cost_path)
    settings = SinkhornSettings(beta=args.beta, tolerance=args.tol, max_iters=args.max_iters)

    timing = _started()
    start = time.perf_counter()
    plan = sinkhorn_solve(c, settings=settings)
    timing["sinkhorn_seconds"] = time.perf_counter() - start
    timing["sinkhorn_seconds_per_iteration"] = timing["sinkhorn_seconds"] / max(plan.iterations_used, 1)

    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_plan(out_path, plan)
    objective = transport_cost(plan, c)
    results: Dict[str, Any] = {
        "status": plan.status.value,
        "iterations_used": plan.iterations_used,
        "final_violation": plan.final_violation,
        "sinkhorn_objective": objective,
    }
    print(f"sinkhorn objective: {objective:.12g} ({plan.status.value}, {plan.iterations_used} iterations)")

    if args.oracle:
        start = time.perf_counter()
        try:
            exact = lp_oracle_solve(c)
        except OracleSizeError as e:
            logger.warning(f"⚠️ {e}, skipping the oracle")
            results["oracle"] = "skipped (size)"
        else:
            timing["oracle_seconds"] = time.perf_counter() - start
            lp_objective = transport_cost(exact, c)
            results["oracle"] = "solved"
            results["lp_objective"] = lp_objective
            results["entropic_gap"] = objective - lp_objective
            print(f"lp objective: {lp_objective:.12g}")
            print(f"entropic gap: {objective - lp_objective:.12g}")

    RunManifest(
        command="solve-ot",
        config=settings.model_dump(),
        inputs={str(cost_path): file_hash(cost_path)},
        results=results,
        timing=timing,
    ).write(out_path.parent)
    return ExitCode.OK if plan.converged else ExitCode.NUMERICAL_WARNING


def cmd_assign(args: argparse.Namespace) -> ExitCode:
    probs_path = Path(args.probs)
    out_dir = Path(args.out)
    p = validate_prob_tensor(np.load(probs_path, allow_pickle=False), atol=PROBS_SIMPLEX_ATOL)
    p = np.clip(p, 0.0, None)
    p = p / p.sum(axis=1, keepdims=True)
    matrix, layout = flatten_predictions(p)
    settings = SinkhornSettings()

    timing = _started()
    start = time.perf_counter()
    plan = sinkhorn_solve(build_cost_matrix(matrix, settings), settings=settings)
    timing["sinkhorn_seconds"] = time.perf_counter() - start

    gate = confidence_gate(matrix, args.gamma)
    pl = make_pseudo_labels(plan, gate, layout)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pseudo_labels(out_dir / "pseudo_labels.pslg", pl)
    for index, labels in enumerate(pl.argmax_grid(ignore_gated=True)):
        write_label_png(out_dir / f"labels_{index:04d}.png", labels)

    print(f"gate fraction: {gate.fraction:.6f}")
    RunManifest(
        command="assign",
        config={"gamma": args.gamma, **settings.model_dump()},
        inputs={str(probs_path): file_hash(probs_path)},
        results={
            "gate_fraction": gate.fraction,
            "status": plan.status.value,
            "iterations_used": plan.iterations_used,
            "final_violation": plan.final_violation,
        },
        timing=timing,
    ).write(out_dir)
    return ExitCode.OK if plan.converged else ExitCode.NUMERICAL_WARNING


def cmd_metrics(args: argparse.Namespace) -> ExitCode:
    out_path = Path(args.out)
    paths = list_images(args.dir)
    timing = _started()
    start = time.perf_counter()
    report = score_corpus(paths)
    timing["scoring_seconds"] = time.perf_counter() - start

    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_metric_csv(report, out_path)
    summary = format_summary(report)
    (out_path.parent / f"{out_path.stem}_summary.txt").write_text(summary + "\n")
    print(summary)
    RunManifest(
        command="metrics",
        config={"metric_version": report.metric_version, "codec_version": report.codec_version},
        inputs={str(p): file_hash(p) for p in paths},
        results={"images": len(report.images), "glcm_mean": report.glcm_mean, "ratio_mean": report.ratio_mean},
        timing=timing,
    ).write(out_path.parent)
    return ExitCode.OK


def _load_run_config(args: argparse.Namespace):
    overrides = {"seed": args.seed} if args.seed is not None else {}
    return load_config(args.config, **overrides)


def _config_inputs(args: argparse.Namespace) -> Dict[str, str]:
    return {str(args.config): file_hash(Path(args.config))} if args.config else {}


def cmd_toy_train(args: argparse.Namespace) -> ExitCode:
    config = _load_run_config(args)
    out_dir = Path(args.out)
    timing = _started()

    start = time.perf_counter()
    data = build_data(config.seed)
    timing["data_seconds"] = time.perf_counter() - start
    start = time.perf_counter()
    result = run_training(config, data)
    timing["train_seconds"] = time.perf_counter() - start
    timing["mean_step_seconds"] = result.mean_step_seconds
    timing["mean_ot_seconds"] = result.mean_ot_seconds
    timing["ot_seconds_per_iteration"] = result.ot_seconds / max(result.ot_iterations, 1)
    timing["ot_share_of_step"] = result.ot_seconds / max(result.step_seconds, 1e-12)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_step_log(result.records, out_dir / "steps.csv")
    write_iou_csv(result.per_class_iou, out_dir / "iou.csv")
    dump_predictions(result.model, data.evaluation, out_dir)
    print(f"mIoU: {result.miou:.6f}")

    RunManifest(
        command="toy-train",
        config=config.model_dump(),
        inputs=_config_inputs(args),
        results={
            "miou": result.miou,
            "per_class_iou": result.per_class_iou,
            "ot_solves": result.ot_solves,
            "nonconverged_solves": result.nonconverged_solves,
        },
        timing=timing,
    ).write(out_dir)
    return ExitCode.NUMERICAL_WARNING if result.nonconverged_solves else ExitCode.OK


def cmd_ablate(args: argparse.Namespace) -> ExitCode:
    config = _load_run_config(args)
    out_dir = Path(args.out)
    timing = _started()
    start = time.perf_counter()
    report = run_ablation(config, seeds=[config.seed + i for i in range(args.seeds)])
    timing["ablation_seconds"] = time.perf_counter() - start

    out_dir.mkdir(parents=True, exist_ok=True)
    write_ablation_csv(report, out_dir / "ablation.csv")
    for row in report.rows:
        print(f"seed {row.seed}: OT {row.miou_ot:.6f}  argmax {row.miou_baseline:.6f}  delta {row.delta:+.6f}")
    print(f"mean paired delta: {report.mean_delta:+.6f}")
    print(f"rare-class wins: {report.rare_wins}/{len(report.rows)}")

    RunManifest(
        command="ablate",
        config=config.model_dump(),
        inputs=_config_inputs(args),
        results={"mean_delta": report.mean_delta, "rare_wins": report.rare_wins},
        timing=timing,
    ).write(out_dir)
    return ExitCode.OK


def cmd_eval(args: argparse.Namespace) -> ExitCode:
    timing = _started()
    per_class, miou = evaluate_dumps(args.pred_dir, args.label_dir, args.num_classes)
    print(f"mIoU: {miou:.6f}")
    for cls, iou in enumerate(per_class):
        print(f"class {cls}: {iou:.6f}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_iou_csv(per_class, out_dir / "iou.csv")
        RunManifest(
            command="eval",
            config={"num_classes": args.num_classes},
            inputs={
                str(p): file_hash(p)
                for directory in (args.pred_dir, args.label_dir)
                for p in sorted(Path(directory).glob("*.png"))
            },
            results={"miou": miou},
            timing=timing,
        ).write(out_dir)
    return ExitCode.OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otlabel", description="Optimal-transport pseudo-label assignment toolkit")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve-ot", help="solve an entropic transport problem")
    solve.add_argument("--cost", required=True, help="OTCM or CSV cost matrix")
    solve.add_argument("--beta", type=float, default=DEFAULT_BETA)
    solve.add_argument("--tol", type=float, default=DEFAULT_TOLERANCE)
    solve.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
    solve.add_argument("--out", required=True, help="OTPL plan file")
    solve.add_argument("--oracle", action="store_true", help="also solve the exact LP")
    solve.set_defaults(handler=cmd_solve_ot)

    assign = commands.add_parser("assign", help="pseudo-labels from a (b, k, H, W) .npy tensor")
    assign.add_argument("--probs", required=True)
    assign.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    assign.add_argument("--out", required=True)
    assign.set_defaults(handler=cmd_assign)

    metrics = commands.add_parser("metrics", help="GLCM score and compression ratio of an image folder")
    metrics.add_argument("--dir", required=True)
    metrics.add_argument("--out", required=True, help="CSV file")
    metrics.set_defaults(handler=cmd_metrics)

    for name, handler, help_text in (
        ("toy-train", cmd_toy_train, "train on the shapes world"),
        ("ablate", cmd_ablate, "paired OT-on / OT-off runs"),
    ):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", help="key=value run config")
        sub.add_argument("--seed", type=int)
        sub.add_argument("--out", required=True)
        sub.set_defaults(handler=handler)
        if name == "ablate":
            sub.add_argument("--seeds", type=int, default=ABLATION_SEEDS, help="number of paired seeds")

    evaluate = commands.add_parser("eval", help="mIoU of prediction PNGs against label PNGs")
    evaluate.add_argument("--pred-dir", required=True)
    evaluate.add_argument("--label-dir", required=True)
    evaluate.add_argument("--num-classes", type=int, required=True)
    evaluate.add_argument("--out")
    evaluate.set_defaults(handler=cmd_eval)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return int(args.handler(args))
    except (OTLabelError, ValidationError, OSError, ValueError) as e:
        logger.error(f"❌ {e}")
        return ExitCode.INPUT_ERROR.value


if __name__ == "__main__":
    sys.exit(main())
