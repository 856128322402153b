"""命令行界面

    sphereflow train   --pairs PAIRS --out DIR [--config run.toml]
    sphereflow score   --checkpoint CK --embeddings FILE --out scores.jsonl
    sphereflow eval    --scores scores.jsonl --labels FILE --mode selective|ood --out DIR
    sphereflow synth   --spec spec.toml --out FILE [--pairs]
    sphereflow curate  --scores scores.jsonl (--top-k K | --fraction F) --out ids.txt
    sphereflow replay  --manifest OUT.manifest.json [--out-dir DIR]

进度写 stderr, 数据只写文件。失败时 stderr 输出一行 `error: <类别>: <信息>`,
退出码 0 成功 / 2 输入错误 / 3 数值错误 / 4 内部错误。
"""

from __future__ import annotations

import argparse
import json
import sys
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, NoReturn, Optional, Sequence

import numpy as np
from loguru import logger

from . import __version__
from .config import config
from .data.store import load_labeled, load_pairs, load_points, save_labeled, save_pairs
from .data.synthetic import generate_synthetic, pairs_from_synthetic
from .errors import (
    ChecksumMismatchError, FileFormatError, InputNotFoundError, InvalidInputError, ShapeMismatchError,
    SphereFlowError,
)
from .evaluation.metrics import curation_count, curation_rank, evaluate_ood, evaluate_selective
from .evaluation.reports import write_curve_csv, write_metric_records, write_pr_csv, write_roc_csv
from .main import setup_logging
from .models.evaluation import EvalTable
from .models.flow import FlowConfig, IntegratorConfig, parse_model
from .models.data import SyntheticSpec
from .models.geometry import Modality
from .models.run import RunManifest
from .models.score import ScoreLine
from .network.checkpoint import load_checkpoint
from .services.likelihood_service import LikelihoodService, score_summary
from .services.trainer_service import TrainerService, sidecar_path
from .utils.io import atomic_write_text, file_checksum, read_bytes, read_records, write_json, write_records

RUN_CONFIG_TABLES = ("flow", "integrator")


class _Parser(argparse.ArgumentParser):
    """参数错误也走统一的单行错误输出"""

    def error(self, message: str) -> NoReturn:
        raise InvalidInputError(message)


# ========== 配置 ==========

def _read_table_file(path: Path) -> dict[str, Any]:
    """TOML (或 .json) 文件"""
    text = read_bytes(path).decode("utf-8")
    try:
        if path.suffix == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise FileFormatError(f"{path} 解析失败: {e}") from e
    if not isinstance(data, dict):
        raise FileFormatError(f"{path} 顶层必须是键值表")
    return data


def load_run_config(path: Optional[Path]) -> dict[str, dict[str, Any]]:
    if path is None:
        return {}
    data = _read_table_file(path)
    unknown = sorted(set(data) - set(RUN_CONFIG_TABLES))
    if unknown:
        raise InvalidInputError(f"{path} 含未知配置表: {unknown}, 只允许 {list(RUN_CONFIG_TABLES)}")
    return data


def _merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def resolve_flow_config(args: argparse.Namespace, run_cfg: dict[str, Any], d: int) -> FlowConfig:
    data = _merge(run_cfg.get("flow", {}), {
        "total_steps": args.steps,
        "seed": args.seed,
        "geometry_mode": args.geometry,
        "max_pairs": args.max_pairs,
        "batch_size": args.batch_size,
        "hidden": args.hidden,
        "depth": args.depth,
        "freqs": args.freqs,
        "learning_rate": args.lr,
    })
    data.setdefault("d", d)
    return parse_model(FlowConfig, data)


def resolve_integrator_config(args: argparse.Namespace, run_cfg: dict[str, Any]) -> IntegratorConfig:
    data = _merge(run_cfg.get("integrator", {}), {
        "steps": args.steps,
        "probes_per_step": args.probes,
        "probe_distribution": args.probe_dist,
        "divergence_mode": args.divergence,
        "seed": args.seed,
    })
    return parse_model(IntegratorConfig, data)


def _write_manifest(args: argparse.Namespace, output: Path, manifest: RunManifest, started: float) -> None:
    manifest.argv = list(getattr(args, "argv", []))
    for name, path in manifest.outputs.items():
        if Path(path).exists():
            manifest.checksums[name] = file_checksum(path)
    manifest.finish(time.perf_counter() - started)
    write_json(output.with_name(output.name + ".manifest.json"), manifest.to_dict())


def _threads(args: argparse.Namespace) -> int:
    return args.threads or config.runtime.threads


# ========== 子命令 ==========

def cmd_train(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    run_cfg = load_run_config(args.config)
    pairs = load_pairs(args.pairs)
    cfg = resolve_flow_config(args, run_cfg, pairs.d)
    if cfg.d != pairs.d:
        raise ShapeMismatchError(f"配置 d={cfg.d} 与数据维度 {pairs.d} 不一致")

    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / "checkpoint.sfck"
    metrics = out_dir / "metrics.jsonl"

    trainer = TrainerService(cfg, checkpoint_path=checkpoint, metrics_path=metrics)
    trainer.set_callbacks(
        on_checkpoint=lambda step, path: logger.info(f"第 {step} 步检查点: {path}"),
    )
    trainer.fit(pairs)

    manifest = RunManifest(
        command="train",
        config={"flow": cfg.model_dump(mode="json")},
        inputs={"pairs": str(args.pairs), **({"config": str(args.config)} if args.config else {})},
        outputs={
            "checkpoint": str(checkpoint),
            "metrics": str(metrics),
            "sidecar": str(sidecar_path(checkpoint)),
        },
        seed=cfg.seed,
        extras={"n_pairs": pairs.n_pairs},
    )
    _write_manifest(args, checkpoint, manifest, started)
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    run_cfg = load_run_config(args.config)
    icfg = resolve_integrator_config(args, run_cfg)
    modality = Modality.parse(args.modality)
    params = load_checkpoint(args.checkpoint)
    points = load_points(args.embeddings, modality)
    if points.shape[1] != params.d:
        raise ShapeMismatchError(f"检查点维度 {params.d} 与嵌入维度 {points.shape[1]} 不一致")

    service = LikelihoodService(params, icfg, threads=_threads(args))
    service.initialize()
    records = service.score(points, np.full(points.shape[0], int(modality)))
    write_records(args.out, [r.to_line_record() for r in records])

    flops = service.flops_per_point()
    manifest = RunManifest(
        command="score",
        config={"integrator": icfg.model_dump(mode="json"), "modality": modality.label},
        inputs={"checkpoint": str(args.checkpoint), "embeddings": str(args.embeddings)},
        outputs={"scores": str(args.out)},
        seed=icfg.seed,
        extras={
            "flops_per_point": flops,
            "flops_total": flops * len(records),
            "geometry_mode": params.geometry_mode.value,
            **score_summary(records),
        },
    )
    _write_manifest(args, args.out, manifest, started)
    return 0


def load_score_lines(path: Path) -> list[ScoreLine]:
    lines = [ScoreLine.from_record(r) for r in read_records(path)]
    indices = sorted(line.index for line in lines)
    if indices != list(range(len(lines))):
        raise FileFormatError(f"{path} 的 index 不是 0..n-1 的排列")
    return sorted(lines, key=lambda line: line.index)


def cmd_eval(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    lines = load_score_lines(args.scores)
    labeled = load_labeled(args.labels)
    if len(lines) != labeled.n:
        raise ShapeMismatchError(f"评分条数 {len(lines)} 与标签条数 {labeled.n} 不一致")
    uncertainty = np.array([line.uncertainty for line in lines])

    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"
    outputs = {"metrics": str(metrics_path)}
    extras: dict[str, Any] = {"mode": args.mode}

    if args.mode == "selective":
        if labeled.correctness is None:
            raise InvalidInputError(f"{args.labels} 不含 correctness 列, 无法做选择性分类评估")
        report = evaluate_selective(EvalTable(uncertainty=uncertainty, correctness=labeled.correctness))
        write_metric_records(metrics_path, report)
        write_curve_csv(out_dir / "curve.csv", report.curve)
        outputs["curve"] = str(out_dir / "curve.csv")
        extras.update(acc_at_90=report.acc_at_90, spearman_s=report.spearman.value)
        logger.info(
            f"选择性分类: Acc@90%={report.acc_at_90:.4f}, S={report.spearman.value:.4f}, "
            f"基准准确率 {report.base_accuracy:.4f}"
        )
    else:
        ood = evaluate_ood(EvalTable(uncertainty=uncertainty, ood_flag=labeled.labels != 0))
        write_metric_records(metrics_path, ood)
        write_roc_csv(out_dir / "roc.csv", ood.roc_pr)
        write_pr_csv(out_dir / "pr.csv", ood.roc_pr)
        outputs.update(roc=str(out_dir / "roc.csv"), pr=str(out_dir / "pr.csv"))
        extras.update(auroc=ood.roc_pr.auroc, aupr=ood.roc_pr.aupr)
        logger.info(f"OOD 检测: AUROC={ood.roc_pr.auroc:.4f}, AUPR={ood.roc_pr.aupr:.4f}")

    manifest = RunManifest(
        command="eval",
        inputs={"scores": str(args.scores), "labels": str(args.labels)},
        outputs=outputs,
        extras=extras,
    )
    _write_manifest(args, metrics_path, manifest, started)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    spec = parse_model(SyntheticSpec, _read_table_file(args.spec))
    if args.pairs:
        text_spec = spec.model_copy(update={"seed": spec.seed + 1})
        save_pairs(pairs_from_synthetic(spec, text_spec), args.out)
    else:
        save_labeled(generate_synthetic(spec), args.out)

    manifest = RunManifest(
        command="synth",
        config={"spec": spec.model_dump(mode="json"), "pairs": bool(args.pairs)},
        inputs={"spec": str(args.spec)},
        outputs={"embeddings": str(args.out)},
        seed=spec.seed,
    )
    _write_manifest(args, args.out, manifest, started)
    return 0


def cmd_curate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    lines = load_score_lines(args.scores)
    k = args.top_k if args.top_k is not None else curation_count(args.fraction, len(lines))
    if k > len(lines):
        raise InvalidInputError(f"top_k={k} 超过样本数 {len(lines)}")
    ids = curation_rank(lines, k)
    atomic_write_text(args.out, "".join(f"{i}\n" for i in ids))
    logger.info(f"已输出不确定性最高的 {len(ids)} 个样本: {args.out}")

    manifest = RunManifest(
        command="curate",
        config={"top_k": k, "fraction": args.fraction},
        inputs={"scores": str(args.scores)},
        outputs={"ids": str(args.out)},
    )
    _write_manifest(args, args.out, manifest, started)
    return 0


def _redirect_outputs(
    argv: list[str], outputs: dict[str, Path], out_dir: Path,
) -> tuple[list[str], dict[str, Path]]:
    """把 --out 换到 out_dir 下的同名路径, 记录的输出路径随之平移"""
    argv = list(argv)
    for i, token in enumerate(argv):
        if token == "--out" and i + 1 < len(argv):
            old = Path(argv[i + 1])
            new = out_dir / old.name
            argv[i + 1] = str(new)
            break
        if token.startswith("--out="):
            old = Path(token.split("=", 1)[1])
            new = out_dir / old.name
            argv[i] = f"--out={new}"
            break
    else:
        raise InvalidInputError("清单的命令行参数中没有 --out, 无法改写输出位置")

    moved = {}
    for name, path in outputs.items():
        if path == old:
            moved[name] = new
        elif path.is_relative_to(old):
            moved[name] = new / path.relative_to(old)
        else:
            moved[name] = path
    return argv, moved


def cmd_replay(args: argparse.Namespace) -> int:
    """按清单记录的参数重跑, 并比对输出校验和"""
    manifest = _read_table_file(args.manifest)
    argv = manifest.get("argv")
    if not isinstance(argv, list) or not argv:
        raise InvalidInputError(f"{args.manifest} 没有记录命令行参数")
    argv = [str(a) for a in argv]
    outputs = {name: Path(p) for name, p in manifest.get("outputs", {}).items()}
    if args.out_dir is not None:
        argv, outputs = _redirect_outputs(argv, outputs, args.out_dir)

    inner = build_parser().parse_args(argv)
    if inner.handler is cmd_replay:
        raise InvalidInputError("不能重放 replay 命令")
    inner.argv = argv
    logger.info(f"重放 {manifest.get('command')}: {' '.join(argv)}")
    inner.handler(inner)

    recorded: dict[str, str] = manifest.get("checksums", {})
    mismatched = sorted(
        name for name, digest in recorded.items()
        if name in outputs and (not outputs[name].exists() or file_checksum(outputs[name]) != digest)
    )
    if mismatched:
        raise ChecksumMismatchError(f"重放输出与清单不一致: {mismatched}")
    logger.info(f"{len(recorded)} 个输出的校验和与清单一致")
    return 0


# ========== 参数解析 ==========

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sphereflow", description="超球面嵌入的流匹配密度估计与不确定性评分")
    parser.add_argument("--version", action="version", version=f"sphereflow {__version__}")
    parser.add_argument("--log-level", default=None, help="日志级别 (默认取 LOG_LEVEL)")
    parser.add_argument("--log-file", type=Path, default=None, help="额外写入的日志文件")
    parser.add_argument("--threads", type=int, default=None, help="并行度 (默认取 SPHEREFLOW_THREADS 或 CPU 核数)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="训练向量场")
    p.add_argument("--pairs", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="输出目录")
    p.add_argument("--config", type=Path, default=None, help="TOML 运行配置 ([flow] 表)")
    p.add_argument("--steps", type=int, default=None, help="total_steps")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--geometry", default=None, help="riemannian | euclidean_uniform_base | euclidean_gaussian_base")
    p.add_argument("--max-pairs", type=int, default=None, help="数据规模消融")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--freqs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("score", help="计算认知不确定性")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--embeddings", type=Path, required=True, help="SFLE 或 SFL1 文件")
    p.add_argument("--out", type=Path, required=True, help="评分文件 (行式 JSON)")
    p.add_argument("--modality", default="image", help="image | text | 0 | 1")
    p.add_argument("--config", type=Path, default=None, help="TOML 运行配置 ([integrator] 表)")
    p.add_argument("--steps", type=int, default=None, help="积分步数 K (默认 5)")
    p.add_argument("--probes", type=int, default=None, help="每步探针数 M (默认 1)")
    p.add_argument("--probe-dist", default=None, help="gaussian | rademacher")
    p.add_argument("--divergence", default=None, help="hutchinson | exact")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("eval", help="选择性分类或 OOD 评估")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True, help="SFLE 文件")
    p.add_argument("--mode", choices=["selective", "ood"], required=True)
    p.add_argument("--out", type=Path, required=True, help="输出目录")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("synth", help="生成合成球面数据")
    p.add_argument("--spec", type=Path, required=True, help="TOML/JSON 数据描述")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--pairs", action="store_true", help="输出 SFL1 样本对 (文本侧使用派生种子)")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("curate", help="按不确定性筛选样本")
    p.add_argument("--scores", type=Path, required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--top-k", type=int, default=None)
    group.add_argument("--fraction", type=float, default=None)
    p.add_argument("--out", type=Path, required=True, help="每行一个样本下标")
    p.set_defaults(handler=cmd_curate)

    p = sub.add_parser("replay", help="按运行清单重跑并校验输出")
    p.add_argument("--manifest", type=Path, required=True, help="<输出>.manifest.json")
    p.add_argument("--out-dir", type=Path, default=None, help="输出改写到此目录 (默认覆盖原输出)")
    p.set_defaults(handler=cmd_replay)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数, 返回进程退出码"""
    try:
        argv = list(sys.argv[1:] if argv is None else argv)
        args = build_parser().parse_args(argv)
        args.argv = argv
        setup_logging(args.log_level, args.log_file)
        for name in ("pairs", "checkpoint", "embeddings", "scores", "labels", "spec", "config", "manifest"):
            path = getattr(args, name, None)
            if isinstance(path, Path) and not path.exists():
                raise InputNotFoundError(f"文件不存在: {path}")
        return int(args.handler(args))
    except SphereFlowError as e:
        logger.opt(exception=e).debug(f"{e.category} (退出码 {e.exit_code})")
        print(e.one_line(), file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("error: internal: interrupted", file=sys.stderr)
        return 4
    except Exception as e:
        logger.exception("未分类的内部错误")
        text = " ".join(str(e).split())
        print(f"error: internal: {type(e).__name__}: {text}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
