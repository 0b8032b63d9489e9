"""
PJFNN 命令行入口
子命令：synth / embed / train / eval / score / keywords / export / recommend

参数优先级：命令行 > --config 配置文件 > 内置默认值；每次运行都会把解析后的完整配置写入日志。
退出码：0 成功，1 用法错误，2 数据错误，3 运行时 / 数值错误
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

from analysis import dimension_keywords, document_latents, export_representations, similarity_report, strongest_dimension
from checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from config import RunConfig, SplitConfig, build_config, log_resolved_config, logger, resolve_run_config, setup_logging
from data import FILLER_TOKENS, Dataset, RawDocument, iter_token_sequences, load_corpus_dir, split, synth_generate, write_corpus
from embedding import build_vocab, embed_document, embedding_quality, train_skipgram
from errors import EXIT_RUNTIME, DataError, NotFoundError, PJFNNError, UsageError
from evaluation import baseline_meanvec, build_eval_records, evaluate_checkpoint
from retrieval import LatentIndex, recommend_jobs
from training import train

S = argparse.SUPPRESS


class CLIArgumentParser(argparse.ArgumentParser):
    """参数错误抛出 UsageError，由 main 统一转为退出码 1"""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# ==================== 参数定义 ====================
def _common_parser() -> argparse.ArgumentParser:
    common = CLIArgumentParser(add_help=False)
    common.add_argument("--config", dest="config_file", default=None, help="JSON 配置文件")
    common.add_argument("--seed", dest="seed", type=int, default=S, help="全部随机性的唯一种子")
    common.add_argument("--threads", dest="threads", type=int, default=S, help="评估 / 分析时的并发线程数")
    common.add_argument("-v", "--verbose", action="store_true", help="输出 DEBUG 日志")
    common.add_argument("--log-file", default=None, help="日志同时写入该文件")
    return common


def build_parser() -> CLIArgumentParser:
    parser = CLIArgumentParser(prog="pjfnn", description="PJFNN 岗位-简历匹配")
    sub = parser.add_subparsers(dest="command", parser_class=CLIArgumentParser)
    sub.required = True
    common = [_common_parser()]

    p = sub.add_parser("synth", parents=common, help="生成合成语料")
    p.add_argument("--out", dest="paths__out", default=S, help="输出目录（默认 corpus）")
    p.add_argument("--n-topics", dest="synth__n_topics", type=int, default=S)
    p.add_argument("--vocab-per-topic", dest="synth__vocab_per_topic", type=int, default=S)
    p.add_argument("--n-jobs", dest="synth__n_jobs", type=int, default=S)
    p.add_argument("--n-resumes", dest="synth__n_resumes", type=int, default=S)
    p.add_argument("--n-applications", dest="synth__n_applications", type=int, default=S)
    p.add_argument("--positive-rate", dest="synth__positive_rate", type=float, default=S)
    p.add_argument("--topic-mixture-noise", dest="synth__topic_mixture_noise", type=float, default=S)
    p.add_argument("--filler-rate", dest="synth__filler_rate", type=float, default=S)
    p.add_argument("--failure-label-noise", dest="synth__failure_label_noise", type=float, default=S)
    p.add_argument("--match-rule", dest="synth__match_rule", choices=["exact", "overlap"], default=S)

    p = sub.add_parser("embed", parents=common, help="训练 Skip-gram 词向量")
    p.add_argument("--corpus", dest="paths__corpus", required=True, help="语料目录")
    p.add_argument("--out", dest="paths__out", default=S, help="输出检查点（默认 embeddings.ckpt）")
    p.add_argument("--job-dim", dest="embed__job_dim", type=int, default=S)
    p.add_argument("--resume-dim", dest="embed__resume_dim", type=int, default=S)
    p.add_argument("--window", dest="embed__window", type=int, default=S)
    p.add_argument("--negatives", dest="embed__negatives", type=int, default=S)
    p.add_argument("--embed-epochs", dest="embed__epochs", type=int, default=S)
    p.add_argument("--embed-lr", dest="embed__lr", type=float, default=S)
    p.add_argument("--min-count", dest="embed__min_count", type=int, default=S)

    p = sub.add_parser("train", parents=common, help="训练双塔网络")
    p.add_argument("--corpus", dest="paths__corpus", required=True)
    p.add_argument("--embeddings", dest="paths__embeddings", required=True, help="embed 产出的检查点")
    p.add_argument("--out", dest="paths__out", default=S, help="输出检查点（默认 model.ckpt）")
    p.add_argument("--loss-log", dest="paths__loss_log", default=S, help="每轮损失日志（默认 <out>.loss.jsonl）")
    p.add_argument("--lambda", dest="train__lambda", type=float, default=S)
    p.add_argument("--lr", dest="train__lr", type=float, default=S)
    p.add_argument("--epochs", dest="train__epochs", type=int, default=S)
    p.add_argument("--batch-size", dest="train__batch_size", type=int, default=S)
    p.add_argument("--negative-mode", dest="train__negative_mode", choices=["synthetic", "real"], default=S)
    p.add_argument("--ratio", dest="train__negatives_per_positive", type=float, default=S)
    p.add_argument("--fixed-negatives", dest="train__resample_negatives", action="store_false", default=S)
    p.add_argument("--log-every", dest="train__log_every", type=int, default=S)
    p.add_argument("--latent-dim", dest="model__latent_dim", type=int, default=S)
    p.add_argument("--job-hidden", dest="model__job_hidden", type=int, default=S)
    p.add_argument("--resume-hidden", dest="model__resume_hidden", type=int, default=S)
    p.add_argument("--split-by", dest="split__by", choices=["random", "year"], default=S)
    p.add_argument("--year", dest="options__year", type=int, default=S, help="只用该年份的申请记录")

    p = sub.add_parser("eval", parents=common, help="在划分上计算 AUC")
    p.add_argument("--checkpoint", dest="paths__checkpoint", required=True)
    p.add_argument("--corpus", dest="paths__corpus", required=True)
    p.add_argument("--group", dest="options__group", choices=["overall", "year", "category"], default=S)
    p.add_argument("--split", dest="options__split", choices=["train", "valid", "test"], default=S)
    p.add_argument("--regime", dest="options__regime", choices=["synthetic", "real"], default=S)
    p.add_argument("--baseline", dest="options__baseline", choices=["meanvec"], default=S)
    p.add_argument("--out", dest="paths__report", default=S, help="报告前缀，写出 <out>.json 与 <out>.txt")

    p = sub.add_parser("score", parents=common, help="给一对岗位 / 简历打分")
    p.add_argument("--checkpoint", dest="paths__checkpoint", required=True)
    p.add_argument("--corpus", dest="paths__corpus", default=S)
    p.add_argument("--job", dest="options__job", default=S, help="岗位 id")
    p.add_argument("--resume", dest="options__resume", default=S, help="简历 id")
    p.add_argument("--job-file", dest="paths__job_file", default=S, help="单个岗位 JSON 文件")
    p.add_argument("--resume-file", dest="paths__resume_file", default=S, help="单个简历 JSON 文件")
    p.add_argument("--items", dest="options__items", action="store_true", default=S, help="同时输出条目相似度矩阵")
    p.add_argument("--truncate", dest="options__truncate", type=int, default=S)

    p = sub.add_parser("keywords", parents=common, help="提取某一潜在维度的高频关键词")
    p.add_argument("--checkpoint", dest="paths__checkpoint", required=True)
    p.add_argument("--corpus", dest="paths__corpus", required=True)
    p.add_argument("--side", dest="options__side", choices=["job", "resume"], default=S)
    p.add_argument("--dim", dest="options__dim", type=int, default=S)
    p.add_argument("--topic", dest="options__topic", type=int, default=S, help="按合成主题自动选取最强维度")
    p.add_argument("--top-k", dest="options__top_k", type=int, default=S)
    p.add_argument("--quantile", dest="options__quantile", type=float, default=S)
    p.add_argument("--stop-tokens", dest="options__stop_tokens", default=S, help="逗号分隔的停用词")

    p = sub.add_parser("export", parents=common, help="导出文档 / 条目潜在向量 CSV")
    p.add_argument("--checkpoint", dest="paths__checkpoint", required=True)
    p.add_argument("--corpus", dest="paths__corpus", required=True)
    p.add_argument("--side", dest="options__side", choices=["job", "resume", "both"], default=S)
    p.add_argument("--ids", dest="options__ids", default=S, help="逗号分隔的文档 id，缺省导出全部")
    p.add_argument("--out", dest="paths__out", default=S, help="CSV 路径（默认 representations.csv）")

    p = sub.add_parser("recommend", parents=common, help="为简历推荐岗位")
    p.add_argument("--checkpoint", dest="paths__checkpoint", required=True)
    p.add_argument("--corpus", dest="paths__corpus", required=True)
    p.add_argument("--resume", dest="options__resume", required=True)
    p.add_argument("--top-n", dest="options__top_n", type=int, default=S)
    p.add_argument("--no-faiss", dest="options__no_faiss", action="store_true", default=S)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    """把 section__field 形式的参数还原成嵌套字典"""
    out: dict = {"command": args.command}
    for key, value in vars(args).items():
        if key in ("seed", "threads"):
            out[key] = value
        elif "__" in key:
            section, name = key.split("__", 1)
            out.setdefault(section, {})[name] = value
    return out


# ==================== 公共工具 ====================
def _path(config: RunConfig, key: str, default: Optional[str] = None) -> str:
    value = config.paths.get(key) or default
    if not value:
        raise UsageError(f"缺少路径参数: {key}")
    return value


def _load_dataset(config: RunConfig) -> Dataset:
    corpus = _path(config, "corpus")
    if not os.path.isdir(corpus):
        raise UsageError(f"语料目录不存在: {corpus}")
    return load_corpus_dir(corpus)


def _embedded(dataset: Dataset, cp: Checkpoint, side: str, ids: Optional[List[str]] = None):
    docs = dataset.documents(side)
    ids = sorted(docs) if ids is None else ids
    missing = [i for i in ids if i not in docs]
    if missing:
        raise NotFoundError(f"未找到 {side} 文档: {', '.join(missing)}")
    return [embed_document(docs[i], cp.table(side)) for i in ids]


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# ==================== 子命令 ====================
def cmd_synth(config: RunConfig) -> int:
    out = config.paths.get("out") or "corpus"
    dataset = synth_generate(config.synth)
    for path in write_corpus(dataset, out):
        logger.info(f"已写出: {path}")
    return 0


def cmd_embed(config: RunConfig) -> int:
    dataset = _load_dataset(config)
    cfg = config.embed
    tables = {}
    for offset, (side, dim) in enumerate((("job", cfg.job_dim), ("resume", cfg.resume_dim))):
        vocab = build_vocab(iter_token_sequences(dataset, side), cfg.min_count)
        logger.info(f"[{side}] 词表大小 {len(vocab) - 1}（min_count={cfg.min_count}），向量维度 {dim}")
        tables[side] = train_skipgram(
            list(iter_token_sequences(dataset, side)), vocab, dim,
            window=cfg.window, negatives=cfg.negatives, epochs=cfg.epochs, lr=cfg.lr,
            seed=cfg.seed + offset, side=side, batch_words=cfg.batch_words,
        )
        if dataset.truth is not None:
            intra, cross = embedding_quality(tables[side], dataset.truth.topic_vocab)
            logger.info(f"[{side}] 词向量自检: 同主题平均余弦 {intra:.4f}，跨主题平均余弦 {cross:.4f}")
    cp = Checkpoint(config=config.dump(), job_table=tables["job"], resume_table=tables["resume"])
    save_checkpoint(cp, config.paths.get("out") or "embeddings.ckpt")
    return 0


def _splits(dataset: Dataset, split_config: SplitConfig, seed: int, year: Optional[int] = None):
    if year is not None:
        dataset = dataset.for_year(year)
    return split(dataset, split_config.train_frac, split_config.valid_frac, split_config.by, seed)


def cmd_train(config: RunConfig) -> int:
    dataset = _load_dataset(config)
    embeddings = load_checkpoint(_path(config, "embeddings"))
    train_split, _, _ = _splits(dataset, config.split, config.seed, config.options.get("year"))
    result = train(
        train_split,
        embeddings.job_table,
        embeddings.resume_table,
        config.train,
        config.model,
        run_config=config.dump(),
        exclude_pairs=[a.pair for a in dataset.positives()],
    )
    out = config.paths.get("out") or "model.ckpt"
    save_checkpoint(result.checkpoint, out)
    loss_log = config.paths.get("loss_log") or f"{out}.loss.jsonl"
    result.write_loss_log(loss_log)
    logger.info(f"损失日志已写出: {loss_log}")
    return 0


def cmd_eval(config: RunConfig) -> int:
    cp = load_checkpoint(_path(config, "checkpoint"))
    dataset = _load_dataset(config)
    trained = build_config(RunConfig, {k: v for k, v in cp.config.items() if k in RunConfig.model_fields})
    year = trained.options.get("year")
    splits = dict(zip(("train", "valid", "test"), _splits(dataset, trained.split, trained.seed, year)))
    target = splits[config.options.get("split", "test")]
    regime = config.options.get("regime") or trained.train.negative_mode
    grouping = config.options.get("group", "overall")

    records = build_eval_records(target, regime, dataset.job_ids(), config.seed, [a.pair for a in dataset.positives()])
    reports = [evaluate_checkpoint(cp, target, records, grouping, config.threads)]
    if config.options.get("baseline") == "meanvec":
        reports.append(baseline_meanvec(
            splits["train"], target, cp.job_table, cp.resume_table,
            seed=config.seed, regime=regime, test_records=records, grouping=grouping,
        ))
    prefix = config.paths.get("report")
    for report in reports:
        _emit(report.to_text())
        if prefix:
            suffix = "" if report is reports[0] else f".{report.model}"
            report.write(f"{prefix}{suffix}.json", f"{prefix}{suffix}.txt")
    return 0


def _read_document_file(path: str, side: str) -> RawDocument:
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        doc = RawDocument.model_validate(payload)
    except (OSError, ValueError, ValidationError) as e:
        raise DataError(f"无法读取文档文件 {path}: {e}") from e
    if doc.side != side:
        raise DataError(f"{path}: 需要 {side} 文档，实际为 {doc.side}")
    return doc


def cmd_score(config: RunConfig) -> int:
    cp = load_checkpoint(_path(config, "checkpoint"))
    model = cp.model()
    opts = config.options
    dataset = _load_dataset(config) if config.paths.get("corpus") else None
    docs = {}
    for side in ("job", "resume"):
        file_key = f"{side}_file"
        if config.paths.get(file_key):
            raw = _read_document_file(config.paths[file_key], side)
        elif opts.get(side) and dataset is not None:
            raw = dataset.documents(side).get(opts[side])
            if raw is None:
                raise NotFoundError(f"未找到 {side} 文档: {opts[side]}")
        else:
            raise UsageError(f"需要 --{side} 与 --corpus，或 --{side}-file")
        docs[side] = embed_document(raw, cp.table(side))

    if opts.get("items"):
        report = similarity_report(model, docs["job"], docs["resume"], truncate=int(opts.get("truncate", 30)))
        _emit(report.to_text())
    else:
        _emit(f"{model.score(docs['job'], docs['resume']):.6f}")
    return 0


def cmd_keywords(config: RunConfig) -> int:
    cp = load_checkpoint(_path(config, "checkpoint"))
    model = cp.model()
    dataset = _load_dataset(config)
    opts = config.options
    side = opts.get("side", "job")
    docs = _embedded(dataset, cp, side)
    latents = document_latents(model, docs, config.threads)

    if "dim" in opts:
        dim = int(opts["dim"])
    elif "topic" in opts:
        if dataset.truth is None:
            raise UsageError("--topic 需要语料目录中的 topics.json")
        topics = dataset.truth.job_topics if side == "job" else dataset.truth.resume_topics
        rows = [i for i, d in enumerate(docs) if int(opts["topic"]) in topics.get(d.id, [])]
        if not rows:
            raise UsageError(f"没有属于主题 {opts['topic']} 的 {side} 文档")
        dim = strongest_dimension(latents[rows])
    else:
        raise UsageError("需要 --dim 或 --topic")

    stop = opts.get("stop_tokens")
    stop_tokens = FILLER_TOKENS if stop is None else [t for t in str(stop).split(",") if t]
    result = dimension_keywords(
        model, docs, dim, top_k=int(opts.get("top_k", 10)), quantile=float(opts.get("quantile", 0.9)),
        stop_tokens=stop_tokens, latents=latents,
    )
    _emit(result.to_text())
    return 0


def cmd_export(config: RunConfig) -> int:
    cp = load_checkpoint(_path(config, "checkpoint"))
    dataset = _load_dataset(config)
    side = config.options.get("side", "both")
    ids = config.options.get("ids")
    wanted = [i for i in str(ids).split(",") if i] if ids else None
    docs = []
    for s in (("job", "resume") if side == "both" else (side,)):
        pool = dataset.documents(s)
        chosen = sorted(pool) if wanted is None else [i for i in wanted if i in pool]
        docs.extend(_embedded(dataset, cp, s, chosen))
    if wanted is not None:
        known = set(dataset.jobs) | set(dataset.resumes)
        missing = [i for i in wanted if i not in known]
        if missing:
            raise NotFoundError(f"未找到文档: {', '.join(missing)}")
    export_representations(cp.model(), docs, config.paths.get("out") or "representations.csv", config.threads)
    return 0


def cmd_recommend(config: RunConfig) -> int:
    cp = load_checkpoint(_path(config, "checkpoint"))
    model = cp.model()
    dataset = _load_dataset(config)
    resume = _embedded(dataset, cp, "resume", [config.options["resume"]])[0]
    use_faiss = False if config.options.get("no_faiss") else None
    index = LatentIndex.build(model, _embedded(dataset, cp, "job"), use_faiss=use_faiss)
    for job_id, value in recommend_jobs(model, resume, index, int(config.options.get("top_n", 10))):
        _emit(f"{job_id}\t{value:.6f}")
    return 0


COMMAND_MAP = {
    "synth": cmd_synth,
    "embed": cmd_embed,
    "train": cmd_train,
    "eval": cmd_eval,
    "score": cmd_score,
    "keywords": cmd_keywords,
    "export": cmd_export,
    "recommend": cmd_recommend,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        setup_logging(logging.DEBUG if args.verbose else logging.INFO, args.log_file)
        config = resolve_run_config(args.config_file, _overrides(args))
        log_resolved_config(config)
        return COMMAND_MAP[config.command](config)
    except PJFNNError as e:
        logger.error(f"{type(e).__name__}: {e}")
        sys.stderr.write(f"错误: {e}\n")
        return e.exit_code
    except Exception as e:
        logger.error(f"未预期的错误: {e}", exc_info=True)
        sys.stderr.write(f"错误: {e}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
