"""
语料读写、数据集划分、合成语料生成

语料为三个 UTF-8 JSONL 文件（每行一条记录）：
  jobs.jsonl / resumes.jsonl : {"id", "side", "category", "year", "items": [[token, ...], ...]}
  applications.jsonl         : {"job_id", "resume_id", "label": "success"|"failure", "year"}
词已由上游切好，本模块不做分词。
"""
import json
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from config import SplitConfig, SynthConfig, logger
from errors import (
    ConfigError,
    CorpusParseError,
    DataError,
    DuplicateIdError,
    EmptyDocumentError,
    ReferentialIntegrityError,
    UnderfullSplitError,
)

CATEGORIES = ("T", "P", "U", "O")
JOBS_FILE = "jobs.jsonl"
RESUMES_FILE = "resumes.jsonl"
APPLICATIONS_FILE = "applications.jsonl"
TOPICS_FILE = "topics.json"

# 合成语料中的通用填充词，关键词统计时默认作为停用词
FILLER_TOKENS = ("负责", "参与", "相关", "工作", "经验", "熟悉", "能力", "良好", "具备", "团队")


# ==================== 记录类型 ====================
class RawDocument(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str = Field(min_length=1)
    side: Literal["job", "resume"]
    category: Literal["T", "P", "U", "O"]
    year: int
    items: List[List[str]]

    @field_validator("items")
    @classmethod
    def _tokens_nonempty(cls, items: List[List[str]]) -> List[List[str]]:
        for n, tokens in enumerate(items):
            if not tokens:
                raise ValueError(f"第 {n} 个条目没有任何词")
            if any(not t for t in tokens):
                raise ValueError(f"第 {n} 个条目包含空字符串词")
        return items

    def to_record(self) -> dict:
        return self.model_dump()


class ApplicationRecord(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    job_id: str = Field(min_length=1)
    resume_id: str = Field(min_length=1)
    label: Literal["success", "failure"]
    year: int

    @property
    def is_positive(self) -> bool:
        return self.label == "success"

    @property
    def pair(self) -> Tuple[str, str]:
        return self.job_id, self.resume_id

    def to_record(self) -> dict:
        return self.model_dump()


@dataclass
class SynthTruth:
    """合成语料的生成真值：每个主题的词表，以及每个文档的主题集合"""
    topic_vocab: List[List[str]]
    topic_categories: List[str]
    job_topics: Dict[str, List[int]]
    resume_topics: Dict[str, List[int]]

    def to_dict(self) -> dict:
        return {
            "topic_vocab": self.topic_vocab,
            "topic_categories": self.topic_categories,
            "job_topics": self.job_topics,
            "resume_topics": self.resume_topics,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SynthTruth":
        return cls(
            topic_vocab=[list(v) for v in data["topic_vocab"]],
            topic_categories=list(data["topic_categories"]),
            job_topics={k: list(v) for k, v in data["job_topics"].items()},
            resume_topics={k: list(v) for k, v in data["resume_topics"].items()},
        )


@dataclass
class Dataset:
    jobs: Dict[str, RawDocument]
    resumes: Dict[str, RawDocument]
    applications: List[ApplicationRecord]
    truth: Optional[SynthTruth] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.applications)

    def positives(self) -> List[ApplicationRecord]:
        return [a for a in self.applications if a.is_positive]

    def failures(self) -> List[ApplicationRecord]:
        return [a for a in self.applications if not a.is_positive]

    def job_ids(self) -> List[str]:
        return sorted(self.jobs)

    def subset(self, records: Sequence[ApplicationRecord]) -> "Dataset":
        """只替换申请记录，文档字典共享"""
        return Dataset(self.jobs, self.resumes, list(records), self.truth)

    def for_year(self, year: int) -> "Dataset":
        return self.subset([a for a in self.applications if a.year == year])

    def years(self) -> List[int]:
        return sorted({a.year for a in self.applications})

    def documents(self, side: str) -> Dict[str, RawDocument]:
        return self.jobs if side == "job" else self.resumes


# ==================== 读取 ====================
def _read_jsonl(path: str, model, side: Optional[str] = None) -> Iterator[Tuple[int, object]]:
    try:
        with open(path, "rb") as f:
            raw_lines = f.read().split(b"\n")
    except OSError as e:
        raise DataError(f"无法读取语料文件 {path}: {e}") from e

    for line_no, raw in enumerate(raw_lines, start=1):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorpusParseError(path, line_no, e.start + 1, "不是合法的 UTF-8") from e
        if not text.strip():
            continue
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise CorpusParseError(path, line_no, e.colno, f"JSON 解析失败: {e.msg}") from e
        except (ValueError, RecursionError) as e:
            raise CorpusParseError(path, line_no, 1, f"JSON 解析失败: {e}") from e
        if not isinstance(payload, dict):
            raise CorpusParseError(path, line_no, 1, "每行必须是一个 JSON 对象")
        if side is not None and isinstance(payload.get("items"), list) and not payload["items"]:
            raise EmptyDocumentError(f"{path}:{line_no}: 文档 {payload.get('id')} 没有任何条目")
        try:
            record = model.model_validate(payload)
        except ValidationError as e:
            first = e.errors()[0]
            loc = ".".join(str(x) for x in first.get("loc", ()))
            raise CorpusParseError(path, line_no, 1, f"字段 {loc}: {first.get('msg')}") from e
        if side is not None and record.side != side:
            raise CorpusParseError(path, line_no, 1, f"side 应为 {side}，实际为 {record.side}")
        yield line_no, record


def _load_documents(path: str, side: str) -> Dict[str, RawDocument]:
    docs: Dict[str, RawDocument] = {}
    for line_no, doc in _read_jsonl(path, RawDocument, side):
        if doc.id in docs:
            raise DuplicateIdError(f"{path}:{line_no}: 重复的 {side} id: {doc.id}")
        docs[doc.id] = doc
    return docs


def load_corpus(jobs_path: str, resumes_path: str, applications_path: str) -> Dataset:
    """读取并校验三份 JSONL；重复 id、悬空引用、空文档均带行号报错"""
    jobs = _load_documents(jobs_path, "job")
    resumes = _load_documents(resumes_path, "resume")
    applications: List[ApplicationRecord] = []
    seen = set()
    for line_no, app in _read_jsonl(applications_path, ApplicationRecord):
        if app.job_id not in jobs:
            raise ReferentialIntegrityError(f"{applications_path}:{line_no}: 申请记录引用了不存在的 job_id: {app.job_id}")
        if app.resume_id not in resumes:
            raise ReferentialIntegrityError(f"{applications_path}:{line_no}: 申请记录引用了不存在的 resume_id: {app.resume_id}")
        triple = (app.job_id, app.resume_id, app.label)
        if triple in seen:
            raise DuplicateIdError(f"{applications_path}:{line_no}: 重复的申请记录 {triple}")
        seen.add(triple)
        applications.append(app)
    logger.info(f"语料加载完成: 岗位 {len(jobs)}，简历 {len(resumes)}，申请记录 {len(applications)}")
    return Dataset(jobs, resumes, applications)


def load_corpus_dir(directory: str) -> Dataset:
    dataset = load_corpus(
        os.path.join(directory, JOBS_FILE),
        os.path.join(directory, RESUMES_FILE),
        os.path.join(directory, APPLICATIONS_FILE),
    )
    topics_path = os.path.join(directory, TOPICS_FILE)
    if os.path.exists(topics_path):
        try:
            with open(topics_path, "r", encoding="utf-8") as f:
                dataset.truth = SynthTruth.from_dict(json.load(f))
        except (OSError, ValueError, KeyError, TypeError, AttributeError) as e:
            raise DataError(f"无法读取生成真值 {topics_path}: {e}") from e
    return dataset


def _write_jsonl(path: str, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")


def write_corpus(dataset: Dataset, out_dir: str) -> List[str]:
    """写出三份 JSONL（键排序、顺序稳定），有生成真值时另写 topics.json"""
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, name) for name in (JOBS_FILE, RESUMES_FILE, APPLICATIONS_FILE)]
    _write_jsonl(paths[0], [d.to_record() for d in dataset.jobs.values()])
    _write_jsonl(paths[1], [d.to_record() for d in dataset.resumes.values()])
    _write_jsonl(paths[2], [a.to_record() for a in dataset.applications])
    if dataset.truth is not None:
        topics_path = os.path.join(out_dir, TOPICS_FILE)
        with open(topics_path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(dataset.truth.to_dict(), f, sort_keys=True, ensure_ascii=False)
            f.write("\n")
        paths.append(topics_path)
    return paths


def iter_token_sequences(dataset: Dataset, side: str) -> Iterator[List[str]]:
    """按文档 id 顺序逐条目产出词序列（Skip-gram 训练语料）"""
    docs = dataset.documents(side)
    for doc_id in sorted(docs):
        yield from docs[doc_id].items


# ==================== 划分 ====================
def _split_counts(n: int, train_frac: float, valid_frac: float) -> Tuple[int, int]:
    n_train = int(round(n * train_frac))
    n_valid = min(int(round(n * valid_frac)), n - n_train)
    return n_train, n_valid


def split(
    dataset: Dataset,
    train_frac: float = 0.8,
    valid_frac: float = 0.1,
    by: str = "random",
    seed: int = 0,
) -> Tuple[Dataset, Dataset, Dataset]:
    """
    以申请记录为单位划分 train / valid / test（test 取剩余部分）
    by="year" 时先按年份分组，组内各自按比例划分
    """
    try:
        SplitConfig(by=by, train_frac=train_frac, valid_frac=valid_frac)
    except ValidationError as e:
        raise ConfigError(f"划分参数非法: {e.errors()[0].get('msg')}") from e

    rng = np.random.default_rng(seed)
    records = dataset.applications
    if by == "year":
        groups: Dict[int, List[int]] = {}
        for i, app in enumerate(records):
            groups.setdefault(app.year, []).append(i)
        index_groups = [np.asarray(groups[y]) for y in sorted(groups)]
    else:
        index_groups = [np.arange(len(records))]

    parts: Tuple[List[int], List[int], List[int]] = ([], [], [])
    for indices in index_groups:
        order = indices[rng.permutation(len(indices))]
        n_train, n_valid = _split_counts(len(indices), train_frac, valid_frac)
        parts[0].extend(order[:n_train].tolist())
        parts[1].extend(order[n_train:n_train + n_valid].tolist())
        parts[2].extend(order[n_train + n_valid:].tolist())

    out = []
    for name, idx in zip(("train", "valid", "test"), parts):
        if not idx:
            raise UnderfullSplitError(f"{name} 划分没有分到任何申请记录（共 {len(records)} 条）")
        out.append(dataset.subset([records[i] for i in sorted(idx)]))
    logger.info(f"数据划分({by}): train={len(out[0])}, valid={len(out[1])}, test={len(out[2])}")
    return out[0], out[1], out[2]


# ==================== 合成语料 ====================
def _draw_range(rng: np.random.Generator, bounds: Tuple[int, int]) -> int:
    return int(rng.integers(bounds[0], bounds[1] + 1))


def _draw_topics(rng: np.random.Generator, n_topics: int, bounds: Tuple[int, int]) -> List[int]:
    k = _draw_range(rng, bounds)
    return sorted(int(t) for t in rng.choice(n_topics, size=k, replace=False))


def _draw_token(rng: np.random.Generator, vocab: List[str], filler_rate: float) -> str:
    if filler_rate > 0 and rng.random() < filler_rate:
        return FILLER_TOKENS[int(rng.integers(len(FILLER_TOKENS)))]
    return vocab[int(rng.integers(len(vocab)))]


def _matches(a: Sequence[int], b: Sequence[int], rule: str) -> bool:
    if rule == "exact":
        return list(a) == list(b)
    return bool(set(a) & set(b))


def synth_generate(config: SynthConfig) -> Dataset:
    """
    主题模型式合成语料：
      - 岗位要求条目：每条只取一个主题的词（格式规整）
      - 简历经历条目：每个词在简历的主题集合中随机选主题，另有 topic_mixture_noise 概率取任意主题
      - 成功申请：岗位与简历主题集合匹配（exact: 相同；overlap: 有交集）
      - 失败申请：主题集合不相交；其中 failure_label_noise 比例改为从匹配对中抽取（标签噪声）
    同一 config（含 seed）生成结果完全一致
    """
    if config.topics_per_job[1] > config.n_topics or config.topics_per_resume[1] > config.n_topics:
        raise ConfigError(
            f"每个文档的主题数上限 (job {config.topics_per_job[1]}, resume {config.topics_per_resume[1]}) "
            f"超过主题总数 {config.n_topics}"
        )
    rng = np.random.default_rng(config.seed)
    width = len(str(max(config.n_jobs, config.n_resumes) - 1))
    topic_vocab = [[f"t{t}_w{i}" for i in range(config.vocab_per_topic)] for t in range(config.n_topics)]
    topic_categories = [CATEGORIES[t % len(CATEGORIES)] for t in range(config.n_topics)]
    year_lo, year_hi = config.years

    jobs: Dict[str, RawDocument] = {}
    job_topics: Dict[str, List[int]] = {}
    for i in range(config.n_jobs):
        topics = _draw_topics(rng, config.n_topics, config.topics_per_job)
        items = []
        for n in range(_draw_range(rng, config.items_per_doc)):
            topic = topics[n] if n < len(topics) else topics[int(rng.integers(len(topics)))]
            length = _draw_range(rng, config.tokens_per_item)
            items.append([_draw_token(rng, topic_vocab[topic], config.filler_rate) for _ in range(length)])
        doc_id = f"job{i:0{width}d}"
        jobs[doc_id] = RawDocument(
            id=doc_id, side="job", category=topic_categories[topics[0]],
            year=int(rng.integers(year_lo, year_hi + 1)), items=items,
        )
        job_topics[doc_id] = topics

    resumes: Dict[str, RawDocument] = {}
    resume_topics: Dict[str, List[int]] = {}
    for i in range(config.n_resumes):
        topics = _draw_topics(rng, config.n_topics, config.topics_per_resume)
        items = []
        for _ in range(_draw_range(rng, config.items_per_doc)):
            tokens = []
            for _ in range(_draw_range(rng, config.tokens_per_item)):
                if config.topic_mixture_noise > 0 and rng.random() < config.topic_mixture_noise:
                    topic = int(rng.integers(config.n_topics))
                else:
                    topic = topics[int(rng.integers(len(topics)))]
                tokens.append(_draw_token(rng, topic_vocab[topic], config.filler_rate))
            items.append(tokens)
        doc_id = f"res{i:0{width}d}"
        resumes[doc_id] = RawDocument(
            id=doc_id, side="resume", category=topic_categories[topics[0]],
            year=int(rng.integers(year_lo, year_hi + 1)), items=items,
        )
        resume_topics[doc_id] = topics

    job_ids, resume_ids = list(jobs), list(resumes)
    n_pos = int(round(config.n_applications * config.positive_rate))
    n_fail = config.n_applications - n_pos
    n_noisy = int(round(n_fail * config.failure_label_noise))
    used = set()

    def draw_pairs(count: int, want_match: bool, label: str) -> List[ApplicationRecord]:
        out: List[ApplicationRecord] = []
        attempts, limit = 0, 200 * max(count, 1)
        while len(out) < count:
            attempts += 1
            if attempts > limit:
                raise ConfigError(f"无法生成足够的 {label} 申请记录（需要 {count}，已得到 {len(out)}），请调整合成参数")
            j = job_ids[int(rng.integers(len(job_ids)))]
            r = resume_ids[int(rng.integers(len(resume_ids)))]
            if (j, r) in used:
                continue
            if want_match:
                ok = _matches(job_topics[j], resume_topics[r], config.match_rule)
            else:
                ok = not set(job_topics[j]) & set(resume_topics[r])
            if not ok:
                continue
            used.add((j, r))
            out.append(ApplicationRecord(job_id=j, resume_id=r, label=label, year=jobs[j].year))
        return out

    applications = (
        draw_pairs(n_pos, True, "success")
        + draw_pairs(n_fail - n_noisy, False, "failure")
        + draw_pairs(n_noisy, True, "failure")
    )
    applications = [applications[i] for i in rng.permutation(len(applications))]

    truth = SynthTruth(topic_vocab, topic_categories, job_topics, resume_topics)
    logger.info(
        f"合成语料生成完成: 岗位 {len(jobs)}，简历 {len(resumes)}，成功 {n_pos}，失败 {n_fail}（其中标签噪声 {n_noisy}）"
    )
    return Dataset(jobs, resumes, applications, truth)
