"""Two-stage training, evaluation, and the contrastive similarity audit.

Stage 1 minimizes the plain QA cross-entropy. Stage 2 builds, per batch,
a question triple (text variant) and a retain/mask video pair (video
variant), runs the three streams through the shared model, and optimizes
the weighted composite objective. Stage 2 with all counterfactual weights
at zero takes the literal stage-1 code path, so the two are byte-identical
under equal seeds.

Determinism contract: every random choice derives from (seed, salt,
epoch, dataset index) seed sequences; metrics rows and checkpoints contain
no timestamps, so identical configs reproduce identical bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import model as modellib
from . import textcf, videocf
from .errors import ConfigError, FormatError, InputError
from .losses import (LossWeights, ce_grad, ce_values, loss_con_batch,
                     loss_con_batch_backward, total_loss)
from .numkit import AdamState, ParamStore, adam_step
from .synthgen import CATEGORIES, OPEN_CATEGORIES, Dataset, read_dataset

_SHUFFLE_SALT = 0x5AFF
_AUGMENT_SALT = 0xA406
_AUDIT_SALT = 0xAD17

CHECKPOINT_KIND = "egocf-model"


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    data_dir: str
    stage: int = 1
    epochs: int | None = None  # None -> 35 for stage 1, 5 for stage 2
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    alpha: float = 0.8
    beta: float = 1.0
    lam: float = 0.01
    tau: float = 0.1
    text_variant: str = "f_q3"
    video_variant: str = "f_v1"
    fill: float = 0.0
    split: str = "train"
    lexicon: str | None = None
    swap_table: str | None = None
    bboxes: str | None = None
    checkpoint_in: str | None = None
    checkpoint_out: str = "model.nkt"
    metrics_out: str | None = None
    adam_reset: bool = True
    freeze_augmentation: bool = False
    early_stop_train_acc: float | None = None
    model: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.stage == 2 and not self.checkpoint_in:
            raise ConfigError("stage 2 requires a stage-1 checkpoint path")
        if self.text_variant not in textcf.TEXT_VARIANTS:
            raise ConfigError(f"unknown text variant {self.text_variant!r}")
        if self.video_variant not in videocf.VIDEO_VARIANTS:
            raise ConfigError(f"unknown video variant {self.video_variant!r}")
        if self.video_variant == "f_v4" and self.stage == 2 and not self.bboxes:
            raise ConfigError("video variant f_v4 requires a bounding-box file")
        if self.batch_size < 1 or (self.epochs is not None and self.epochs < 0):
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        self.weights()  # validates nonnegativity / tau

    def weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta, lam=self.lam, tau=self.tau)

    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 35 if self.stage == 1 else 5

    def resolved_metrics_out(self) -> str:
        return self.metrics_out or self.checkpoint_out + ".metrics.jsonl"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path, overrides: dict | None = None) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad config JSON {path}: {exc}") from exc
        raw.update(overrides or {})
        return cls.from_dict(raw)


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


def encode_tokens(tokens: list[str], token_to_id: dict[str, int], length: int) -> list[int]:
    """Pad/truncate to ``length`` with the pad id; unknown tokens are an error."""
    ids = []
    for tok in tokens[:length]:
        if tok not in token_to_id:
            raise InputError(f"token {tok!r} not in vocabulary")
        ids.append(token_to_id[tok])
    ids.extend([modellib.PAD_ID] * (length - len(ids)))
    return ids


# ---------------------------------------------------------------------------
# Model checkpoints
# ---------------------------------------------------------------------------


def save_model(path: str | Path, store: ParamStore, adam: AdamState, cfg: modellib.ModelConfig,
               answer_set: list[str], vocab: list[str], stage: int, epoch: int) -> None:
    tensors: dict[str, np.ndarray] = {}
    for name, p in store.params.items():
        tensors[f"param.{name}"] = p
    for name in store.params:
        tensors[f"adam.m.{name}"] = adam.m[name]
        tensors[f"adam.v.{name}"] = adam.v[name]
    meta = {
        "kind": CHECKPOINT_KIND,
        "model_config": cfg.to_dict(),
        "answer_set": answer_set,
        "vocab": vocab,
        "stage": stage,
        "epoch": epoch,
        "adam_t": adam.t,
    }
    ckpt_io.save_tensors(path, tensors, meta=meta)


def load_model(path: str | Path):
    """Returns (store, adam, model_cfg, meta); store is rebuilt in canonical
    parameter order so optimizer iteration stays reproducible."""
    tensors, meta = ckpt_io.load_tensors(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise FormatError(f"{path} is not a model checkpoint (kind={meta.get('kind')!r})")
    cfg = modellib.ModelConfig.from_dict(meta["model_config"])
    store = modellib.init_params(cfg)
    adam = AdamState.init(store)
    adam.t = int(meta.get("adam_t", 0))
    for name, p in store.params.items():
        key = f"param.{name}"
        if key not in tensors:
            raise FormatError(f"{path}: missing tensor {key!r}")
        if tensors[key].shape != p.shape:
            raise FormatError(f"{path}: tensor {key!r} has shape {tensors[key].shape}, expected {p.shape}")
        p[...] = tensors[key]
        if f"adam.m.{name}" in tensors:
            adam.m[name][...] = tensors[f"adam.m.{name}"]
            adam.v[name][...] = tensors[f"adam.v.{name}"]
    return store, adam, cfg, meta


# ---------------------------------------------------------------------------
# Augmentation plumbing
# ---------------------------------------------------------------------------


class TextAugmenter:
    """Bundles the lexicon, swap table and world vocabularies."""

    def __init__(self, ds: Dataset, variant: str,
                 lexicon_path: str | None = None, swap_table_path: str | None = None):
        self.variant = variant
        self.lexicon = textcf.SynonymLexicon.from_tsv(lexicon_path or textcf.DEFAULT_LEXICON)
        self.swap_table = textcf.SwapTable.from_tsv(swap_table_path or textcf.DEFAULT_SWAP_TABLE)
        world = ds.world
        self.verb_vocab = world.verbs
        self.object_vocab = world.objects

    def triple(self, tokens: list[str], answer_label: int, category: str,
               rng: np.random.Generator) -> textcf.QuestionTriple:
        q = textcf.QuestionRecord(raw=" ".join(tokens), tokens=list(tokens),
                                  answer_label=answer_label, category=category)
        return textcf.make_question_triple(q, self.variant, self.lexicon, self.swap_table,
                                           self.verb_vocab, self.object_vocab, rng)


class VideoPairCache:
    """Retain/mask pairs are rng-free, so compute each video's pair once."""

    def __init__(self, frames: dict[str, np.ndarray], variant: str,
                 bbox_map: dict[str, list[videocf.BBoxRecord]] | None, fill: float):
        self.frames = frames
        self.variant = variant
        self.bbox_map = bbox_map or {}
        self.fill = fill
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def get(self, video_id: str) -> tuple[np.ndarray, np.ndarray]:
        if video_id not in self._cache:
            bboxes = self.bbox_map.get(video_id, []) if self.variant == "f_v4" else None
            self._cache[video_id] = videocf.make_video_pair(
                self.frames[video_id], self.variant, bboxes=bboxes, fill=self.fill
            )
        return self._cache[video_id]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint_path: str
    metrics_path: str
    epochs_run: int
    final_train_acc: float
    epoch_stats: list[dict]


def _build_model(ds: Dataset, cfg: TrainConfig):
    world = ds.world
    if world.h != world.w:
        raise ConfigError(f"model expects square frames, world is {world.h}x{world.w}")
    overrides = dict(cfg.model)
    mcfg = modellib.ModelConfig(
        token_vocab_size=len(ds.vocab),
        answer_set_size=len(ds.answer_set),
        n_frames=world.n_frames,
        frame_channels=world.c,
        frame_size=world.h,
        seed=overrides.pop("seed", cfg.seed),
        **overrides,
    )
    store = modellib.init_params(mcfg)
    return store, mcfg


def train_stage1(ds: Dataset, cfg: TrainConfig) -> TrainResult:
    if cfg.stage != 1:
        raise ConfigError("train_stage1 called with a stage-2 config")
    return _run_training(ds, cfg)


def train_stage2(ds: Dataset, cfg: TrainConfig) -> TrainResult:
    if cfg.stage != 2:
        raise ConfigError("train_stage2 called with a stage-1 config")
    return _run_training(ds, cfg)


def _run_training(ds: Dataset, cfg: TrainConfig) -> TrainResult:
    weights = cfg.weights()
    need_pos = cfg.stage == 2 and (weights.alpha > 0 or weights.lam > 0)
    need_neg = cfg.stage == 2 and (weights.beta > 0 or weights.lam > 0)
    any_cf = need_pos or need_neg

    if cfg.checkpoint_in:
        store, adam, mcfg, meta = load_model(cfg.checkpoint_in)
        if meta["answer_set"] != ds.answer_set:
            raise ConfigError("checkpoint answer set does not match the dataset")
        if meta["vocab"] != ds.vocab:
            raise ConfigError("checkpoint vocabulary does not match the dataset")
        if cfg.adam_reset:
            adam = AdamState.init(store)
    else:
        store, mcfg = _build_model(ds, cfg)
        adam = AdamState.init(store)

    token_to_id = {tok: i for i, tok in enumerate(ds.vocab)}
    n = len(ds.records)
    if n == 0:
        raise InputError("empty training split")
    ids_all = np.array(
        [encode_tokens(r.question_tokens, token_to_id, mcfg.text_len) for r in ds.records],
        dtype=np.int64,
    )
    labels_all = np.array([r.answer_label for r in ds.records], dtype=np.int64)
    vids = [r.video_id for r in ds.records]

    augmenter = None
    pair_cache = None
    if any_cf:
        augmenter = TextAugmenter(ds, cfg.text_variant, cfg.lexicon, cfg.swap_table)
        bbox_map = videocf.load_bboxes(cfg.bboxes) if cfg.video_variant == "f_v4" else None
        pair_cache = VideoPairCache(ds.frames, cfg.video_variant, bbox_map, cfg.fill)

    metrics_path = Path(cfg.resolved_metrics_out())
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    Path(cfg.checkpoint_out).parent.mkdir(parents=True, exist_ok=True)

    epochs = cfg.resolved_epochs()
    epoch_stats: list[dict] = []
    final_acc = 0.0
    global_step = 0
    with open(metrics_path, "w") as metrics:
        for epoch in range(epochs):
            perm = _rng(cfg.seed, _SHUFFLE_SALT, epoch).permutation(n)
            correct = 0
            step_totals: list[float] = []
            for lo in range(0, n, cfg.batch_size):
                idx = perm[lo : lo + cfg.batch_size]
                frames = np.stack([ds.frames[vids[i]] for i in idx])
                ids = ids_all[idx]
                labels = labels_all[idx]
                b = len(idx)

                probs, cache = modellib.forward_batch(frames, ids, store, mcfg)
                ce = ce_values(probs, labels)
                l_qa = float(ce.mean())
                correct += int(np.sum(np.argmax(probs, axis=1) == labels))
                d_probs = ce_grad(probs, labels) / b

                l_pos = l_neg = l_con = 0.0
                pos_pack = neg_pack = None
                if any_cf:
                    aug_epoch = 0 if cfg.freeze_augmentation else epoch
                    triples = [
                        augmenter.triple(
                            ds.records[i].question_tokens,
                            int(labels_all[i]),
                            ds.records[i].category,
                            _rng(cfg.seed, _AUGMENT_SALT, aug_epoch, int(i)),
                        )
                        for i in idx
                    ]
                    usable = [j for j, t in enumerate(triples) if t.contrastive_usable]
                    u = len(usable)
                    if u:
                        u_labels = labels[usable]
                        if need_pos:
                            pos_ids = np.array(
                                [encode_tokens(triples[j].positive.tokens, token_to_id, mcfg.text_len)
                                 for j in usable], dtype=np.int64)
                            pos_frames = np.stack([pair_cache.get(vids[idx[j]])[0] for j in usable])
                            probs_pos, cache_pos = modellib.forward_batch(pos_frames, pos_ids, store, mcfg)
                            l_pos = float(ce_values(probs_pos, u_labels).mean())
                            d_pos = np.zeros_like(probs_pos)
                            if weights.alpha > 0:
                                d_pos += weights.alpha * ce_grad(probs_pos, u_labels) / u
                            pos_pack = (probs_pos, cache_pos, d_pos)
                        if need_neg:
                            neg_ids = np.array(
                                [encode_tokens(triples[j].negative.tokens, token_to_id, mcfg.text_len)
                                 for j in usable], dtype=np.int64)
                            neg_frames = np.stack([pair_cache.get(vids[idx[j]])[1] for j in usable])
                            probs_neg, cache_neg = modellib.forward_batch(neg_frames, neg_ids, store, mcfg)
                            l_neg = float(ce_values(probs_neg, u_labels).mean())
                            d_neg = np.zeros_like(probs_neg)
                            if weights.beta > 0:
                                d_neg += weights.beta * ce_grad(probs_neg, u_labels) / u
                            neg_pack = (probs_neg, cache_neg, d_neg)
                        if weights.lam > 0:
                            con_vals, con_cache = loss_con_batch(
                                probs[usable], pos_pack[0], neg_pack[0], weights.tau)
                            l_con = float(con_vals.mean())
                            dp, dpp, dpn = loss_con_batch_backward(con_cache)
                            d_probs[usable] += weights.lam * dp / u
                            pos_pack[2][...] += weights.lam * dpp / u
                            neg_pack[2][...] += weights.lam * dpn / u

                if not all(map(math.isfinite, (l_qa, l_pos, l_neg, l_con))):
                    raise FloatingPointError(
                        f"non-finite loss at stage {cfg.stage} epoch {epoch} step {global_step}; "
                        f"last-good checkpoint: {cfg.checkpoint_out}"
                    )
                breakdown = total_loss(l_qa, l_pos, l_neg, l_con, weights)

                store.zero_grads()
                modellib.backward_batch(d_probs, cache, store, mcfg)
                if pos_pack is not None:
                    modellib.backward_batch(pos_pack[2], pos_pack[1], store, mcfg)
                if neg_pack is not None:
                    modellib.backward_batch(neg_pack[2], neg_pack[1], store, mcfg)
                adam_step(store, adam, lr=cfg.lr, weight_decay=cfg.weight_decay)

                row = {"kind": "step", "stage": cfg.stage, "epoch": epoch, "step": global_step}
                row.update(breakdown.to_dict())
                metrics.write(json.dumps(row) + "\n")
                step_totals.append(breakdown.total)
                global_step += 1

            train_acc = correct / n
            final_acc = train_acc
            stat = {
                "kind": "epoch",
                "stage": cfg.stage,
                "epoch": epoch,
                "train_loss": math.fsum(step_totals) / len(step_totals),
                "train_acc": train_acc,
            }
            metrics.write(json.dumps(stat) + "\n")
            epoch_stats.append(stat)
            save_model(cfg.checkpoint_out, store, adam, mcfg,
                       ds.answer_set, ds.vocab, cfg.stage, epoch)
            if cfg.early_stop_train_acc is not None and train_acc >= cfg.early_stop_train_acc:
                break

    if not epoch_stats:  # zero-epoch run still produces a checkpoint
        save_model(cfg.checkpoint_out, store, adam, mcfg, ds.answer_set, ds.vocab, cfg.stage, -1)
    return TrainResult(
        checkpoint_path=str(cfg.checkpoint_out),
        metrics_path=str(metrics_path),
        epochs_run=len(epoch_stats),
        final_train_acc=final_acc,
        epoch_stats=epoch_stats,
    )


def read_metrics(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def rouge_l(candidate: list[str], reference: list[str]) -> tuple[float, float, float]:
    """LCS-based (precision, recall, F1) over token sequences."""
    if not candidate or not reference:
        raise InputError("rouge_l needs nonempty candidate and reference")
    m, k = len(candidate), len(reference)
    table = [[0] * (k + 1) for _ in range(m + 1)]
    for i in range(m):
        row, prev = table[i + 1], table[i]
        for j in range(k):
            row[j + 1] = prev[j] + 1 if candidate[i] == reference[j] else max(prev[j + 1], row[j])
    lcs = table[m][k]
    p = lcs / m
    r = lcs / k
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f1


@dataclass
class Metrics:
    n: int
    accuracy_all: float
    accuracy_open: float
    accuracy_binary: float
    per_category: dict[str, float]
    category_counts: dict[str, int]
    rouge_l_f1: float
    similarity_margin: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(ds: Dataset, checkpoint_path: str | Path, batch_size: int = 64) -> Metrics:
    """Argmax accuracy (overall, open/binary, per category) plus mean
    ROUGE-L F1 between predicted and reference answer strings."""
    store, _, mcfg, meta = load_model(checkpoint_path)
    if meta["answer_set"] != ds.answer_set:
        raise ConfigError("checkpoint answer set does not match the dataset")
    token_to_id = {tok: i for i, tok in enumerate(meta["vocab"])}
    answers = [a.split() for a in ds.answer_set]

    correct = {cat: 0 for cat in CATEGORIES}
    counts = {cat: 0 for cat in CATEGORIES}
    rouge_scores: list[float] = []
    n = len(ds.records)
    for lo in range(0, n, batch_size):
        batch = ds.records[lo : lo + batch_size]
        frames = np.stack([ds.frames[r.video_id] for r in batch])
        ids = np.array(
            [encode_tokens(r.question_tokens, token_to_id, mcfg.text_len) for r in batch],
            dtype=np.int64,
        )
        probs, _ = modellib.forward_batch(frames, ids, store, mcfg)
        preds = np.argmax(probs, axis=1)
        for rec, pred in zip(batch, preds):
            counts[rec.category] += 1
            if int(pred) == rec.answer_label:
                correct[rec.category] += 1
            rouge_scores.append(rouge_l(answers[int(pred)], answers[rec.answer_label])[2])

    total_correct = sum(correct.values())
    open_n = sum(counts[c] for c in OPEN_CATEGORIES)
    open_correct = sum(correct[c] for c in OPEN_CATEGORIES)
    per_cat = {c: (correct[c] / counts[c] if counts[c] else 0.0) for c in CATEGORIES}
    return Metrics(
        n=n,
        accuracy_all=total_correct / n if n else 0.0,
        accuracy_open=open_correct / open_n if open_n else 0.0,
        accuracy_binary=per_cat["binary"],
        per_category=per_cat,
        category_counts=counts,
        rouge_l_f1=math.fsum(rouge_scores) / len(rouge_scores) if rouge_scores else 0.0,
    )


# ---------------------------------------------------------------------------
# Similarity audit
# ---------------------------------------------------------------------------


@dataclass
class AuditReport:
    n_total: int
    n_usable: int
    fraction_positive: float
    margin_mean: float
    margin_min: float
    margin_max: float
    histogram_edges: list[float]
    histogram_counts: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


def similarity_audit(ds: Dataset, checkpoint_path: str | Path, cfg: TrainConfig,
                     batch_size: int = 64) -> AuditReport:
    """Margin s(P, P+) - s(P, P-) per contrastive-usable sample under a
    frozen augmentation draw; reports the fraction above zero."""
    store, _, mcfg, meta = load_model(checkpoint_path)
    if meta["answer_set"] != ds.answer_set:
        raise ConfigError("checkpoint answer set does not match the dataset")
    token_to_id = {tok: i for i, tok in enumerate(meta["vocab"])}
    augmenter = TextAugmenter(ds, cfg.text_variant, cfg.lexicon, cfg.swap_table)
    bbox_map = videocf.load_bboxes(cfg.bboxes) if cfg.video_variant == "f_v4" else None
    pair_cache = VideoPairCache(ds.frames, cfg.video_variant, bbox_map, cfg.fill)

    margins: list[float] = []
    n = len(ds.records)
    pending: list[tuple] = []

    def flush() -> None:
        if not pending:
            return
        frames = np.stack([p[0] for p in pending])
        ids = np.array([p[1] for p in pending], dtype=np.int64)
        pos_frames = np.stack([p[2] for p in pending])
        pos_ids = np.array([p[3] for p in pending], dtype=np.int64)
        neg_frames = np.stack([p[4] for p in pending])
        neg_ids = np.array([p[5] for p in pending], dtype=np.int64)
        probs, _ = modellib.forward_batch(frames, ids, store, mcfg)
        probs_pos, _ = modellib.forward_batch(pos_frames, pos_ids, store, mcfg)
        probs_neg, _ = modellib.forward_batch(neg_frames, neg_ids, store, mcfg)
        norm = lambda x: x / np.linalg.norm(x, axis=1, keepdims=True)
        pn, ppn, pnn = norm(probs), norm(probs_pos), norm(probs_neg)
        s_pos = np.einsum("ij,ij->i", pn, ppn)
        s_neg = np.einsum("ij,ij->i", pn, pnn)
        margins.extend((s_pos - s_neg).tolist())
        pending.clear()

    for i, rec in enumerate(ds.records):
        triple = augmenter.triple(rec.question_tokens, rec.answer_label, rec.category,
                                  _rng(cfg.seed, _AUDIT_SALT, i))
        if not triple.contrastive_usable:
            continue
        v_pos, v_neg = pair_cache.get(rec.video_id)
        pending.append(
            (
                ds.frames[rec.video_id],
                encode_tokens(rec.question_tokens, token_to_id, mcfg.text_len),
                v_pos,
                encode_tokens(triple.positive.tokens, token_to_id, mcfg.text_len),
                v_neg,
                encode_tokens(triple.negative.tokens, token_to_id, mcfg.text_len),
            )
        )
        if len(pending) >= batch_size:
            flush()
    flush()

    arr = np.array(margins) if margins else np.zeros(0)
    edges = np.linspace(-2.0, 2.0, 17)
    hist = np.histogram(arr, bins=edges)[0] if arr.size else np.zeros(16, dtype=int)
    return AuditReport(
        n_total=n,
        n_usable=int(arr.size),
        fraction_positive=float(np.mean(arr > 0)) if arr.size else 0.0,
        margin_mean=float(arr.mean()) if arr.size else 0.0,
        margin_min=float(arr.min()) if arr.size else 0.0,
        margin_max=float(arr.max()) if arr.size else 0.0,
        histogram_edges=edges.tolist(),
        histogram_counts=hist.tolist(),
    )


# ---------------------------------------------------------------------------
# Full-objective gradient audit
# ---------------------------------------------------------------------------


def full_objective_grad_check(
    n_samples: int = 3,
    eps: float = 1e-4,
    max_coords: int = 8,
    seed: int = 0,
    weights: LossWeights | None = None,
    text_variant: str = "f_q3",
    video_variant: str = "f_v1",
) -> float:
    """Finite-difference audit of the composite objective.

    Builds a small synthetic batch with frozen augmentations, assembles the
    analytic gradient through the production backward path, then compares
    against central differences on sampled coordinates of every parameter
    tensor. Returns the worst relative error.
    """
    from .numkit import grad_check
    from .synthgen import WorldSpec, build_split

    weights = weights or LossWeights()
    world = WorldSpec(h=32, w=32, glyph_size=12, noise_level=0.05, n_frames=4)
    lex = textcf.SynonymLexicon.from_tsv(textcf.DEFAULT_LEXICON)
    ds = build_split(world, n_samples, seed, "gradcheck",
                     extra_tokens=sorted(lex.tokens()), k_choices=(2, 3))
    mcfg = modellib.ModelConfig(
        token_vocab_size=len(ds.vocab),
        answer_set_size=len(ds.answer_set),
        d=32,
        n_heads=4,
        n_video_layers=1,
        n_text_layers=1,
        n_frames=world.n_frames,
        frame_channels=world.c,
        frame_size=world.h,
        patch_size=8,
        text_len=12,
        seed=seed,
    )
    store = modellib.init_params(mcfg)
    token_to_id = {tok: i for i, tok in enumerate(ds.vocab)}
    augmenter = TextAugmenter(ds, text_variant)
    pair_cache = VideoPairCache(ds.frames, video_variant, None, 0.0)

    frames = np.stack([ds.frames[r.video_id] for r in ds.records])
    ids = np.array(
        [encode_tokens(r.question_tokens, token_to_id, mcfg.text_len) for r in ds.records],
        dtype=np.int64,
    )
    labels = np.array([r.answer_label for r in ds.records], dtype=np.int64)
    triples = [
        augmenter.triple(r.question_tokens, r.answer_label, r.category, _rng(seed, _AUDIT_SALT, i))
        for i, r in enumerate(ds.records)
    ]
    usable = [i for i, t in enumerate(triples) if t.contrastive_usable]
    if not usable:
        raise ConfigError("gradient audit batch has no contrastive-usable samples")
    pos_ids = np.array(
        [encode_tokens(triples[i].positive.tokens, token_to_id, mcfg.text_len) for i in usable],
        dtype=np.int64,
    )
    neg_ids = np.array(
        [encode_tokens(triples[i].negative.tokens, token_to_id, mcfg.text_len) for i in usable],
        dtype=np.int64,
    )
    pos_frames = np.stack([pair_cache.get(ds.records[i].video_id)[0] for i in usable])
    neg_frames = np.stack([pair_cache.get(ds.records[i].video_id)[1] for i in usable])
    u_labels = labels[usable]
    b, u = len(ds.records), len(usable)

    def objective(with_grads: bool) -> float:
        probs, cache = modellib.forward_batch(frames, ids, store, mcfg)
        probs_pos, cache_pos = modellib.forward_batch(pos_frames, pos_ids, store, mcfg)
        probs_neg, cache_neg = modellib.forward_batch(neg_frames, neg_ids, store, mcfg)
        l_qa = float(ce_values(probs, labels).mean())
        l_pos = float(ce_values(probs_pos, u_labels).mean())
        l_neg = float(ce_values(probs_neg, u_labels).mean())
        con_vals, con_cache = loss_con_batch(probs[usable], probs_pos, probs_neg, weights.tau)
        l_con = float(con_vals.mean())
        breakdown = total_loss(l_qa, l_pos, l_neg, l_con, weights)
        if with_grads:
            d_probs = ce_grad(probs, labels) / b
            d_pos = weights.alpha * ce_grad(probs_pos, u_labels) / u
            d_neg = weights.beta * ce_grad(probs_neg, u_labels) / u
            dp, dpp, dpn = loss_con_batch_backward(con_cache)
            d_probs[usable] += weights.lam * dp / u
            d_pos += weights.lam * dpp / u
            d_neg += weights.lam * dpn / u
            store.zero_grads()
            modellib.backward_batch(d_probs, cache, store, mcfg)
            modellib.backward_batch(d_pos, cache_pos, store, mcfg)
            modellib.backward_batch(d_neg, cache_neg, store, mcfg)
        return breakdown.total

    objective(with_grads=True)
    return grad_check(
        lambda: objective(with_grads=False),
        store,
        eps=eps,
        max_coords=max_coords,
        rng=np.random.default_rng(seed),
    )


# ---------------------------------------------------------------------------
# Variant ablation matrix
# ---------------------------------------------------------------------------


def run_ablation(template: TrainConfig, out_dir: str | Path) -> list[dict]:
    """Run every (text variant x video variant) stage-2 combination from one
    template and collect test metrics per run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ds = read_dataset(template.data_dir, "train")
    test_ds = read_dataset(template.data_dir, "test")

    stage1_ckpt = template.checkpoint_in
    if not stage1_ckpt:
        stage1_ckpt = str(out_dir / "stage1.nkt")
        cfg1 = replace(template, stage=1, epochs=template.epochs,
                       checkpoint_in=None, checkpoint_out=stage1_ckpt,
                       metrics_out=str(out_dir / "stage1.metrics.jsonl"))
        train_stage1(train_ds, cfg1)

    rows: list[dict] = []
    for tv, vv in product(textcf.TEXT_VARIANTS, videocf.VIDEO_VARIANTS):
        tag = f"{tv}_{vv}"
        cfg2 = replace(
            template,
            stage=2,
            text_variant=tv,
            video_variant=vv,
            checkpoint_in=stage1_ckpt,
            checkpoint_out=str(out_dir / f"{tag}.nkt"),
            metrics_out=str(out_dir / f"{tag}.metrics.jsonl"),
        )
        result = train_stage2(train_ds, cfg2)
        metrics = evaluate(test_ds, cfg2.checkpoint_out)
        rows.append(
            {
                "text_variant": tv,
                "video_variant": vv,
                "accuracy_all": metrics.accuracy_all,
                "accuracy_open": metrics.accuracy_open,
                "accuracy_binary": metrics.accuracy_binary,
                "final_train_acc": result.final_train_acc,
                "checkpoint": cfg2.checkpoint_out,
            }
        )
    (out_dir / "ablation.json").write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")
    (out_dir / "ablation.md").write_text(format_ablation_table(rows))
    return rows


def format_ablation_table(rows: list[dict]) -> str:
    lines = [
        "| text | video | open | binary | all |",
        "|------|-------|------|--------|-----|",
    ]
    for r in rows:
        lines.append(
            f"| {r['text_variant']} | {r['video_variant']} "
            f"| {r['accuracy_open']:.4f} | {r['accuracy_binary']:.4f} | {r['accuracy_all']:.4f} |"
        )
    return "\n".join(lines) + "\n"
