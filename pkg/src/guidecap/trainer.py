"""Initialization, AdaGrad, the epoch loop with CIDEr early stopping, gradient checks."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import DatasetSplit, ImageRecord, build_vocabulary, frequent_words, train_attribute_predictor
from .exceptions import ConfigError, DataError, NumericalError
from .metrics import cider
from .model import make_batch
from .numerics import DTYPE, ParamStore, finite_diff_grad, relative_error
from .objective import LossBreakdown
from .pipeline import CaptionModel, build_net

log = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-8


def init_params(specs: Dict[str, Tuple[tuple, bool]], seed: int = 0, scale: float = 0.1) -> ParamStore:
    """Weights i.i.d. uniform on [-scale, scale], biases zero."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for name, (shape, is_bias) in specs.items():
        value = np.zeros(shape) if is_bias else rng.uniform(-scale, scale, size=shape)
        store.add(name, value, bias=is_bias)
    return store


def adagrad_step(params: ParamStore, lr: float, weight_decay: float = 0.0, eps: float = ADAGRAD_EPS) -> None:
    """In-place AdaGrad update with L2 weight decay on non-bias tensors; clears gradients."""
    for name in params:
        g = params.grad(name)
        if weight_decay and not params.is_bias(name):
            g = g + weight_decay * params[name]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {name}")
        acc = params.accum(name)
        acc += g * g
        denom = np.sqrt(acc) + eps
        params[name][...] -= lr * np.divide(g, denom, out=np.zeros_like(g), where=denom > 0)
    params.zero_grad()


@dataclass
class TrainConfig:
    variant: str = "soft"
    lr: float = 0.01
    weight_decay: float = 1e-4
    lam: float = 10.0
    lam2: Optional[float] = None
    max_epochs: int = 30
    patience: int = 10
    batch_size: int = 16
    seed: int = 0
    attribute_mode: str = "oracle"
    guided: bool = True
    mask_annotations: bool = False
    mask_attributes: bool = False
    hidden: int = 64
    embed: int = 32
    attention: Optional[int] = None
    n_frequent: int = 50
    min_count: int = 5
    review_steps: int = 8
    share_review: bool = True
    max_len: int = 30
    init_range: float = 0.1
    predictor_lr: float = 0.5
    early_stopping: bool = True

    def validate(self) -> None:
        if self.lr <= 0 or self.predictor_lr <= 0:
            raise ConfigError("lr and predictor_lr must be > 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and max_epochs >= 0")
        if self.variant not in ("soft", "review"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.attribute_mode not in ("oracle", "predicted", "zero"):
            raise ConfigError(f"unknown attribute mode {self.attribute_mode!r}")
        if self.lam < 0 or (self.lam2 is not None and self.lam2 < 0):
            raise ConfigError("lambda must be >= 0")

    def replace(self, **kw) -> "TrainConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(kw)
        return TrainConfig(**values)


@dataclass
class TrainReport:
    train_loss: List[LossBreakdown] = field(default_factory=list)
    val_loss: List[LossBreakdown] = field(default_factory=list)
    val_cider: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""
    dropped_captions: int = 0

    def to_text(self) -> str:
        lines = ["epoch\tsplit\tnll\tdis1\tdis2\ttotal\tcider"]
        for i, tr in enumerate(self.train_loss):
            lines.append("\t".join([str(i + 1), "train", *(repr(float(x)) for x in tr.as_row()), "-"]))
            if i < len(self.val_loss):
                c = repr(float(self.val_cider[i])) if i < len(self.val_cider) else "-"
                lines.append("\t".join([str(i + 1), "val", *(repr(float(x)) for x in self.val_loss[i].as_row()), c]))
        lines.append(f"# best_epoch={self.best_epoch} stop={self.stop_reason} dropped_captions={self.dropped_captions}")
        return "\n".join(lines) + "\n"


def make_model(records: Sequence[ImageRecord], cfg: TrainConfig) -> CaptionModel:
    """Vocabulary, frequent words, attribute source and freshly initialized network."""
    if not records:
        raise DataError("training split is empty")
    tokens = [t for r in records for t in r.tokenized()]
    vocab = build_vocabulary(tokens, cfg.min_count)
    fws = frequent_words(tokens, cfg.n_frequent, vocab)
    predictor = None
    if cfg.attribute_mode == "predicted":
        predictor, bce = train_attribute_predictor(records, fws, lr=cfg.predictor_lr, weight_decay=cfg.weight_decay,
                                                   random_state=cfg.seed)
        log.info("attribute predictor training bce %.4f", bce)
    net = build_net(cfg.variant, vocab_size=len(vocab), n_frequent=len(fws), annot_dim=records[0].A.shape[1],
                    hidden=cfg.hidden, embed=cfg.embed, attention=cfg.attention, guided=cfg.guided,
                    mask_annotations=cfg.mask_annotations, mask_attributes=cfg.mask_attributes,
                    review_steps=cfg.review_steps, share_review=cfg.share_review)
    net.params = init_params(net.param_specs(), cfg.seed, cfg.init_range)
    return CaptionModel(net, vocab, fws, cfg.attribute_mode, predictor)


def _loss(net, batch, cfg: TrainConfig, grad: bool) -> LossBreakdown:
    if cfg.variant == "review":
        return net.loss(batch, cfg.lam, grad=grad, lam2=cfg.lam2)
    return net.loss(batch, cfg.lam, grad=grad)


def _mean_breakdown(parts: Sequence[Tuple[LossBreakdown, int]]) -> LossBreakdown:
    n = sum(w for _, w in parts)
    avg = lambda attr: sum(getattr(lb, attr) * w for lb, w in parts) / n
    return LossBreakdown(avg("nll"), avg("dis1"), avg("dis2"), avg("total"),
                         [t for lb, _ in parts for t in lb.token_nll])


def evaluate_loss(model: CaptionModel, pairs, cfg: TrainConfig, batch_size: int = 64) -> LossBreakdown:
    parts = []
    for s in range(0, len(pairs), batch_size):
        chunk = pairs[s:s + batch_size]
        parts.append((_loss(model.net, model.batch(chunk), cfg, grad=False), len(chunk)))
    return _mean_breakdown(parts)


def validation_cider(model: CaptionModel, records: Sequence[ImageRecord], max_len: int = 30) -> float:
    cands = model.caption(records, greedy=True, max_len=max_len)
    return cider(cands, [r.tokenized() for r in records])


def train_epoch(model: CaptionModel, pairs, cfg: TrainConfig, rng) -> LossBreakdown:
    order = rng.permutation(len(pairs))
    parts = []
    for bi, s in enumerate(range(0, len(pairs), cfg.batch_size)):
        chunk = [pairs[i] for i in order[s:s + cfg.batch_size]]
        lb = _loss(model.net, model.batch(chunk), cfg, grad=True)
        if not math.isfinite(lb.total):
            raise NumericalError(f"non-finite loss at batch {bi}")
        adagrad_step(model.params, cfg.lr, cfg.weight_decay)
        parts.append((lb, len(chunk)))
    return _mean_breakdown(parts)


def train(dataset: DatasetSplit, cfg: TrainConfig,
          score_fn: Optional[Callable[[CaptionModel, Sequence[ImageRecord]], float]] = None):
    """Train on ``dataset.train``; early-stop on validation CIDEr.

    Returns ``(model, report)``; ``model.params`` holds the best-CIDEr epoch.
    Without validation records (or with ``early_stopping`` off) the last
    epoch is kept.
    """
    cfg.validate()
    model = make_model(dataset.train, cfg)
    pairs, dropped = model.encode_pairs(dataset.train)
    if not pairs:
        raise DataError("no non-empty training captions")
    val_pairs, _ = model.encode_pairs(dataset.val)
    score_fn = score_fn or (lambda m, recs: validation_cider(m, recs, cfg.max_len))
    use_cider = cfg.early_stopping and len(dataset.val) >= 2
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport(dropped_captions=dropped)
    best, best_score, since = None, -math.inf, 0
    report.stop_reason = "max_epochs"
    for epoch in range(1, cfg.max_epochs + 1):
        try:
            report.train_loss.append(train_epoch(model, pairs, cfg, rng))
        except NumericalError as exc:
            raise NumericalError(f"epoch {epoch}: {exc}") from None
        if val_pairs:
            report.val_loss.append(evaluate_loss(model, val_pairs, cfg))
        if not use_cider:
            continue
        score = score_fn(model, dataset.val)
        report.val_cider.append(score)
        log.info("epoch %d train %.4f val cider %.4f", epoch, report.train_loss[-1].total, score)
        if score > best_score:
            best_score, best, since = score, model.params.copy(), 0
            report.best_epoch = epoch
        else:
            since += 1
            if since >= cfg.patience:
                report.stop_reason = "patience"
                break
    if best is not None:
        model.params.load_values(best)
    else:
        report.best_epoch = len(report.train_loss)
    return model, report


# --- gradient check -------------------------------------------------------------

@dataclass
class TinyConfig:
    vocab: int = 12
    embed: int = 6
    hidden: int = 8
    k: int = 4
    annot_dim: int = 6
    n_frequent: int = 5
    review_steps: int = 3
    share_review: bool = True
    caption_len: int = 6
    lam: float = 10.0
    init_range: float = 0.5
    seed: int = 0
    h: float = 1e-5

    max_scalars = 10_000


def tiny_problem(variant: str, cfg: TinyConfig):
    """Random network and one random record for gradient checks."""
    rng = np.random.default_rng(cfg.seed)
    net = build_net(variant, vocab_size=cfg.vocab, n_frequent=cfg.n_frequent, annot_dim=cfg.annot_dim,
                    hidden=cfg.hidden, embed=cfg.embed, review_steps=cfg.review_steps,
                    share_review=cfg.share_review)
    net.params = init_params(net.param_specs(), cfg.seed, cfg.init_range)
    for name in net.params:
        if net.params.is_bias(name):
            net.params[name][...] = rng.uniform(-cfg.init_range, cfg.init_range, net.params[name].shape)
    A = rng.standard_normal((cfg.k, cfg.annot_dim))
    e = rng.uniform(0, 1, cfg.n_frequent)
    words = rng.integers(3, cfg.vocab, size=cfg.caption_len)
    ids = [0, *words.tolist(), 1]
    labels = np.zeros(cfg.n_frequent)
    labels[: max(1, cfg.n_frequent // 2)] = 1.0
    batch = make_batch([A], [e], [ids], [labels])
    return net, batch


def grad_check(variant: str = "soft", cfg: TinyConfig = None, backward_hook=None, problem=None) -> Dict[str, float]:
    """Max relative error per tensor between the analytic gradient and central differences.

    ``problem`` is an optional ``(net, batch)`` pair used instead of :func:`tiny_problem`.
    """
    cfg = cfg or TinyConfig()
    net, batch = problem if problem is not None else tiny_problem(variant, cfg)
    if len(net.params) == 0:
        return {}
    if net.params.n_scalars() > cfg.max_scalars:
        raise ConfigError(f"gradient check refuses {net.params.n_scalars()} scalars (limit {cfg.max_scalars})")
    net.params.zero_grad()
    net.loss(batch, cfg.lam, grad=True)
    analytic = net.params.grads()
    if backward_hook is not None:
        backward_hook(analytic)
    # the oracle runs in extended precision so tiny gradients sit above its noise floor
    analytic_store, net.params = net.params, net.params.astype(np.longdouble)
    try:
        numeric = finite_diff_grad(lambda: net.loss(batch, cfg.lam).total, net.params, cfg.h)
    finally:
        net.params = analytic_store
    return {name: float(relative_error(analytic[name], numeric[name]).max()) if analytic[name].size else 0.0
            for name in net.params}


# --- ablation ---------------------------------------------------------------------

ARMS = (("keep both", False, False), ("keep e", True, False), ("keep A", False, True), ("keep none", True, True))
DEFAULT_LAMBDAS = (100.0, 10.0, 1.0, 0.1, 0.01)


@dataclass
class AblationRow:
    arm: str
    lam: float
    val_nll: float
    val_cider: float
    per_seed_nll: List[float]


def ablate(dataset: DatasetSplit, cfg: TrainConfig, seeds: Sequence[int], epochs: int,
           lambdas: Sequence[float] = (), measure_cider: bool = True) -> List[AblationRow]:
    """Train every arm for a fixed number of epochs per seed; rows in fixed arm order."""
    if len(seeds) < 1:
        raise ConfigError("ablation needs at least one seed")
    runs = [(name, cfg.replace(mask_annotations=ma, mask_attributes=me)) for name, ma, me in ARMS]
    runs += [(f"lambda={lam:g}", cfg.replace(lam=lam, lam2=None)) for lam in lambdas]
    rows = []
    for name, arm_cfg in runs:
        nlls, ciders = [], []
        for seed in seeds:
            c = arm_cfg.replace(seed=seed, max_epochs=epochs, early_stopping=False)
            model, report = train(dataset, c)
            nlls.append(float(report.val_loss[-1].nll) if report.val_loss else float("nan"))
            if measure_cider and len(dataset.val) >= 2:
                ciders.append(float(validation_cider(model, dataset.val, c.max_len)))
        rows.append(AblationRow(name, arm_cfg.lam, float(np.mean(nlls)),
                                float(np.mean(ciders)) if ciders else float("nan"), nlls))
    return rows


def ablation_table(rows: Sequence[AblationRow], seeds: Sequence[int]) -> str:
    lines = [f"# seeds={','.join(str(s) for s in seeds)}", "arm\tlambda\tval_nll\tval_cider\tper_seed_nll"]
    for r in rows:
        lines.append("\t".join([r.arm, repr(r.lam), f"{r.val_nll:.6f}", f"{r.val_cider:.6f}",
                                ",".join(f"{x:.6f}" for x in r.per_seed_nll)]))
    return "\n".join(lines) + "\n"
