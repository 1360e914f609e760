"""Per-image textual tuning: prompt bank, gradient surgery, and the step loop.

The learnable state is a bank of token-embedding sequences: one general
sequence per prompt and one per-category sequence, composed by concatenation
and pushed through the backend text encoder. Gradients of the two
self-supervised losses are combined by projecting away conflicting components
before a single adaptive update.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .backends import Backend
from .config import SegTTOConfig
from .errors import EncoderError, NonFiniteLossError
from .objective import (
    LOG_FLOOR,
    aggregate_values,
    aggregate_weights,
    cross_entropy_values,
    entropy_values,
    hard_labels,
    normalize_rows,
    softmax,
)
from .templates import learnable_templates, template_prefix
from .types import CategoryVocabulary, FeatureMap

ENTROPY = "entropy"
CROSS_ENTROPY = "cross_entropy"


class GradientPair(NamedTuple):
    g_a: np.ndarray
    g_b: np.ndarray


def pcgrad_combine(g_a: np.ndarray, g_b: np.ndarray) -> np.ndarray:
    """Sum two task gradients after removing their conflicting components.

    If the gradients do not conflict (non-negative dot product) this is the
    plain sum; otherwise each is projected onto the normal plane of the other
    first. Zero vectors never conflict, so they pass through unprojected.
    """
    g_a = np.asarray(g_a, dtype=np.float64)
    g_b = np.asarray(g_b, dtype=np.float64)
    if g_a.ndim != 1 or g_a.shape != g_b.shape:
        raise ValueError(f"gradients must be equal-length vectors, got {g_a.shape} and {g_b.shape}")
    if not (np.isfinite(g_a).all() and np.isfinite(g_b).all()):
        raise ValueError("gradients must be finite")
    dot = float(g_a @ g_b)
    if dot >= 0.0:
        return g_a + g_b
    proj_a = g_a - (dot / float(g_b @ g_b)) * g_b
    proj_b = g_b - (dot / float(g_a @ g_a)) * g_a
    return proj_a + proj_b


@dataclass
class PromptBank:
    """Learnable token-embedding state plus its frozen initialization."""

    class_tokens: list[np.ndarray]      # n entries, (L_j, token_dim)
    prompt_tokens: list[np.ndarray]     # p entries, (L_k, token_dim)
    class_labels: list[str]
    prompt_templates: list[str]
    snapshot: tuple = field(repr=False, default=())

    def __post_init__(self):
        if not self.snapshot:
            self.snapshot = (
                tuple(a.copy() for a in self.class_tokens),
                tuple(a.copy() for a in self.prompt_tokens),
            )

    @property
    def n_categories(self) -> int:
        return len(self.class_tokens)

    @property
    def prompt_count(self) -> int:
        return len(self.prompt_tokens)


def build_prompt_bank(
    vocab: CategoryVocabulary,
    backend: Backend,
    prompt_count: int = 5,
    templates: Sequence[str] | None = None,
) -> PromptBank:
    """Initialize from natural language: template prefixes and category text.

    Category sequences use the description when the vocabulary carries one.
    """
    chosen = tuple(templates) if templates is not None else learnable_templates(prompt_count)
    if len(chosen) < prompt_count:
        raise ValueError(f"need {prompt_count} templates, got {len(chosen)}")
    chosen = chosen[:prompt_count]
    class_tokens = [
        backend.token_embeddings(vocab.prompt_text(j)) for j in range(len(vocab))
    ]
    prompt_tokens = [backend.token_embeddings(template_prefix(t)) for t in chosen]
    return PromptBank(
        class_tokens=class_tokens,
        prompt_tokens=prompt_tokens,
        class_labels=[vocab.prompt_text(j) for j in range(len(vocab))],
        prompt_templates=list(chosen),
    )


def reset_bank(bank: PromptBank) -> PromptBank:
    """Restore every learnable sequence to the frozen snapshot, bitwise."""
    saved_class, saved_prompt = bank.snapshot
    for dst, src in zip(bank.class_tokens, saved_class):
        np.copyto(dst, src)
    for dst, src in zip(bank.prompt_tokens, saved_prompt):
        np.copyto(dst, src)
    return bank


def compose_text_features(bank: PromptBank, backend: Backend) -> np.ndarray:
    """Encode every (category, prompt) pair into an (n, p, d) grid."""
    n, p = bank.n_categories, bank.prompt_count
    feats = np.empty((n, p, backend.embed_dim), dtype=np.float64)
    for j in range(n):
        for k in range(p):
            seq = np.vstack([bank.prompt_tokens[k], bank.class_tokens[j]])
            try:
                feats[j, k] = backend.encode_sequence(seq)
            except EncoderError as exc:
                raise EncoderError(
                    f"text encoding failed for category {j}, prompt {k}: {exc}"
                ) from exc
    return feats


def _compose_with_vjp(bank: PromptBank, backend: Backend):
    n, p = bank.n_categories, bank.prompt_count
    feats = np.empty((n, p, backend.embed_dim), dtype=np.float64)
    vjps = [[None] * p for _ in range(n)]
    for j in range(n):
        for k in range(p):
            seq = np.vstack([bank.prompt_tokens[k], bank.class_tokens[j]])
            feats[j, k], vjps[j][k] = backend.encode_sequence_and_vjp(seq)
    return feats, vjps


def _tunable_arrays(bank: PromptBank, tune_mode: str) -> list[np.ndarray]:
    if tune_mode == "pce":
        return list(bank.class_tokens) + list(bank.prompt_tokens)
    if tune_mode == "ce":
        return list(bank.class_tokens)
    if tune_mode == "pe":
        return list(bank.prompt_tokens)
    raise ValueError(f"unknown tune mode {tune_mode!r}")


def _flatten(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays])


def _apply_delta(arrays: Sequence[np.ndarray], delta: np.ndarray) -> None:
    offset = 0
    for a in arrays:
        a += delta[offset : offset + a.size].reshape(a.shape)
        offset += a.size


def evaluate_ssl(
    bank: PromptBank,
    views: Sequence[FeatureMap],
    cfg: SegTTOConfig,
    backend: Backend,
    which: Sequence[str] = (ENTROPY, CROSS_ENTROPY),
    need_grads: bool = True,
) -> tuple[dict[str, float], dict[str, np.ndarray]]:
    """Loss values (and gradients) of the requested objectives.

    Each view contributes the spatial aggregate of its per-location loss; the
    views are averaged in index order. Pseudo-labels are recomputed from the
    current features and treated as constants. Gradients are flattened over
    the cfg.tune_mode subset, category sequences first.
    """
    if not views:
        raise ValueError("evaluate_ssl needs at least one view")
    feats, vjps = _compose_with_vjp(bank, backend)
    n, p, d = feats.shape
    b_hat = feats  # backend embeddings arrive unit-norm
    b_norms = np.maximum(np.linalg.norm(feats, axis=2), 1e-12)

    values = {name: 0.0 for name in which}
    d_feats = {name: np.zeros_like(feats) for name in which} if need_grads else {}
    inv_views = 1.0 / len(views)

    for view in views:
        flat = view.values.reshape(-1, view.values.shape[-1]).astype(np.float64)
        a_hat = normalize_rows(flat)
        cos = np.einsum("qd,npd->qnp", a_hat, b_hat / b_norms[..., None])
        logits = cfg.temperature * cos.mean(axis=2)
        probs = softmax(logits)

        per_loss_location = {}
        if ENTROPY in which:
            per_loss_location[ENTROPY] = entropy_values(probs)
        if CROSS_ENTROPY in which:
            if cfg.pseudo_label_mode == "hard":
                labels = hard_labels(probs)
            else:
                labels = probs.copy()
            per_loss_location[CROSS_ENTROPY] = cross_entropy_values(probs, labels)

        for name, location_losses in per_loss_location.items():
            values[name] += aggregate_values(location_losses, cfg.aggregation_mode) * inv_views
            if not need_grads:
                continue
            w_agg = aggregate_weights(location_losses, cfg.aggregation_mode) * inv_views
            if name == ENTROPY:
                # dH/dz_j = -p_j (log p_j + H)
                logp = np.where(probs > 0.0, np.log(np.maximum(probs, LOG_FLOOR)), 0.0)
                d_logits = -probs * (logp + location_losses[:, None])
            else:
                d_logits = probs - labels
            d_logits = d_logits * w_agg[:, None]
            d_cos = d_logits[:, :, None] * (cfg.temperature / p)
            term_a = np.einsum("qnp,qd->npd", d_cos, a_hat)
            term_b = (d_cos * cos).sum(axis=0)[..., None] * (b_hat / b_norms[..., None])
            d_feats[name] += (term_a - term_b) / b_norms[..., None]

    grads: dict[str, np.ndarray] = {}
    if need_grads:
        prompt_rows = [t.shape[0] for t in bank.prompt_tokens]
        for name in which:
            class_grads = [np.zeros_like(a) for a in bank.class_tokens]
            prompt_grads = [np.zeros_like(a) for a in bank.prompt_tokens]
            for j in range(n):
                for k in range(p):
                    token_grad = vjps[j][k](d_feats[name][j, k])
                    split = prompt_rows[k]
                    prompt_grads[k] += token_grad[:split]
                    class_grads[j] += token_grad[split:]
            if cfg.tune_mode == "pce":
                parts = class_grads + prompt_grads
            elif cfg.tune_mode == "ce":
                parts = class_grads
            else:
                parts = prompt_grads
            grads[name] = _flatten(parts)
    return values, grads


class AdamW:
    """First-order adaptive moment update with decoupled weight decay."""

    def __init__(
        self,
        size: int,
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad: np.ndarray, params: np.ndarray) -> np.ndarray:
        """Returns the delta to add to the parameters."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        delta = -self.lr * (m_hat / (np.sqrt(v_hat) + self.eps))
        if self.weight_decay:
            delta = delta - self.lr * self.weight_decay * params
        return delta


@dataclass
class StepRecord:
    step: int
    loss: str
    value: float
    update_norm: float


@dataclass
class TuningTrace:
    records: list[StepRecord] = field(default_factory=list)
    initial_loss: float | None = None
    final_loss: float | None = None


def run_textual_tuning(
    bank: PromptBank,
    selected_views: Sequence[FeatureMap],
    cfg: SegTTOConfig,
    backend: Backend,
) -> tuple[PromptBank, TuningTrace]:
    """Adapt the bank on the selected views.

    min(entropy_steps, ce_steps) joint steps combine both gradients through
    pcgrad_combine; the surplus steps of the larger-count loss run alone.
    A joint step logs one record per loss, so the trace always carries
    entropy_steps + ce_steps records. Losses are evaluated before the update
    they trigger; initial_loss and final_loss bracket the whole run as the
    sum of both objectives.
    """
    if not selected_views:
        raise ValueError("tuning needs at least one selected view")
    trace = TuningTrace()
    joint = min(cfg.entropy_steps, cfg.ce_steps)
    surplus = abs(cfg.entropy_steps - cfg.ce_steps)
    surplus_loss = ENTROPY if cfg.entropy_steps > cfg.ce_steps else CROSS_ENTROPY
    if joint + surplus == 0:
        return bank, trace

    def checked(values: dict[str, float]) -> dict[str, float]:
        for name, value in values.items():
            if not np.isfinite(value):
                raise NonFiniteLossError(f"{name} loss became non-finite", trace=trace)
        return values

    both = (ENTROPY, CROSS_ENTROPY)
    initial, _ = evaluate_ssl(bank, selected_views, cfg, backend, both, need_grads=False)
    trace.initial_loss = sum(checked(initial).values())

    params = _tunable_arrays(bank, cfg.tune_mode)
    opt = AdamW(sum(a.size for a in params), lr=cfg.learning_rate)
    step = 0
    for _ in range(joint):
        values, grads = evaluate_ssl(bank, selected_views, cfg, backend, both)
        checked(values)
        combined = pcgrad_combine(grads[ENTROPY], grads[CROSS_ENTROPY])
        delta = opt.step(combined, _flatten(params))
        _apply_delta(params, delta)
        norm = float(np.linalg.norm(delta))
        trace.records.append(StepRecord(step, ENTROPY, values[ENTROPY], norm))
        trace.records.append(StepRecord(step, CROSS_ENTROPY, values[CROSS_ENTROPY], norm))
        step += 1
    for _ in range(surplus):
        values, grads = evaluate_ssl(bank, selected_views, cfg, backend, (surplus_loss,))
        checked(values)
        delta = opt.step(grads[surplus_loss], _flatten(params))
        _apply_delta(params, delta)
        trace.records.append(
            StepRecord(step, surplus_loss, values[surplus_loss], float(np.linalg.norm(delta)))
        )
        step += 1

    final, _ = evaluate_ssl(bank, selected_views, cfg, backend, both, need_grads=False)
    trace.final_loss = sum(checked(final).values())
    return bank, trace
