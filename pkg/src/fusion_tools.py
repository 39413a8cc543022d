"""
Semantic score aggregation, the fusion MLP and the multi-modality inference pass.
"""
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.common_utils import make_rng
from src.errors import FusionError
from src.models.domain import Label, LabeledCorpus, Session
from src.models.fusion import (
    NO_SEMANTIC_CONTENT,
    UNSCORED,
    AggregationMode,
    FusionHyper,
    JointFeature,
    MlpParams,
    ScoreBundle,
    SemanticStatVector,
    ViewSet,
)
from src.models.prompts import Modality, PromptRecord
from src.models.scoring import SessionScores
from src.prompt_tools import session_prompts
from src.scorer_tools import StrategyScorer, batch_score
from src.view_tools import ViewContext

logger = logging.getLogger(__name__)

LOSS_CLAMP = 1e-7
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def semantic_stats(scores: Sequence[float]) -> SemanticStatVector:
    """[mean, max, std, min] of the per-entry semantic scores (population std)"""
    if len(scores) == 0:
        return SemanticStatVector(empty=True)
    a = np.sort(np.asarray(scores, dtype=float))
    lo, hi = float(a.min()), float(a.max())
    if lo == hi:
        return SemanticStatVector(mean=lo, max=hi, std=0.0, min=lo)
    mean = min(max(float(a.mean()), lo), hi)
    return SemanticStatVector(mean=mean, max=hi, std=float(a.std()), min=lo)


def aggregate_semantic(scores: Sequence[float], mode: AggregationMode = AggregationMode.FULL_STATS) -> List[float]:
    return semantic_stats(scores).select(mode)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _forward(weights: List[np.ndarray], biases: List[np.ndarray], X: np.ndarray):
    """Affine/ReLU stack with a sigmoid head; returns outputs and layer inputs"""
    inputs = []
    h = X
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        inputs.append(h)
        pre = h @ W + b
        h = sigmoid(pre) if i == last else np.maximum(pre, 0.0)
    return h[:, 0], inputs


def _backward(weights: List[np.ndarray], inputs: List[np.ndarray], alpha: np.ndarray, y: np.ndarray):
    """Gradients of mean BCE; d loss / d logit = (alpha - y) / N"""
    n = len(y)
    delta = ((alpha - y) / n)[:, None]
    grad_w = [None] * len(weights)
    grad_b = [None] * len(weights)
    for i in reversed(range(len(weights))):
        grad_w[i] = inputs[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            # inputs[i] is relu(pre) of layer i-1, positive exactly where the unit was active
            delta = (delta @ weights[i].T) * (inputs[i] > 0)
    return grad_w, grad_b


def init_weights(sizes: Sequence[int], seed: int) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Glorot-uniform weights, zero biases"""
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def bce_loss(alpha: float, y: Union[Label, int]) -> float:
    a = min(max(float(alpha), LOSS_CLAMP), 1.0 - LOSS_CLAMP)
    y = int(y)
    return -(y * math.log(a) + (1 - y) * math.log(1.0 - a))


def mean_bce(alpha: np.ndarray, y: np.ndarray) -> float:
    a = np.clip(alpha, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    return float(-np.mean(y * np.log(a) + (1.0 - y) * np.log(1.0 - a)))


def loss_and_gradients(weights: List[np.ndarray], biases: List[np.ndarray], X: np.ndarray, y: np.ndarray):
    alpha, inputs = _forward(weights, biases, X)
    grad_w, grad_b = _backward(weights, inputs, alpha, y)
    return mean_bce(alpha, y), grad_w, grad_b


def _feature_vector(params: MlpParams, z) -> np.ndarray:
    if isinstance(z, JointFeature):
        z = z.vector(params.mode, params.views)
    x = np.asarray(z, dtype=float).reshape(-1)
    if x.shape[0] != params.input_width:
        raise FusionError(f"feature width {x.shape[0]} does not match MLP input width {params.input_width}")
    return x


def mlp_forward(params: MlpParams, z: Union[JointFeature, Sequence[float]]) -> float:
    weights, biases = params.arrays()
    alpha, _ = _forward(weights, biases, _feature_vector(params, z)[None, :])
    return float(alpha[0])


def decide(alpha_joint: float, theta: float = 0.5) -> Label:
    return Label.ABNORMAL if alpha_joint >= theta else Label.NORMAL


def train_fusion(dataset: Sequence[Tuple[JointFeature, Label]], hyper: FusionHyper) -> Tuple[MlpParams, float]:
    """Fit the fusion MLP with mini-batch Adam on mean BCE.

    Initialisation and batch order both derive from hyper.seed, so equal
    inputs give equal parameters. Returns the params and the final loss
    over the whole training set.
    """
    if not dataset:
        raise FusionError("degenerate training set: no labeled sessions")
    X = np.asarray([f.vector(hyper.mode, hyper.views) for f, _ in dataset], dtype=float)
    y = np.asarray([int(label) for _, label in dataset], dtype=float)
    positives = int(y.sum())
    if positives == 0 or positives == len(y):
        raise FusionError(f"degenerate training set: all {len(y)} sessions share one label")

    weights, biases = init_weights(hyper.layer_sizes, hyper.seed)
    params = weights + biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = make_rng(hyper.seed)
    step = 0
    logger.info(f"Training fusion MLP {hyper.layer_sizes} on {len(y)} sessions ({positives} abnormal)")
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), hyper.batch_size):
            batch = order[start:start + hyper.batch_size]
            _, grad_w, grad_b = loss_and_gradients(weights, biases, X[batch], y[batch])
            step += 1
            for i, (p, g) in enumerate(zip(params, grad_w + grad_b)):
                m[i] = ADAM_BETA1 * m[i] + (1 - ADAM_BETA1) * g
                v[i] = ADAM_BETA2 * v[i] + (1 - ADAM_BETA2) * g * g
                m_hat = m[i] / (1 - ADAM_BETA1 ** step)
                v_hat = v[i] / (1 - ADAM_BETA2 ** step)
                p -= hyper.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if (epoch + 1) % 50 == 0:
            alpha, _ = _forward(weights, biases, X)
            logger.debug(f"epoch {epoch + 1}: loss {mean_bce(alpha, y):.6f}")

    alpha, _ = _forward(weights, biases, X)
    final_loss = mean_bce(alpha, y)
    logger.info(f"Fusion training finished with loss {final_loss:.6f}")
    return MlpParams.from_arrays(weights, biases, hyper, final_loss), final_loss


def joint_feature(record: SessionScores) -> JointFeature:
    return JointFeature(v_sem=semantic_stats(record.semantic_scores), alpha_beh=record.alpha_beh or 0.0)


def training_set(records: Sequence[SessionScores]) -> List[Tuple[JointFeature, Label]]:
    dataset = [(joint_feature(r), r.label) for r in records if r.scored and r.label is not None]
    dropped = len(records) - len(dataset)
    if dropped:
        logger.warning(f"Left {dropped} unscored or unlabeled sessions out of fusion training")
    return dataset


async def score_corpus(
    corpus: Union[LabeledCorpus, Sequence[Session]],
    scorers: Dict[Modality, StrategyScorer],
    ctx: ViewContext,
    parallelism: int = 1,
    views: ViewSet = ViewSet.BOTH,
) -> List[SessionScores]:
    """Run both branch scorers over every prompt of a corpus in one batch each"""
    sessions = list(corpus.sessions if isinstance(corpus, LabeledCorpus) else corpus)
    needed = [m for m, used in ((Modality.SEMANTIC, views.uses_semantic), (Modality.BEHAVIORAL, views.uses_behavioral)) if used]

    # per modality: flat prompt list plus the owning session of each prompt
    owners: Dict[Modality, List[int]] = {m: [] for m in needed}
    prompts: Dict[Modality, List[PromptRecord]] = {m: [] for m in needed}
    for i, s in enumerate(sessions):
        for modality in needed:
            for p in session_prompts(s, modality, ctx):
                owners[modality].append(i)
                prompts[modality].append(p)

    semantic: List[List[float]] = [[] for _ in sessions]
    behavioral: List[Optional[float]] = [None] * len(sessions)
    errors: List[List[str]] = [[] for _ in sessions]
    for modality in needed:
        logger.info(f"Scoring {len(prompts[modality])} {modality.value} prompts for {len(sessions)} sessions")
        outcomes = await batch_score(scorers[modality], prompts[modality], parallelism)
        for outcome in outcomes:
            owner = owners[modality][outcome.index]
            if not outcome.ok:
                errors[owner].append(f"{modality.value}: {outcome.error}")
            elif modality is Modality.SEMANTIC:
                semantic[owner].append(outcome.score)
            else:
                behavioral[owner] = outcome.score

    strategy = scorers[needed[0]].strategy if needed else None
    records = []
    for i, s in enumerate(sessions):
        if errors[i]:
            logger.error(f"Session {s.key_str} left unscored: {errors[i][0]}")
        records.append(SessionScores(
            user=s.user, day=s.day, label=s.label,
            semantic_scores=semantic[i], alpha_beh=behavioral[i], errors=errors[i], strategy=strategy,
        ))
    return records


def fuse_scores(records: Sequence[SessionScores], params: MlpParams, threshold: Optional[float] = None) -> List[ScoreBundle]:
    """Turn stored branch scores into decided ScoreBundles"""
    theta = params.threshold if threshold is None else threshold
    weights, biases = params.arrays()
    bundles = []
    for r in records:
        if not r.scored:
            bundles.append(ScoreBundle(
                user=r.user, day=r.day, truth=r.label, semantic_scores=r.semantic_scores,
                alpha_beh=r.alpha_beh, flags=[UNSCORED], errors=r.errors, strategy=r.strategy, mode=params.mode,
            ))
            continue
        feature = joint_feature(r)
        z = feature.vector(params.mode, params.views)
        alpha, _ = _forward(weights, biases, _feature_vector(params, z)[None, :])
        alpha_joint = float(alpha[0])
        flags = [NO_SEMANTIC_CONTENT] if feature.v_sem.empty else []
        bundles.append(ScoreBundle(
            user=r.user, day=r.day, truth=r.label,
            semantic_scores=r.semantic_scores, alpha_beh=r.alpha_beh,
            v_sem=feature.v_sem, z=z, alpha_joint=alpha_joint,
            prediction=decide(alpha_joint, theta), flags=flags, strategy=r.strategy, mode=params.mode,
        ))
    return bundles


async def infer_session(
    s: Session,
    scorers: Dict[Modality, StrategyScorer],
    params: MlpParams,
    ctx: Optional[ViewContext] = None,
    hyper: Optional[FusionHyper] = None,
) -> ScoreBundle:
    """Score one session through both views and the fusion network"""
    records = await score_corpus([s], scorers, ctx or ViewContext(), views=params.views)
    threshold = hyper.threshold if hyper is not None else None
    return fuse_scores(records, params, threshold)[0]
