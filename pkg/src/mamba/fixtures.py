"""Shipped desk-scale fixtures.

`tiny_random_model` is a seeded random initialization following the usual
Mamba init recipe. `tiny_trained_model` starts from a random init with
longer step sizes, rescales each layer on the synthetic corpus so the state
path and the block outputs carry a fixed share of the signal (the way they
do in trained checkpoints), then fits the output head by ridge regression.
"""

import logging
from typing import List, Tuple

import numpy as np

from src.core.tensor import NamedTensor, spd_factor_solve
from src.errors import ArgumentError, NumericalError
from .block import block_forward, check_tokens, embed, final_features, residual_block, rms_norm
from .config import MambaConfig
from .layer import MambaLayer, MambaModel
from .scan import scan_recurrence

logger = logging.getLogger(__name__)

DT_MIN = 1e-3
DT_MAX = 1e-1
TRAINED_DT_MIN = 5e-2
TRAINED_DT_MAX = 5e-1
A_LOG_JITTER = 0.05
CHANNEL_GAIN_MIN = 0.05
CHANNEL_GAIN_MAX = 2.0
# rms(C·h) / rms(D⊙x) at each layer's scan output
STATE_PATH_RATIO = 2.0
# rms(block output) / rms(residual stream entering the block)
BLOCK_OUT_RATIO = 1.0
HEAD_TARGET_SCALE = 8.0
HEAD_RIDGE = 1e-3


def tiny_config() -> MambaConfig:
    return MambaConfig(n_layers=2, d_model=32, d_inner=64, d_state=8, d_conv=4, dt_rank=2, vocab_size=64)


def _dense(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.normal(0.0, cols ** -0.5, size=(rows, cols))


def _init_layer(rng: np.random.Generator, config: MambaConfig, index: int,
                dt_range: Tuple[float, float]) -> MambaLayer:
    d, n, r, k = config.d_inner, config.d_state, config.dt_rank, config.d_conv
    prefix = f"layers.{index}"

    # S4D-real init: A_n = -(n+1), slightly perturbed
    a_log = np.log(np.arange(1, n + 1, dtype=np.float64))[None, :] + rng.normal(0.0, A_LOG_JITTER, size=(d, n))
    dt = np.exp(rng.uniform(np.log(dt_range[0]), np.log(dt_range[1]), size=d))
    dt_bias = dt + np.log(-np.expm1(-dt))  # inverse softplus
    bound = 1.0 / np.sqrt(k)
    # log-uniform per-channel gain on the scan branch pre-activation
    gains = np.exp(rng.uniform(np.log(CHANNEL_GAIN_MIN), np.log(CHANNEL_GAIN_MAX), size=d))
    in_proj = _dense(rng, 2 * d, config.d_model)
    in_proj[:d] *= gains[:, None]

    return MambaLayer(
        index=index,
        in_proj=NamedTensor(f"{prefix}.in_proj.weight", in_proj),
        conv_weight=NamedTensor(f"{prefix}.conv1d.weight", rng.uniform(-bound, bound, size=(d, k))),
        conv_bias=NamedTensor(f"{prefix}.conv1d.bias", gains * rng.uniform(-bound, bound, size=d)),
        x_proj=NamedTensor(f"{prefix}.x_proj.weight", _dense(rng, r + 2 * n, d)),
        dt_proj=NamedTensor(f"{prefix}.dt_proj.weight", rng.uniform(-r ** -0.5, r ** -0.5, size=(d, r))),
        dt_bias=NamedTensor(f"{prefix}.dt_proj.bias", dt_bias),
        out_proj=NamedTensor(f"{prefix}.out_proj.weight", _dense(rng, config.d_model, d)),
        a_log=NamedTensor(f"{prefix}.ssm.A_log", a_log),
        d_skip=NamedTensor(f"{prefix}.ssm.D", np.ones(d)),
    )


def init_random_model(config: MambaConfig, seed: int = 0,
                      dt_range: Tuple[float, float] = (DT_MIN, DT_MAX)) -> MambaModel:
    """Seeded random model; identical seeds give bit-identical tensors."""
    if not 0.0 < dt_range[0] <= dt_range[1]:
        raise ArgumentError(f"dt range must satisfy 0 < min <= max, got {dt_range}")
    rng = np.random.default_rng(seed)
    embedding = NamedTensor("embedding.weight", rng.normal(0.0, 1.0, size=(config.vocab_size, config.d_model)))
    layers = tuple(_init_layer(rng, config, i, dt_range) for i in range(config.n_layers))
    norms = tuple(NamedTensor(f"norm.{i}.weight", np.ones(config.d_model)) for i in range(config.n_layers + 1))
    lm_head = NamedTensor("lm_head.weight", _dense(rng, config.vocab_size, config.d_model))
    return MambaModel(config=config, embedding=embedding, layers=layers, norms=norms, lm_head=lm_head)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def _scan_paths(layer: MambaLayer, u: np.ndarray) -> Tuple[float, float]:
    """rms of the state path C·h and of the skip path D⊙x for block input u."""
    _, trace = block_forward(layer, u, record=True)
    theta = trace.theta
    state, _ = scan_recurrence(layer.a_log, np.zeros(layer.d_inner), theta)
    return _rms(state.data), _rms(layer.d_skip.data * theta.x)


def signal_shares(model: MambaModel, tokens) -> List[Tuple[float, float]]:
    """Per layer: (rms state path / rms skip path, rms block output / rms residual input)."""
    hidden = embed(model, tokens)
    shares = []
    for i, layer in enumerate(model.layers):
        state, skip = _scan_paths(layer, rms_norm(hidden, model.norms[i]))
        nxt, _ = residual_block(model, i, hidden)
        shares.append((state / skip, _rms(nxt - hidden) / _rms(hidden)))
        hidden = nxt
    return shares


def balance_signal_paths(model: MambaModel, tokens, state_ratio: float = STATE_PATH_RATIO,
                         out_ratio: float = BLOCK_OUT_RATIO) -> MambaModel:
    """Layer-sequential rescale on `tokens`.

    C·h is bilinear in the B and C rows of x_proj, so scaling both by
    sqrt(target / current) sets the state-to-skip ratio exactly; the block
    output is linear in out_proj, which is scaled the same way.
    """
    if state_ratio <= 0 or out_ratio <= 0:
        raise ArgumentError(f"ratios must be > 0, got {state_ratio}, {out_ratio}")
    ids = check_tokens(model, tokens)
    hidden = embed(model, ids)
    for i in range(model.config.n_layers):
        layer = model.layers[i]
        r, n = layer.dt_rank, layer.d_state
        state, skip = _scan_paths(layer, rms_norm(hidden, model.norms[i]))
        if state == 0.0 or skip == 0.0:
            raise NumericalError("cannot balance a silent scan path", layer=i)
        x_proj = layer.x_proj.array()
        x_proj[r:r + 2 * n] *= np.sqrt(state_ratio * skip / state)
        layer = layer.replace(x_proj=layer.x_proj.with_data(x_proj))

        nxt, _ = residual_block(model, i, hidden, layer=layer)
        out = _rms(nxt - hidden)
        if out == 0.0:
            raise NumericalError("cannot balance a silent block output", layer=i)
        layer = layer.replace(out_proj=layer.out_proj.with_data(layer.out_proj.data * (out_ratio * _rms(hidden) / out)))
        model = model.with_layer(layer)
        hidden, _ = residual_block(model, i, hidden)
    logger.debug("balanced %d layers on %d positions", model.config.n_layers, ids.size)
    return model


def fit_output_head(model: MambaModel, tokens, ridge: float = HEAD_RIDGE) -> MambaModel:
    """Least-squares fit of lm_head on next-token targets.

    Features are the final normalized hidden states at positions 0..L-2;
    targets are centred one-hot vectors of the following token.
    """
    ids = check_tokens(model, tokens)
    if ids.shape[1] < 2:
        raise ArgumentError("fitting the output head needs sequences of length >= 2")
    if ridge <= 0:
        raise ArgumentError(f"ridge must be > 0, got {ridge}")
    vocab = model.config.vocab_size

    feats = final_features(model, ids)[:, :-1].reshape(-1, model.config.d_model)
    nxt = ids[:, 1:].reshape(-1)
    targets = np.full((nxt.size, vocab), -1.0 / vocab)
    targets[np.arange(nxt.size), nxt] += 1.0
    targets *= HEAD_TARGET_SCALE

    gram = feats.T @ feats
    gram += ridge * max(float(np.mean(np.diag(gram))), 1.0) * np.eye(gram.shape[0])
    head = spd_factor_solve(gram, feats.T @ targets).T
    logger.info("fitted output head on %d positions", nxt.size)
    return model.with_head(head)


def tiny_random_model(seed: int = 0) -> MambaModel:
    return init_random_model(tiny_config(), seed)


def tiny_trained_model(seed: int = 0, nsamples: int = 64, seqlen: int = 64) -> MambaModel:
    """Balanced tiny model with its head fitted on the seeded synthetic corpus."""
    from src.calibration.corpus import make_synthetic_corpus

    model = init_random_model(tiny_config(), seed, dt_range=(TRAINED_DT_MIN, TRAINED_DT_MAX))
    tokens = make_synthetic_corpus(seed, model.config.vocab_size, nsamples, seqlen).tokens()
    return fit_output_head(balance_signal_paths(model, tokens), tokens)
