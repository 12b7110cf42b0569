"""Miniature residual 1D conv classifier with a global-average-pooling head.

Pure numpy, float64, with hand-derived analytic gradients. The structural
contract that matters downstream: the last conv block's feature maps are
globally average-pooled and fed to a single linear layer, so per-class
evidence can be projected back onto input positions (see cam module).

Every randomized entry point takes an explicit Generator; identical seeds
give bit-identical parameters, batches and loss curves in single-worker use.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .errors import TrainingDivergenceError, ValidationError
from .sampling import BatchGenerator, SampleBudget
from .spectra import SpeciesLibrary

_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ConvBlock:
    filters: int
    kernel_size: int
    residual: bool = False
    stride: int = 1

    def __post_init__(self):
        if self.filters < 1:
            raise ValidationError(f"filters must be >= 1, got {self.filters}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValidationError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if self.stride < 1:
            raise ValidationError(f"stride must be >= 1, got {self.stride}")


@dataclass(frozen=True)
class ModelConfig:
    input_width: int
    n_classes: int
    blocks: tuple[ConvBlock, ...]
    seed: int = 0
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.input_width < 1:
            raise ValidationError(f"input_width must be >= 1, got {self.input_width}")
        if self.n_classes < 2:
            raise ValidationError(f"n_classes must be >= 2, got {self.n_classes}")
        if not self.blocks:
            raise ValidationError("model needs at least one conv block")
        if self.activation != "relu":
            raise ValidationError(f"unsupported activation {self.activation!r}")

    def block_widths(self) -> list[int]:
        """Feature-map width after each block (same padding, stride s)."""
        widths = []
        w = self.input_width
        for block in self.blocks:
            w = (w - 1) // block.stride + 1
            widths.append(w)
        return widths

    @property
    def feature_positions(self) -> int:
        """Positions in the last block's feature maps (what GAP averages over)."""
        return self.block_widths()[-1]


def default_model_config(
    input_width: int,
    n_classes: int,
    seed: int = 0,
    filters: int = 32,
    kernel_size: int = 9,
    n_blocks: int = 4,
) -> ModelConfig:
    """Stacked conv blocks, stride-2 on every other block, residual where shapes allow."""
    blocks = []
    for i in range(n_blocks):
        stride = 2 if i % 2 == 1 else 1
        residual = i > 0 and stride == 1
        blocks.append(ConvBlock(filters, kernel_size, residual=residual, stride=stride))
    return ModelConfig(input_width, n_classes, tuple(blocks), seed=seed)


def _block_in_channels(config: ModelConfig) -> list[int]:
    return [1] + [b.filters for b in config.blocks[:-1]]


def _uses_residual(block: ConvBlock, in_channels: int) -> bool:
    return block.residual and block.stride == 1 and in_channels == block.filters


@dataclass
class ModelParams:
    """All weights: per-block kernels/biases plus the final linear layer."""

    conv_kernels: list[np.ndarray]  # each (filters, in_channels, kernel_size)
    conv_biases: list[np.ndarray]   # each (filters,)
    linear_w: np.ndarray            # (n_classes, filters_last)
    linear_b: np.ndarray            # (n_classes,)

    def arrays(self) -> list[np.ndarray]:
        """Canonical flat ordering shared with gradients and optimizer moments."""
        out = []
        for k, b in zip(self.conv_kernels, self.conv_biases):
            out.extend([k, b])
        out.extend([self.linear_w, self.linear_b])
        return out

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "ModelParams":
        *conv, linear_w, linear_b = arrays
        return cls(
            conv_kernels=list(conv[0::2]),
            conv_biases=list(conv[1::2]),
            linear_w=linear_w,
            linear_b=linear_b,
        )

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays([a.copy() for a in self.arrays()])

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays())


def _check_params_config(params: ModelParams, config: ModelConfig) -> None:
    in_channels = _block_in_channels(config)
    if len(params.conv_kernels) != len(config.blocks):
        raise ValidationError("params and config disagree on block count")
    for k, b, block, c_in in zip(params.conv_kernels, params.conv_biases, config.blocks, in_channels):
        if k.shape != (block.filters, c_in, block.kernel_size) or b.shape != (block.filters,):
            raise ValidationError(f"conv parameter shapes {k.shape}/{b.shape} do not match config")
    f_last = config.blocks[-1].filters
    if params.linear_w.shape != (config.n_classes, f_last) or params.linear_b.shape != (config.n_classes,):
        raise ValidationError("linear parameter shapes do not match config")


def init_params(config: ModelConfig) -> ModelParams:
    """Fan-in-scaled uniform weights (|w| <= sqrt(6/fan_in)), zero biases."""
    rng = np.random.default_rng(config.seed)
    kernels, biases = [], []
    for block, c_in in zip(config.blocks, _block_in_channels(config)):
        fan_in = c_in * block.kernel_size
        limit = np.sqrt(6.0 / fan_in)
        kernels.append(rng.uniform(-limit, limit, size=(block.filters, c_in, block.kernel_size)))
        biases.append(np.zeros(block.filters))
    f_last = config.blocks[-1].filters
    limit = np.sqrt(6.0 / f_last)
    linear_w = rng.uniform(-limit, limit, size=(config.n_classes, f_last))
    return ModelParams(kernels, biases, linear_w, np.zeros(config.n_classes))


def zero_params(config: ModelConfig) -> ModelParams:
    params = init_params(config)
    return ModelParams.from_arrays([np.zeros_like(a) for a in params.arrays()])


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, ksize: int, stride: int, w_out: int) -> np.ndarray:
    """Stack shifted views of padded input: (C, N, Wp) -> (C * K, N * w_out)."""
    c, n, _ = xp.shape
    cols = np.empty((c, ksize, n, w_out), dtype=xp.dtype)
    for t in range(ksize):
        cols[:, t] = xp[:, :, t : t + stride * (w_out - 1) + 1 : stride]
    return cols.reshape(c * ksize, n * w_out)


def _conv1d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int):
    """Same-padding 1D convolution in channels-first layout.

    x (C, N, W) -> (F, N, ceil(W/stride)), computed as a single GEMM against
    stacked shifted views so the inner dimension is C * K (BLAS stays
    compute-bound even for narrow layers).
    """
    c, n, w = x.shape
    f, _, ksize = kernel.shape
    pad = (ksize - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    w_out = (w - 1) // stride + 1
    cols = _im2col(xp, ksize, stride, w_out)
    y = (kernel.reshape(f, c * ksize) @ cols).reshape(f, n, w_out)
    y += bias[:, None, None]
    return y


def _conv1d_backward(x: np.ndarray, kernel: np.ndarray, stride: int, dy: np.ndarray):
    """Gradients of _conv1d_forward wrt input (C, N, W), kernel and bias."""
    c, n, w = x.shape
    f, _, ksize = kernel.shape
    pad = (ksize - 1) // 2
    w_out = dy.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    cols = _im2col(xp, ksize, stride, w_out)
    dy2 = np.ascontiguousarray(dy).reshape(f, n * w_out)
    d_bias = dy2.sum(axis=1)
    d_kernel = (dy2 @ cols.T).reshape(f, c, ksize)
    d_cols = (kernel.reshape(f, c * ksize).T @ dy2).reshape(c, ksize, n, w_out)
    d_xp = np.zeros_like(xp)
    for t in range(ksize):
        d_xp[:, :, t : t + stride * (w_out - 1) + 1 : stride] += d_cols[:, t]
    return d_xp[:, :, pad : pad + w], d_kernel, d_bias


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardTrace:
    """Everything forward() computed, cached for backward() and CAM.

    Per-block arrays are batch-first views (N, channels, width) of the
    channels-first buffers the compute kernels use.
    """

    block_inputs: list[np.ndarray]      # per block, (N, C_in, W_in)
    pre_activations: list[np.ndarray]   # per block, conv output before the rectifier
    activations: list[np.ndarray]       # per block, block output
    last_feature_maps: np.ndarray       # (N, F, P): what GAP pools
    pooled: np.ndarray                  # (N, F)
    logits: np.ndarray                  # (N, n_classes)
    probs: np.ndarray                   # (N, n_classes)

    def squeezed(self, attr: str) -> np.ndarray:
        return getattr(self, attr)[0]


def forward_batch(
    params: ModelParams,
    config: ModelConfig,
    x: np.ndarray,
    dtype: type = np.float64,
) -> ForwardTrace:
    """Forward pass over a batch of rows (N, input_width).

    ``dtype`` selects the compute precision: float64 is the contract for
    gradient and CAM identities, float32 is allowed for training throughput.
    """
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 2 or x.shape[1] != config.input_width:
        raise ValidationError(
            f"input shape {x.shape} does not match (batch, {config.input_width})"
        )
    if not np.all(np.isfinite(x)):
        raise ValidationError("input contains non-finite values")
    _check_params_config(params, config)
    h = np.ascontiguousarray(x)[None, :, :]  # (C=1, N, W)
    block_inputs, pre_acts, acts = [], [], []
    in_channels = _block_in_channels(config)
    for block, c_in, kernel, bias in zip(
        config.blocks, in_channels, params.conv_kernels, params.conv_biases
    ):
        block_inputs.append(h)
        z = _conv1d_forward(h, kernel.astype(dtype, copy=False), bias.astype(dtype, copy=False), block.stride)
        a = np.maximum(z, 0.0)
        h = h + a if _uses_residual(block, c_in) else a
        pre_acts.append(z)
        acts.append(h)
    pooled = np.ascontiguousarray(h.mean(axis=2).T)  # (N, F)
    logits = pooled @ params.linear_w.T.astype(dtype, copy=False) + params.linear_b.astype(dtype, copy=False)
    probs = _softmax(logits)
    batch_first = lambda arr: arr.transpose(1, 0, 2)
    return ForwardTrace(
        block_inputs=[batch_first(a) for a in block_inputs],
        pre_activations=[batch_first(a) for a in pre_acts],
        activations=[batch_first(a) for a in acts],
        last_feature_maps=batch_first(h),
        pooled=pooled,
        logits=logits,
        probs=probs,
    )


def forward(params: ModelParams, config: ModelConfig, x: np.ndarray) -> ForwardTrace:
    """Forward pass for a single input vector; trace arrays keep a leading batch axis of 1."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"expected a 1D input vector, got shape {x.shape}")
    return forward_batch(params, config, x[None, :])


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """Negative log-likelihood of the true label, clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ValidationError(f"probs must be a vector, got shape {probs.shape}")
    if not 0 <= label < len(probs):
        raise IndexError(f"label {label} out of range for {len(probs)} classes")
    return float(-np.log(max(probs[label], _PROB_FLOOR)))


def batch_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, _PROB_FLOOR)).mean())


def backward_batch(
    trace: ForwardTrace, params: ModelParams, config: ModelConfig, labels: np.ndarray
) -> ModelParams:
    """Mean-cross-entropy gradients for a batch; returns params-shaped arrays."""
    labels = np.asarray(labels)
    n = trace.probs.shape[0]
    if labels.shape != (n,):
        raise ValidationError(f"labels shape {labels.shape} does not match batch {n}")
    dtype = trace.probs.dtype
    d_logits = trace.probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n

    d_linear_w = d_logits.T @ trace.pooled
    d_linear_b = d_logits.sum(axis=0)
    d_pooled = d_logits @ params.linear_w.astype(dtype, copy=False)

    positions = trace.last_feature_maps.shape[2]
    # Grad wrt the last feature maps in channels-first layout (F, N, P).
    d_h = np.repeat(d_pooled.T[:, :, None], positions, axis=2) / positions

    in_channels = _block_in_channels(config)
    d_kernels: list[np.ndarray | None] = [None] * len(config.blocks)
    d_biases: list[np.ndarray | None] = [None] * len(config.blocks)
    for i in range(len(config.blocks) - 1, -1, -1):
        block = config.blocks[i]
        residual = _uses_residual(block, in_channels[i])
        d_z = d_h * (trace.pre_activations[i].transpose(1, 0, 2) > 0)
        d_x, d_kernels[i], d_biases[i] = _conv1d_backward(
            trace.block_inputs[i].transpose(1, 0, 2),
            params.conv_kernels[i].astype(dtype, copy=False),
            block.stride,
            d_z,
        )
        d_h = d_x + d_h if residual else d_x
    return ModelParams(d_kernels, d_biases, d_linear_w, d_linear_b)


def backward(
    trace: ForwardTrace, params: ModelParams, config: ModelConfig, label: int
) -> ModelParams:
    """Exact gradient of cross_entropy(forward(x), label) for a single-sample trace."""
    if trace.probs.shape[0] != 1:
        raise ValidationError("backward expects a single-sample trace; use backward_batch")
    if not 0 <= label < config.n_classes:
        raise IndexError(f"label {label} out of range for {config.n_classes} classes")
    return backward_batch(trace, params, config, np.array([label]))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_optimizer(params: ModelParams, lr: float = 0.01, **kwargs) -> OptimizerState:
    arrays = params.arrays()
    return OptimizerState(
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        step=0,
        lr=lr,
        **kwargs,
    )


def adam_step(
    state: OptimizerState, params: ModelParams, grads: ModelParams
) -> tuple[OptimizerState, ModelParams]:
    """One bias-corrected Adam update; pure (returns fresh state and params)."""
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(state.m):
        raise ValidationError("optimizer state does not match parameter structure")
    for p, g in zip(p_arrays, g_arrays):
        if p.shape != g.shape:
            raise ValidationError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError("non-finite gradient")
    t = state.step + 1
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon))
    new_state = OptimizerState(
        m=new_m, v=new_v, step=t,
        lr=state.lr, beta1=state.beta1, beta2=state.beta2, epsilon=state.epsilon,
    )
    return new_state, ModelParams.from_arrays(new_p)


# ---------------------------------------------------------------------------
# Training and prediction
# ---------------------------------------------------------------------------

def normalize_counts(x: np.ndarray, budget_k: int | None = None) -> np.ndarray:
    """Counts -> budget-invariant model inputs (ratio to a uniform spectrum).

    Divides by the budget when given (training contract), otherwise by each
    row's own total (the two coincide for fixed-budget multinomial samples),
    then scales by the channel count so a flat spectrum maps to all-ones.
    Without that rescaling, wide inputs start with ~1/width activations and
    near-uniform logits, which stalls the first epochs. All-zero rows stay
    zero.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if budget_k is not None:
        denom = np.full((x.shape[0], 1), float(budget_k))
    else:
        denom = x.sum(axis=1, keepdims=True)
    out = np.divide(x * x.shape[1], denom, out=np.zeros_like(x), where=denom > 0)
    return out[0] if squeeze else out


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 0.01
    target_accuracy: float = 0.95
    samples_per_epoch: int = 1024
    val_per_class: int = 32
    dtype: str = "float32"  # training precision; master weights stay float64

    def compute_dtype(self) -> type:
        if self.dtype not in ("float32", "float64"):
            raise ValidationError(f"dtype must be float32 or float64, got {self.dtype}")
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class TrainResult:
    params: ModelParams
    loss_curve: np.ndarray          # per-epoch mean training loss
    val_accuracy: list[float]       # per-epoch fresh-sample validation accuracy
    epoch_seconds: list[float]
    optimizer_state: OptimizerState
    reached_target: bool

    @property
    def epochs_run(self) -> int:
        return len(self.loss_curve)


def _predict_rows(params: ModelParams, config: ModelConfig, rows: np.ndarray) -> np.ndarray:
    probs = forward_batch(params, config, rows).probs
    return probs.argmax(axis=1)


def evaluate_accuracy(
    params: ModelParams,
    config: ModelConfig,
    generator: BatchGenerator,
    per_class: int,
    rng: np.random.Generator,
    dtype: type = np.float64,
) -> float:
    """Accuracy on freshly drawn samples, ``per_class`` draws per species."""
    labels = np.repeat(np.arange(len(generator.library)), per_class)
    rows = generator.sample_rows(labels, rng)
    x = normalize_counts(rows, generator.budget.k)
    predictions = forward_batch(params, config, x, dtype=dtype).probs.argmax(axis=1)
    return float((predictions == labels).mean())


def train(
    config: ModelConfig,
    library: SpeciesLibrary,
    budget: SampleBudget,
    epochs: int,
    batch_size: int,
    discard=None,
    rng: np.random.Generator | None = None,
    settings: TrainSettings = TrainSettings(),
) -> TrainResult:
    """Train on freshly drawn RSM-3 batches, one new batch per iteration.

    Records per-epoch mean loss and validation accuracy on fresh draws;
    stops early once accuracy reaches settings.target_accuracy. A NaN/inf
    loss or gradient aborts with TrainingDivergenceError carrying the epoch.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if len(library) >= 2 and config.n_classes != len(library):
        raise ValidationError(
            f"config has {config.n_classes} classes but library has {len(library)} species"
        )
    if epochs < 0 or batch_size < 1:
        raise ValidationError("epochs must be >= 0 and batch_size >= 1")
    generator = BatchGenerator(library, budget, discard)
    if generator.width != config.input_width:
        raise ValidationError(
            f"generator emits width {generator.width} but model expects {config.input_width}"
        )
    params = init_params(config)
    state = init_optimizer(params, lr=settings.lr)
    steps_per_epoch = max(1, settings.samples_per_epoch // batch_size)
    dtype = settings.compute_dtype()

    curve: list[float] = []
    val_history: list[float] = []
    epoch_seconds: list[float] = []
    reached = False
    for epoch in range(epochs):
        t0 = time.perf_counter()
        losses = np.empty(steps_per_epoch)
        for step in range(steps_per_epoch):
            rows, labels = generator(batch_size, rng)
            x = normalize_counts(rows, budget.k)
            trace = forward_batch(params, config, x, dtype=dtype)
            loss = batch_cross_entropy(trace.probs, labels)
            if not np.isfinite(loss):
                raise TrainingDivergenceError("non-finite training loss", epoch=epoch)
            grads = backward_batch(trace, params, config, labels)
            try:
                state, params = adam_step(state, params, grads)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(str(exc), epoch=epoch) from None
            losses[step] = loss
        curve.append(float(losses.mean()))
        val_acc = evaluate_accuracy(
            params, config, generator, settings.val_per_class, rng, dtype=dtype
        )
        val_history.append(val_acc)
        epoch_seconds.append(time.perf_counter() - t0)
        if val_acc >= settings.target_accuracy:
            reached = True
            break
    return TrainResult(
        params=params,
        loss_curve=np.array(curve),
        val_accuracy=val_history,
        epoch_seconds=epoch_seconds,
        optimizer_state=state,
        reached_target=reached,
    )


def predict(params: ModelParams, config: ModelConfig, sample: np.ndarray):
    """Classify one sample of counts; ties break toward the lowest class index."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim != 1 or sample.shape[0] != config.input_width:
        raise ValidationError(
            f"sample shape {sample.shape} does not match input width {config.input_width}"
        )
    trace = forward(params, config, normalize_counts(sample))
    probs = trace.probs[0]
    return int(np.argmax(probs)), probs


# ---------------------------------------------------------------------------
# Checkpoint container (versioned binary; byte-identical for identical state)
# ---------------------------------------------------------------------------

_CHECKPOINT_MAGIC = b"PGNAANN1"


def config_to_dict(config: ModelConfig) -> dict:
    return {
        "input_width": config.input_width,
        "n_classes": config.n_classes,
        "blocks": [[b.filters, b.kernel_size, int(b.residual), b.stride] for b in config.blocks],
        "seed": config.seed,
        "activation": config.activation,
    }


def config_from_dict(d: dict) -> ModelConfig:
    blocks = tuple(
        ConvBlock(int(f), int(k), residual=bool(r), stride=int(s)) for f, k, r, s in d["blocks"]
    )
    return ModelConfig(
        input_width=int(d["input_width"]),
        n_classes=int(d["n_classes"]),
        blocks=blocks,
        seed=int(d.get("seed", 0)),
        activation=d.get("activation", "relu"),
    )


def save_checkpoint(
    path,
    params: ModelParams,
    config: ModelConfig,
    optimizer_state: OptimizerState | None = None,
) -> None:
    """Write config + parameters (+ optimizer state) as one versioned binary file."""
    arrays = list(params.arrays())
    names = []
    for i in range(len(params.conv_kernels)):
        names.extend([f"conv{i}/kernel", f"conv{i}/bias"])
    names.extend(["linear/w", "linear/b"])
    opt_header = None
    if optimizer_state is not None:
        opt_header = {
            "step": optimizer_state.step,
            "lr": optimizer_state.lr,
            "beta1": optimizer_state.beta1,
            "beta2": optimizer_state.beta2,
            "epsilon": optimizer_state.epsilon,
        }
        for i, (m, v) in enumerate(zip(optimizer_state.m, optimizer_state.v)):
            names.extend([f"adam/m{i}", f"adam/v{i}"])
            arrays.extend([m, v])
    header = {
        "format_version": 1,
        "config": config_to_dict(config),
        "optimizer": opt_header,
        "arrays": [
            {"name": n, "dtype": "<f8", "shape": list(a.shape)} for n, a in zip(names, arrays)
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (params, config, optimizer_state-or-None)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValidationError(f"{path}: not a model checkpoint")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode())
        if header.get("format_version") != 1:
            raise ValidationError(f"unsupported checkpoint version {header.get('format_version')}")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape)
            arrays[entry["name"]] = data.copy()
    config = config_from_dict(header["config"])
    n_blocks = len(config.blocks)
    params = ModelParams(
        conv_kernels=[arrays[f"conv{i}/kernel"] for i in range(n_blocks)],
        conv_biases=[arrays[f"conv{i}/bias"] for i in range(n_blocks)],
        linear_w=arrays["linear/w"],
        linear_b=arrays["linear/b"],
    )
    _check_params_config(params, config)
    opt_state = None
    if header["optimizer"] is not None:
        oh = header["optimizer"]
        n_arrays = len(params.arrays())
        opt_state = OptimizerState(
            m=[arrays[f"adam/m{i}"] for i in range(n_arrays)],
            v=[arrays[f"adam/v{i}"] for i in range(n_arrays)],
            step=int(oh["step"]),
            lr=float(oh["lr"]),
            beta1=float(oh["beta1"]),
            beta2=float(oh["beta2"]),
            epsilon=float(oh["epsilon"]),
        )
    return params, config, opt_state
