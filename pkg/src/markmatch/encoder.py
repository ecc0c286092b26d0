"""Small convolutional encoder with hand-derived reverse-mode gradients.

Architecture: a stack of valid (unpadded) strided convolutions with
rectifier activations, global average pooling, a linear projection to the
embedding dimension, and L2 normalization.  Everything runs in float64 so
gradients can be checked against central finite differences.

The forward/backward pair is pure: parameters are passed explicitly and a
training loop owns the single mutable copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FileFormatError, VersionMismatchError
from .images import MarkImage

MODEL_FORMAT = "markmatch-model v1"

# Embeddings whose pre-normalization norm falls below _NORM_FLOOR are nudged
# along the first axis before normalizing so training never divides by zero.
_NORM_FLOOR = 1e-12
_NORM_EPS = 1e-8

DEFAULT_CONV_LAYERS = ((8, 3, 2), (16, 3, 2), (32, 3, 2))


@dataclass(frozen=True)
class EncoderConfig:
    input_size: int = 64
    conv_layers: tuple = DEFAULT_CONV_LAYERS  # (out_channels, kernel_size, stride) per layer
    embedding_dim: int = 32
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(tuple(l) for l in self.conv_layers))
        if self.input_size < 1:
            raise ValueError(f"input_size must be >= 1, got {self.input_size}")
        if self.embedding_dim < 2:
            raise ValueError(f"embedding_dim must be >= 2, got {self.embedding_dim}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not self.conv_layers:
            raise ValueError("at least one conv layer is required")
        for layer in self.conv_layers:
            if len(layer) != 3:
                raise ValueError(f"conv layer must be (out_channels, kernel, stride), got {layer}")
            out_ch, k, s = layer
            if out_ch < 1 or k < 1 or s < 1:
                raise ValueError(f"conv layer entries must be positive, got {layer}")
        # Shape safety: reject configs whose spatial dims collapse below 1.
        self.spatial_dims()

    def spatial_dims(self) -> list[int]:
        """Spatial size after each conv layer; raises if any drops below 1."""
        size = self.input_size
        sizes = []
        for out_ch, k, s in self.conv_layers:
            if size < k:
                raise ValueError(
                    f"kernel {k} exceeds spatial size {size}; config is not runnable"
                )
            size = (size - k) // s + 1
            sizes.append(size)
        return sizes


@dataclass
class LayerTensors:
    """Weight and bias arrays for one layer (also reused for gradients)."""

    weight: np.ndarray
    bias: np.ndarray


@dataclass
class EncoderParams:
    conv: list  # list[LayerTensors], weight (C_out, C_in, k, k)
    fc: LayerTensors  # weight (embedding_dim, C_last)
    config: EncoderConfig
    version: str = MODEL_FORMAT

    def tensors(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order (conv weights/biases, then fc)."""
        out = []
        for layer in self.conv:
            out.extend([layer.weight, layer.bias])
        out.extend([self.fc.weight, self.fc.bias])
        return out


@dataclass
class ParamGradients:
    conv: list
    fc: LayerTensors

    def tensors(self) -> list[np.ndarray]:
        out = []
        for layer in self.conv:
            out.extend([layer.weight, layer.bias])
        out.extend([self.fc.weight, self.fc.bias])
        return out


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Deterministic initialization: uniform weights scaled by 1/sqrt(fan-in), zero biases."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    conv = []
    in_ch = 1
    for out_ch, k, _s in config.conv_layers:
        fan_in = in_ch * k * k
        scale = 1.0 / np.sqrt(fan_in)
        weight = rng.uniform(-scale, scale, size=(out_ch, in_ch, k, k))
        conv.append(LayerTensors(weight=weight, bias=np.zeros(out_ch)))
        in_ch = out_ch
    scale = 1.0 / np.sqrt(in_ch)
    fc = LayerTensors(
        weight=rng.uniform(-scale, scale, size=(config.embedding_dim, in_ch)),
        bias=np.zeros(config.embedding_dim),
    )
    return EncoderParams(conv=conv, fc=fc, config=config)


def zeros_like_params(params: EncoderParams) -> ParamGradients:
    return ParamGradients(
        conv=[LayerTensors(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in params.conv],
        fc=LayerTensors(np.zeros_like(params.fc.weight), np.zeros_like(params.fc.bias)),
    )


def _im2col(x: np.ndarray, k: int, s: int):
    """Gather k x k patches at stride s into (B, C*k*k, positions)."""
    B, C, H, W = x.shape
    oh = (H - k) // s + 1
    ow = (W - k) // s + 1
    win = np.empty((B, C, k * k, oh * ow), dtype=np.float64)
    for kr in range(k):
        for kc in range(k):
            patch = x[:, :, kr : kr + s * oh : s, kc : kc + s * ow : s]
            win[:, :, kr * k + kc, :] = patch.reshape(B, C, oh * ow)
    return win.reshape(B, C * k * k, oh * ow), oh, ow


def _col2im(dwin: np.ndarray, x_shape, k: int, s: int, oh: int, ow: int) -> np.ndarray:
    """Scatter-add patch gradients back to the input layout (adjoint of _im2col)."""
    B, C, H, W = x_shape
    dx = np.zeros(x_shape, dtype=np.float64)
    dwin = dwin.reshape(B, C, k * k, oh * ow)
    for kr in range(k):
        for kc in range(k):
            dx[:, :, kr : kr + s * oh : s, kc : kc + s * ow : s] += dwin[
                :, :, kr * k + kc, :
            ].reshape(B, C, oh, ow)
    return dx


class _ForwardCache:
    """Intermediate activations kept for the backward pass."""

    __slots__ = ("x_shapes", "windows", "preacts", "pooled", "pre_norm", "norms", "embeddings")

    def __init__(self):
        self.x_shapes = []
        self.windows = []
        self.preacts = []


def _images_to_batch(params: EncoderParams, images) -> np.ndarray:
    size = params.config.input_size
    batch = np.empty((len(images), 1, size, size), dtype=np.float64)
    for idx, image in enumerate(images):
        px = image.pixels if isinstance(image, MarkImage) else np.asarray(image, dtype=np.float64)
        if px.shape != (size, size):
            raise ValueError(
                f"image at index {idx} has shape {px.shape}, expected ({size}, {size})"
            )
        batch[idx, 0] = px
    return batch


def _forward(params: EncoderParams, batch: np.ndarray) -> _ForwardCache:
    cache = _ForwardCache()
    x = batch
    for layer, (out_ch, k, s) in zip(params.conv, params.config.conv_layers):
        cache.x_shapes.append(x.shape)
        win, oh, ow = _im2col(x, k, s)
        cache.windows.append((win, oh, ow))
        w2 = layer.weight.reshape(out_ch, -1)
        z = np.matmul(w2[None, :, :], win) + layer.bias[None, :, None]
        z = z.reshape(x.shape[0], out_ch, oh, ow)
        cache.preacts.append(z)
        x = np.maximum(z, 0.0)
    pooled = x.mean(axis=(2, 3))
    cache.pooled = pooled
    u = pooled @ params.fc.weight.T + params.fc.bias
    norms = np.linalg.norm(u, axis=1)
    low = norms < _NORM_FLOOR
    if np.any(low):
        u = u.copy()
        u[low, 0] += _NORM_EPS
        norms = np.linalg.norm(u, axis=1)
    cache.pre_norm = u
    cache.norms = norms
    cache.embeddings = u / norms[:, None]
    return cache


def _backward(params: EncoderParams, cache: _ForwardCache, grad_embeddings: np.ndarray) -> ParamGradients:
    v = cache.embeddings
    # L2-normalization Jacobian: (I - v v^T) / ||u|| applied to upstream grads
    du = (grad_embeddings - np.sum(grad_embeddings * v, axis=1, keepdims=True) * v) / cache.norms[:, None]

    grads = zeros_like_params(params)
    grads.fc.weight[...] = du.T @ cache.pooled
    grads.fc.bias[...] = du.sum(axis=0)
    dpooled = du @ params.fc.weight

    last_z = cache.preacts[-1]
    B, C, oh, ow = last_z.shape
    dx = np.broadcast_to(dpooled[:, :, None, None] / (oh * ow), last_z.shape)

    for li in range(len(params.conv) - 1, -1, -1):
        z = cache.preacts[li]
        dz = dx * (z > 0.0)
        out_ch = z.shape[1]
        win, oh, ow = cache.windows[li]
        dz_flat = dz.reshape(z.shape[0], out_ch, oh * ow)
        grads.conv[li].weight[...] = np.matmul(dz_flat, win.transpose(0, 2, 1)).sum(axis=0).reshape(
            params.conv[li].weight.shape
        )
        grads.conv[li].bias[...] = dz_flat.sum(axis=(0, 2))
        if li > 0:
            w2 = params.conv[li].weight.reshape(out_ch, -1)
            dwin = np.matmul(w2.T[None, :, :], dz_flat)
            k, s = params.config.conv_layers[li][1], params.config.conv_layers[li][2]
            dx = _col2im(dwin, cache.x_shapes[li], k, s, oh, ow)
    return grads


def embed_batch(params: EncoderParams, images) -> list[np.ndarray]:
    """Embed each image independently; output order matches input order."""
    if len(images) == 0:
        return []
    batch = _images_to_batch(params, images)
    cache = _forward(params, batch)
    return [cache.embeddings[i].copy() for i in range(len(images))]


def embed(params: EncoderParams, image) -> np.ndarray:
    """L2-normalized embedding of a single mark image."""
    return embed_batch(params, [image])[0]


def backward(params: EncoderParams, images, grad_embeddings) -> ParamGradients:
    """Gradients of sum_i <grad_embeddings[i], embed(images[i])> w.r.t. params."""
    grad = np.asarray(grad_embeddings, dtype=np.float64)
    if grad.ndim == 1:
        grad = grad[None, :]
    if grad.shape != (len(images), params.config.embedding_dim):
        raise ValueError(
            f"grad_embeddings shape {grad.shape} does not align with "
            f"{len(images)} images of dim {params.config.embedding_dim}"
        )
    batch = _images_to_batch(params, images)
    cache = _forward(params, batch)
    return _backward(params, cache, grad)


# ---------------------------------------------------------------------------
# Model file I/O: self-describing text, floats at 17 significant digits.
# ---------------------------------------------------------------------------


def _fmt(values: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in values.ravel())


def save_params(params: EncoderParams, path) -> None:
    cfg = params.config
    lines = [MODEL_FORMAT]
    lines.append(f"input_size {cfg.input_size}")
    lines.append(f"embedding_dim {cfg.embedding_dim}")
    lines.append(f"activation {cfg.activation}")
    for out_ch, k, s in cfg.conv_layers:
        lines.append(f"conv {out_ch} {k} {s}")
    for li, layer in enumerate(params.conv):
        lines.append(f"tensor conv{li}.weight {' '.join(map(str, layer.weight.shape))}")
        lines.append(_fmt(layer.weight))
        lines.append(f"tensor conv{li}.bias {layer.bias.shape[0]}")
        lines.append(_fmt(layer.bias))
    lines.append(f"tensor fc.weight {' '.join(map(str, params.fc.weight.shape))}")
    lines.append(_fmt(params.fc.weight))
    lines.append(f"tensor fc.bias {params.fc.bias.shape[0]}")
    lines.append(_fmt(params.fc.bias))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path) -> EncoderParams:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FileFormatError("empty model file", line=1)
    if lines[0] != MODEL_FORMAT:
        raise VersionMismatchError(found=lines[0], expected=MODEL_FORMAT)

    fields: dict[str, str] = {}
    conv_specs: list[tuple[int, int, int]] = []
    idx = 1
    while idx < len(lines) and not lines[idx].startswith("tensor "):
        parts = lines[idx].split()
        if len(parts) < 2:
            raise FileFormatError(f"malformed header entry {lines[idx]!r}", line=idx + 1)
        if parts[0] == "conv":
            if len(parts) != 4:
                raise FileFormatError("conv spec needs out_channels kernel stride", line=idx + 1)
            conv_specs.append(tuple(int(p) for p in parts[1:]))
        else:
            fields[parts[0]] = parts[1]
        idx += 1
    try:
        config = EncoderConfig(
            input_size=int(fields["input_size"]),
            conv_layers=tuple(conv_specs),
            embedding_dim=int(fields["embedding_dim"]),
            activation=fields.get("activation", "relu"),
        )
    except (KeyError, ValueError) as exc:
        raise FileFormatError(f"invalid model header: {exc}", line=idx) from exc

    tensors: dict[str, np.ndarray] = {}
    while idx < len(lines):
        header = lines[idx].split()
        if header[0] != "tensor" or len(header) < 3:
            raise FileFormatError(f"expected tensor header, got {lines[idx]!r}", line=idx + 1)
        name = header[1]
        shape = tuple(int(d) for d in header[2:])
        if idx + 1 >= len(lines):
            raise FileFormatError(f"missing data for tensor {name}", line=idx + 2)
        try:
            values = np.array([float(tok) for tok in lines[idx + 1].split()], dtype=np.float64)
        except ValueError as exc:
            raise FileFormatError(f"bad float in tensor {name}: {exc}", line=idx + 2) from exc
        if values.size != int(np.prod(shape)):
            raise FileFormatError(
                f"tensor {name} has {values.size} values, expected {int(np.prod(shape))}",
                line=idx + 2,
            )
        if not np.all(np.isfinite(values)):
            raise FileFormatError(f"tensor {name} contains non-finite values", line=idx + 2)
        tensors[name] = values.reshape(shape)
        idx += 2

    try:
        conv = [
            LayerTensors(weight=tensors[f"conv{li}.weight"], bias=tensors[f"conv{li}.bias"])
            for li in range(len(conv_specs))
        ]
        fc = LayerTensors(weight=tensors["fc.weight"], bias=tensors["fc.bias"])
    except KeyError as exc:
        raise FileFormatError(f"missing tensor {exc.args[0]}") from exc

    params = EncoderParams(conv=conv, fc=fc, config=config)
    _validate_shapes(params)
    return params


def _validate_shapes(params: EncoderParams) -> None:
    in_ch = 1
    for li, ((out_ch, k, _s), layer) in enumerate(zip(params.config.conv_layers, params.conv)):
        if layer.weight.shape != (out_ch, in_ch, k, k) or layer.bias.shape != (out_ch,):
            raise FileFormatError(
                f"conv{li} tensors have shape {layer.weight.shape}/{layer.bias.shape}, "
                f"inconsistent with config"
            )
        in_ch = out_ch
    d = params.config.embedding_dim
    if params.fc.weight.shape != (d, in_ch) or params.fc.bias.shape != (d,):
        raise FileFormatError("fc tensors inconsistent with config")
