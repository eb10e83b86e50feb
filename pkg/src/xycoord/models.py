"""Digit classifier (grayscale or grayscale + XY grids) and the 3-channel convolutional VAE."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .nn import functional as F
from .nn.functional import ConvSpec
from .nn.layers import Conv2d, ConvTranspose2d, Dense, Flatten, MaxPool2d, ReLU, Reshape, Sequential
from .nn.tensor import STREAM_INIT, RngState, resolve_dtype, zero_grads


@dataclass(frozen=True)
class NetworkSpec:
    """conv 5x5x32 -> pool 2x2 -> conv 5x5x64 -> pool 2x2 -> dense hidden -> dense classes."""

    input_channels: int = 1
    hidden_width: int = 1024
    class_count: int = 10
    image_size: int = 28
    padding: str = "valid"
    precision: str = "f32"
    conv_channels: tuple[int, int] = (32, 64)
    kernel: int = 5

    def __post_init__(self):
        if self.input_channels not in (1, 3):
            raise ConfigError(f"input_channels must be 1 (grayscale) or 3 (grayscale + XY), got {self.input_channels}")
        if self.padding not in ("valid", "same"):
            raise ConfigError(f"padding must be 'valid' or 'same', got {self.padding!r}")
        if self.hidden_width < 1 or self.class_count < 2:
            raise ConfigError("hidden_width must be >= 1 and class_count >= 2")
        resolve_dtype(self.precision)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["conv_channels"] = tuple(d.get("conv_channels", (32, 64)))
        return cls(**d)


class Network:
    """Classifier built from a :class:`NetworkSpec`; ``forward`` returns logits."""

    kind = "classifier"

    def __init__(self, spec: NetworkSpec, rng: RngState | None = None):
        self.spec = spec
        dtype = resolve_dtype(spec.precision)
        pad = 0 if spec.padding == "valid" else spec.kernel // 2
        c1, c2 = spec.conv_channels

        def init(i):
            return None if rng is None else rng.stream(STREAM_INIT, i)

        conv1 = Conv2d("conv1", ConvSpec(spec.input_channels, c1, spec.kernel, 1, pad), dtype, init(0),
                       input_grad=False)
        conv2 = Conv2d("conv2", ConvSpec(c1, c2, spec.kernel, 1, pad), dtype, init(1))
        head = [conv1, ReLU("relu1"), MaxPool2d("pool1"), conv2, ReLU("relu2"), MaxPool2d("pool2"), Flatten()]
        self.body = Sequential(head)
        try:
            feat = self.body.output_shape((spec.input_channels, spec.image_size, spec.image_size))
        except ShapeError as exc:
            raise ConfigError(f"inconsistent network spec: {exc}") from None
        self.feature_shape = feat
        fc1 = Dense("fc1", feat[0], spec.hidden_width, dtype, init(2))
        fc2 = Dense("fc2", spec.hidden_width, spec.class_count, dtype, init(3))
        self.net = Sequential(head + [fc1, ReLU("relu3"), fc2])
        self.dtype = dtype

    def parameters(self):
        return self.net.parameters()

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def layer(self, name: str):
        return self.net.layer(name)

    @property
    def layer_names(self) -> list[str]:
        return [l.name for l in self.net.layers]

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"expected a [N,C,H,W] batch, got {x.shape}")
        if x.shape[1] != self.spec.input_channels:
            hint = "enable coordinate encoding (--coords on)" if self.spec.input_channels == 3 \
                else "disable coordinate encoding (--coords off)"
            raise ShapeError(f"network expects {self.spec.input_channels} input channels but the batch has "
                             f"{x.shape[1]}; {hint}")
        return x.astype(self.dtype, copy=False)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(self._check_input(x))

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
        """Forward + backward for mean cross-entropy; gradients land in the parameters."""
        zero_grads(self.parameters())
        logits = self.forward(x)
        loss, probs, dlogits = F.softmax_cross_entropy(logits, labels)
        if not np.isfinite(loss):
            raise NumericError("non-finite classification loss")
        self.net.backward(dlogits.astype(self.dtype, copy=False))
        return loss, probs


def build_classifier(spec: NetworkSpec, rng: RngState | None) -> Network:
    """Seeded He-normal initialisation; ``rng=None`` gives an all-zero network."""
    return Network(spec, rng)


def predict(net: Network, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    probs = F.softmax(net.forward(batch).astype(np.float64))
    return probs, probs.argmax(axis=1)


@dataclass(frozen=True)
class VaeSpec:
    input_channels: int = 3
    image_size: int = 28
    channels: tuple[int, ...] = (16, 32)
    latent_dim: int = 16
    kernel: int = 4
    precision: str = "f32"

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be positive")
        resolve_dtype(self.precision)

    @classmethod
    def from_dict(cls, d: dict) -> "VaeSpec":
        d = dict(d)
        d["channels"] = tuple(d.get("channels", (16, 32)))
        return cls(**d)


@dataclass
class VaeTrace:
    logits: np.ndarray
    recon: np.ndarray
    mu: np.ndarray
    logvar: np.ndarray
    eps: np.ndarray = field(repr=False)


class Vae:
    """Stride-2 conv encoder to a Gaussian latent; mirrored transposed-conv decoder with sigmoid output."""

    kind = "vae"

    def __init__(self, spec: VaeSpec, rng: RngState | None = None):
        self.spec = spec
        dtype = resolve_dtype(spec.precision)
        self.dtype = dtype

        def init(i):
            return None if rng is None else rng.stream(STREAM_INIT, i)

        chans = (spec.input_channels, *spec.channels)
        convs = [ConvSpec(chans[i], chans[i + 1], spec.kernel, 2, 1) for i in range(len(spec.channels))]
        enc = []
        for i, cs in enumerate(convs):
            enc += [Conv2d(f"enc{i + 1}", cs, dtype, init(i)), ReLU(f"enc_relu{i + 1}")]
        enc.append(Flatten())
        self.encoder = Sequential(enc)
        try:
            feat = self.encoder.output_shape((spec.input_channels, spec.image_size, spec.image_size))
            body = Sequential(enc[:-1]).output_shape((spec.input_channels, spec.image_size, spec.image_size))
        except ShapeError as exc:
            raise ConfigError(f"inconsistent VAE spec: {exc}") from None
        n = len(convs)
        self.to_latent = Dense("latent", feat[0], 2 * spec.latent_dim, dtype, init(n))
        dec = [Dense("dec_in", spec.latent_dim, feat[0], dtype, init(n + 1)), ReLU("dec_relu0"),
               Reshape("unflatten", body)]
        for j, cs in enumerate(reversed(convs)):
            dec.append(ConvTranspose2d(f"dec{j + 1}", cs, dtype, init(n + 2 + j)))
            if j < n - 1:
                dec.append(ReLU(f"dec_relu{j + 1}"))
        self.decoder = Sequential(dec)
        out = self.decoder.output_shape((spec.latent_dim,))
        if out != (spec.input_channels, spec.image_size, spec.image_size):
            raise ConfigError(f"VAE decoder produces {out}, not the input shape")

    def parameters(self):
        return self.encoder.parameters() + self.to_latent.parameters() + self.decoder.parameters()

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def forward(self, x: np.ndarray, eps: np.ndarray) -> VaeTrace:
        if x.ndim != 4 or x.shape[1] != self.spec.input_channels:
            raise ShapeError(f"VAE expects [N,{self.spec.input_channels},H,W] input, got {x.shape}")
        x = x.astype(self.dtype, copy=False)
        h = self.to_latent.forward(self.encoder.forward(x))
        mu, logvar = h[:, :self.spec.latent_dim], h[:, self.spec.latent_dim:]
        z = mu + np.exp(0.5 * logvar) * eps
        logits = self.decoder.forward(z.astype(self.dtype, copy=False))
        return VaeTrace(logits, F.sigmoid(logits), mu, logvar, eps)

    def backward(self, trace: VaeTrace, dlogits: np.ndarray, dmu: np.ndarray, dlogvar: np.ndarray) -> None:
        dz = self.decoder.backward(dlogits.astype(self.dtype, copy=False))
        std = np.exp(0.5 * trace.logvar)
        dh = np.concatenate([dmu + dz, dlogvar + dz * trace.eps * 0.5 * std], axis=1)
        self.encoder.backward(self.to_latent.backward(dh.astype(self.dtype, copy=False)))

    def loss_and_grads(self, x: np.ndarray, eps: np.ndarray, beta: float = 1.0) -> tuple[float, VaeTrace]:
        zero_grads(self.parameters())
        trace = self.forward(x, eps)
        n = x.shape[0]
        loss = vae_loss_from_logits(trace.logits, x, trace.mu, trace.logvar, beta)
        dlogits = (trace.recon - x) / n
        dmu, dlogvar = kl_grads(trace.mu, trace.logvar, beta, n)
        self.backward(trace, dlogits, dmu, dlogvar)
        return loss, trace


def build_vae(spec: VaeSpec, rng: RngState | None) -> Vae:
    return Vae(spec, rng)


def vae_forward(vae: Vae, batch3ch: np.ndarray, rng: np.random.Generator | None = None,
                eps: np.ndarray | None = None):
    """Encode, sample z = mu + exp(logvar / 2) * eps, decode. Returns (recon, mu, logvar)."""
    if eps is None:
        if rng is None:
            raise ValueError("vae_forward needs either a generator or explicit eps")
        eps = rng.standard_normal((batch3ch.shape[0], vae.spec.latent_dim)).astype(vae.dtype)
    trace = vae.forward(batch3ch, eps)
    return trace.recon, trace.mu, trace.logvar


def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> float:
    """Batch mean of KL(N(mu, exp(logvar)) || N(0, I))."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    with np.errstate(invalid="ignore", over="ignore"):
        per = -0.5 * np.sum(1.0 + logvar - mu ** 2 - np.exp(logvar), axis=1)
    return float(per.mean())


def kl_grads(mu, logvar, beta: float, n: int):
    return beta * mu / n, beta * 0.5 * (np.exp(logvar) - 1.0) / n


def binary_cross_entropy(recon: np.ndarray, target: np.ndarray) -> float:
    """Sum over pixels and channels, mean over the batch; probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(recon, dtype=np.float64), F.PROB_EPS, 1 - F.PROB_EPS)
    t = np.asarray(target, dtype=np.float64)
    per = -(t * np.log(p) + (1 - t) * np.log1p(-p))
    return float(per.reshape(per.shape[0], -1).sum(axis=1).mean())


def vae_loss(recon: np.ndarray, target: np.ndarray, mu: np.ndarray, logvar: np.ndarray, beta: float = 1.0) -> float:
    if recon.shape != target.shape:
        raise ShapeError(f"reconstruction {recon.shape} and input {target.shape} differ")
    kl = kl_divergence(mu, logvar) if beta else 0.0
    loss = binary_cross_entropy(recon, target) + beta * kl
    if not np.isfinite(loss):
        raise NumericError("non-finite VAE loss")
    return loss


def vae_loss_grads(recon, target, mu, logvar, beta: float = 1.0):
    """Gradients of :func:`vae_loss` w.r.t. (recon, mu, logvar)."""
    n = recon.shape[0]
    p = np.asarray(recon, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    inside = (p > F.PROB_EPS) & (p < 1 - F.PROB_EPS)
    pc = np.clip(p, F.PROB_EPS, 1 - F.PROB_EPS)
    drecon = np.where(inside, (pc - t) / (pc * (1 - pc)), 0.0) / n
    dmu, dlogvar = kl_grads(np.asarray(mu, np.float64), np.asarray(logvar, np.float64), beta, n)
    return drecon, dmu, dlogvar


def vae_loss_from_logits(logits, target, mu, logvar, beta: float = 1.0) -> float:
    """Same objective as :func:`vae_loss`, evaluated stably on decoder logits."""
    l = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    per = np.logaddexp(0.0, l) - t * l
    loss = float(per.reshape(per.shape[0], -1).sum(axis=1).mean())
    if beta:
        loss += beta * kl_divergence(mu, logvar)
    if not np.isfinite(loss):
        raise NumericError("non-finite VAE loss")
    return loss


def joint_position_matrix(recon_x: np.ndarray, recon_y: np.ndarray) -> np.ndarray:
    """Sum of the reconstructed X and Y channels, min-max scaled to [0, 1] (constant -> 0)."""
    if recon_x.shape != recon_y.shape:
        raise ShapeError(f"position channels differ in shape: {recon_x.shape} vs {recon_y.shape}")
    s = np.asarray(recon_x, dtype=np.float64) + np.asarray(recon_y, dtype=np.float64)
    lo, hi = s.min(), s.max()
    if hi - lo <= 0:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)


def spec_to_dict(spec) -> dict:
    d = asdict(spec)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d
