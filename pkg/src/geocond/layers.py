"""Network building blocks and the generator / critic / inference architectures."""
from __future__ import annotations

import struct
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import FormatError, ShapeError, UsageError

INIT_STD = 0.02
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Module:
    """Parameter container with ordered, dotted names."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=np.float32), requires_grad=True)
        self._params[name] = t
        return t

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for child in self._children.values():
            yield from child.modules()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def reset_parameters(self, rng: np.random.Generator, std: float) -> None:
        pass

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update((name, b.copy()) for name, b in self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = {}
        for m_prefix, m in self._prefixed_modules():
            for bname in m._buffers:
                bufs[m_prefix + bname] = (m, bname)
        expected = set(own) | set(bufs)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise UsageError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, value in state.items():
            if name in own:
                if own[name].shape != tuple(value.shape):
                    raise ShapeError(f"{name}: expected {own[name].shape}, got {value.shape}")
                own[name].data = np.array(value, dtype=np.float32)
                own[name].zero_grad()
            else:
                m, bname = bufs[name]
                m._buffers[bname] = np.array(value, dtype=np.float32)

    def _prefixed_modules(self, prefix: str = ""):
        yield prefix, self
        for cname, child in self._children.items():
            yield from child._prefixed_modules(f"{prefix}{cname}.")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, x):
        raise NotImplementedError


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        for i, layer in enumerate(layers):
            self.add_child(str(i), layer)

    def __iter__(self):
        return iter(self._children.values())

    def __len__(self):
        return len(self._children)

    def forward(self, x):
        for layer in self:
            x = layer(x)
        return x


class Linear(Module):
    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.weight = self.add_param("weight", np.zeros((n_out, n_in)))
        self.bias = self.add_param("bias", np.zeros(n_out))

    def reset_parameters(self, rng, std):
        self.weight.data = (rng.standard_normal(self.weight.shape) * std).astype(np.float32)
        self.bias.data = np.zeros(self.n_out, dtype=np.float32)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"Linear expects (B, {self.n_in}) input, got {x.shape}")
        return ad.matmul(x, ad.transpose(self.weight)) + self.bias


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, f: int, stride: int = 1, padding: int = 0,
                 bias: bool = True):
        super().__init__()
        if f < 1 or stride < 1 or padding < 0:
            raise ShapeError(f"invalid conv geometry f={f} stride={stride} padding={padding}")
        self.stride, self.padding = stride, padding
        self.weight = self.add_param("weight", np.zeros((c_out, c_in, f, f)))
        self.bias = self.add_param("bias", np.zeros(c_out)) if bias else None

    def reset_parameters(self, rng, std):
        self.weight.data = (rng.standard_normal(self.weight.shape) * std).astype(np.float32)
        if self.bias is not None:
            self.bias.data = np.zeros(self.bias.shape, dtype=np.float32)

    def forward(self, x):
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Conv2d):
    """Transposed convolution; ``weight`` is stored C_in×C_out×f×f."""

    def __init__(self, c_in: int, c_out: int, f: int, stride: int = 1, padding: int = 0,
                 bias: bool = True):
        Module.__init__(self)
        if f < 1 or stride < 1 or padding < 0:
            raise ShapeError(f"invalid conv geometry f={f} stride={stride} padding={padding}")
        self.stride, self.padding = stride, padding
        self.weight = self.add_param("weight", np.zeros((c_in, c_out, f, f)))
        self.bias = self.add_param("bias", np.zeros(c_out)) if bias else None

    def forward(self, x):
        return ad.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    """Per-channel batch normalization for (N, C) or (N, C, H, W) inputs."""

    def __init__(self, channels: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        super().__init__()
        if eps <= 0:
            raise UsageError("batch-norm eps must be positive")
        self.eps, self.momentum = eps, momentum
        self.gamma = self.add_param("gamma", np.ones(channels))
        self.beta = self.add_param("beta", np.zeros(channels))
        self._buffers["running_mean"] = np.zeros(channels, np.float32)
        self._buffers["running_var"] = np.ones(channels, np.float32)

    @property
    def running_mean(self):
        return self._buffers["running_mean"]

    @property
    def running_var(self):
        return self._buffers["running_var"]

    def reset_parameters(self, rng, std):
        c = self.gamma.shape[0]
        self.gamma.data = np.ones(c, np.float32)
        self.beta.data = np.zeros(c, np.float32)
        self._buffers["running_mean"] = np.zeros(c, np.float32)
        self._buffers["running_var"] = np.ones(c, np.float32)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim < 2 or x.shape[1] != self.gamma.shape[0]:
            raise ShapeError(f"BatchNorm({self.gamma.shape[0]}) got input {x.shape}")
        if self.training:
            if x.shape[0] < 2:
                raise UsageError("batch normalization in train mode needs a batch of at least 2")
            out, mu, var = ad.batch_norm(x, self.gamma, self.beta, self.eps)
            count = x.size // x.shape[1]
            m = np.float32(self.momentum)
            unbiased = var * np.float32(count / max(count - 1, 1))
            self._buffers["running_mean"] = (1 - m) * self.running_mean + m * mu.astype(np.float32)
            self._buffers["running_var"] = (1 - m) * self.running_var + m * unbiased.astype(np.float32)
            return out
        shape = (x.shape[1],) + (1,) * (x.ndim - 2)
        inv = (1.0 / np.sqrt(self.running_var + np.float32(self.eps))).astype(x.dtype)
        scale = ad.reshape(self.gamma * Tensor(inv), shape)
        shift = ad.reshape(self.beta - self.gamma * Tensor(inv * self.running_mean), shape)
        return x * scale + shift


class Activation(Module):
    def __init__(self, kind: str, slope: float = 0.2):
        super().__init__()
        self.kind, self.slope = kind, slope

    def forward(self, x):
        return ad.elementwise(x, self.kind, self.slope)


def init_parameters(net: Module, seed: int, std: float = INIT_STD) -> None:
    """Weights ~ N(0, std²), biases 0, batch-norm scale 1 / shift 0."""
    rng = np.random.default_rng(seed)
    for m in net.modules():
        m.reset_parameters(rng, std)


# ---------------------------------------------------------------- networks
def _n_upsamplings(image_size: int) -> int:
    n = int(round(np.log2(image_size))) - 2
    if image_size < 8 or 2 ** (n + 2) != image_size:
        raise UsageError(f"image size must be a power of two >= 8, got {image_size}")
    return n


class GeneratorNet(Module):
    """Latent vector → single-channel image in [-1, 1].

    With the defaults this is 30×1×1 → 512×4×4 → 256×8×8 → 128×16×16 →
    64×32×32 → 1×64×64. ``width`` scales every hidden channel count.
    """

    def __init__(self, nz: int = 30, width: int = 64, image_size: int = 64):
        super().__init__()
        self.nz, self.width, self.image_size = nz, width, image_size
        n = _n_upsamplings(image_size)
        chans = [width * 2 ** (n - 1 - i) for i in range(n)]
        layers = [ConvTranspose2d(nz, chans[0], 4, 1, 0), BatchNorm(chans[0]), Activation("relu")]
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            layers += [ConvTranspose2d(c_in, c_out, 4, 2, 1), BatchNorm(c_out), Activation("relu")]
        layers += [ConvTranspose2d(chans[-1], 1, 4, 2, 1), Activation("tanh")]
        self.main = self.add_child("main", Sequential(*layers))
        init_parameters(self, 0)

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.nz:
            raise ShapeError(f"generator expects (B, {self.nz}) latents, got {z.shape}")
        return self.main(ad.reshape(z, (z.shape[0], self.nz, 1, 1)))


class DiscriminatorNet(Module):
    """Image → scalar score per sample.

    ``mode="wgan"`` gives an unsquashed critic without batch norm;
    ``mode="standard"`` adds batch norm after every strided conv but the
    first and squashes the score with a sigmoid.
    """

    def __init__(self, width: int = 64, image_size: int = 64, mode: str = "wgan"):
        super().__init__()
        if mode not in ("wgan", "standard"):
            raise UsageError(f"unknown discriminator mode {mode!r}")
        self.width, self.image_size, self.mode = width, image_size, mode
        n = _n_upsamplings(image_size)
        chans = [width * 2 ** i for i in range(n)]
        # bias-free convolutions: with clipped weights, biases would swamp the
        # shrinking activations and freeze the critic into a linear function
        layers = [Conv2d(1, chans[0], 4, 2, 1, bias=False), Activation("leaky_relu")]
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            layers.append(Conv2d(c_in, c_out, 4, 2, 1, bias=False))
            if mode == "standard":
                layers.append(BatchNorm(c_out))
            layers.append(Activation("leaky_relu"))
        layers.append(Conv2d(chans[-1], 1, 4, 1, 0, bias=False))
        self.main = self.add_child("main", Sequential(*layers))
        init_parameters(self, 0)

    def logits(self, x: Tensor) -> Tensor:
        if x.ndim == 3:
            x = ad.reshape(x, (x.shape[0], 1) + x.shape[1:])
        if x.ndim != 4 or x.shape[1:] != (1, self.image_size, self.image_size):
            raise ShapeError(f"discriminator expects (B, 1, {self.image_size}, "
                             f"{self.image_size}) input, got {x.shape}")
        out = self.main(x)
        return ad.reshape(out, (x.shape[0],))

    def forward(self, x: Tensor) -> Tensor:
        s = self.logits(x)
        return ad.sigmoid(s) if self.mode == "standard" else s


class InferenceNet(Module):
    """Fully connected map from source draws w to latent vectors z.

    One input layer, ``depth`` hidden layers of equal width (SeLU after each)
    and a linear output layer.
    """

    def __init__(self, n_in: int = 30, n_out: int = 30, hidden: int = 512, depth: int = 5):
        super().__init__()
        self.n_in, self.n_out, self.hidden, self.depth = n_in, n_out, hidden, depth
        sizes = [n_in] + [hidden] * (depth + 1) + [n_out]
        self.linears = [self.add_child(f"fc{i}", Linear(a, b))
                        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.act = ad.selu
        init_parameters(self, 0)

    def forward(self, w: Tensor) -> Tensor:
        if w.ndim != 2 or w.shape[1] != self.n_in:
            raise ShapeError(f"inference net expects (B, {self.n_in}) input, got {w.shape}")
        h = w
        for layer in self.linears[:-1]:
            h = self.act(layer(h))
        return self.linears[-1](h)


# -------------------------------------------------------------- checkpoints
CKPT_MAGIC = b"NNCK"
CKPT_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors in the little-endian NNCK layout."""
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated checkpoint while reading {what}", pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(4 * n, f"data of {name}"), dtype="<f4")
        out[name] = data.reshape(dims).astype(np.float32)
    if pos != len(buf):
        raise FormatError("trailing bytes after last tensor", pos)
    return out


def save_network(net: Module, path) -> None:
    save_checkpoint(path, net.state_dict())


def generator_from_state(state: dict[str, np.ndarray]) -> GeneratorNet:
    first = state["main.0.weight"]
    nz, c0 = first.shape[:2]
    n_strided = sum(1 for k in state if k.endswith(".weight")) - 1
    image_size = 2 ** (n_strided + 2)
    width = c0 // 2 ** (n_strided - 1)
    net = GeneratorNet(nz=nz, width=width, image_size=image_size)
    net.load_state_dict(state)
    return net


def discriminator_from_state(state: dict[str, np.ndarray]) -> DiscriminatorNet:
    mode = "standard" if any(k.endswith("running_mean") for k in state) else "wgan"
    width = state["main.0.weight"].shape[0]
    n_strided = sum(1 for k, v in state.items() if k.endswith(".weight") and v.ndim == 4) - 1
    net = DiscriminatorNet(width=width, image_size=2 ** (n_strided + 2), mode=mode)
    net.load_state_dict(state)
    return net


def inference_from_state(state: dict[str, np.ndarray]) -> InferenceNet:
    n_layers = sum(1 for k in state if k.endswith(".weight"))
    first, last = state["fc0.weight"], state[f"fc{n_layers - 1}.weight"]
    net = InferenceNet(n_in=first.shape[1], n_out=last.shape[0], hidden=first.shape[0],
                       depth=n_layers - 2)
    net.load_state_dict(state)
    return net


def _load_as(builder, path):
    state = load_checkpoint(path)
    try:
        return builder(state)
    except (KeyError, IndexError, ShapeError, UsageError) as exc:
        raise FormatError(f"{path} does not hold a compatible network ({exc})") from exc


def load_generator(path) -> GeneratorNet:
    return _load_as(generator_from_state, path)


def load_discriminator(path) -> DiscriminatorNet:
    return _load_as(discriminator_from_state, path)


def load_inference(path) -> InferenceNet:
    return _load_as(inference_from_state, path)


@contextmanager
def frozen(*nets: Module):
    """Temporarily stop gradient tracking for every parameter of ``nets``.

    Gradients still flow through the frozen layers to their inputs; only the
    weight-gradient work is skipped.
    """
    params = [p for net in nets for p in net.parameters()]
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


@contextmanager
def evaluating(*nets: Module):
    """Temporarily switch ``nets`` to eval mode (batch norm uses running stats)."""
    modes = [net.training for net in nets]
    for net in nets:
        net.eval()
    try:
        yield
    finally:
        for net, mode in zip(nets, modes):
            net.train(mode)
