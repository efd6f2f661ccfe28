"""Bias-free conditional U-net and its BFUN checkpoint format.

Input channels are the noisy observation ``y`` followed by the ``tau``
conditioning frames, most recent first. The network outputs the clean-frame
estimate directly (no input-to-output skip). There are no additive constants
anywhere, so in inference mode the map is positively homogeneous of degree 1.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .numerics import Tensor, bf_norm, concat, conv2d, downsample2x, relu, upsample2x

BFUN_MAGIC = b"BFUN"
BFUN_VERSION = 1


@dataclass(frozen=True)
class ModelArch:
    tau: int = 2
    scales: int = 3
    base_channels: int = 64
    use_observation: bool = True  # False: prediction-only baseline without the noisy frame

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.scales != 3:
            raise ValueError("the U-net has exactly 3 scales")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if not self.use_observation and self.tau == 0:
            raise ValueError("a prediction-only model needs tau >= 1")

    @property
    def in_channels(self):
        return self.tau + (1 if self.use_observation else 0)

    def channels(self, scale):
        return self.base_channels * 2 ** (scale - 1)

    def to_dict(self):
        return asdict(self)


def _block_specs(arch):
    """(stage, cin, cout) for every conv->norm->relu pair, in forward order."""
    c1, c2, c3 = (arch.channels(s) for s in (1, 2, 3))
    return [
        ("enc1", arch.in_channels, c1), ("enc1", c1, c1),
        ("enc2", c1, c2), ("enc2", c2, c2),
        ("enc3", c2, c3), ("enc3", c3, c3),
        ("dec3", c3, c3), ("dec3", c3, c3),
        ("dec2", c3 + c2, c2), ("dec2", c2, c2),
        ("dec1", c2 + c1, c1), ("dec1", c1, c1),
    ]


class UNet:
    def __init__(self, arch=None, seed=0):
        self.arch = arch or ModelArch()
        self.training = False
        rng = np.random.default_rng(seed)
        self.params = OrderedDict()
        seen = {}
        for stage, cin, cout in _block_specs(self.arch):
            seen[stage] = seen.get(stage, 0) + 1
            b = seen[stage]
            self.params[f"{stage}.conv{b}.weight"] = _he_init(rng, cout, cin)
            self.params[f"{stage}.norm{b}.gain"] = np.ones(cout, dtype=np.float32)
            self.params[f"{stage}.norm{b}.running_std"] = np.ones(cout, dtype=np.float32)
        self.params["out.conv.weight"] = _he_init(rng, 1, self.arch.channels(1))

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def trainable_names(self):
        return [k for k in self.params if not k.endswith("running_std")]

    def n_parameters(self):
        return sum(self.params[k].size for k in self.trainable_names())

    def forward_tensor(self, inp, weights=None):
        """Run the network on a ``[N, in_channels, H, W]`` tensor.

        ``weights`` optionally maps trainable names to Tensors (so gradients
        can flow to them); otherwise the stored arrays are used as constants.
        """
        n, c, h, w = inp.shape
        if c != self.arch.in_channels:
            raise ValueError(f"expected {self.arch.in_channels} input channels, got {c}")
        if h % 4 or w % 4:
            raise ValueError(f"spatial size {h}x{w} must be divisible by 4 for three scales")
        weights = weights or {}

        def p(name):
            return weights[name] if name in weights else Tensor(self.params[name])

        def stage(x, name):
            for b in (1, 2):
                x = conv2d(x, p(f"{name}.conv{b}.weight"))
                x = bf_norm(x, p(f"{name}.norm{b}.gain"), self.params[f"{name}.norm{b}.running_std"], self.training)
                x = relu(x)
            return x

        e1 = stage(inp, "enc1")
        e2 = stage(downsample2x(e1), "enc2")
        e3 = stage(downsample2x(e2), "enc3")
        d3 = stage(e3, "dec3")
        d2 = stage(concat([upsample2x(d3), e2]), "dec2")
        d1 = stage(concat([upsample2x(d2), e1]), "dec1")
        return conv2d(d1, p("out.conv.weight"))

    def stack_inputs(self, y, c):
        """Build the ``[N, in_channels, H, W]`` array from y ``[N,H,W]`` and c ``[N,tau,H,W]``."""
        y = np.asarray(y, dtype=np.float32)
        single = y.ndim == 2
        if single:
            y = y[None]
        n, h, w = y.shape
        c = np.zeros((n, 0, h, w), np.float32) if c is None else np.asarray(c, dtype=np.float32)
        if single and c.ndim == 3:
            c = c[None]
        if c.shape != (n, self.arch.tau, h, w):
            raise ValueError(f"conditioning must have shape {(n, self.arch.tau, h, w)}, got {c.shape}")
        parts = ([y[:, None]] if self.arch.use_observation else []) + [c]
        return np.concatenate(parts, axis=1), single

    def __call__(self, y, c=None):
        """Clean-frame estimate for observation(s) ``y`` given conditioning ``c``."""
        inp, single = self.stack_inputs(y, c)
        out = self.forward_tensor(Tensor(inp)).data[:, 0]
        return out[0] if single else out

    def residual(self, y, c=None):
        """Denoising residual f(y, c) = x_hat(y, c) - y."""
        return self(y, c) - np.asarray(y, dtype=np.float32)


def _he_init(rng, cout, cin):
    std = np.sqrt(2.0 / (cin * 9))
    return (rng.standard_normal((cout, cin, 3, 3)) * std).astype(np.float32)


def save_model(model, path, extra=None):
    header = {"arch": model.arch.to_dict(), "format": "BFUN", "extra": extra or {}}
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(BFUN_MAGIC)
        fh.write(struct.pack("<II", BFUN_VERSION, len(blob)))
        fh.write(blob)
        for name, arr in model.params.items():
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_checkpoint(path):
    """Return (header dict, OrderedDict of arrays) from a BFUN file."""
    raw = Path(path).read_bytes()
    if raw[:4] != BFUN_MAGIC:
        raise ValueError(f"{path}: not a BFUN checkpoint (magic {raw[:4]!r})")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != BFUN_VERSION:
        raise ValueError(f"{path}: checkpoint version mismatch: expected {BFUN_VERSION}, found {version}")
    off = 12
    header = json.loads(raw[off:off + hlen].decode())
    off += hlen
    arrays = OrderedDict()
    while off < len(raw):
        try:
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<B", raw, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            count = int(np.prod(dims))
            if off + 4 * count > len(raw):
                raise struct.error("short record")
            arrays[name] = np.frombuffer(raw, "<f4", count=count, offset=off).reshape(dims).astype(np.float32)
            off += 4 * count
        except struct.error as exc:
            raise ValueError(f"{path}: truncated parameter record at byte offset {off}") from exc
    return header, arrays


def load_model(path, expect=None):
    """Load a BFUN checkpoint; ``expect`` (ModelArch or dict of fields) guards against mix-ups."""
    header, arrays = read_checkpoint(path)
    arch = ModelArch(**header["arch"])
    if expect is not None:
        want = expect.to_dict() if isinstance(expect, ModelArch) else dict(expect)
        found = arch.to_dict()
        diff = {k: (v, found.get(k)) for k, v in want.items() if found.get(k) != v}
        if diff:
            detail = ", ".join(f"{k}: expected {a!r}, found {b!r}" for k, (a, b) in diff.items())
            raise ValueError(f"{path}: architecture mismatch ({detail})")
    model = UNet(arch)
    if list(arrays) != list(model.params):
        raise ValueError(f"{path}: parameter names do not match architecture {arch}")
    for k, v in arrays.items():
        if v.shape != model.params[k].shape:
            raise ValueError(f"{path}: parameter {k} expected shape {model.params[k].shape}, found {v.shape}")
        model.params[k] = v
    model.eval()
    model.meta = header.get("extra", {})
    return model
