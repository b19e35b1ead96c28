"""Per-scale transformer encoders with a shared reconstruction decoder.

Every scale owns a linear patch embedding and learned positional table.
The encoder stack is pre-norm self-attention; one independent stack per
scale by default, or a single shared stack with `share_scales`. The
decoder is a one-hidden-layer MLP that maps the concatenated flattened
scale representations back to the window.

The same parameter tensors serve the masked, clean and negative branches;
branch behavior differs only in the data fed through.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .multiscale import padded_length
from .tensor import Tensor

CHECKPOINT_MAGIC = b"MRC1"


@dataclass
class ModelConfig:
    window: int
    d_model: int = 32
    n_blocks: int = 3
    n_heads: int = 4
    patch_size: int = 2
    n_scales: int = 3
    dropout: float = 0.1
    share_scales: bool = False
    ffn_dim: int = 0  # 0 means 4 * d_model

    def __post_init__(self):
        if self.d_model < 1 or self.n_blocks < 1 or self.n_heads < 1:
            raise ConfigError("d_model, n_blocks and n_heads must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.patch_size < 1 or self.n_scales < 1:
            raise ConfigError("patch_size and n_scales must be >= 1")
        largest = self.patch_size * (1 << (self.n_scales - 1))
        if self.window < largest:
            raise ConfigError(
                f"window {self.window} shorter than largest patch {largest}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")
        if self.ffn_dim == 0:
            self.ffn_dim = 4 * self.d_model

    @property
    def patch_sizes(self) -> list[int]:
        return [self.patch_size * (1 << i) for i in range(self.n_scales)]

    @property
    def padded_window(self) -> int:
        return padded_length(self.window, self.patch_size, self.n_scales)

    @property
    def n_patches(self) -> list[int]:
        return [self.padded_window // p for p in self.patch_sizes]


class MultiScaleModel:
    """Holds named parameters and runs embed / encode / decode."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None):
        self.cfg = cfg
        self._params: dict[str, Tensor] = {}
        d = cfg.d_model
        for i, (p, n) in enumerate(zip(cfg.patch_sizes, cfg.n_patches)):
            self._add(f"scale{i}.embed.w", (p, d), rng)
            self._add(f"scale{i}.embed.b", (d,), None)
            self._add(f"scale{i}.pos", (n, d), rng)
        stacks = ["shared"] if cfg.share_scales else [f"scale{i}" for i in range(cfg.n_scales)]
        for prefix in stacks:
            for b in range(cfg.n_blocks):
                base = f"{prefix}.block{b}"
                self._add(f"{base}.ln1.g", (d,), "ones")
                self._add(f"{base}.ln1.b", (d,), None)
                for nm in ("wq", "wk", "wv", "wo"):
                    self._add(f"{base}.attn.{nm}", (d, d), rng)
                for nm in ("bq", "bk", "bv", "bo"):
                    self._add(f"{base}.attn.{nm}", (d,), None)
                self._add(f"{base}.ln2.g", (d,), "ones")
                self._add(f"{base}.ln2.b", (d,), None)
                self._add(f"{base}.ffn.w1", (d, cfg.ffn_dim), rng)
                self._add(f"{base}.ffn.b1", (cfg.ffn_dim,), None)
                self._add(f"{base}.ffn.w2", (cfg.ffn_dim, d), rng)
                self._add(f"{base}.ffn.b2", (d,), None)
            self._add(f"{prefix}.final_ln.g", (d,), "ones")
            self._add(f"{prefix}.final_ln.b", (d,), None)
        d_in = sum(n * d for n in cfg.n_patches)
        hidden = d * cfg.n_scales
        self._add("decoder.w1", (d_in, hidden), rng)
        self._add("decoder.b1", (hidden,), None)
        self._add("decoder.w2", (hidden, cfg.window), rng)
        self._add("decoder.b2", (cfg.window,), None)

    def _add(self, name: str, shape: tuple[int, ...], init) -> None:
        if init is None:
            t = T.zeros_param(shape)
        elif init == "ones":
            t = T.ones_param(shape)
        elif init is not None and isinstance(init, np.random.Generator):
            if len(shape) == 1:
                t = T.xavier_uniform(shape, init, fan_in=shape[0], fan_out=shape[0])
            else:
                t = T.xavier_uniform(shape, init)
        else:
            t = T.zeros_param(shape)  # loading path fills values afterwards
        self._params[name] = t

    # -- parameter access -------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def param(self, name: str) -> Tensor:
        return self._params[name]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self._params.items():
            v.data[...] = state[k]

    # -- forward pieces ----------------------------------------------------

    def embed(self, patch_scales: list[np.ndarray]) -> list[Tensor]:
        """Project (S, N_i, P_i) patches to (S, N_i, d) and add positions."""
        if len(patch_scales) != self.cfg.n_scales:
            raise DataError(
                f"expected {self.cfg.n_scales} scales, got {len(patch_scales)}")
        out = []
        for i, patches in enumerate(patch_scales):
            x = T.as_tensor(patches)
            w = self._params[f"scale{i}.embed.w"]
            b = self._params[f"scale{i}.embed.b"]
            pos = self._params[f"scale{i}.pos"]
            out.append(T.add(T.add(T.matmul(x, w), b), pos))
        return out

    def encode(self, embedded: list[Tensor], training: bool = False,
               rng: np.random.Generator | None = None) -> list[Tensor]:
        """Run each scale through its encoder stack."""
        reps = []
        for i, x in enumerate(embedded):
            prefix = "shared" if self.cfg.share_scales else f"scale{i}"
            reps.append(self._encode_stack(x, prefix, training, rng))
        return reps

    def _encode_stack(self, x: Tensor, prefix: str, training: bool,
                      rng: np.random.Generator | None) -> Tensor:
        cfg = self.cfg
        drop = cfg.dropout if training else 0.0
        if drop > 0.0 and rng is None:
            raise ValueError("training-mode encode needs an rng for dropout")
        p = self._params
        heads, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        s, n = x.shape[0], x.shape[1]
        att_scale = T.as_tensor(1.0 / np.sqrt(dh))
        for b in range(cfg.n_blocks):
            base = f"{prefix}.block{b}"
            h = T.layer_norm(x, p[f"{base}.ln1.g"], p[f"{base}.ln1.b"])

            def project(nm):
                y = T.add(T.matmul(h, p[f"{base}.attn.w{nm}"]), p[f"{base}.attn.b{nm}"])
                y = T.reshape(y, (s, n, heads, dh))
                return T.transpose(y, (0, 2, 1, 3))

            q, k, v = project("q"), project("k"), project("v")
            logits = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), att_scale)
            att = T.softmax(logits, axis=-1)
            if drop > 0.0:
                att = T.dropout(att, drop, rng)
            ctx = T.reshape(T.transpose(T.matmul(att, v), (0, 2, 1, 3)),
                            (s, n, cfg.d_model))
            proj = T.add(T.matmul(ctx, p[f"{base}.attn.wo"]), p[f"{base}.attn.bo"])
            if drop > 0.0:
                proj = T.dropout(proj, drop, rng)
            x = T.add(x, proj)

            h2 = T.layer_norm(x, p[f"{base}.ln2.g"], p[f"{base}.ln2.b"])
            f = T.gelu(T.add(T.matmul(h2, p[f"{base}.ffn.w1"]), p[f"{base}.ffn.b1"]))
            f = T.add(T.matmul(f, p[f"{base}.ffn.w2"]), p[f"{base}.ffn.b2"])
            if drop > 0.0:
                f = T.dropout(f, drop, rng)
            x = T.add(x, f)
        return T.layer_norm(x, p[f"{prefix}.final_ln.g"], p[f"{prefix}.final_ln.b"])

    def encode_patches(self, patch_scales: list[np.ndarray], training: bool = False,
                       rng: np.random.Generator | None = None) -> list[Tensor]:
        return self.encode(self.embed(patch_scales), training=training, rng=rng)

    def decode(self, reps: list[Tensor]) -> Tensor:
        """Map per-scale representations to a (S, h) reconstruction.

        Output lives in the normalized space of the input window; callers
        de-normalize with the stored channel statistics.
        """
        flats = [T.reshape(r, (r.shape[0], r.shape[1] * r.shape[2])) for r in reps]
        x = T.concat(flats, axis=1) if len(flats) > 1 else flats[0]
        p = self._params
        hidden = T.gelu(T.add(T.matmul(x, p["decoder.w1"]), p["decoder.b1"]))
        return T.add(T.matmul(hidden, p["decoder.w2"]), p["decoder.b2"])

    # -- checkpoint io -----------------------------------------------------

    def save(self, path: str, extra: dict | None = None) -> None:
        """Write the versioned binary checkpoint."""
        header = {"model": dataclasses.asdict(self.cfg), "extra": extra or {}}
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", len(self._params)))
            for name, p in self._params.items():
                nb = name.encode("utf-8")
                fh.write(struct.pack("<I", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<I", p.data.ndim))
                fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
                fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str) -> tuple["MultiScaleModel", dict]:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CHECKPOINT_MAGIC:
                raise DataError(f"{path}: not a checkpoint (bad magic {magic!r})")

            def read(fmt):
                size = struct.calcsize(fmt)
                buf = fh.read(size)
                if len(buf) != size:
                    raise DataError(f"{path}: truncated checkpoint")
                return struct.unpack(fmt, buf)

            blob = fh.read(read("<I")[0])
            header = json.loads(blob.decode("utf-8"))
            cfg = ModelConfig(**header["model"])
            model = cls(cfg, rng=None)
            n = read("<I")[0]
            if n != len(model._params):
                raise DataError(
                    f"{path}: checkpoint has {n} tensors, model expects {len(model._params)}")
            for _ in range(n):
                name = fh.read(read("<I")[0]).decode("utf-8")
                rank = read("<I")[0]
                dims = read(f"<{rank}I") if rank else ()
                count = int(np.prod(dims)) if dims else 1
                payload = fh.read(8 * count)
                if len(payload) != 8 * count:
                    raise DataError(f"{path}: truncated tensor payload for '{name}'")
                if name not in model._params:
                    raise DataError(f"{path}: unexpected tensor '{name}'")
                expect = model._params[name].data.shape
                if tuple(dims) != expect:
                    raise DataError(
                        f"{path}: tensor '{name}' has shape {tuple(dims)}, expected {expect}")
                arr = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
                model._params[name].data[...] = arr
        return model, header["extra"]
