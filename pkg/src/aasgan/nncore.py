"""Differentiable primitives and the named parameter store.

Gradients come from torch's reverse-mode autograd. Everything defaults to
float64 so finite-difference checks stay sharp; the models are small enough
that training in float64 on a CPU is fine.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import torch

DTYPE = torch.float64
FORMAT_VERSION = 1


class ShapeError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


class ParamStore:
    """Named leaf tensors in insertion order, each with a gradient slot."""

    def __init__(self):
        self._params: dict[str, torch.Tensor] = {}

    def add(self, name: str, value: torch.Tensor) -> torch.Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = value.detach().clone().to(DTYPE).requires_grad_(True)
        p.grad = torch.zeros_like(p)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def parameters(self) -> list[torch.Tensor]:
        return list(self._params.values())

    def section(self, prefix: str) -> dict[str, torch.Tensor]:
        """Parameters under ``prefix.``, keyed by the remaining name."""
        head = prefix + "."
        return {k[len(head):]: v for k, v in self._params.items() if k.startswith(head)}

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = torch.zeros_like(p)

    def num_values(self) -> int:
        return sum(p.numel() for p in self._params.values())

    def snapshot(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self._params.items()}

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy().astype(np.float64, copy=True) for k, v in self._params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise CheckpointError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        with torch.no_grad():
            for name, p in self._params.items():
                value = torch.from_numpy(np.asarray(arrays[name], dtype=np.float64))
                if tuple(value.shape) != tuple(p.shape):
                    raise CheckpointError(f"{name}: stored shape {tuple(value.shape)} != {tuple(p.shape)}")
                p.copy_(value)


# -- checkpoint container --------------------------------------------------

_HEADER_KEY = "__header__"
_VERSION_KEY = "__format_version__"


def save_records(path, records: Mapping[str, np.ndarray], header: Mapping | None = None) -> None:
    """Write named arrays plus a JSON header and format version to an ``.npz`` file."""
    payload = {name: np.asarray(arr) for name, arr in records.items()}
    for reserved in (_HEADER_KEY, _VERSION_KEY):
        if reserved in payload:
            raise ValueError(f"record name {reserved!r} is reserved")
    payload[_HEADER_KEY] = np.array(json.dumps(dict(header or {}), sort_keys=True))
    payload[_VERSION_KEY] = np.array(FORMAT_VERSION, dtype=np.int64)
    path = Path(path)
    with path.open("wb") as f:
        np.savez(f, **payload)


def load_records(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if _VERSION_KEY not in data or _HEADER_KEY not in data:
        raise CheckpointError(f"{path} is not a checkpoint container")
    version = int(data.pop(_VERSION_KEY))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    header = json.loads(str(data.pop(_HEADER_KEY)))
    return data, header


# -- parameter initialisation ----------------------------------------------

def uniform_(shape, bound: float, gen: torch.Generator) -> torch.Tensor:
    return (torch.rand(shape, generator=gen, dtype=DTYPE) * 2.0 - 1.0) * bound


def add_linear(store: ParamStore, name: str, n_in: int, n_out: int, gen: torch.Generator) -> None:
    bound = 1.0 / math.sqrt(n_in)
    store.add(f"{name}.W", uniform_((n_in, n_out), bound, gen))
    store.add(f"{name}.b", uniform_((n_out,), bound, gen))


def add_lstm(store: ParamStore, name: str, n_in: int, hidden: int, gen: torch.Generator) -> None:
    bound = 1.0 / math.sqrt(hidden)
    store.add(f"{name}.W_x", uniform_((n_in, 4 * hidden), bound, gen))
    store.add(f"{name}.W_h", uniform_((hidden, 4 * hidden), bound, gen))
    store.add(f"{name}.b", uniform_((4 * hidden,), bound, gen))


# -- primitives --------------------------------------------------------------

def affine(x: torch.Tensor, W: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if W.dim() != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"affine: x{tuple(x.shape)} incompatible with W{tuple(W.shape)}, b{tuple(b.shape)}")
    return x @ W + b


def relu(x: torch.Tensor) -> torch.Tensor:
    # torch's relu has zero subgradient at 0
    return torch.relu(x)


def linear(x: torch.Tensor, store: ParamStore, name: str) -> torch.Tensor:
    return affine(x, store[f"{name}.W"], store[f"{name}.b"])


def lstm_step(x, h_prev, c_prev, params: Mapping[str, torch.Tensor]):
    """One LSTM cell update with gate order (input, forget, candidate, output)."""
    W_x, W_h, b = params["W_x"], params["W_h"], params["b"]
    hidden = W_h.shape[0]
    if x.shape[-1] != W_x.shape[0] or h_prev.shape[-1] != hidden or c_prev.shape != h_prev.shape:
        raise ShapeError(
            f"lstm_step: x{tuple(x.shape)}, h{tuple(h_prev.shape)}, c{tuple(c_prev.shape)} "
            f"do not fit W_x{tuple(W_x.shape)}, W_h{tuple(W_h.shape)}"
        )
    gates = x @ W_x + h_prev @ W_h + b
    i, f, g, o = gates.split(hidden, dim=-1)
    c = torch.sigmoid(f) * c_prev + torch.sigmoid(i) * torch.tanh(g)
    h = torch.sigmoid(o) * torch.tanh(c)
    return h, c


def masked_max(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Max over dim 1 of ``values`` (n, m, d) restricted to ``mask`` (n, m).

    Rows with no unmasked entry give zeros. The gradient goes to the first
    maximal entry only.
    """
    if values.dim() != 3 or mask.shape != values.shape[:2]:
        raise ShapeError(f"masked_max: values{tuple(values.shape)} vs mask{tuple(mask.shape)}")
    filled = values.masked_fill(~mask[..., None], -math.inf)
    # argmax returns the first maximal index on ties
    idx = filled.argmax(dim=1, keepdim=True)
    picked = values.gather(1, idx).squeeze(1)
    return picked * mask.any(dim=1, keepdim=True).to(values.dtype)


def max_pool(xs: Sequence[torch.Tensor]) -> torch.Tensor:
    if len(xs) == 0:
        raise ValueError("max_pool needs at least one tensor")
    shape = xs[0].shape
    if any(x.shape != shape for x in xs):
        raise ShapeError(f"max_pool: shapes differ {[tuple(x.shape) for x in xs]}")
    stacked = torch.stack([x.reshape(-1) for x in xs], dim=1)[..., None]  # (d, k, 1)
    mask = torch.ones(stacked.shape[:2], dtype=torch.bool)
    return masked_max(stacked, mask).reshape(shape)


def sample_standard_normal(shape, rng: torch.Generator) -> torch.Tensor:
    return torch.randn(tuple(shape), generator=rng, dtype=DTYPE)


def make_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen
