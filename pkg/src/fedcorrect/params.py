"""Model variables and architecture description.

A model is a flat, ordered list of named variables.  Matrices may be held in
float16 (after quantization) while biases and trainable variables are always
float32.  Variable naming is deterministic: hidden layers are ``layer{i}/matrix``
and ``layer{i}/bias``, the output projection is ``decoder/matrix`` and
``decoder/bias``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

PRECISIONS = ("f32", "f16")
PRECISION_DTYPE = {"f32": np.float32, "f16": np.float16}
PRECISION_BYTES = {"f32": 4, "f16": 2}


@dataclass(frozen=True)
class ModelArch:
    """Shape of the word classifier: ReLU hidden stack plus a decoder projection."""

    vocab_size: int
    feature_dim: int
    hidden_dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.vocab_size < 1 or self.feature_dim < 1:
            raise ConfigError("vocab_size and feature_dim must be positive")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims must be a non-empty list of positive ints")

    @property
    def n_hidden(self) -> int:
        return len(self.hidden_dims)

    @property
    def decoder_index(self) -> int:
        # The decoder sits above the top hidden layer in layer ordering.
        return len(self.hidden_dims)

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, hidden layers first, decoder last."""
        dims = []
        prev = self.feature_dim
        for h in self.hidden_dims:
            dims.append((prev, h))
            prev = h
        dims.append((prev, self.vocab_size))
        return dims

    def variable_names(self) -> list[str]:
        names = []
        for i in range(self.n_hidden):
            names += [f"layer{i}/matrix", f"layer{i}/bias"]
        names += ["decoder/matrix", "decoder/bias"]
        return names

    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


def layer_of_name(name: str) -> tuple[int | None, str]:
    """Parse a variable name into (layer index or None for decoder, kind)."""
    try:
        prefix, kind = name.split("/")
    except ValueError:
        raise ConfigError(f"malformed variable name {name!r}") from None
    if kind not in ("matrix", "bias"):
        raise ConfigError(f"unknown variable kind in {name!r}")
    if prefix == "decoder":
        return None, kind
    if prefix.startswith("layer"):
        return int(prefix[len("layer"):]), kind
    raise ConfigError(f"unknown variable prefix in {name!r}")


@dataclass
class Variable:
    name: str
    layer_index: int
    kind: str  # "matrix" | "bias"
    shape: tuple[int, ...]
    precision: str  # "f32" | "f16"
    data: np.ndarray  # flat array, dtype matches precision
    trainable: bool

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if self.kind not in ("matrix", "bias"):
            raise ConfigError(f"bad kind {self.kind!r} for {self.name}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"bad precision {self.precision!r} for {self.name}")
        if self.data.ndim != 1 or self.data.size != math.prod(self.shape):
            raise ShapeError(
                f"{self.name}: data length {self.data.size} != prod(shape)={math.prod(self.shape)}"
            )
        if self.data.dtype != PRECISION_DTYPE[self.precision]:
            raise ShapeError(f"{self.name}: dtype {self.data.dtype} does not match {self.precision}")
        if self.kind == "bias" and self.precision != "f32":
            raise ConfigError(f"{self.name}: biases must stay f32")
        if self.trainable and self.precision != "f32":
            raise ConfigError(f"{self.name}: trainable variables must stay f32")
        self.data.setflags(write=False)

    @property
    def nbytes(self) -> int:
        return self.data.size * PRECISION_BYTES[self.precision]

    def as_matrix(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    def replace(self, **kw) -> "Variable":
        fields = dict(
            name=self.name, layer_index=self.layer_index, kind=self.kind,
            shape=self.shape, precision=self.precision, data=self.data,
            trainable=self.trainable,
        )
        fields.update(kw)
        return Variable(**fields)


@dataclass
class ParameterSet:
    """Ordered, immutable collection of model variables."""

    variables: list[Variable]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {}
        for i, v in enumerate(self.variables):
            if v.name in self._index:
                raise ConfigError(f"duplicate variable name {v.name!r}")
            self._index[v.name] = i

    def __iter__(self):
        return iter(self.variables)

    def __len__(self):
        return len(self.variables)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def get(self, name: str) -> Variable:
        try:
            return self.variables[self._index[name]]
        except KeyError:
            raise ConfigError(f"unknown variable {name!r}") from None

    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def trainable_names(self) -> list[str]:
        return [v.name for v in self.variables if v.trainable]

    def replace_variables(self, new: dict[str, Variable]) -> "ParameterSet":
        return ParameterSet([new.get(v.name, v) for v in self.variables])

    def arch(self) -> ModelArch:
        """Recover the architecture from the variable list."""
        hidden = []
        feature_dim = vocab = None
        for v in self.variables:
            if v.kind != "matrix":
                continue
            if v.name == "decoder/matrix":
                vocab = v.shape[1]
            else:
                if not hidden:
                    feature_dim = v.shape[0]
                hidden.append(v.shape[1])
        if feature_dim is None or vocab is None:
            raise ConfigError("parameter set does not describe a full model")
        return ModelArch(vocab_size=vocab, feature_dim=feature_dim, hidden_dims=tuple(hidden))

    def total_bytes(self) -> int:
        return sum(v.nbytes for v in self.variables)


def init_model(arch: ModelArch, seed: int) -> ParameterSet:
    """Fresh f32 model: scaled-uniform matrices, zero biases, everything trainable.

    Deterministic for a fixed seed; matrices are drawn layer by layer from
    U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
    """
    rng = np.random.default_rng(seed)
    variables = []
    dims = arch.layer_dims()
    for layer, (fi, fo) in enumerate(dims):
        is_decoder = layer == arch.decoder_index
        prefix = "decoder" if is_decoder else f"layer{layer}"
        bound = math.sqrt(6.0 / (fi + fo))
        w = rng.uniform(-bound, bound, size=fi * fo).astype(np.float32)
        variables.append(Variable(
            name=f"{prefix}/matrix", layer_index=layer, kind="matrix",
            shape=(fi, fo), precision="f32", data=w, trainable=True,
        ))
        variables.append(Variable(
            name=f"{prefix}/bias", layer_index=layer, kind="bias",
            shape=(fo,), precision="f32", data=np.zeros(fo, dtype=np.float32),
            trainable=True,
        ))
    return ParameterSet(variables)
