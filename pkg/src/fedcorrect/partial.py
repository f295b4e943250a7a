"""Trainable-set policy: train the decoder plus a top slice of hidden layers.

Freezing always takes a consecutive bottom prefix of the hidden stack, so
backprop can stop at the lowest trainable layer and uploads shrink to the
trainable gradients only.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .params import ModelArch, ParameterSet

MODES = ("full", "decoder_only", "decoder_plus_top_k")


@dataclass(frozen=True)
class TrainableSet:
    mode: str
    top_k: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown trainable-set mode {self.mode!r}")
        if self.mode == "decoder_plus_top_k":
            if self.top_k < 1:
                raise ConfigError("decoder_plus_top_k requires k >= 1")
        elif self.top_k:
            raise ConfigError(f"mode {self.mode!r} takes no k")

    @classmethod
    def from_spec(cls, text: str) -> "TrainableSet":
        """Parse "full", "decoder_only", or "decoder_plus_top_k:K"."""
        text = text.strip()
        if text in ("full", "decoder_only"):
            return cls(mode=text)
        if text.startswith("decoder_plus_top_k:"):
            raw = text.split(":", 1)[1]
            try:
                k = int(raw)
            except ValueError:
                raise ConfigError(f"bad layer count {raw!r} in trainable set") from None
            return cls(mode="decoder_plus_top_k", top_k=k)
        raise ConfigError(f"unknown trainable-set spec {text!r}")

    def describe(self) -> str:
        if self.mode == "decoder_plus_top_k":
            return f"decoder_plus_top_k:{self.top_k}"
        return self.mode


def resolve(tset: TrainableSet, arch: ModelArch) -> set[str]:
    """Variable names that train under this policy."""
    if tset.mode == "full":
        return set(arch.variable_names())
    names = {"decoder/matrix", "decoder/bias"}
    if tset.mode == "decoder_plus_top_k":
        if tset.top_k > arch.n_hidden:
            raise ConfigError(
                f"trainable set asks for top {tset.top_k} layers "
                f"but the model has {arch.n_hidden}"
            )
        for i in range(arch.n_hidden - tset.top_k, arch.n_hidden):
            names.add(f"layer{i}/matrix")
            names.add(f"layer{i}/bias")
    return names


def freeze(params: ParameterSet, names: set[str]) -> ParameterSet:
    """Return params with trainable flags matching the name set exactly."""
    known = set(params.names())
    unknown = set(names) - known
    if unknown:
        raise ConfigError(f"unknown trainable names {sorted(unknown)}")
    replaced = {}
    for v in params:
        wants = v.name in names
        if wants and v.precision != "f32":
            raise ConfigError(f"{v.name}: dequantize to f32 before marking trainable")
        if v.trainable != wants:
            replaced[v.name] = v.replace(trainable=wants)
    if not replaced:
        return params
    return params.replace_variables(replaced)
