"""Exception hierarchy shared by every ssm-surgeon package."""

from typing import Optional


class SurgeonError(Exception):
    """Base class for all errors raised by ssm-surgeon."""


class DimensionError(SurgeonError, ValueError):
    """Tensor shapes do not agree."""


class ArgumentError(SurgeonError, ValueError):
    """An argument lies outside its allowed range."""


class StateError(SurgeonError):
    """A required piece of state (trace, accumulator) is missing or empty."""


class NumericalError(SurgeonError):
    """Non-finite values or a failed factorization.

    `step`, `layer` and `sample` locate the failure when known.
    """

    def __init__(self, message: str, step: Optional[int] = None,
                 layer: Optional[int] = None, sample: Optional[int] = None):
        self.message = message
        self.step = step
        self.layer = layer
        self.sample = sample
        where = [f"{k}={v}" for k, v in (("layer", layer), ("sample", sample), ("step", step)) if v is not None]
        super().__init__(f"{message} ({', '.join(where)})" if where else message)

    def locate(self, layer: Optional[int] = None, sample: Optional[int] = None) -> "NumericalError":
        """Return a copy annotated with layer/sample identification."""
        return NumericalError(
            self.message,
            step=self.step,
            layer=self.layer if layer is None else layer,
            sample=self.sample if sample is None else sample,
        )


class FormatError(SurgeonError):
    """Checkpoint or report content is malformed."""

    def __init__(self, message: str, tensor: Optional[str] = None):
        super().__init__(f"{message} (tensor: {tensor})" if tensor else message)
        self.tensor = tensor
