"""Feature-map container shared by the engines and the auxiliary layers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fxp import FixedFormat, check_raw, dequantize_array


@dataclass(frozen=True, eq=False)
class FmapTensor:
    """A (y, x, c) feature map.

    Fixed-valued maps store raw two's-complement integers as ``int64`` and carry
    their :class:`FixedFormat`; real-valued maps store ``float64`` and have
    ``fmt=None``.
    """

    data: np.ndarray
    fmt: Optional[FixedFormat] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"fmap must be 3-D (y, x, c), got shape {data.shape}")
        if self.fmt is None:
            data = data.astype(np.float64, copy=False)
        else:
            if data.size and not np.issubdtype(data.dtype, np.integer):
                raise TypeError("fixed fmap needs integer raw values")
            data = data.astype(np.int64, copy=False)
            check_raw(data, self.fmt)
        object.__setattr__(self, "data", data)

    @property
    def is_fixed(self) -> bool:
        return self.fmt is not None

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def values(self) -> np.ndarray:
        """Real values (exact for fixed maps)."""
        if self.fmt is None:
            return self.data
        return dequantize_array(self.data, self.fmt)

    def same_as(self, other: "FmapTensor") -> bool:
        """Bit-exact equality: same kind, format, shape and payload."""
        return (
            self.fmt == other.fmt
            and self.shape == other.shape
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self):
        kind = f"fixed {self.fmt}" if self.fmt else "real"
        return f"FmapTensor({'x'.join(map(str, self.shape))}, {kind})"
