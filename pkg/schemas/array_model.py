# File: schemas/array_model.py
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict


class ArrayModel(BaseModel):
    """Frozen pydantic model that carries numpy arrays.

    Compare instances field by field with numpy, `==` on the model itself is not meaningful.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


def as_array(value, tail: Tuple[int, ...], name: str, dtype=np.float64) -> np.ndarray:
    """Copy `value` into a read-only array whose trailing dimensions equal `tail`.

    A -1 in `tail` accepts any size on that axis.
    """
    array = np.array(value, dtype=dtype, copy=True)
    if array.ndim != len(tail) + 1 and not (array.size == 0 and len(tail) > 0):
        raise ValueError(f"{name}: expected {len(tail) + 1} dimensions, got shape {array.shape}")
    if array.size == 0:
        array = array.reshape((0,) + tuple(max(t, 0) for t in tail))
    for axis, expected in enumerate(tail, start=1):
        if expected >= 0 and array.shape[axis] != expected:
            raise ValueError(f"{name}: expected shape (*, {tail}), got {array.shape}")
    array.setflags(write=False)
    return array


def as_vector(value, size: int, name: str) -> np.ndarray:
    array = np.array(value, dtype=np.float64, copy=True).reshape(-1)
    if array.shape[0] != size:
        raise ValueError(f"{name}: expected {size} values, got {array.shape[0]}")
    array.setflags(write=False)
    return array
