"""
The main class in this module is `Frozen`. See its docstring for more information.
"""

import hashlib
import json
from functools import cached_property, partial
from typing import Annotated, Any, Iterator

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, model_validator


def _freeze_array(value: Any, dtype: type) -> np.ndarray:
    if isinstance(value, np.ndarray) and value.dtype == dtype and not value.flags.writeable and value.ndim == 1:
        return value
    if isinstance(value, (set, frozenset, dict)):
        raise ValueError(f"expected a sequence of numbers, got {type(value).__name__}")
    array = np.array(value, dtype=dtype)
    if array.ndim != 1:
        raise ValueError(f"expected a one-dimensional sequence of numbers, got an array of shape {array.shape}")
    array.flags.writeable = False
    return array


FloatArray = Annotated[np.ndarray, BeforeValidator(partial(_freeze_array, dtype=np.float64))]
ComplexArray = Annotated[np.ndarray, BeforeValidator(partial(_freeze_array, dtype=np.complex128))]


class Frozen(BaseModel):
    """
    A frozen pydantic model with a git-style hash key that is calculated from the JSON representation of its data.
    Array fields (`FloatArray`, `ComplexArray`) are copied into read-only numpy arrays upon validation, so a model,
    once constructed, can be shared between threads and tasks without any coordination. Sets are prohibited as field
    values (their iteration order would make the hash key unstable).
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @cached_property
    def serialized(self) -> str:
        """
        The representation of this Frozen object that you would usually get by calling `serialize()`, but as a string
        with a JSON. This is a cached property, so it is calculated only the first time it is accessed.
        """
        return json.dumps(self.serialize(), ensure_ascii=False, sort_keys=True)

    def serialize(self) -> dict[str, Any]:
        """
        Serialize the object into a JSON-compatible dictionary. Arrays are represented by their dtype, length and a
        SHA-256 digest of their bytes rather than by their values.
        """
        return _jsonable(self.model_dump())

    @cached_property
    def hash_key(self) -> str:
        """
        Get the hash key for this object. It is a hash of the JSON representation of the object.
        """
        return hashlib.sha256(self.serialized.encode("utf-8")).hexdigest()[:40]

    def frozen_fields_and_values(self) -> dict[str, Any]:
        """
        Get a dict of field names and values of this Pydantic object (both, explicitly set and the ones with default
        values).
        """
        return dict(self._frozen_fields_and_values())

    def _frozen_fields_and_values(self) -> Iterator[tuple[str, Any]]:
        for field in type(self).model_fields:
            yield field, getattr(self, field)

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, Frozen):
            return NotImplemented
        return type(self) is type(other) and self.hash_key == other.hash_key

    def __hash__(self) -> int:
        return hash(self.hash_key)

    # noinspection PyNestedDecorators
    @model_validator(mode="before")
    @classmethod
    def _validate_and_freeze_values(cls, values: Any) -> Any:
        """
        Make sure that no mutable set-like containers sneak into the field values.
        """
        if isinstance(values, dict):
            for key, value in values.items():
                if isinstance(value, (set, frozenset)):
                    raise ValueError(f"sets are not allowed as field values in {cls.__name__}, got one in `{key}`")
        return values


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return {
            "dtype": str(value.dtype),
            "length": int(value.size),
            "sha256": hashlib.sha256(np.ascontiguousarray(value).tobytes()).hexdigest(),
        }
    if isinstance(value, dict):
        return {str(key): _jsonable(sub_value) for key, sub_value in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(sub_value) for sub_value in value]
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, np.generic):
        return value.item()
    return value
