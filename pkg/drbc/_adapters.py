from collections.abc import Mapping, Sequence
from typing import Any

import numpy as np
import numpy.typing as npt

from drbc.exceptions import DrbcInvalidDataException

__all__: list[str] = []


class _MatrixAdapter:
    """Adapter to encode and decode row-major numeric arrays."""

    @staticmethod
    def encode(value: npt.NDArray[np.float64]) -> list[Any]:
        encoded: list[Any] = value.tolist()
        return encoded

    @staticmethod
    def decode(value: Any, ndim: int, name: str) -> npt.NDArray[np.float64]:
        try:
            array = np.asarray(value, dtype=np.float64)
        except (TypeError, ValueError) as ex:
            raise DrbcInvalidDataException(f"{name} is not a numeric array") from ex

        if array.ndim != ndim:
            raise DrbcInvalidDataException(
                f"{name} must have {ndim} dimensions, got {array.ndim}"
            )
        if not np.all(np.isfinite(array)):
            raise DrbcInvalidDataException(f"{name} contains non-finite entries")

        return array


class _AtomsAdapter:
    """Adapter to encode and decode the atoms of a finite prior."""

    @staticmethod
    def encode(
        values: npt.NDArray[np.float64], probs: npt.NDArray[np.float64]
    ) -> list[dict[str, Any]]:
        return [
            {"b": value.tolist() if values.ndim > 1 else float(value), "p": float(prob)}
            for value, prob in zip(values, probs, strict=True)
        ]

    @staticmethod
    def decode(
        atoms: Any,
    ) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        if not isinstance(atoms, Sequence) or isinstance(atoms, str) or not atoms:
            raise DrbcInvalidDataException("atoms must be a non-empty list")

        values: list[Any] = []
        probs: list[Any] = []
        for atom in atoms:
            if not isinstance(atom, Mapping) or "b" not in atom or "p" not in atom:
                raise DrbcInvalidDataException(
                    f"Invalid atom {atom!r}, expected an object with keys 'b' and 'p'"
                )
            values.append(atom["b"])
            probs.append(atom["p"])

        ndim = 2 if isinstance(values[0], Sequence) else 1
        return (
            _MatrixAdapter.decode(values, ndim, "atom values"),
            _MatrixAdapter.decode(probs, 1, "atom probabilities"),
        )
