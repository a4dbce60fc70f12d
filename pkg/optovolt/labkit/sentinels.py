"""
Marker objects for arguments whose natural "not given" value (None) already means something.
"""


class Sentinel:
    """
    A named marker. `DEFAULT` stands for "the documented default", e.g. for `settle_s`, where None means "no
    settling at all".
    """

    def __init__(self, name: str) -> None:
        self._name = name

    def __repr__(self) -> str:
        return self._name

    def __bool__(self) -> bool:
        raise RuntimeError(f"{self._name} must be compared by identity, not used as a boolean")


DEFAULT = Sentinel("DEFAULT")
