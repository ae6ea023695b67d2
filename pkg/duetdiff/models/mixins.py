"""
Model mixins for common functionality.

These mixins can be added to any dataclass model to provide shared
functionality like JSON round-tripping.
"""

import json
from typing import Any, Dict, Type, TypeVar

T = TypeVar("T", bound="SerializableMixin")


class SerializableMixin:
    """
    Mixin that adds JSON helpers on top of ``to_dict``/``from_dict``.

    Usage:
        @dataclass
        class MyModel(SerializableMixin):
            def to_dict(self): ...
            @classmethod
            def from_dict(cls, data): ...

        line = record.to_json()
        record = MyModel.from_json(line)
    """

    def to_dict(self) -> Dict[str, Any]:
        raise NotImplementedError

    @classmethod
    def from_dict(cls: Type[T], data: Dict[str, Any]) -> T:
        raise NotImplementedError

    def to_json(self) -> str:
        """Serialize to one compact JSON line."""
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls: Type[T], line: str) -> T:
        """Parse one JSON line."""
        return cls.from_dict(json.loads(line))
