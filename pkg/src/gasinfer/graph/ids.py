"""Node identifiers."""

from typing import NamedTuple

PHYSICAL = -1
MAX_RAW = (1 << 64) - 1
MAX_GROUP = 0xFF


class NodeId(NamedTuple):
    """A 64-bit node id, optionally suffixed with a shadow mirror group.

    Tuple order gives the total order required for canonical message ordering:
    raw first, then group, with physical ids (group -1) before mirror #0.
    """

    raw: int
    group: int = PHYSICAL

    @property
    def mirror_group(self) -> int | None:
        return None if self.group == PHYSICAL else self.group

    @property
    def is_mirror(self) -> bool:
        return self.group != PHYSICAL

    def physical(self) -> "NodeId":
        """The id of the node this mirror shadows (itself for physical ids)."""
        return NodeId(self.raw)

    def mirror(self, group: int) -> "NodeId":
        return NodeId(self.raw, group)

    def __str__(self) -> str:
        if self.group == PHYSICAL:
            return str(self.raw)
        return f"{self.raw}#{self.group}"

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        """Parse ``raw`` or ``raw#g``.

        Raises:
            ValueError: If the text is not a valid id.
        """
        raw_text, sep, group_text = text.strip().partition("#")
        raw = int(raw_text)
        if not 0 <= raw <= MAX_RAW:
            raise ValueError(f"node id out of 64-bit range: {text!r}")
        if not sep:
            return cls(raw)
        group = int(group_text)
        if not 0 <= group <= MAX_GROUP:
            raise ValueError(f"mirror group out of range: {text!r}")
        return cls(raw, group)
