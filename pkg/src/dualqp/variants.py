"""Method variant and primal recovery tags shared by the solver modules."""

from __future__ import annotations

from enum import Enum

from .errors import DataValidationError


class Variant(Enum):
    """Outer dual update: plain gradient (IDGM) or fast gradient (IDFGM)."""

    IDGM = "idgm"
    IDFGM = "idfgm"

    @property
    def p_theta(self) -> int:
        """Rate exponent of the dual convergence: 1 for IDGM, 2 for IDFGM."""
        return 1 if self is Variant.IDGM else 2

    @classmethod
    def parse(cls, text: str) -> "Variant":
        try:
            return cls(text.lower())
        except ValueError:
            raise DataValidationError(
                f"unknown algorithm {text!r}; expected 'idgm' or 'idfgm'"
            ) from None


class Recovery(Enum):
    """Which primal point a solve reports: the last inner solution or a
    weighted running average of inner solutions."""

    LAST = "last"
    AVERAGE = "average"

    @classmethod
    def parse(cls, text: str) -> "Recovery":
        try:
            return cls(text.lower())
        except ValueError:
            raise DataValidationError(
                f"unknown recovery {text!r}; expected 'last' or 'average'"
            ) from None
