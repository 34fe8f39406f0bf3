from dataclasses import asdict, dataclass, field
from typing import List, Optional


@dataclass
class RunRecord:
    """One candidate of an optimization run; ``scored`` marks records that consumed an oracle call."""
    iter: int
    sequence: str
    canonical: str
    valid: bool
    score: float
    parents: List[str] = field(default_factory=list)
    remasked_span: Optional[List[int]] = None
    oracle_calls_used: int = 0
    phase: str = "generate"
    scored: bool = False
    lead: Optional[bool] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(**data)
