from enum import Enum


class TopKMode(str, Enum):
    """Grouping of the compressed attention entries for top-k̂ selection."""
    PER_QUERY = "PerQuery"                 # one group per (h, t) row of K entries
    PER_HEAD = "PerHead"                   # one group per head, T*K entries
    PER_BATCH = "PerBatch"                 # one group, H*T*K entries
    CAUSAL_PER_BATCH = "CausalPerBatch"    # one group per time step, H*K entries

    @classmethod
    def parse(cls, value: "str | TopKMode") -> "TopKMode":
        if isinstance(value, cls):
            return value
        for mode in cls:
            if value.lower() in (mode.value.lower(), mode.name.lower()):
                return mode
        raise ValueError(f"Unknown top-k mode: {value!r} (expected one of {[m.value for m in cls]})")

    @property
    def flat_layout(self) -> bool:
        """Rows indexed by query with head and key flattened into the columns."""
        return self in (TopKMode.PER_BATCH, TopKMode.CAUSAL_PER_BATCH)

    def budget_factor(self, T: int, H: int) -> int:
        """Group budget as a multiple of k̂."""
        return {
            TopKMode.PER_QUERY: 1,
            TopKMode.PER_HEAD: T,
            TopKMode.PER_BATCH: H * T,
            TopKMode.CAUSAL_PER_BATCH: H,
        }[self]
