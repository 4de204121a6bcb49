import yaml
from pathlib import Path
from typing import Any, Optional


class Config:
    """
    Configuration loader for the SEA engine.

    Loads settings from config.yml in the project root (or an explicit path).
    Command-line flags are layered on top with `with_overrides`; flags win.
    """

    def __init__(self, path: Optional[str | Path] = None, overrides: Optional[dict] = None):
        self.path = Path(path) if path else Path(__file__).parent.parent.parent / "config.yml"
        self._config = self._load_config()
        self._config.update({k: v for k, v in (overrides or {}).items() if v is not None})

    def _load_config(self) -> dict:
        """Load main configuration file."""
        if not self.path.exists():
            raise FileNotFoundError(f"Config file not found: {self.path}")

        with open(self.path, 'r') as f:
            return yaml.safe_load(f) or {}

    def with_overrides(self, **flags: Any) -> "Config":
        """Copy of this config with camelCase flag values laid over the file; None means unset."""
        merged = Config.__new__(Config)
        merged.path = self.path
        merged._config = dict(self._config)
        merged._config.update({k: v for k, v in flags.items() if v is not None})
        return merged

    def get(self, key: str, default: Any = None) -> Any:
        return self._config.get(key, default)

    def as_dict(self) -> dict:
        return dict(self._config)

    # =========================================================================
    # Attention structure
    # =========================================================================

    @property
    def seq_len(self) -> int:
        return int(self._config.get("seqLen", 64))

    @property
    def compressed_len(self) -> int:
        return int(self._config.get("compressedLen", 16))

    @property
    def k(self) -> int:
        return int(self._config.get("k", 8))

    @property
    def head_dim(self) -> int:
        return int(self._config.get("headDim", 16))

    @property
    def num_heads(self) -> int:
        return int(self._config.get("numHeads", 2))

    @property
    def hidden_dim(self) -> int:
        return int(self._config.get("hiddenDim", 64))

    @property
    def width_reduction(self) -> int:
        return int(self._config.get("widthReduction", 2))

    @property
    def channel_expansion(self) -> int:
        return int(self._config.get("channelExpansion", 4))

    @property
    def feature_count(self) -> int:
        return int(self._config.get("featureCount", 64))

    @property
    def topk_mode(self) -> Optional[str]:
        # None lets SeaConfig pick the default for the causal flag
        return self._config.get("topkMode")

    @property
    def causal(self) -> bool:
        return bool(self._config.get("causal", False))

    @property
    def orthogonal_features(self) -> bool:
        return bool(self._config.get("orthogonalFeatures", False))

    @property
    def mu_concat_heads(self) -> bool:
        return bool(self._config.get("muConcatHeads", False))

    @property
    def precision(self) -> str:
        return str(self._config.get("precision", "f64"))

    # =========================================================================
    # Run settings
    # =========================================================================

    @property
    def seed(self) -> int:
        return int(self._config.get("seed", 0))

    @property
    def log_level(self) -> str:
        return self._config.get("logLevel", "INFO")

    @property
    def dense_byte_cap(self) -> int:
        return int(self._config.get("denseByteCap", 1 << 30))

    @property
    def threads(self) -> int:
        return int(self._config.get("threads", 1))

    # =========================================================================
    # Toy distillation
    # =========================================================================

    @property
    def train_steps(self) -> int:
        return int(self._config.get("trainSteps", 500))

    @property
    def teacher_steps(self) -> int:
        return int(self._config.get("teacherSteps", 600))

    @property
    def batch_size(self) -> int:
        return int(self._config.get("batchSize", 4))

    @property
    def lr_sea(self) -> float:
        return float(self._config.get("lrSea", 1e-4))

    @property
    def lr_backbone(self) -> float:
        return float(self._config.get("lrBackbone", 1e-5))

    @property
    def optimizer(self) -> str:
        return str(self._config.get("optimizer", "sgd"))

    @property
    def vocab_size(self) -> int:
        return int(self._config.get("vocabSize", 16))

    @property
    def num_layers(self) -> int:
        return int(self._config.get("numLayers", 2))

    # =========================================================================
    # Builders
    # =========================================================================

    def sea_config(self, **overrides: Any):
        """Validated SeaConfig from the file values; keyword overrides use SeaConfig field names."""
        from src.modules.sea.config import SeaConfig

        fields = dict(
            T=self.seq_len,
            K=self.compressed_len,
            k=self.k,
            d=self.head_dim,
            H=self.num_heads,
            d_hidden=self.hidden_dim,
            c_s=self.width_reduction,
            c_h=self.channel_expansion,
            m=self.feature_count,
            mode=self.topk_mode,
            causal=self.causal,
            precision=self.precision,
            orthogonal=self.orthogonal_features,
            mu_concat_heads=self.mu_concat_heads,
        )
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return SeaConfig.create(**fields)


# Singleton instance
config = Config()
