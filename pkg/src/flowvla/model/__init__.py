from .base import PolicyModel
from .config import COMPACT, DESK, TINY, ModelConfig
from .mask import build_block_mask
from .observation import ActionChunk, Observation, ObsBatch, as_batch, collate
from .prefix import PrefixTokens
from .two_expert import PrefixCache, TwoExpertPolicy
from .small import SmallPolicy
from .checkpoint import load as load_checkpoint, save as save_checkpoint


def build_model(config: ModelConfig, arch: str = "two-expert", seed=0) -> PolicyModel:
    """Fresh model of either architecture behind the common policy interface."""
    from .checkpoint import model_class

    return model_class(arch).init(config, seed)
