"""Model configuration and its structured-text file format."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from ..keys import KEY_VOCAB_SIZE

N_ACTION_TOKENS = 8


@dataclass(frozen=True)
class ModelConfig:
    """Desk-scale defaults; the full-scale sizes go in a config file."""

    # backbone
    number_of_layers: int = 2
    hidden_dimension: int = 128
    query_heads: int = 4
    key_value_heads: int = 4

    # token layout
    number_of_image_tokens: int = 1
    use_thinking_token: bool = True

    # action decoder
    decoder_layers: int = 3
    decoder_heads: int = 8

    # data geometry
    history_length: int = 32  # sliding-window size, in whole timesteps
    frame_resolution: int = 64

    # vocabularies
    key_vocab: int = KEY_VOCAB_SIZE
    mouse_bins_x: int = 21
    mouse_bins_y: int = 21
    instruction_vocab: int = 16

    # stabilizers
    use_qk_norm: bool = True
    z_loss_coeff: float = 1e-4

    rope_base: float = 10000.0

    def __post_init__(self):
        if self.hidden_dimension % self.query_heads != 0:
            raise ValueError("hidden_dimension must be divisible by query_heads")
        if self.query_heads % self.key_value_heads != 0:
            raise ValueError("query_heads must be a multiple of key_value_heads")
        if not 1 <= self.number_of_image_tokens <= 4:
            raise ValueError("number_of_image_tokens must be in 1..4")
        if self.history_length < 1:
            raise ValueError("history_length must be >= 1")

    @property
    def n_action_tokens(self) -> int:
        return N_ACTION_TOKENS

    @property
    def tokens_per_step(self) -> int:
        # text + images + optional thinking + a_in + 8 ground-truth actions
        return self.number_of_image_tokens + N_ACTION_TOKENS + 2 + int(self.use_thinking_token)

    @property
    def slot_vocabs(self) -> tuple:
        """Vocabulary size of each of the 8 action slots in decode order."""
        return (self.key_vocab,) * 4 + (self.mouse_bins_x, self.mouse_bins_y, 2, 2)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1))

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls(**json.loads(Path(path).read_text()))
